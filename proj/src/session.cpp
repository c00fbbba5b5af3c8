#include "watchhar/session.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "watchhar/archive.hpp"
#include "watchhar/error.hpp"

namespace watchhar {

double LabeledSession::duration_ms() const noexcept {
  if (imu.empty()) return 0.0;
  return imu.back().t_ms - imu.front().t_ms;
}

const Label* LabeledSession::label_at(double t_ms) const noexcept {
  for (const auto& l : labels) {
    if (l.covers(t_ms)) return &l;
  }
  return nullptr;
}

void LabeledSession::validate(const std::vector<std::string>& class_names) const {
  std::vector<const Label*> sorted;
  for (const auto& l : labels) {
    if (!(l.end_ms > l.start_ms)) {
      throw ValidationError("label '" + l.cls + "' ends at " + std::to_string(l.end_ms) + " ms, not after its start");
    }
    if (!class_names.empty() && std::find(class_names.begin(), class_names.end(), l.cls) == class_names.end()) {
      throw ValidationError("label class '" + l.cls + "' is not one of the model's classes");
    }
    sorted.push_back(&l);
  }
  std::sort(sorted.begin(), sorted.end(), [](const Label* a, const Label* b) { return a->start_ms < b->start_ms; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i]->start_ms < sorted[i - 1]->end_ms) {
      throw ValidationError("labels overlap at " + std::to_string(sorted[i]->start_ms) + " ms");
    }
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& field, const std::filesystem::path& path, std::size_t line) {
  const std::string f = trim(field);
  double v = 0.0;
  const auto* end = f.data() + f.size();
  auto [ptr, ec] = std::from_chars(f.data(), end, v);
  if (ec != std::errc() || ptr != end || f.empty() || !std::isfinite(v)) {
    throw ParseError(path.string() + ":" + std::to_string(line) + ": '" + f + "' is not a finite number");
  }
  return v;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

void expect_header(std::istream& in, const std::filesystem::path& path, const std::string& header) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ":1: file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (trim(line) != header) {
    throw ParseError(path.string() + ":1: expected header '" + header + "', got '" + line + "'");
  }
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

std::vector<ImuSample> read_imu_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  expect_header(in, path, "t_ms,ax,ay,az,gx,gy,gz");
  std::vector<ImuSample> out;
  std::string line;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty() || trim(line) == "\r") continue;
    const auto fields = split_csv(line);
    if (fields.size() != 7) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": expected 7 fields, got " +
                       std::to_string(fields.size()));
    }
    ImuSample s;
    s.t_ms = parse_number(fields[0], path, n);
    for (std::size_t k = 0; k < 6; ++k) s.v[k] = static_cast<float>(parse_number(fields[k + 1], path, n));
    out.push_back(s);
  }
  return out;
}

void write_imu_csv(const std::filesystem::path& path, const std::vector<ImuSample>& imu) {
  auto out = open_out(path);
  out << "t_ms,ax,ay,az,gx,gy,gz\n";
  for (const auto& s : imu) {
    out << fmt(s.t_ms);
    for (float v : s.v) out << ',' << fmt(static_cast<double>(v));
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

namespace {

std::uint32_t le32(const std::byte* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le16(const std::byte* p) {
  return static_cast<std::uint16_t>(static_cast<unsigned>(p[0]) | (static_cast<unsigned>(p[1]) << 8));
}

void put32(std::vector<std::byte>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

void put16(std::vector<std::byte>& b, std::uint16_t v) {
  b.push_back(static_cast<std::byte>(v & 0xff));
  b.push_back(static_cast<std::byte>(v >> 8));
}

void put_tag(std::vector<std::byte>& b, const char* tag) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::byte>(tag[i]));
}

bool tag_is(const std::byte* p, const char* tag) { return std::memcmp(p, tag, 4) == 0; }

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const std::string where = "'" + path.string() + "'";
  if (bytes.size() < 12 || !tag_is(bytes.data(), "RIFF") || !tag_is(bytes.data() + 8, "WAVE")) {
    throw FormatError(where + " is not a RIFF/WAVE file");
  }
  WavData out;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::byte* chunk = bytes.data() + pos;
    const std::size_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw FormatError(where + ": chunk runs past end of file");
    if (tag_is(chunk, "fmt ")) {
      if (size < 16) throw FormatError(where + ": fmt chunk too short");
      const auto format = le16(bytes.data() + body);
      const auto channels = le16(bytes.data() + body + 2);
      const auto rate = le32(bytes.data() + body + 4);
      const auto bits = le16(bytes.data() + body + 14);
      if (format != 1) throw FormatError(where + ": only PCM audio is supported (format " + std::to_string(format) + ")");
      if (channels != 1) throw FormatError(where + ": mono audio required, got " + std::to_string(channels) + " channels");
      if (bits != 16) throw FormatError(where + ": 16-bit samples required, got " + std::to_string(bits));
      out.sample_rate = rate;
      have_fmt = true;
    } else if (tag_is(chunk, "data")) {
      if (!have_fmt) throw FormatError(where + ": data chunk before fmt chunk");
      if (size % 2 != 0) throw FormatError(where + ": odd-sized PCM16 data chunk");
      out.samples.resize(size / 2);
      for (std::size_t i = 0; i < out.samples.size(); ++i) {
        const auto raw = static_cast<std::int16_t>(le16(bytes.data() + body + 2 * i));
        out.samples[i] = static_cast<float>(raw) / 32768.0f;
      }
      return out;
    }
    pos = body + size + (size & 1);
  }
  throw FormatError(where + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const std::vector<float>& samples, double sample_rate) {
  const auto rate = static_cast<std::uint32_t>(std::lround(sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<std::byte> b;
  b.reserve(44 + data_bytes);
  put_tag(b, "RIFF");
  put32(b, 36 + data_bytes);
  put_tag(b, "WAVE");
  put_tag(b, "fmt ");
  put32(b, 16);
  put16(b, 1);
  put16(b, 1);
  put32(b, rate);
  put32(b, rate * 2);
  put16(b, 2);
  put16(b, 16);
  put_tag(b, "data");
  put32(b, data_bytes);
  for (float s : samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    const long q = std::clamp(std::lround(c * 32768.0f), -32768L, 32767L);
    put16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  write_file_bytes(path, b);
}

std::vector<Label> read_labels_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  expect_header(in, path, "start_ms,end_ms,class,context");
  std::vector<Label> out;
  std::string line;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty() || trim(line) == "\r") continue;
    const auto fields = split_csv(line);
    if (fields.size() != 4) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": expected 4 fields, got " +
                       std::to_string(fields.size()));
    }
    Label l;
    l.start_ms = parse_number(fields[0], path, n);
    l.end_ms = parse_number(fields[1], path, n);
    l.cls = trim(fields[2]);
    l.context = trim(fields[3]);
    if (l.cls.empty()) throw ParseError(path.string() + ":" + std::to_string(n) + ": empty class name");
    out.push_back(std::move(l));
  }
  return out;
}

void write_labels_csv(const std::filesystem::path& path, const std::vector<Label>& labels) {
  auto out = open_out(path);
  out << "start_ms,end_ms,class,context\n";
  for (const auto& l : labels) out << fmt(l.start_ms) << ',' << fmt(l.end_ms) << ',' << l.cls << ',' << l.context << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

LabeledSession load_session(const std::filesystem::path& imu_path, const std::filesystem::path& wav_path,
                            const std::filesystem::path& labels_path, double expected_audio_rate,
                            const std::vector<std::string>& class_names) {
  LabeledSession s;
  s.participant = imu_path.stem().string();
  s.imu = read_imu_csv(imu_path);
  auto wav = read_wav(wav_path);
  if (expected_audio_rate > 0.0 && wav.sample_rate != expected_audio_rate) {
    throw RateError("'" + wav_path.string() + "' is sampled at " + fmt(wav.sample_rate) + " Hz, expected " +
                    fmt(expected_audio_rate) + " Hz");
  }
  s.audio_rate = wav.sample_rate;
  s.audio = std::move(wav.samples);
  s.labels = read_labels_csv(labels_path);
  s.validate(class_names);
  return s;
}

void save_session(const LabeledSession& s, const std::filesystem::path& imu_path,
                  const std::filesystem::path& wav_path, const std::filesystem::path& labels_path) {
  write_imu_csv(imu_path, s.imu);
  write_wav(wav_path, s.audio, s.audio_rate);
  write_labels_csv(labels_path, s.labels);
}

}  // namespace watchhar
