#include "watchhar/archive.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "watchhar/error.hpp"

namespace watchhar {

std::uint32_t crc32_of(std::span<const std::byte> bytes) noexcept {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large payloads in chunks.
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + offset), chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

WeightArchive::WeightArchive(std::string config_json, std::uint32_t version)
    : version_(version), config_(std::move(config_json)) {}

nlohmann::json WeightArchive::config() const {
  try {
    return nlohmann::json::parse(config_);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("archive config is not valid JSON: ") + e.what());
  }
}

void WeightArchive::set_config(std::string config_json) { config_ = std::move(config_json); }

void WeightArchive::set_config(const nlohmann::json& config) { config_ = config.dump(); }

void WeightArchive::add(std::string name, Tensor tensor) {
  if (name.empty()) throw ValidationError("archive entry names must be non-empty");
  if (name.size() > 0xffff) throw ValidationError("archive entry name too long: " + name.substr(0, 64));
  if (tensor.rank() > 0xff) throw ValidationError("tensor '" + name + "' has rank above 255");
  if (index_.count(name)) throw ValidationError("duplicate archive entry '" + name + "'");
  if (!tensor.all_finite()) throw ValidationError("tensor '" + name + "' holds NaN or Inf");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(tensor)});
}

void WeightArchive::replace(const std::string& name, Tensor tensor) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("no archive entry '" + name + "'");
  if (!tensor.all_finite()) throw ValidationError("tensor '" + name + "' holds NaN or Inf");
  entries_[it->second].tensor = std::move(tensor);
}

const Tensor& WeightArchive::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("archive has no entry '" + name + "'");
  return entries_[it->second].tensor;
}

std::size_t WeightArchive::payload_bytes() const noexcept {
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.tensor.payload_size();
  return total;
}

void WeightArchive::validate() const {
  const auto cfg = config();
  if (!cfg.is_object()) throw ValidationError("archive config must be a JSON object");
  if (auto it = cfg.find("tensors"); it != cfg.end()) {
    if (!it->is_array()) throw ValidationError("config 'tensors' must be an array of names");
    for (const auto& n : *it) {
      if (!n.is_string() || !contains(n.get<std::string>())) {
        throw ValidationError("config references missing tensor " + n.dump());
      }
    }
  }
  for (const auto& e : entries_) {
    if (e.name.empty()) throw ValidationError("archive entry names must be non-empty");
    if (!e.tensor.all_finite()) throw ValidationError("tensor '" + e.name + "' holds NaN or Inf");
  }
}

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class T>
  void scalar(T v) {
    bytes(&v, sizeof(T));
  }
  std::vector<std::byte> take() { return std::move(out_); }

 private:
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}

  std::span<const std::byte> bytes(std::size_t n, const char* what) {
    if (n > in_.size() - pos_) {
      throw FormatError(std::string("archive truncated while reading ") + what);
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <class T>
  T scalar(const char* what) {
    T v;
    std::memcpy(&v, bytes(sizeof(T), what).data(), sizeof(T));
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::byte> WeightArchive::serialize() const {
  validate();
  Writer w;
  w.bytes(kArchiveMagic, 4);
  w.scalar<std::uint32_t>(version_);
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(entries_.size()));
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(config_.size()));
  w.bytes(config_.data(), config_.size());
  for (const auto& e : entries_) {
    w.scalar<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.scalar<std::uint8_t>(static_cast<std::uint8_t>(e.tensor.dtype()));
    w.scalar<std::uint8_t>(static_cast<std::uint8_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) w.scalar<std::uint32_t>(static_cast<std::uint32_t>(d));
    const auto payload = e.tensor.payload_bytes();
    w.bytes(payload.data(), payload.size());
    w.scalar<std::uint32_t>(crc32_of(payload));
  }
  return w.take();
}

WeightArchive WeightArchive::deserialize(std::span<const std::byte> bytes) {
  Reader r(bytes);
  const auto magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kArchiveMagic, 4) != 0) throw FormatError("bad archive magic");
  const auto version = r.scalar<std::uint32_t>("version");
  if (version != kArchiveVersion) {
    throw VersionError("unsupported archive version " + std::to_string(version));
  }
  const auto count = r.scalar<std::uint32_t>("entry count");
  const auto config_len = r.scalar<std::uint32_t>("config length");
  const auto config = r.bytes(config_len, "config");

  WeightArchive a(std::string(reinterpret_cast<const char*>(config.data()), config.size()), version);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.scalar<std::uint16_t>("entry name length");
    const auto name_bytes = r.bytes(name_len, "entry name");
    std::string name(reinterpret_cast<const char*>(name_bytes.data()), name_bytes.size());
    const auto dtype_code = r.scalar<std::uint8_t>("dtype");
    if (dtype_code > 1) throw FormatError("entry '" + name + "' has unknown dtype code " + std::to_string(dtype_code));
    const auto dtype = static_cast<DType>(dtype_code);
    const auto rank = r.scalar<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.scalar<std::uint32_t>("dims");
      if (d == 0) throw FormatError("entry '" + name + "' has a zero extent");
    }
    const auto payload = r.bytes(shape_size(shape) * dtype_size(dtype), "payload");
    const auto stored_crc = r.scalar<std::uint32_t>("crc32");
    if (crc32_of(payload) != stored_crc) {
      throw CorruptionError("crc32 mismatch in archive entry '" + name + "'");
    }
    try {
      a.add(std::move(name), Tensor::from_payload(dtype, std::move(shape), payload));
    } catch (const ShapeError& e) {
      throw FormatError(e.what());
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after the last archive entry");
  a.validate();
  return a;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> data(size);
  if (size && !in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size))) {
    throw IoError("failed reading '" + path.string() + "'");
  }
  return data;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_archive(const WeightArchive& archive, const std::filesystem::path& path) {
  write_file_bytes(path, archive.serialize());
}

WeightArchive read_archive(const std::filesystem::path& path) {
  return WeightArchive::deserialize(read_file_bytes(path));
}

}  // namespace watchhar
