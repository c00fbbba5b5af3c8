#include "watchhar/fixtures.hpp"

#include <cmath>

#include "watchhar/error.hpp"
#include "watchhar/rng.hpp"

namespace watchhar::fixtures {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::array<float, 6> kIdlePose{0.0f, 0.0f, 9.81f, 0.0f, 0.0f, 0.0f};

// The energy detector's output is sigmoid(kGain * (s - kThreshold)), where s
// sums the rectified z-scores that survive the conv/pool stack.
constexpr float kGain = 2000.0f;
constexpr float kThreshold = 0.01f;

Tensor uniform_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  std::vector<float> v(shape_size(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(shape, std::move(v));
}

std::size_t fan_in(const Shape& s) {
  std::size_t f = 1;
  for (std::size_t i = 1; i < s.size(); ++i) f *= s[i];
  return f;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void finish_config(WeightArchive& a, const models::ModelConfig& cfg) {
  auto j = cfg.to_json();
  std::vector<std::string> names;
  for (const auto& e : a.entries()) names.push_back(e.name);
  j["tensors"] = names;
  a.set_config(j);
  a.validate();
}

}  // namespace

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names = {"chopping",  "blender", "handwash", "toothbrush",
                                                 "drilling",  "sawing",  "typing",   "clapping"};
  return names;
}

const std::vector<std::string>& context_names() {
  static const std::vector<std::string> names = {"kitchen", "bathroom", "workshop", "misc"};
  return names;
}

const std::string& context_of(std::size_t cls) { return context_names().at((cls % class_names().size()) / 2); }

models::ModelConfig default_config(const Preset& p, models::FusionVariant variant) {
  auto cfg = models::ModelConfig::for_preset(p, class_names(), context_names());
  cfg.fusion.variant = variant;
  cfg.validate();
  return cfg;
}

WeightArchive random_archive(const models::ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  WeightArchive a;
  for (const auto& spec : models::weight_schema(cfg)) {
    const auto& n = spec.name;
    Tensor t;
    if (n == "fe.mel.weight") {
      t = dsp::build_mel_filterbank(cfg.frontend.stft, cfg.frontend.mel);
    } else if (n == "fe.mel.bias") {
      t = Tensor::zeros(spec.shape);
    } else if (ends_with(n, ".bn.gamma")) {
      t = uniform_tensor(spec.shape, rng, 0.8, 1.2);
    } else if (ends_with(n, ".bn.beta") || ends_with(n, ".bn.mean")) {
      t = uniform_tensor(spec.shape, rng, -0.1, 0.1);
    } else if (ends_with(n, ".bn.var")) {
      t = uniform_tensor(spec.shape, rng, 0.5, 1.5);
    } else if (ends_with(n, ".bias")) {
      t = uniform_tensor(spec.shape, rng, -0.05, 0.05);
    } else {
      // Variance 1/fan_in keeps activations near unit scale through depth.
      const double a_ = std::sqrt(3.0 / static_cast<double>(fan_in(spec.shape)));
      t = uniform_tensor(spec.shape, rng, -a_, a_);
    }
    a.add(n, std::move(t));
  }
  finish_config(a, cfg);
  return a;
}

WeightArchive with_energy_detector(const WeightArchive& archive, const models::EventDetectorConfig& cfg) {
  cfg.validate();
  const std::size_t in = cfg.input_channels;
  if (cfg.channels[0] < 2 * in) {
    throw ConfigError("energy detector needs at least " + std::to_string(2 * in) + " first-block channels");
  }
  WeightArchive out(archive.config_text(), archive.version());
  for (const auto& e : archive.entries()) {
    if (e.name.rfind("ed.", 0) != 0) out.add(e.name, e.tensor);
  }

  std::size_t ch = in;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const std::string p = "ed.b" + std::to_string(i);
    const std::size_t k = cfg.kernels[i];
    const std::size_t co = cfg.channels[i];
    std::vector<float> dw(ch * k, 0.0f);
    for (std::size_t c = 0; c < ch; ++c) {
      if (i == 0) {
        dw[c * k + (k - 1)] = 1.0f;  // pass the sample through unchanged
      } else {
        for (std::size_t j = 0; j < k; ++j) dw[c * k + j] = 1.0f / static_cast<float>(k);
      }
    }
    out.add(p + ".dw.weight", Tensor({ch, 1, k}, std::move(dw)));
    out.add(p + ".dw.bias", Tensor::zeros({ch}));
    std::vector<float> pw(co * ch, 0.0f);
    if (i == 0) {
      // Split each channel into its positive and negative parts (after ReLU).
      for (std::size_t c = 0; c < ch; ++c) {
        pw[(2 * c) * ch + c] = 1.0f;
        pw[(2 * c + 1) * ch + c] = -1.0f;
      }
    } else {
      for (std::size_t c = 0; c < std::min(ch, co); ++c) pw[c * ch + c] = 1.0f;
    }
    out.add(p + ".pw.weight", Tensor({co, ch, 1}, std::move(pw)));
    out.add(p + ".pw.bias", Tensor::zeros({co}));
    ch = co;
  }

  std::size_t flat = 0;
  for (const auto& l : models::trace_event_detector(cfg)) {
    if (l.kind == "flatten") flat = l.out_shape[0];
  }
  std::size_t prev = flat;
  for (std::size_t i = 0; i < cfg.dense.size(); ++i) {
    const std::size_t o = cfg.dense[i];
    std::vector<float> w(o * prev, 0.0f);
    if (i == 0) {
      for (std::size_t j = 0; j < prev; ++j) w[j] = 1.0f;  // unit 0 sums everything
    } else {
      w[0] = 1.0f;
    }
    out.add("ed.fc" + std::to_string(i) + ".weight", Tensor({o, prev}, std::move(w)));
    out.add("ed.fc" + std::to_string(i) + ".bias", Tensor::zeros({o}));
    prev = o;
  }
  std::vector<float> w(prev, 0.0f);
  w[0] = kGain;
  out.add("ed.out.weight", Tensor({1, prev}, std::move(w)));
  out.add("ed.out.bias", Tensor({1}, {-kGain * kThreshold}));

  auto j = out.config();
  std::vector<std::string> names;
  for (const auto& e : out.entries()) names.push_back(e.name);
  j["tensors"] = names;
  out.set_config(j);
  out.validate();
  return out;
}

WeightArchive energy_archive(const models::ModelConfig& cfg, std::uint64_t seed) {
  return with_energy_detector(random_archive(cfg, seed), cfg.detector);
}

double class_frequency(const Preset& p, std::size_t cls) {
  const double nyquist = p.audio_rate / 2.0;
  const double n = static_cast<double>(class_names().size());
  return nyquist * (0.1 + 0.8 * static_cast<double>(cls % class_names().size()) / n);
}

std::vector<float> class_audio(const Preset& p, std::size_t cls, std::size_t n, std::size_t offset) {
  const double f1 = class_frequency(p, cls);
  const double f2 = 0.5 * f1;
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i + offset) / p.audio_rate;
    out[i] = static_cast<float>(0.5 * std::sin(2.0 * kPi * f1 * t) + 0.15 * std::sin(2.0 * kPi * f2 * t));
  }
  return out;
}

LabeledSession synth_session(const Preset& p, double duration_s, const std::vector<Segment>& segments,
                             std::uint64_t seed, const std::string& participant) {
  LabeledSession s;
  s.participant = participant;
  s.imu_rate = p.imu_rate;
  s.audio_rate = p.audio_rate;
  for (const auto& seg : segments) {
    s.labels.push_back({seg.start_s * 1000.0, seg.end_s * 1000.0, class_names().at(seg.cls), context_of(seg.cls)});
  }
  s.validate(class_names());

  Rng rng(seed);
  const auto n_imu = static_cast<std::size_t>(std::llround(duration_s * p.imu_rate));
  s.imu.resize(n_imu);
  for (std::size_t i = 0; i < n_imu; ++i) {
    auto& f = s.imu[i];
    f.t_ms = static_cast<double>(i) * 1000.0 / p.imu_rate;
    f.v = kIdlePose;
    if (s.label_at(f.t_ms)) {
      for (std::size_t c = 0; c < 6; ++c) f.v[c] += static_cast<float>(rng.normal(0.0, c < 3 ? 2.0 : 0.5));
    }
  }

  const auto n_audio = static_cast<std::size_t>(std::llround(duration_s * p.audio_rate));
  s.audio.assign(n_audio, 0.0f);
  for (const auto& seg : segments) {
    // Sample i sits at i / rate; it belongs to the segment when start < t <= end.
    const auto first = static_cast<std::size_t>(std::floor(seg.start_s * p.audio_rate)) + 1;
    const auto last = std::min(n_audio, static_cast<std::size_t>(std::floor(seg.end_s * p.audio_rate)) + 1);
    if (first >= last) continue;
    const auto tone = class_audio(p, seg.cls, last - first, first);
    std::copy(tone.begin(), tone.end(), s.audio.begin() + static_cast<std::ptrdiff_t>(first));
  }
  return s;
}

LabeledSession quiet_session(const Preset& p, double duration_s) { return synth_session(p, duration_s, {}, 0, "quiet"); }

LabeledSession planted_session(const Preset& p, std::uint64_t seed, std::size_t cls) {
  return synth_session(p, 30.0, {{10.0, 18.0, cls}}, seed, "planted");
}

std::vector<FixtureFile> write_fixtures(const std::filesystem::path& dir, std::uint64_t seed, const Preset& p) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  const auto cfg = default_config(p);
  const auto random = random_archive(cfg, seed);
  const auto energy = with_energy_detector(random, cfg.detector);
  write_archive(random, dir / "model_random.whar");
  write_archive(energy, dir / "model_energy.whar");
  write_archive(models::quantize_archive_f16(energy), dir / "model_energy_f16.whar");

  const double long_s = std::max(60.0, 4.0 * (p.classifier_window_s + 4.0) + 12.0);
  const double seg_s = p.classifier_window_s + 6.0;
  std::vector<Segment> multi;
  for (std::size_t k = 0; k < 4; ++k) {
    const double start = 5.0 + static_cast<double>(k) * (seg_s + 6.0);
    if (start + seg_s > long_s - 4.0) break;
    multi.push_back({start, start + seg_s, (2 * k + seed) % class_names().size()});
  }
  const std::vector<std::pair<std::string, LabeledSession>> sessions = {
      {"planted", planted_session(p, seed + 1)},
      {"multi", synth_session(p, long_s, multi, seed + 2, "multi")},
      {"quiet", quiet_session(p, 20.0)},
  };
  for (const auto& [name, s] : sessions) {
    save_session(s, dir / (name + ".imu.csv"), dir / (name + ".wav"), dir / (name + ".labels.csv"));
  }

  const std::vector<std::string> names = {"model_random.whar", "model_energy.whar", "model_energy_f16.whar",
                                          "planted.imu.csv",   "planted.wav",       "planted.labels.csv",
                                          "multi.imu.csv",     "multi.wav",         "multi.labels.csv",
                                          "quiet.imu.csv",     "quiet.wav",         "quiet.labels.csv"};
  std::vector<FixtureFile> files;
  nlohmann::json manifest;
  manifest["seed"] = seed;
  manifest["preset"] = p.name;
  manifest["files"] = nlohmann::json::array();
  for (const auto& n : names) {
    const auto bytes = read_file_bytes(dir / n);
    FixtureFile f{n, bytes.size(), crc32_of(bytes)};
    manifest["files"].push_back({{"name", f.name}, {"bytes", f.bytes}, {"crc32", f.crc32}});
    files.push_back(f);
  }
  const std::string text = manifest.dump(2) + "\n";
  write_file_bytes(dir / "manifest.json", std::as_bytes(std::span(text)));
  return files;
}

}  // namespace watchhar::fixtures
