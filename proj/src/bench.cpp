#include "watchhar/bench.hpp"

#include <chrono>
#include <cstdio>

#include "watchhar/error.hpp"
#include "watchhar/rng.hpp"

namespace watchhar {

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double scale) {
  std::vector<float> v(shape_size(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, scale));
  return Tensor(shape, std::move(v));
}

template <class F>
metrics::LatencyStats time_loop(std::size_t iters, std::size_t warmup, F&& f) {
  for (std::size_t i = 0; i < warmup; ++i) f();
  std::vector<double> ms;
  ms.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return metrics::summarize_latency(std::move(ms));
}

}  // namespace

BenchReport bench_latency(const models::HarModel& model, std::size_t iters, std::size_t warmup, std::uint64_t seed) {
  if (iters < 30) throw ConfigError("bench needs at least 30 iterations, got " + std::to_string(iters));
  if (warmup < 5) throw ConfigError("bench needs at least 5 warmup iterations, got " + std::to_string(warmup));
  const auto& cfg = model.config();
  BenchReport r;
  r.preset = cfg.frontend.preset;
  r.iters = iters;
  r.warmup = warmup;
  r.flops = models::count_flops(cfg);

  Rng rng(seed);
  const Tensor det = random_tensor({cfg.detector.input_channels, cfg.detector.window}, rng, 1.0);
  const Tensor imu = random_tensor({1, cfg.imu.window, cfg.imu.axes}, rng, 1.0);
  const Tensor audio = random_tensor({cfg.frontend.window_samples}, rng, 0.1);
  volatile float sink = 0.0f;
  r.detector = time_loop(iters, warmup, [&] { sink = sink + model.detect(det); });
  r.classifier = time_loop(iters, warmup, [&] { sink = sink + model.classify(imu, audio).logits[0]; });
  return r;
}

nlohmann::json BenchReport::to_json() const {
  auto stats = [](const metrics::LatencyStats& s) {
    return nlohmann::json{{"mean_ms", s.mean_ms}, {"p50_ms", s.p50_ms}, {"p95_ms", s.p95_ms}, {"iters", s.iters}};
  };
  return {
      {"preset", preset},
      {"iters", iters},
      {"warmup", warmup},
      {"detector", stats(detector)},
      {"classifier", stats(classifier)},
      {"flops",
       {{"detector", flops.detector},
        {"frontend", flops.frontend},
        {"imu_encoder", flops.imu_encoder},
        {"audio_encoder", flops.audio_encoder},
        {"fusion", flops.fusion},
        {"classifier", flops.classifier()}}},
  };
}

std::string BenchReport::table() const {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "preset %s, %zu iterations after %zu warmup\n", preset.c_str(), iters, warmup);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-12s %12s %12s %12s %10s\n", "stage", "mean_ms", "p50_ms", "p95_ms", "GFLOPs");
  out += buf;
  auto row = [&](const char* name, const metrics::LatencyStats& s, std::uint64_t f) {
    std::snprintf(buf, sizeof buf, "%-12s %#12.4g %#12.4g %#12.4g %10.3f\n", name, s.mean_ms, s.p50_ms, s.p95_ms,
                  static_cast<double>(f) / 1e9);
    out += buf;
  };
  row("detector", detector, flops.detector);
  row("classifier", classifier, flops.classifier());
  return out;
}

}  // namespace watchhar
