#pragma once

#include <cstdint>

#include <json.hpp>

#include "watchhar/metrics.hpp"
#include "watchhar/models.hpp"

namespace watchhar {

struct BenchReport {
  std::string preset;
  std::size_t iters = 0;
  std::size_t warmup = 0;
  metrics::LatencyStats detector;
  metrics::LatencyStats classifier;  // log-mel generation through prediction
  models::FlopsReport flops;

  nlohmann::json to_json() const;
  /// Human-readable table: one row per stage, FLOPs in G with 3 decimals.
  std::string table() const;
};

/// Wall-clock timing of single-window passes on seeded random inputs.
/// Requires iters >= 30 and warmup >= 5 (ConfigError otherwise).
BenchReport bench_latency(const models::HarModel& model, std::size_t iters, std::size_t warmup,
                          std::uint64_t seed = 42);

}  // namespace watchhar
