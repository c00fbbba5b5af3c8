#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "watchhar/session.hpp"
#include "watchhar/stream.hpp"

namespace watchhar::metrics {

struct BinaryCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  double precision() const noexcept;
  double recall() const noexcept;
  /// 2PR/(P+R), or 0 when P+R == 0.
  double f1() const noexcept;
};

BinaryCounts binary_counts(const std::vector<bool>& pred, const std::vector<bool>& truth);
double binary_f1(const std::vector<bool>& pred, const std::vector<bool>& truth);

/// Support-weighted mean of one-vs-rest F1 over the classes present in `truth`.
double weighted_f1(std::span<const int> pred, std::span<const int> truth);

/// Rows are ground truth, columns predictions. Ids outside [0, n) throw
/// DomainError.
std::vector<std::vector<std::uint64_t>> confusion_matrix(std::span<const int> pred, std::span<const int> truth,
                                                         std::size_t n_classes);

struct ContextAccuracy {
  std::map<std::string, double> per_context;
  std::map<std::string, std::uint64_t> support;
  double mean = 0.0;    // unweighted over contexts that have samples
  double pooled = 0.0;  // over all samples
  std::vector<std::string> skipped;  // listed in `expected` but without samples
};

ContextAccuracy context_accuracy(std::span<const int> pred, std::span<const int> truth,
                                 std::span<const std::string> contexts,
                                 std::span<const std::string> expected = {});

struct Latency {
  std::optional<double> onset_s;
  std::optional<double> offset_s;
  std::size_t detected = 0;
  std::size_t miss_count = 0;       // labeled events without a gate_on
  std::size_t offset_missing = 0;   // detected events whose gate never closed
  double onset_total_s = 0.0;
  double offset_total_s = 0.0;

  /// Pools two sessions' latencies; means are recomputed from the totals.
  void merge(const Latency& other);
};

/// Onset: first gate_on at or after the interval start (and before the next
/// interval starts) minus the start. Offset: first gate_off at or after the
/// interval end minus the end. Undetected intervals are excluded and counted.
Latency onset_offset_latency(std::span<const stream::PredictionEvent> events, std::span<const Label> labels);

/// Gate state after each detector hop, and the matching trailing-edge truth.
struct HopSeries {
  std::vector<double> t_ms;
  std::vector<bool> pred;
  std::vector<bool> truth;
};

HopSeries hop_series(std::span<const stream::PredictionEvent> events, std::span<const Label> labels);

struct LatencyStats {
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  std::size_t iters = 0;
};

/// Linear-interpolated percentiles over the samples.
LatencyStats summarize_latency(std::vector<double> samples_ms);

struct EvalReport {
  double f1_binary = 0.0;
  double f1_weighted = 0.0;
  ContextAccuracy context_accuracy;
  Latency latency;
  std::vector<std::vector<std::uint64_t>> confusion;
  std::vector<std::string> class_names;
  std::uint64_t flops = 0;
  std::optional<LatencyStats> latency_ms;
  std::size_t hops = 0;
  std::size_t classified = 0;
  std::size_t unlabeled_predictions = 0;

  nlohmann::json to_json() const;
  std::string summary() const;
};

/// Per-hop detection F1, latency, and classification metrics for classifier
/// events that fall inside labeled intervals.
EvalReport evaluate(std::span<const stream::PredictionEvent> events, std::span<const Label> labels,
                    const std::vector<std::string>& class_names, std::uint64_t flops = 0);

struct SessionEval {
  std::span<const stream::PredictionEvent> events;
  std::span<const Label> labels;
};

/// Pooled evaluation over independent sessions, computed on up to `threads`
/// workers; the result does not depend on the thread count.
EvalReport evaluate_sessions(const std::vector<SessionEval>& sessions, const std::vector<std::string>& class_names,
                             std::uint64_t flops = 0, std::size_t threads = 1);

/// Field names every serialized report carries.
const std::vector<std::string>& report_fields();

}  // namespace watchhar::metrics
