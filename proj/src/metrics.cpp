#include "watchhar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <thread>

#include "watchhar/error.hpp"

namespace watchhar::metrics {

using stream::EventKind;
using stream::PredictionEvent;

double BinaryCounts::precision() const noexcept {
  return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double BinaryCounts::recall() const noexcept {
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double BinaryCounts::f1() const noexcept {
  const double p = precision();
  const double r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

namespace {

template <class A, class B>
void same_length(const A& a, const B& b) {
  if (a.size() != b.size()) {
    throw ShapeError("predictions have " + std::to_string(a.size()) + " entries but truth has " +
                     std::to_string(b.size()));
  }
}

}  // namespace

BinaryCounts binary_counts(const std::vector<bool>& pred, const std::vector<bool>& truth) {
  same_length(pred, truth);
  BinaryCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && truth[i]) ++c.tp;
    else if (pred[i]) ++c.fp;
    else if (truth[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double binary_f1(const std::vector<bool>& pred, const std::vector<bool>& truth) { return binary_counts(pred, truth).f1(); }

double weighted_f1(std::span<const int> pred, std::span<const int> truth) {
  same_length(pred, truth);
  if (truth.empty()) return 0.0;
  std::map<int, BinaryCounts> per;
  for (int c : truth) per[c];
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = pred[i];
    if (p == t) {
      ++per[t].tp;
    } else {
      ++per[t].fn;
      auto it = per.find(p);
      if (it != per.end()) ++it->second.fp;
    }
  }
  const double n = static_cast<double>(truth.size());
  double total = 0.0;
  for (const auto& [cls, c] : per) total += (static_cast<double>(c.tp + c.fn) / n) * c.f1();
  return total;
}

std::vector<std::vector<std::uint64_t>> confusion_matrix(std::span<const int> pred, std::span<const int> truth,
                                                         std::size_t n_classes) {
  same_length(pred, truth);
  std::vector<std::vector<std::uint64_t>> m(n_classes, std::vector<std::uint64_t>(n_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || pred[i] < 0 || static_cast<std::size_t>(truth[i]) >= n_classes ||
        static_cast<std::size_t>(pred[i]) >= n_classes) {
      throw DomainError("class id outside [0, " + std::to_string(n_classes) + ")");
    }
    ++m[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  }
  return m;
}

ContextAccuracy context_accuracy(std::span<const int> pred, std::span<const int> truth,
                                 std::span<const std::string> contexts, std::span<const std::string> expected) {
  same_length(pred, truth);
  same_length(pred, contexts);
  ContextAccuracy r;
  std::map<std::string, std::uint64_t> correct;
  std::uint64_t all_correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ++r.support[contexts[i]];
    if (pred[i] == truth[i]) {
      ++correct[contexts[i]];
      ++all_correct;
    }
  }
  for (const auto& [ctx, n] : r.support) {
    r.per_context[ctx] = static_cast<double>(correct[ctx]) / static_cast<double>(n);
    r.mean += r.per_context[ctx];
  }
  if (!r.per_context.empty()) r.mean /= static_cast<double>(r.per_context.size());
  if (!pred.empty()) r.pooled = static_cast<double>(all_correct) / static_cast<double>(pred.size());
  for (const auto& ctx : expected) {
    if (!r.support.count(ctx) && std::find(r.skipped.begin(), r.skipped.end(), ctx) == r.skipped.end()) {
      r.skipped.push_back(ctx);
    }
  }
  return r;
}

Latency onset_offset_latency(std::span<const PredictionEvent> events, std::span<const Label> labels) {
  std::vector<Label> sorted(labels.begin(), labels.end());
  std::sort(sorted.begin(), sorted.end(), [](const Label& a, const Label& b) { return a.start_ms < b.start_ms; });
  Latency r;
  double onset_sum = 0.0, offset_sum = 0.0;
  std::size_t offsets = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto& l = sorted[i];
    const double limit = i + 1 < sorted.size() ? sorted[i + 1].start_ms : INFINITY;
    const PredictionEvent* on = nullptr;
    for (const auto& e : events) {
      if (e.kind == EventKind::gate_on && e.t_ms >= l.start_ms && e.t_ms < limit) {
        on = &e;
        break;
      }
    }
    if (!on) {
      ++r.miss_count;
      continue;
    }
    ++r.detected;
    onset_sum += (on->t_ms - l.start_ms) / 1000.0;
    const PredictionEvent* off = nullptr;
    for (const auto& e : events) {
      if (e.kind == EventKind::gate_off && e.t_ms >= l.end_ms && e.t_ms >= on->t_ms) {
        off = &e;
        break;
      }
    }
    if (!off) {
      ++r.offset_missing;
      continue;
    }
    offset_sum += (off->t_ms - l.end_ms) / 1000.0;
    ++offsets;
  }
  r.onset_total_s = onset_sum;
  r.offset_total_s = offset_sum;
  if (r.detected) r.onset_s = onset_sum / static_cast<double>(r.detected);
  if (offsets) r.offset_s = offset_sum / static_cast<double>(offsets);
  return r;
}

void Latency::merge(const Latency& other) {
  detected += other.detected;
  miss_count += other.miss_count;
  offset_missing += other.offset_missing;
  onset_total_s += other.onset_total_s;
  offset_total_s += other.offset_total_s;
  const std::size_t offsets = detected - offset_missing;
  onset_s = detected ? std::optional<double>(onset_total_s / static_cast<double>(detected)) : std::nullopt;
  offset_s = offsets ? std::optional<double>(offset_total_s / static_cast<double>(offsets)) : std::nullopt;
}

HopSeries hop_series(std::span<const PredictionEvent> events, std::span<const Label> labels) {
  HopSeries s;
  bool active = false;
  auto covered = [&](double t) {
    for (const auto& l : labels) {
      if (l.covers(t)) return true;
    }
    return false;
  };
  for (const auto& e : events) {
    switch (e.kind) {
      case EventKind::detector:
        s.t_ms.push_back(e.t_ms);
        s.pred.push_back(active);
        s.truth.push_back(covered(e.t_ms));
        break;
      case EventKind::gate_on:
      case EventKind::gate_off:
        active = e.kind == EventKind::gate_on;
        // A transition applies to the hop it was emitted on.
        if (!s.t_ms.empty() && s.t_ms.back() == e.t_ms) s.pred.back() = active;
        break;
      case EventKind::classifier:
        break;
    }
  }
  return s;
}

LatencyStats summarize_latency(std::vector<double> samples_ms) {
  LatencyStats s;
  s.iters = samples_ms.size();
  if (samples_ms.empty()) return s;
  std::sort(samples_ms.begin(), samples_ms.end());
  double sum = 0.0;
  for (double v : samples_ms) sum += v;
  s.mean_ms = sum / static_cast<double>(samples_ms.size());
  auto pct = [&](double q) {
    const double pos = q * static_cast<double>(samples_ms.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, samples_ms.size() - 1);
    return samples_ms[lo] + (pos - static_cast<double>(lo)) * (samples_ms[hi] - samples_ms[lo]);
  };
  s.p50_ms = pct(0.5);
  s.p95_ms = pct(0.95);
  return s;
}

namespace {

struct Partial {
  HopSeries hops;
  Latency latency;
  std::vector<int> pred, truth;
  std::vector<std::string> ctx;
  std::vector<std::string> expected_ctx;
  std::size_t unlabeled = 0;
};

Partial evaluate_one(const SessionEval& s, const std::vector<std::string>& class_names) {
  Partial p;
  p.hops = hop_series(s.events, s.labels);
  p.latency = onset_offset_latency(s.events, s.labels);
  for (const auto& l : s.labels) p.expected_ctx.push_back(l.context);
  for (const auto& e : s.events) {
    if (e.kind != EventKind::classifier) continue;
    const Label* hit = nullptr;
    for (const auto& l : s.labels) {
      if (l.covers(e.t_ms)) hit = &l;
    }
    if (!hit) {
      ++p.unlabeled;
      continue;
    }
    const auto it = std::find(class_names.begin(), class_names.end(), hit->cls);
    if (it == class_names.end()) throw ValidationError("label class '" + hit->cls + "' is not a model class");
    p.pred.push_back(e.cls);
    p.truth.push_back(static_cast<int>(it - class_names.begin()));
    p.ctx.push_back(hit->context);
  }
  return p;
}

}  // namespace

EvalReport evaluate_sessions(const std::vector<SessionEval>& sessions, const std::vector<std::string>& class_names,
                             std::uint64_t flops, std::size_t threads) {
  std::vector<Partial> parts(sessions.size());
  std::vector<std::exception_ptr> errors(sessions.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, sessions.size()));
  auto work = [&](std::size_t w) {
    for (std::size_t i = w; i < sessions.size(); i += workers) {
      try {
        parts[i] = evaluate_one(sessions[i], class_names);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  // Merge in session order so the pooled result is independent of scheduling.
  EvalReport r;
  r.class_names = class_names;
  r.flops = flops;
  std::vector<bool> hop_pred, hop_truth;
  std::vector<int> pred, truth;
  std::vector<std::string> ctx, expected;
  for (const auto& p : parts) {
    hop_pred.insert(hop_pred.end(), p.hops.pred.begin(), p.hops.pred.end());
    hop_truth.insert(hop_truth.end(), p.hops.truth.begin(), p.hops.truth.end());
    r.latency.merge(p.latency);
    pred.insert(pred.end(), p.pred.begin(), p.pred.end());
    truth.insert(truth.end(), p.truth.begin(), p.truth.end());
    ctx.insert(ctx.end(), p.ctx.begin(), p.ctx.end());
    expected.insert(expected.end(), p.expected_ctx.begin(), p.expected_ctx.end());
    r.unlabeled_predictions += p.unlabeled;
  }
  r.hops = hop_pred.size();
  r.f1_binary = binary_f1(hop_pred, hop_truth);
  r.classified = pred.size();
  r.f1_weighted = weighted_f1(pred, truth);
  r.confusion = confusion_matrix(pred, truth, class_names.size());
  r.context_accuracy = context_accuracy(pred, truth, ctx, expected);
  return r;
}

EvalReport evaluate(std::span<const PredictionEvent> events, std::span<const Label> labels,
                    const std::vector<std::string>& class_names, std::uint64_t flops) {
  return evaluate_sessions({SessionEval{events, labels}}, class_names, flops, 1);
}

const std::vector<std::string>& report_fields() {
  static const std::vector<std::string> fields = {
      "f1_binary", "f1_weighted", "context_accuracy", "onset_s", "offset_s", "miss_count",
      "confusion", "class_names", "flops",            "latency_ms", "hops",   "classified",
  };
  return fields;
}

nlohmann::json EvalReport::to_json() const {
  using nlohmann::json;
  json j;
  j["f1_binary"] = f1_binary;
  j["f1_weighted"] = f1_weighted;
  j["context_accuracy"] = {
      {"per_context", context_accuracy.per_context},
      {"support", context_accuracy.support},
      {"mean", context_accuracy.mean},
      {"pooled", context_accuracy.pooled},
      {"skipped", context_accuracy.skipped},
  };
  j["onset_s"] = latency.onset_s ? json(*latency.onset_s) : json(nullptr);
  j["offset_s"] = latency.offset_s ? json(*latency.offset_s) : json(nullptr);
  j["miss_count"] = latency.miss_count;
  j["offset_missing"] = latency.offset_missing;
  j["confusion"] = confusion;
  j["class_names"] = class_names;
  j["flops"] = flops;
  if (latency_ms) {
    j["latency_ms"] = {{"mean", latency_ms->mean_ms}, {"p50", latency_ms->p50_ms}, {"p95", latency_ms->p95_ms},
                       {"iters", latency_ms->iters}};
  } else {
    j["latency_ms"] = nullptr;
  }
  j["hops"] = hops;
  j["classified"] = classified;
  j["unlabeled_predictions"] = unlabeled_predictions;
  return j;
}

std::string EvalReport::summary() const {
  auto secs = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2fs", *v);
    return std::string(buf);
  };
  char buf[256];
  std::snprintf(buf, sizeof buf, "F1 %.4f | weighted F1 %.4f | context acc %.4f | onset %s | offset %s | misses %zu",
                f1_binary, f1_weighted, context_accuracy.mean, secs(latency.onset_s).c_str(),
                secs(latency.offset_s).c_str(), latency.miss_count);
  return buf;
}

}  // namespace watchhar::metrics
