#include "watchhar/stream.hpp"

#include <cmath>

#include "watchhar/error.hpp"

namespace watchhar::stream {

namespace {

constexpr float kStdFloor = 1e-6f;

std::size_t whole(double x, const char* what) {
  const double r = std::round(x);
  if (!(r >= 1.0) || std::abs(x - r) > 1e-9 * std::max(1.0, r)) {
    throw ConfigError(std::string(what) + " must be a positive whole number, got " + std::to_string(x));
  }
  return static_cast<std::size_t>(r);
}

}  // namespace

PipelineConfig PipelineConfig::for_model(const models::ModelConfig& cfg) {
  PipelineConfig p;
  p.audio_rate = cfg.frontend.stft.sample_rate;
  p.classifier_window_s = static_cast<double>(cfg.frontend.window_samples) / p.audio_rate;
  return p;
}

std::size_t PipelineConfig::detector_samples() const { return whole(detector_window_s * imu_rate, "detector window"); }

std::size_t PipelineConfig::classifier_imu_samples() const {
  return whole(classifier_window_s * imu_rate, "classifier IMU window");
}

std::size_t PipelineConfig::classifier_audio_samples() const {
  return whole(classifier_window_s * audio_rate, "classifier audio window");
}

std::size_t PipelineConfig::hop_samples() const { return whole(hop_ms * imu_rate / 1000.0, "hop in IMU samples"); }

std::size_t PipelineConfig::smooth_hops() const { return whole(smooth_s * 1000.0 / hop_ms, "smoothing span in hops"); }

void PipelineConfig::validate() const {
  if (!(imu_rate > 0.0) || !(audio_rate > 0.0)) throw ConfigError("sample rates must be positive");
  if (!(hop_ms > 0.0)) throw ConfigError("hop must be positive");
  if (!(theta_on > 0.0 && theta_on < 1.0) || !(theta_off > 0.0 && theta_off < 1.0)) {
    throw ConfigError("thresholds must lie in (0, 1)");
  }
  if (theta_off > theta_on) throw ConfigError("theta_off must not exceed theta_on");
  hop_samples();
  smooth_hops();
  detector_samples();
  classifier_audio_samples();
  classifier_imu_samples();
}

MovingAverage::MovingAverage(std::size_t span) : span_(span) {
  if (span == 0) throw ConfigError("moving-average span must be positive");
}

double MovingAverage::push(double raw) {
  history_.push_back(raw);
  if (history_.size() > span_) history_.pop_front();
  // Summed afresh each time so the mean carries no drift from old inputs.
  double sum = 0.0;
  for (double v : history_) sum += v;
  value_ = sum / static_cast<double>(history_.size());
  return value_;
}

void MovingAverage::reset() {
  history_.clear();
  value_ = 0.0;
}

std::string event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::detector: return "detector";
    case EventKind::classifier: return "classifier";
    case EventKind::gate_on: return "gate_on";
    case EventKind::gate_off: return "gate_off";
  }
  return "detector";
}

EventKind parse_event_kind(const std::string& name) {
  if (name == "detector") return EventKind::detector;
  if (name == "classifier") return EventKind::classifier;
  if (name == "gate_on") return EventKind::gate_on;
  if (name == "gate_off") return EventKind::gate_off;
  throw ParseError("unknown event kind '" + name + "'");
}

namespace {

struct ChannelStats {
  double mean[6];
  double inv_std[6];
};

ChannelStats channel_stats(std::span<const ImuSample> w) {
  ChannelStats s{};
  const double n = static_cast<double>(w.size());
  for (std::size_t c = 0; c < 6; ++c) {
    double sum = 0.0;
    for (const auto& f : w) sum += f.v[c];
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& f : w) ss += (f.v[c] - mean) * (f.v[c] - mean);
    const double sd = std::max(std::sqrt(ss / n), static_cast<double>(kStdFloor));
    s.mean[c] = mean;
    s.inv_std[c] = 1.0 / sd;
  }
  return s;
}

}  // namespace

Tensor zscore_channels_first(std::span<const ImuSample> window) {
  if (window.empty()) throw ShapeError("empty IMU window");
  const auto s = channel_stats(window);
  const std::size_t n = window.size();
  std::vector<float> out(6 * n);
  for (std::size_t c = 0; c < 6; ++c) {
    for (std::size_t t = 0; t < n; ++t) {
      out[c * n + t] = static_cast<float>((window[t].v[c] - s.mean[c]) * s.inv_std[c]);
    }
  }
  return Tensor({6, n}, std::move(out));
}

Tensor zscore_time_major(std::span<const ImuSample> window) {
  if (window.empty()) throw ShapeError("empty IMU window");
  const auto s = channel_stats(window);
  const std::size_t n = window.size();
  std::vector<float> out(6 * n);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t c = 0; c < 6; ++c) {
      out[t * 6 + c] = static_cast<float>((window[t].v[c] - s.mean[c]) * s.inv_std[c]);
    }
  }
  return Tensor({1, n, 6}, std::move(out));
}

Pipeline::Pipeline(PipelineConfig cfg, InferenceBackend& backend)
    : cfg_(cfg), backend_(backend), smoother_((cfg_.validate(), cfg_.smooth_hops())) {}

void Pipeline::push_imu(const ImuSample& frame) {
  if (!std::isfinite(frame.t_ms)) throw StreamError("IMU timestamp is not finite");
  if (have_imu_) {
    const double dt = frame.t_ms - last_t_;
    if (!(dt > 0.0)) {
      throw StreamError("IMU timestamp " + std::to_string(frame.t_ms) + " ms does not advance past " +
                        std::to_string(last_t_) + " ms");
    }
    const double period = 1000.0 / cfg_.imu_rate;
    if (dt > 2.0 * period + 1e-9) {
      throw RateError("IMU gap of " + std::to_string(dt) + " ms exceeds one sample of tolerance at " +
                      std::to_string(cfg_.imu_rate) + " Hz");
    }
  } else {
    t0_ = frame.t_ms;
  }
  for (float v : frame.v) {
    if (!std::isfinite(v)) throw StreamError("IMU frame at " + std::to_string(frame.t_ms) + " ms is not finite");
  }
  have_imu_ = true;
  last_t_ = frame.t_ms;
  imu_.push_back(frame);
  if (imu_.size() > std::max(cfg_.detector_samples(), cfg_.classifier_imu_samples())) imu_.pop_front();
  ++telemetry_.imu_frames;
}

void Pipeline::push_audio(std::span<const float> samples) {
  if (samples.empty()) return;
  const double period = 1000.0 / cfg_.imu_rate;
  const double audio_ms = static_cast<double>(telemetry_.audio_received + samples.size()) * 1000.0 / cfg_.audio_rate;
  const double imu_ms = have_imu_ ? last_t_ - t0_ : -period;
  if (audio_ms > imu_ms + period + 1e-9) {
    throw RateError("audio stream leads the IMU stream by " + std::to_string(audio_ms - imu_ms) + " ms");
  }
  telemetry_.audio_received += samples.size();
  const bool keep = gate_.mode == GateMode::active && gate_.hops_active >= cfg_.mic_warmup;
  if (!keep) {
    telemetry_.audio_discarded += samples.size();
    return;
  }
  const std::size_t cap = cfg_.classifier_audio_samples();
  for (float s : samples) {
    audio_.push_back(s);
    if (audio_.size() > cap) audio_.pop_front();
  }
  telemetry_.audio_buffered += samples.size();
  telemetry_.max_audio_occupancy = std::max(telemetry_.max_audio_occupancy, audio_.size());
}

std::vector<PredictionEvent> Pipeline::tick() {
  if (!ready()) {
    throw NotReadyError("detector window needs " + std::to_string(cfg_.detector_samples()) + " IMU frames, have " +
                        std::to_string(imu_.size()));
  }
  ++telemetry_.ticks;
  std::vector<PredictionEvent> events;
  const double t = last_t_;
  const std::vector<ImuSample> window(imu_.end() - static_cast<std::ptrdiff_t>(cfg_.detector_samples()), imu_.end());

  const double raw = backend_.detect(zscore_channels_first(window), t);
  if (!(raw >= 0.0 && raw <= 1.0)) throw DomainError("detector returned " + std::to_string(raw) + ", outside [0, 1]");
  gate_.smoothed = smoother_.push(raw);

  PredictionEvent det;
  det.t_ms = t;
  det.kind = EventKind::detector;
  det.prob = raw;
  det.smoothed = gate_.smoothed;
  events.push_back(det);

  if (gate_.mode == GateMode::idle && gate_.smoothed >= cfg_.theta_on) {
    gate_.mode = GateMode::active;
    gate_.hops_active = 0;
    PredictionEvent on;
    on.t_ms = t;
    on.kind = EventKind::gate_on;
    on.smoothed = gate_.smoothed;
    events.push_back(on);
    return events;
  }
  if (gate_.mode == GateMode::active && gate_.smoothed < cfg_.theta_off) {
    gate_.mode = GateMode::idle;
    gate_.hops_active = 0;
    audio_.clear();
    PredictionEvent off;
    off.t_ms = t;
    off.kind = EventKind::gate_off;
    off.smoothed = gate_.smoothed;
    events.push_back(off);
    return events;
  }
  if (gate_.mode == GateMode::active) {
    ++gate_.hops_active;
    ++telemetry_.active_hops;
    if (audio_.size() == cfg_.classifier_audio_samples()) {
      const std::size_t n = cfg_.classifier_imu_samples();
      if (imu_.size() < n) throw NotReadyError("classifier IMU window not yet filled");
      const std::vector<ImuSample> recent(imu_.end() - static_cast<std::ptrdiff_t>(n), imu_.end());
      const Tensor imu = zscore_time_major(recent);
      const Tensor audio({audio_.size()}, std::vector<float>(audio_.begin(), audio_.end()));
      auto c = backend_.classify(imu, audio, t);
      ++telemetry_.classifier_runs;
      PredictionEvent ev;
      ev.t_ms = t;
      ev.kind = EventKind::classifier;
      ev.cls = static_cast<int>(c.predicted);
      ev.logits.assign(c.logits.values().begin(), c.logits.values().end());
      events.push_back(std::move(ev));
    }
  }
  return events;
}

SessionResult run_session(const LabeledSession& session, InferenceBackend& backend, const PipelineConfig& cfg) {
  cfg.validate();
  if (session.imu_rate != cfg.imu_rate) {
    throw RateError("session IMU rate " + std::to_string(session.imu_rate) + " Hz differs from the configured " +
                    std::to_string(cfg.imu_rate) + " Hz");
  }
  if (!session.audio.empty() && session.audio_rate != cfg.audio_rate) {
    throw RateError("session audio rate " + std::to_string(session.audio_rate) + " Hz differs from the configured " +
                    std::to_string(cfg.audio_rate) + " Hz");
  }
  SessionResult result;
  Pipeline p(cfg, backend);
  const std::size_t need = cfg.detector_samples();
  const std::size_t hop = cfg.hop_samples();
  std::size_t pushed = 0;
  for (std::size_t i = 0; i < session.imu.size(); ++i) {
    const auto& frame = session.imu[i];
    p.push_imu(frame);
    const double rel_ms = frame.t_ms - session.imu.front().t_ms;
    const auto upto = std::min(session.audio.size(),
                               static_cast<std::size_t>(std::floor(rel_ms * cfg.audio_rate / 1000.0 + 1e-9)));
    if (upto > pushed) {
      p.push_audio(std::span(session.audio).subspan(pushed, upto - pushed));
      pushed = upto;
    }
    if (p.gate().mode == GateMode::idle) {
      result.idle_audio_occupancy = std::max(result.idle_audio_occupancy, p.audio_occupancy());
    }
    if (i + 1 >= need && (i + 1 - need) % hop == 0) {
      auto ev = p.tick();
      result.events.insert(result.events.end(), std::make_move_iterator(ev.begin()), std::make_move_iterator(ev.end()));
    }
  }
  result.telemetry = p.telemetry();
  return result;
}

}  // namespace watchhar::stream
