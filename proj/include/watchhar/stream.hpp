#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "watchhar/models.hpp"
#include "watchhar/session.hpp"
#include "watchhar/tensor.hpp"

// Streaming two-stage recognizer: the IMU event detector runs every hop, its
// output is smoothed, and the smoothed probability drives a gate that turns
// the microphone and the audio+IMU classifier on and off.
namespace watchhar::stream {

struct PipelineConfig {
  double imu_rate = 50.0;
  double audio_rate = 1000.0;
  double detector_window_s = 3.0;
  double classifier_window_s = 1.0;
  double hop_ms = 20.0;
  double smooth_s = 2.0;
  double theta_on = 0.5;
  double theta_off = 0.5;
  std::size_t mic_warmup = 0;  // hops after gate_on before audio is kept

  /// Rates and windows matching a loaded model's frontend.
  static PipelineConfig for_model(const models::ModelConfig& cfg);

  std::size_t detector_samples() const;   // 150
  std::size_t classifier_imu_samples() const;  // 50
  std::size_t classifier_audio_samples() const;
  std::size_t hop_samples() const;        // IMU samples per hop
  std::size_t smooth_hops() const;        // 100
  void validate() const;                  // ConfigError
};

/// Mean over the last `span` inputs, or over all inputs while fewer have
/// arrived.
class MovingAverage {
 public:
  explicit MovingAverage(std::size_t span);

  double push(double raw);
  double value() const noexcept { return value_; }
  std::size_t count() const noexcept { return history_.size(); }
  std::size_t span() const noexcept { return span_; }
  void reset();

 private:
  std::size_t span_;
  std::deque<double> history_;
  double value_ = 0.0;
};

enum class GateMode { idle, active };

struct GateState {
  GateMode mode = GateMode::idle;
  double smoothed = 0.0;
  std::size_t hops_active = 0;
};

enum class EventKind { detector, classifier, gate_on, gate_off };

std::string event_kind_name(EventKind k);
EventKind parse_event_kind(const std::string& name);

struct PredictionEvent {
  double t_ms = 0.0;
  EventKind kind = EventKind::detector;
  double prob = 0.0;      // detector: raw probability
  double smoothed = 0.0;  // detector and gate events
  int cls = -1;           // classifier only
  std::vector<float> logits;
  std::string context;

  friend bool operator==(const PredictionEvent&, const PredictionEvent&) = default;
};

/// What the pipeline runs at each stage. Inputs are already z-scored:
/// detector windows are [6 x 150], classifier IMU windows [1 x 50 x 6].
class InferenceBackend {
 public:
  virtual ~InferenceBackend() = default;
  virtual double detect(const Tensor& window, double t_ms) = 0;
  virtual models::Classification classify(const Tensor& imu, const Tensor& audio, double t_ms) = 0;
};

class ModelBackend final : public InferenceBackend {
 public:
  explicit ModelBackend(const models::HarModel& model) : model_(model) {}
  double detect(const Tensor& window, double) override { return model_.detect(window); }
  models::Classification classify(const Tensor& imu, const Tensor& audio, double) override {
    return model_.classify(imu, audio);
  }

 private:
  const models::HarModel& model_;
};

struct Telemetry {
  std::uint64_t imu_frames = 0;
  std::uint64_t ticks = 0;
  std::uint64_t classifier_runs = 0;
  std::uint64_t audio_received = 0;
  std::uint64_t audio_buffered = 0;
  std::uint64_t audio_discarded = 0;
  std::size_t max_audio_occupancy = 0;
  std::uint64_t active_hops = 0;
};

/// Per-channel z-score over the window using that window's mean and
/// standard deviation (floored at 1e-6). Returns [6 x n] for the detector
/// layout or [1 x n x 6] for the classifier layout.
Tensor zscore_channels_first(std::span<const ImuSample> window);
Tensor zscore_time_major(std::span<const ImuSample> window);

class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, InferenceBackend& backend);

  /// Frames must arrive with strictly increasing timestamps (StreamError)
  /// spaced within one sample of the nominal period (RateError).
  void push_imu(const ImuSample& frame);
  /// Audio is kept only while the gate is active and past warmup. Throws
  /// RateError when the audio clock runs ahead of the IMU clock by more
  /// than one IMU period.
  void push_audio(std::span<const float> samples);
  /// Runs one hop at the newest IMU timestamp; NotReadyError until the
  /// detector window is full.
  std::vector<PredictionEvent> tick();

  bool ready() const noexcept { return imu_.size() >= cfg_.detector_samples(); }
  const GateState& gate() const noexcept { return gate_; }
  const Telemetry& telemetry() const noexcept { return telemetry_; }
  std::size_t audio_occupancy() const noexcept { return audio_.size(); }
  const PipelineConfig& config() const noexcept { return cfg_; }

 private:
  PipelineConfig cfg_;
  InferenceBackend& backend_;
  std::deque<ImuSample> imu_;
  std::deque<float> audio_;
  MovingAverage smoother_;
  GateState gate_;
  Telemetry telemetry_;
  bool have_imu_ = false;
  double t0_ = 0.0;
  double last_t_ = 0.0;
};

struct SessionResult {
  std::vector<PredictionEvent> events;
  Telemetry telemetry;
  /// Largest audio buffer occupancy seen while the gate was idle.
  std::size_t idle_audio_occupancy = 0;
};

/// Offline replay: feeds IMU frames in order, the audio up to each frame's
/// timestamp, and ticks every hop once the detector window is full.
SessionResult run_session(const LabeledSession& session, InferenceBackend& backend, const PipelineConfig& cfg);

}  // namespace watchhar::stream
