#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

// Replayable recordings: a 6-axis IMU series, a mono waveform, and labeled
// activity intervals with context tags.
namespace watchhar {

struct ImuSample {
  double t_ms = 0.0;
  std::array<float, 6> v{};  // ax ay az (m/s^2), gx gy gz (rad/s)
};

struct Label {
  double start_ms = 0.0;
  double end_ms = 0.0;
  std::string cls;
  std::string context;

  /// Trailing-edge membership used for per-hop truth: start < t <= end.
  bool covers(double t_ms) const noexcept { return t_ms > start_ms && t_ms <= end_ms; }
};

enum class SplitTag { test, train_excluded };

struct LabeledSession {
  std::string participant = "p0";
  SplitTag split = SplitTag::test;
  double imu_rate = 50.0;
  std::vector<ImuSample> imu;
  double audio_rate = 1000.0;
  std::vector<float> audio;
  std::vector<Label> labels;

  double duration_ms() const noexcept;
  /// Label covering `t_ms`, or nullptr.
  const Label* label_at(double t_ms) const noexcept;
  /// Intervals must be non-empty, non-overlapping, and name known classes
  /// (when `class_names` is non-empty); throws ValidationError.
  void validate(const std::vector<std::string>& class_names = {}) const;
};

std::vector<ImuSample> read_imu_csv(const std::filesystem::path& path);
void write_imu_csv(const std::filesystem::path& path, const std::vector<ImuSample>& imu);

struct WavData {
  double sample_rate = 0.0;
  std::vector<float> samples;  // PCM16 scaled to [-1, 1)
};

/// PCM16 mono only; anything else raises FormatError.
WavData read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const std::vector<float>& samples, double sample_rate);

std::vector<Label> read_labels_csv(const std::filesystem::path& path);
void write_labels_csv(const std::filesystem::path& path, const std::vector<Label>& labels);

/// Loads and validates a session triple. A nonzero `expected_audio_rate`
/// must match the WAV header (RateError otherwise).
LabeledSession load_session(const std::filesystem::path& imu_path, const std::filesystem::path& wav_path,
                            const std::filesystem::path& labels_path, double expected_audio_rate = 0.0,
                            const std::vector<std::string>& class_names = {});
void save_session(const LabeledSession& s, const std::filesystem::path& imu_path,
                  const std::filesystem::path& wav_path, const std::filesystem::path& labels_path);

}  // namespace watchhar
