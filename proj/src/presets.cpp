#include "watchhar/presets.hpp"

#include <cmath>

#include "watchhar/error.hpp"

namespace watchhar {

std::size_t Preset::classifier_imu_samples() const {
  return static_cast<std::size_t>(std::lround(classifier_window_s * imu_rate));
}

std::size_t Preset::classifier_audio_samples() const {
  return static_cast<std::size_t>(std::lround(classifier_window_s * audio_rate));
}

namespace {

Preset make_samosa() {
  Preset p;
  p.name = "samosa-1k";
  p.audio_rate = 1000.0;
  // 256-point frames: at 1 kHz a 128-point FFT is coarser than the lowest
  // 64-band mel spacing, which would leave filters sharing a peak bin.
  p.stft = {1000.0, 256, 16, dsp::Window::hann, true};
  p.mel = {64, 0.0, 500.0, dsp::MelNorm::peak_one};
  p.classifier_window_s = 1.0;
  p.imu_encoder_hidden = 512;
  return p;
}

Preset make_seminat() {
  Preset p;
  p.name = "seminat-22k";
  p.audio_rate = 22050.0;
  p.stft = {22050.0, 1024, 320, dsp::Window::hann, true};
  p.mel = {64, 0.0, 11025.0, dsp::MelNorm::peak_one};
  p.classifier_window_s = 10.0;
  // 10 s windows flatten to 256x118x6 features; a narrow hidden layer keeps
  // the dense head from dominating the archive.
  p.imu_encoder_hidden = 16;
  return p;
}

}  // namespace

const Preset& preset(std::string_view name) {
  static const Preset samosa = make_samosa();
  static const Preset seminat = make_seminat();
  if (name == samosa.name) return samosa;
  if (name == seminat.name) return seminat;
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected samosa-1k or seminat-22k)");
}

std::vector<std::string> preset_names() { return {"samosa-1k", "seminat-22k"}; }

}  // namespace watchhar
