#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "watchhar/dsp.hpp"

namespace watchhar {

// Dataset presets bundle the audio rate with a matching frontend and the
// classifier window, so a run can never mix rates from different setups.
struct Preset {
  std::string name;
  double imu_rate = 50.0;
  double audio_rate = 1000.0;
  dsp::StftConfig stft;
  dsp::MelConfig mel;
  dsp::DbConfig db;
  double classifier_window_s = 1.0;
  std::size_t imu_encoder_hidden = 512;

  std::size_t classifier_imu_samples() const;
  std::size_t classifier_audio_samples() const;
};

/// "samosa-1k" or "seminat-22k"; throws ConfigError otherwise.
const Preset& preset(std::string_view name);
std::vector<std::string> preset_names();

}  // namespace watchhar
