#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "watchhar/tensor.hpp"

// Audio frontend expressed as network layers: a strided-convolution STFT with
// separate real/imaginary kernel banks, a dense mel projection whose weights
// are loadable (and may be learned), and a log-amplitude activation.
namespace watchhar::dsp {

enum class Window { hann };
enum class MelNorm { peak_one, area };

struct StftConfig {
  double sample_rate = 1000.0;
  std::size_t n_fft = 256;
  std::size_t hop = 16;
  Window window = Window::hann;
  bool center_pad = true;

  std::size_t n_bins() const noexcept { return n_fft / 2 + 1; }
  void validate() const;
};

struct MelConfig {
  std::size_t n_mels = 64;
  double f_min = 0.0;
  double f_max = 500.0;
  MelNorm norm = MelNorm::peak_one;

  void validate(const StftConfig& stft) const;
};

struct DbConfig {
  float amin = 1e-10f;
  float ref = 1.0f;
  float top_db = 80.0f;

  void validate() const;
};

/// Periodic Hann window of length n.
std::vector<float> hann_window(std::size_t n);

struct StftKernels {
  Tensor real;  // [n_bins x n_fft], w[n] cos(2 pi k n / N)
  Tensor imag;  // [n_bins x n_fft], -w[n] sin(2 pi k n / N)
};

StftKernels build_stft_kernels(const StftConfig& cfg);

std::size_t stft_frame_count(std::size_t length, const StftConfig& cfg);

/// Power spectrogram [frames x n_bins]; `audio` is [L] or [1 x L].
Tensor power_stft(const Tensor& audio, const StftConfig& cfg);
Tensor power_stft(const Tensor& audio, const StftConfig& cfg, const StftKernels& kernels);

/// O(N^2) direct DFT power of the Hann-windowed frame, evaluated in double
/// precision. Used as the reference the convolutional STFT is checked against.
std::vector<double> naive_dft_power(std::span<const float> frame);
Tensor naive_dft_oracle(const Tensor& frame);

double hz_to_mel(double hz) noexcept;
double mel_to_hz(double mel) noexcept;

/// Triangular mel filters [n_mels x n_bins]. Throws ConfigError when the
/// requested bands are too narrow for the FFT resolution (an empty filter or
/// two filters peaking on the same bin).
Tensor build_mel_filterbank(const StftConfig& stft, const MelConfig& mel);

/// 10 log10(max(p, amin)) - 10 log10(max(amin, ref)), floored at max - top_db.
Tensor amplitude_to_db(const Tensor& power, const DbConfig& cfg);

/// amplitude_to_db(power_stft(audio) . mel_weights^T [+ bias]) -> [frames x n_mels].
Tensor logmel(const Tensor& audio, const StftConfig& stft, const Tensor& mel_weights, const DbConfig& db,
              const std::optional<Tensor>& mel_bias = std::nullopt);

// Precomputes the STFT kernel banks once so repeated windows only pay for the
// convolution itself.
class LogMelFrontend {
 public:
  LogMelFrontend() = default;
  LogMelFrontend(StftConfig stft, Tensor mel_weights, DbConfig db, std::optional<Tensor> mel_bias = std::nullopt);

  Tensor operator()(const Tensor& audio) const;

  const StftConfig& stft() const noexcept { return stft_; }
  const DbConfig& db() const noexcept { return db_; }
  const Tensor& mel_weights() const noexcept { return mel_; }
  std::size_t n_mels() const { return mel_.dim(0); }
  bool has_bias() const noexcept { return bias_.has_value(); }

 private:
  StftConfig stft_;
  StftKernels kernels_;
  Tensor mel_;
  std::optional<Tensor> bias_;
  DbConfig db_;
};

}  // namespace watchhar::dsp
