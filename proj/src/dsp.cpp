#include "watchhar/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

#include "kernels.hpp"
#include "watchhar/error.hpp"

namespace watchhar::dsp {

void StftConfig::validate() const {
  if (!(sample_rate > 0)) throw ConfigError("sample_rate must be positive");
  if (n_fft < 2 || n_fft % 2 != 0) throw ConfigError("n_fft must be even and >= 2, got " + std::to_string(n_fft));
  if (hop < 1 || hop > n_fft) throw ConfigError("hop must lie in [1, n_fft], got " + std::to_string(hop));
}

void MelConfig::validate(const StftConfig& stft) const {
  if (n_mels < 1) throw ConfigError("n_mels must be >= 1");
  if (!(f_min >= 0.0 && f_min < f_max)) throw ConfigError("mel band needs 0 <= f_min < f_max");
  if (f_max > stft.sample_rate / 2.0 + 1e-9) {
    throw ConfigError("f_max " + std::to_string(f_max) + " Hz exceeds Nyquist");
  }
}

void DbConfig::validate() const {
  if (!(amin > 0)) throw ConfigError("amin must be positive");
  if (!(ref > 0)) throw ConfigError("ref must be positive");
  if (!(top_db > 0)) throw ConfigError("top_db must be positive");
}

std::vector<float> hann_window(std::size_t n) {
  std::vector<float> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n)));
  }
  return w;
}

StftKernels build_stft_kernels(const StftConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_fft;
  const std::size_t bins = cfg.n_bins();
  const auto w = hann_window(n);
  std::vector<float> re(bins * n), im(bins * n);
  for (std::size_t k = 0; k < bins; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      // Reduce k*i modulo n first so the angle stays small and exact rows
      // (k = 0, k = n/2) come out exactly.
      const std::size_t m = (k * i) % n;
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n);
      double c = std::cos(angle);
      double s = std::sin(angle);
      if (2 * m == n) s = 0.0;
      if (m == 0) s = 0.0;
      re[k * n + i] = static_cast<float>(w[i] * c);
      im[k * n + i] = static_cast<float>(-(w[i] * s));
    }
  }
  return {Tensor({bins, n}, std::move(re)), Tensor({bins, n}, std::move(im))};
}

std::size_t stft_frame_count(std::size_t length, const StftConfig& cfg) {
  if (cfg.center_pad) return length / cfg.hop + 1;
  if (length < cfg.n_fft) return 0;
  return (length - cfg.n_fft) / cfg.hop + 1;
}

namespace {

std::span<const float> audio_samples(const Tensor& audio) {
  if (audio.rank() == 2 && audio.dim(0) != 1) {
    throw ShapeError("audio must be [L] or [1 x L], got " + shape_string(audio.shape()));
  }
  if (audio.rank() != 1 && audio.rank() != 2) {
    throw ShapeError("audio must be [L] or [1 x L], got " + shape_string(audio.shape()));
  }
  return audio.values();
}

}  // namespace

Tensor power_stft(const Tensor& audio, const StftConfig& cfg) {
  return power_stft(audio, cfg, build_stft_kernels(cfg));
}

Tensor power_stft(const Tensor& audio, const StftConfig& cfg, const StftKernels& kernels) {
  cfg.validate();
  const auto x = audio_samples(audio);
  const std::size_t n = cfg.n_fft;
  const std::size_t bins = cfg.n_bins();
  if (kernels.real.shape() != Shape{bins, n} || kernels.imag.shape() != Shape{bins, n}) {
    throw ShapeError("STFT kernels do not match n_fft " + std::to_string(n));
  }

  std::vector<float> padded;
  std::span<const float> signal = x;
  if (cfg.center_pad) {
    const std::size_t pad = n / 2;
    if (x.size() <= pad) {
      throw ShapeError("reflect padding of " + std::to_string(pad) + " needs more than " + std::to_string(pad) +
                       " samples, got " + std::to_string(x.size()));
    }
    padded.resize(x.size() + 2 * pad);
    for (std::size_t i = 0; i < pad; ++i) {
      padded[i] = x[pad - i];
      padded[pad + x.size() + i] = x[x.size() - 2 - i];
    }
    std::copy(x.begin(), x.end(), padded.begin() + static_cast<std::ptrdiff_t>(pad));
    signal = padded;
  } else if (x.size() < n) {
    throw ShapeError("signal of " + std::to_string(x.size()) + " samples is shorter than n_fft " +
                     std::to_string(n));
  }

  const std::size_t frames = stft_frame_count(x.size(), cfg);
  std::vector<float> out(frames * bins);
  const float* kr = kernels.real.values().data();
  const float* ki = kernels.imag.values().data();
  for (std::size_t f = 0; f < frames; ++f) {
    const float* frame = signal.data() + f * cfg.hop;
    float* row = out.data() + f * bins;
    for (std::size_t k = 0; k < bins; ++k) {
      const float re = detail::dot(kr + k * n, frame, n);
      const float im = detail::dot(ki + k * n, frame, n);
      row[k] = re * re + im * im;
    }
  }
  return Tensor({frames, bins}, std::move(out));
}

namespace {

struct DftBasis {
  std::vector<double> cos;  // [bins x n]
  std::vector<double> sin;
};

const DftBasis& dft_basis(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, DftBasis> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  const std::size_t bins = n / 2 + 1;
  DftBasis b;
  b.cos.resize(bins * n);
  b.sin.resize(bins * n);
  for (std::size_t k = 0; k < bins; ++k) {
    for (std::size_t t = 0; t < n; ++t) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      b.cos[k * n + t] = std::cos(angle);
      b.sin[k * n + t] = std::sin(angle);
    }
  }
  return cache.emplace(n, std::move(b)).first->second;
}

}  // namespace

std::vector<double> naive_dft_power(std::span<const float> frame) {
  const std::size_t n = frame.size();
  if (n < 2 || n % 2 != 0) throw ShapeError("DFT frame length must be even and >= 2");
  const auto& basis = dft_basis(n);
  std::vector<double> windowed(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(n)));
    windowed[t] = w * static_cast<double>(frame[t]);
  }
  const std::size_t bins = n / 2 + 1;
  std::vector<double> power(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    const double* c = basis.cos.data() + k * n;
    const double* s = basis.sin.data() + k * n;
    double re[4] = {0, 0, 0, 0}, im[4] = {0, 0, 0, 0};
    std::size_t t = 0;
    for (; t + 4 <= n; t += 4) {
      for (std::size_t j = 0; j < 4; ++j) {
        re[j] += windowed[t + j] * c[t + j];
        im[j] -= windowed[t + j] * s[t + j];
      }
    }
    for (; t < n; ++t) {
      re[0] += windowed[t] * c[t];
      im[0] -= windowed[t] * s[t];
    }
    const double r = (re[0] + re[1]) + (re[2] + re[3]);
    const double i = (im[0] + im[1]) + (im[2] + im[3]);
    power[k] = r * r + i * i;
  }
  return power;
}

Tensor naive_dft_oracle(const Tensor& frame) {
  if (frame.rank() != 1) throw ShapeError("DFT oracle expects a rank-1 frame");
  const auto p = naive_dft_power(frame.values());
  return Tensor({p.size()}, std::vector<float>(p.begin(), p.end()));
}

double hz_to_mel(double hz) noexcept { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) noexcept { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor build_mel_filterbank(const StftConfig& stft, const MelConfig& mel) {
  stft.validate();
  mel.validate(stft);
  const std::size_t bins = stft.n_bins();
  const std::size_t m = mel.n_mels;

  const double lo = hz_to_mel(mel.f_min);
  const double hi = hz_to_mel(mel.f_max);
  std::vector<double> corners(m + 2);
  for (std::size_t i = 0; i < m + 2; ++i) {
    corners[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(m + 1));
  }

  std::vector<float> weights(m * bins, 0.0f);
  std::size_t previous_peak = 0;
  for (std::size_t r = 0; r < m; ++r) {
    const double left = corners[r], center = corners[r + 1], right = corners[r + 2];
    double peak_value = 0.0, sum = 0.0;
    std::size_t peak_bin = 0;
    std::vector<double> row(bins, 0.0);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * stft.sample_rate / static_cast<double>(stft.n_fft);
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      const double v = std::max(0.0, std::min(up, down));
      row[k] = v;
      sum += v;
      if (v > peak_value) {
        peak_value = v;
        peak_bin = k;
      }
    }
    if (peak_value <= 0.0) {
      throw ConfigError("mel filter " + std::to_string(r) + " covers no FFT bin; reduce n_mels or raise n_fft");
    }
    if (r > 0 && peak_bin <= previous_peak) {
      throw ConfigError("mel filters " + std::to_string(r - 1) + " and " + std::to_string(r) +
                        " peak on the same FFT bin; reduce n_mels or raise n_fft");
    }
    previous_peak = peak_bin;
    const double scale = mel.norm == MelNorm::peak_one ? 1.0 / peak_value : 1.0 / sum;
    for (std::size_t k = 0; k < bins; ++k) weights[r * bins + k] = static_cast<float>(row[k] * scale);
  }
  return Tensor({m, bins}, std::move(weights));
}

Tensor amplitude_to_db(const Tensor& power, const DbConfig& cfg) {
  cfg.validate();
  const auto p = power.values();
  std::vector<float> out(p.size());
  const double offset = 10.0 * std::log10(std::max(static_cast<double>(cfg.amin), static_cast<double>(cfg.ref)));
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0f || std::isnan(p[i])) {
      throw DomainError("power must be nonnegative, got " + std::to_string(p[i]) + " at index " + std::to_string(i));
    }
    const double v = 10.0 * std::log10(std::max(static_cast<double>(p[i]), static_cast<double>(cfg.amin))) - offset;
    out[i] = static_cast<float>(v);
    peak = std::max(peak, static_cast<double>(out[i]));
  }
  const float floor_db = static_cast<float>(peak - cfg.top_db);
  for (auto& v : out) v = std::max(v, floor_db);
  return Tensor(power.shape(), std::move(out));
}

namespace {

Tensor project_mel(const Tensor& power, const Tensor& mel, const std::optional<Tensor>& bias) {
  const std::size_t frames = power.dim(0);
  const std::size_t bins = power.dim(1);
  if (mel.rank() != 2 || mel.dim(1) != bins) {
    throw ShapeError("mel weights " + shape_string(mel.shape()) + " do not match " + std::to_string(bins) +
                     " STFT bins");
  }
  const std::size_t m = mel.dim(0);
  if (bias && bias->shape() != Shape{m}) {
    throw ShapeError("mel bias " + shape_string(bias->shape()) + " does not match " + std::to_string(m) + " bands");
  }
  const float* p = power.values().data();
  const float* w = mel.values().data();
  std::vector<float> out(frames * m);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t r = 0; r < m; ++r) {
      float v = detail::dot(w + r * bins, p + f * bins, bins);
      if (bias) v += (*bias)[r];
      // Learned filters may dip below zero; power is clipped at zero before the log.
      out[f * m + r] = std::max(v, 0.0f);
    }
  }
  return Tensor({frames, m}, std::move(out));
}

}  // namespace

Tensor logmel(const Tensor& audio, const StftConfig& stft, const Tensor& mel_weights, const DbConfig& db,
              const std::optional<Tensor>& mel_bias) {
  if (mel_weights.rank() != 2 || mel_weights.dim(1) != stft.n_bins()) {
    throw ShapeError("mel weights " + shape_string(mel_weights.shape()) + " do not match n_fft/2+1 = " +
                     std::to_string(stft.n_bins()));
  }
  return amplitude_to_db(project_mel(power_stft(audio, stft), mel_weights, mel_bias), db);
}

LogMelFrontend::LogMelFrontend(StftConfig stft, Tensor mel_weights, DbConfig db, std::optional<Tensor> mel_bias)
    : stft_(stft), kernels_(build_stft_kernels(stft)), mel_(std::move(mel_weights)), bias_(std::move(mel_bias)), db_(db) {
  db_.validate();
  if (mel_.rank() != 2 || mel_.dim(1) != stft_.n_bins()) {
    throw ShapeError("mel weights " + shape_string(mel_.shape()) + " do not match n_fft/2+1 = " +
                     std::to_string(stft_.n_bins()));
  }
}

Tensor LogMelFrontend::operator()(const Tensor& audio) const {
  return amplitude_to_db(project_mel(power_stft(audio, stft_, kernels_), mel_, bias_), db_);
}

}  // namespace watchhar::dsp
