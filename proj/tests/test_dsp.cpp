#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "watchhar/dsp.hpp"
#include "watchhar/error.hpp"
#include "watchhar/presets.hpp"
#include "watchhar/rng.hpp"

using namespace watchhar;
using namespace watchhar::dsp;

namespace {

constexpr double kPi = std::numbers::pi;

double hann(std::size_t n, std::size_t N) { return 0.5 - 0.5 * std::cos(2.0 * kPi * n / N); }

// Reflect padding without repeating the edge sample.
std::vector<double> reflect_pad(const std::vector<float>& x, std::size_t pad) {
  const auto L = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> out;
  for (std::ptrdiff_t i = -static_cast<std::ptrdiff_t>(pad); i < L + static_cast<std::ptrdiff_t>(pad); ++i) {
    std::ptrdiff_t j = i;
    if (j < 0) j = -j;
    if (j >= L) j = 2 * (L - 1) - j;
    out.push_back(x[static_cast<std::size_t>(j)]);
  }
  return out;
}

std::vector<double> dft_power(const double* frame, std::size_t N) {
  std::vector<double> p(N / 2 + 1);
  for (std::size_t k = 0; k <= N / 2; ++k) {
    double re = 0, im = 0;
    for (std::size_t n = 0; n < N; ++n) {
      const double v = frame[n] * hann(n, N);
      re += v * std::cos(2.0 * kPi * k * n / N);
      im -= v * std::sin(2.0 * kPi * k * n / N);
    }
    p[k] = re * re + im * im;
  }
  return p;
}

}  // namespace

TEST_SUITE("dsp") {
  TEST_CASE("stft kernel rows") {
    StftConfig cfg;
    cfg.n_fft = 8;
    cfg.hop = 2;
    const auto k = build_stft_kernels(cfg);
    REQUIRE(k.real.shape() == Shape{5, 8});
    for (std::size_t kk = 0; kk < 5; ++kk) {
      for (std::size_t n = 0; n < 8; ++n) {
        const double w = hann(n, 8);
        CHECK(k.real[kk * 8 + n] == doctest::Approx(w * std::cos(2 * kPi * kk * n / 8)).epsilon(1e-6));
        CHECK(k.imag[kk * 8 + n] == doctest::Approx(-w * std::sin(2 * kPi * kk * n / 8)).epsilon(1e-6));
      }
    }
    for (std::size_t n = 0; n < 8; ++n) {
      CHECK(k.real[n] == doctest::Approx(hann(n, 8)));
      CHECK(k.imag[n] == 0.0f);
      CHECK(std::fabs(k.imag[4 * 8 + n]) < 1e-6f);
    }
  }

  TEST_CASE("stft config validation") {
    StftConfig odd;
    odd.n_fft = 7;
    CHECK_THROWS_AS(odd.validate(), ConfigError);
    StftConfig big_hop;
    big_hop.n_fft = 8;
    big_hop.hop = 9;
    CHECK_THROWS_AS(big_hop.validate(), ConfigError);
    DbConfig db;
    db.amin = 0.0f;
    CHECK_THROWS_AS(db.validate(), ConfigError);
  }

  TEST_CASE("frame count formula over random lengths and hops") {
    Rng rng(17);
    for (int i = 0; i < 1000; ++i) {
      StftConfig cfg;
      cfg.n_fft = 2 * (1 + rng.below(256));
      cfg.hop = 1 + rng.below(cfg.n_fft);
      const std::size_t L = 1 + rng.below(50000);
      REQUIRE(stft_frame_count(L, cfg) == L / cfg.hop + 1);
      cfg.center_pad = false;
      if (L >= cfg.n_fft) REQUIRE(stft_frame_count(L, cfg) == (L - cfg.n_fft) / cfg.hop + 1);
    }
  }

  TEST_CASE("power stft shapes and zero input") {
    const auto& sn = preset("seminat-22k");
    CHECK(stft_frame_count(220500, sn.stft) == 690);
    const auto& sa = preset("samosa-1k");
    const Tensor z = power_stft(Tensor::zeros({1000}), sa.stft);
    CHECK(z.shape() == Shape{63, sa.stft.n_bins()});
    CHECK(std::all_of(z.values().begin(), z.values().end(), [](float v) { return v == 0.0f; }));

    StftConfig raw = sa.stft;
    raw.center_pad = false;
    CHECK_THROWS_AS(power_stft(Tensor::zeros({raw.n_fft - 1}), raw), ShapeError);
  }

  TEST_CASE("power stft matches an independent windowed DFT") {
    Rng rng(23);
    StftConfig cfg;
    cfg.sample_rate = 1000;
    cfg.n_fft = 64;
    cfg.hop = 16;
    std::vector<float> x(300);
    for (auto& v : x) v = static_cast<float>(rng.normal());
    const Tensor p = power_stft(Tensor({x.size()}, x), cfg);
    const auto padded = reflect_pad(x, cfg.n_fft / 2);
    REQUIRE(p.dim(0) == x.size() / cfg.hop + 1);
    for (std::size_t f = 0; f < p.dim(0); ++f) {
      const auto ref = dft_power(padded.data() + f * cfg.hop, cfg.n_fft);
      const double peak = *std::max_element(ref.begin(), ref.end());
      for (std::size_t k = 0; k < ref.size(); ++k) {
        REQUIRE(std::fabs(p[f * cfg.n_bins() + k] - ref[k]) <= 1e-4 * peak);
      }
    }
  }

  TEST_CASE("naive dft oracle examples") {
    CHECK(naive_dft_power(std::vector<float>(16, 0.0f)) == std::vector<double>(9, 0.0));
    std::vector<float> impulse(16, 0.0f);
    impulse[0] = 1.0f;
    for (double v : naive_dft_power(impulse)) CHECK(v == 0.0);
    std::vector<float> cosine(64);
    for (std::size_t n = 0; n < 64; ++n) cosine[n] = static_cast<float>(std::cos(2 * kPi * 3 * n / 64));
    const auto p = naive_dft_power(cosine);
    CHECK(std::max_element(p.begin(), p.end()) - p.begin() == 3);
  }

  TEST_CASE("mel filterbank structure") {
    CHECK(hz_to_mel(1000.0) == doctest::Approx(999.99).epsilon(1e-4));
    CHECK(mel_to_hz(hz_to_mel(440.0)) == doctest::Approx(440.0));
    for (const auto& name : preset_names()) {
      const auto& p = preset(name);
      const Tensor fb = build_mel_filterbank(p.stft, p.mel);
      REQUIRE(fb.shape() == Shape{64, p.stft.n_bins()});
      const std::size_t nb = p.stft.n_bins();
      std::ptrdiff_t last_peak = -1;
      for (std::size_t m = 0; m < 64; ++m) {
        const float* row = &fb.values()[m * nb];
        std::size_t first = nb, last = 0, peak = 0;
        for (std::size_t k = 0; k < nb; ++k) {
          REQUIRE(row[k] >= 0.0f);
          if (row[k] > 0.0f) {
            first = std::min(first, k);
            last = k;
          }
          if (row[k] > row[peak]) peak = k;
        }
        REQUIRE(first <= last);
        for (std::size_t k = first; k <= last; ++k) REQUIRE(row[k] > 0.0f);
        CHECK(row[peak] == doctest::Approx(1.0f));
        REQUIRE(static_cast<std::ptrdiff_t>(peak) > last_peak);
        last_peak = static_cast<std::ptrdiff_t>(peak);
      }
    }
    CHECK(build_mel_filterbank(preset("seminat-22k").stft, preset("seminat-22k").mel).shape() == Shape{64, 513});

    MelConfig too_many = preset("samosa-1k").mel;
    too_many.n_mels = 200;
    CHECK_THROWS_AS(build_mel_filterbank(preset("samosa-1k").stft, too_many), ConfigError);
  }

  TEST_CASE("area-normalized filters keep positive mass") {
    const auto& p = preset("seminat-22k");
    MelConfig mel = p.mel;
    mel.norm = MelNorm::area;
    const Tensor fb = build_mel_filterbank(p.stft, mel);
    for (std::size_t m = 0; m < 64; ++m) {
      double s = 0;
      for (std::size_t k = 0; k < p.stft.n_bins(); ++k) s += fb[m * p.stft.n_bins() + k];
      CHECK(s > 0.0);
    }
  }

  TEST_CASE("amplitude to db") {
    DbConfig db;
    CHECK(amplitude_to_db(Tensor({3}, {1.0f, 1.0f, 1.0f}), db) == Tensor({3}, {0.0f, 0.0f, 0.0f}));
    const Tensor out = amplitude_to_db(Tensor({2}, {1.0f, 0.0f}), db);
    CHECK(out[0] == doctest::Approx(0.0f));
    CHECK(out[1] == doctest::Approx(-80.0f));
    DbConfig wide = db;
    wide.top_db = 1000.0f;
    const Tensor a = amplitude_to_db(Tensor({2}, {0.3f, 2.0f}), wide);
    const Tensor b = amplitude_to_db(Tensor({2}, {3.0f, 20.0f}), wide);
    CHECK(b[0] - a[0] == doctest::Approx(10.0f).epsilon(1e-5));
    CHECK(b[1] - a[1] == doctest::Approx(10.0f).epsilon(1e-5));
    CHECK_THROWS_AS(amplitude_to_db(Tensor({1}, {-1.0f}), db), DomainError);

    Rng rng(2);
    std::vector<float> v(500);
    for (auto& x : v) x = static_cast<float>(std::pow(10.0, rng.uniform(-12, 3)));
    std::sort(v.begin(), v.end());
    const Tensor sorted = amplitude_to_db(Tensor({v.size()}, v), db);
    for (std::size_t i = 1; i < v.size(); ++i) REQUIRE(sorted[i] >= sorted[i - 1]);
  }

  TEST_CASE("logmel shapes, zero floor and selection identity") {
    const auto& sa = preset("samosa-1k");
    const Tensor fb = build_mel_filterbank(sa.stft, sa.mel);
    const Tensor zero = logmel(Tensor::zeros({1000}), sa.stft, fb, sa.db);
    CHECK(zero.shape() == Shape{63, 64});
    for (float v : zero.values()) CHECK(v == doctest::Approx(-100.0f));

    Rng rng(8);
    std::vector<float> x(1000);
    for (auto& v : x) v = static_cast<float>(rng.normal());
    const Tensor audio({1000}, x);
    const std::size_t nb = sa.stft.n_bins();
    const std::vector<std::size_t> bins = {1, 5, 17, 40, 100};
    std::vector<float> sel(bins.size() * nb, 0.0f);
    for (std::size_t i = 0; i < bins.size(); ++i) sel[i * nb + bins[i]] = 1.0f;
    const Tensor lm = logmel(audio, sa.stft, Tensor({bins.size(), nb}, sel), sa.db);
    const Tensor power = power_stft(audio, sa.stft);
    std::vector<float> picked;
    for (std::size_t f = 0; f < power.dim(0); ++f) {
      for (auto b : bins) picked.push_back(power[f * nb + b]);
    }
    const Tensor direct = amplitude_to_db(Tensor({power.dim(0), bins.size()}, picked), sa.db);
    for (std::size_t i = 0; i < direct.size(); ++i) REQUIRE(lm[i] == doctest::Approx(direct[i]).epsilon(1e-5));

    CHECK_THROWS_AS(logmel(audio, sa.stft, Tensor::zeros({64, nb - 1}), sa.db), ShapeError);
  }

  TEST_CASE("seminat logmel is 690 by 64") {
    const auto& sn = preset("seminat-22k");
    const LogMelFrontend fe(sn.stft, build_mel_filterbank(sn.stft, sn.mel), sn.db);
    CHECK(fe(Tensor::filled({220500}, 0.01f)).shape() == Shape{690, 64});
  }
}
