#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "watchhar/error.hpp"
#include "watchhar/fixtures.hpp"
#include "watchhar/models.hpp"
#include "watchhar/rng.hpp"
#include "watchhar/stream.hpp"

using namespace watchhar;
using namespace watchhar::models;

namespace {

ModelConfig samosa_config(FusionVariant v = FusionVariant::gated) {
  return fixtures::default_config(preset("samosa-1k"), v);
}

WeightArchive zero_archive(const ModelConfig& cfg) {
  WeightArchive a(cfg.to_json().dump());
  for (const auto& spec : weight_schema(cfg)) {
    if (spec.required) a.add(spec.name, Tensor::zeros(spec.shape));
  }
  return a;
}

Tensor random_vector(Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor({n}, std::move(v));
}

}  // namespace

TEST_SUITE("models") {
  TEST_CASE("config json round trip and reserved names") {
    for (auto v : {FusionVariant::gated, FusionVariant::concat, FusionVariant::softmax_avg}) {
      const auto cfg = samosa_config(v);
      CHECK(ModelConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
    }
    auto j = samosa_config().to_json();
    j["audio_encoder"]["arch"] = "cnn14";
    CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
    j = samosa_config().to_json();
    j["imu_encoder"]["arch"] = "deepconvlstm";
    CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
    j = samosa_config().to_json();
    j["fusion"]["variant"] = "self_attention";
    CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
    j = samosa_config().to_json();
    j["fusion"]["variant"] = "bogus";
    CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
    j = samosa_config().to_json();
    j["fusion"]["shared_dim"] = 128;
    CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
  }

  TEST_CASE("event detector shape trace") {
    const auto layers = trace_event_detector(EventDetectorConfig{});
    std::vector<std::size_t> lens;
    for (const auto& l : layers) {
      if (l.kind == "conv1d_depthwise" || l.kind == "maxpool1d") lens.push_back(l.out_shape[1]);
    }
    CHECK(lens == std::vector<std::size_t>{141, 70, 63, 31, 26, 13, 9, 4});
    for (const auto& l : layers) {
      if (l.name == "ed.flatten") CHECK(l.out_shape == Shape{512});
      if (l.name == "ed.out") CHECK(l.out_shape == Shape{1});
    }
  }

  TEST_CASE("imu encoder shape trace") {
    const auto layers = trace_imu_encoder(samosa_config().imu);
    std::vector<std::size_t> lens;
    for (const auto& l : layers) {
      if (l.kind == "conv2d" || l.kind == "maxpool2d") lens.push_back(l.out_shape[1]);
    }
    CHECK(lens == std::vector<std::size_t>{46, 23, 19, 9, 5});
    for (const auto& l : layers) {
      if (l.name == "ie.flatten") CHECK(l.out_shape == Shape{256 * 5 * 6});
      if (l.name == "ie.fc2") CHECK(l.out_shape == Shape{256});
    }
  }

  TEST_CASE("audio encoder embeds both presets to 576") {
    const AudioEncoderConfig ae;
    for (std::size_t frames : {std::size_t{63}, std::size_t{690}}) {
      const auto layers = trace_audio_encoder(ae, frames, 64);
      CHECK(layers.back().out_shape == Shape{576});
    }
    CHECK_THROWS_AS(trace_audio_encoder(ae, 31, 64), ShapeError);
    CHECK(mobilenetv3_small_blocks().size() == 11);
  }

  TEST_CASE("flops accounting is additive over the graph") {
    const auto cfg = samosa_config();
    const auto f = count_flops(cfg);
    CHECK(f.detector == count_flops(trace_event_detector(cfg.detector)));
    CHECK(f.imu_encoder == count_flops(trace_imu_encoder(cfg.imu)));
    CHECK(f.classifier() == f.frontend + f.imu_encoder + f.audio_encoder + f.fusion);
    CHECK(count_flops(std::vector<LayerInfo>{}) == 0);
    CHECK(f.detector < 50'000'000u);
    CHECK(f.classifier() < 100'000'000u);

    // First detector block: depthwise (6 ch, K=10) then pointwise 6 -> 64.
    const auto layers = trace_event_detector(cfg.detector);
    CHECK(layers[0].flops == 2u * 10 * 1 * 6 * 141 + 6 * 141);
    CHECK(layers[1].flops == 2u * 1 * 6 * 64 * 141 + 64 * 141);
  }

  TEST_CASE("zero weights give the bias fixed points") {
    const auto cfg = samosa_config();
    const auto archive = zero_archive(cfg);
    const auto model = HarModel::load(archive);
    CHECK(model.detect(Tensor::zeros({6, 150})) == 0.5f);
    Rng rng(3);
    std::vector<float> w(6 * 150);
    for (auto& v : w) v = static_cast<float>(rng.normal());
    CHECK(model.detect(Tensor({6, 150}, w)) == 0.5f);
    const Tensor emb = model.imu_encoder().forward(Tensor::filled({1, 50, 6}, 1.0f));
    CHECK(emb.shape() == Shape{256});
    for (float v : emb.values()) CHECK(v == 0.0f);
  }

  TEST_CASE("forward passes are deterministic and pooled") {
    const auto cfg = samosa_config();
    const auto model = HarModel::load(fixtures::random_archive(cfg, 5));
    const auto audio = fixtures::class_audio(preset("samosa-1k"), 3, 1000);
    const Tensor a({audio.size()}, audio);
    Rng rng(6);
    std::vector<float> imu(300);
    for (auto& v : imu) v = static_cast<float>(rng.normal());
    const Tensor i({1, 50, 6}, imu);
    const auto c1 = model.classify(i, a), c2 = model.classify(i, a);
    CHECK(c1.logits == c2.logits);
    CHECK(c1.predicted == c2.predicted);
    CHECK(c1.logits.size() == 8);

    const Tensor lm = model.frontend()(a);
    CHECK(lm.shape() == Shape{63, 64});
    Tensor fmap = model.audio_encoder().feature_map(lm);
    const Tensor emb = model.audio_encoder().forward(lm);
    CHECK(emb.shape() == Shape{576});
    // Permuting spatial positions of the final map leaves the pooled vector unchanged.
    const std::size_t hw = fmap.dim(1) * fmap.dim(2);
    for (std::size_t c = 0; c < fmap.dim(0); ++c) {
      auto row = fmap.values().subspan(c * hw, hw);
      std::reverse(row.begin(), row.end());
    }
    const Tensor pooled = nn::global_avg_pool(fmap.reshaped({fmap.dim(0), hw}));
    for (std::size_t k = 0; k < 576; ++k) CHECK(pooled[k] == doctest::Approx(emb[k]).epsilon(1e-6));

    CHECK_THROWS_AS(model.audio_encoder().forward(Tensor::zeros({20, 64})), ShapeError);
  }

  TEST_CASE("detector is invariant to per-channel offsets before normalization") {
    const auto model = HarModel::load(fixtures::random_archive(samosa_config(), 9));
    Rng rng(10);
    std::vector<ImuSample> w(150), shifted(150);
    for (std::size_t t = 0; t < 150; ++t) {
      w[t].t_ms = 20.0 * t;
      for (auto& v : w[t].v) v = static_cast<float>(rng.normal());
      shifted[t] = w[t];
      shifted[t].v[2] += 9.81f;
    }
    const float a = model.detect(stream::zscore_channels_first(w));
    const float b = model.detect(stream::zscore_channels_first(shifted));
    CHECK(a == doctest::Approx(b).epsilon(1e-4));
  }

  TEST_CASE("gated fusion saturation") {
    const auto cfg = samosa_config();
    auto archive = fixtures::random_archive(cfg, 21);
    archive.replace("fu.gate_audio.bias", Tensor::filled({256}, -1e3f));
    const FusionHead closed(archive, cfg.fusion, 256, 576);
    Rng rng(22);
    const Tensor imu = random_vector(rng, 256);
    const Tensor base = closed.forward(imu, random_vector(rng, 576)).logits;
    for (int i = 0; i < 20; ++i) {
      const Tensor other = closed.forward(imu, random_vector(rng, 576)).logits;
      for (std::size_t k = 0; k < base.size(); ++k) REQUIRE(std::fabs(other[k] - base[k]) <= 1e-6f);
    }

    archive.replace("fu.gate_audio.bias", Tensor::filled({256}, 1e3f));
    archive.replace("fu.gate_imu.bias", Tensor::filled({256}, 1e3f));
    const FusionHead open(archive, cfg.fusion, 256, 576);
    for (int i = 0; i < 20; ++i) {
      const Tensor ie = random_vector(rng, 256), ae = random_vector(rng, 576);
      const Tensor pi = nn::linear(ie, archive.at("fu.proj_imu.weight"), archive.at("fu.proj_imu.bias"));
      const Tensor pa = nn::linear(ae, archive.at("fu.proj_audio.weight"), archive.at("fu.proj_audio.bias"));
      std::vector<float> sum(256);
      for (std::size_t k = 0; k < 256; ++k) sum[k] = pi[k] + pa[k];
      const Tensor want = nn::linear(Tensor({256}, sum), archive.at("fu.fuse.weight"), archive.at("fu.fuse.bias"));
      const Tensor got = open.fused(ie, ae);
      for (std::size_t k = 0; k < 256; ++k) REQUIRE(std::fabs(got[k] - want[k]) <= 1e-6f);
    }
  }

  TEST_CASE("softmax averaging with identical heads equals one head") {
    const auto cfg = samosa_config(FusionVariant::softmax_avg);
    auto archive = fixtures::random_archive(cfg, 4);
    archive.replace("fu.head_audio.weight", archive.at("fu.head_imu.weight"));
    archive.replace("fu.head_audio.bias", archive.at("fu.head_imu.bias"));
    Rng rng(5);
    const Tensor ie = random_vector(rng, 256);
    const Tensor pi = nn::linear(ie, archive.at("fu.proj_imu.weight"), archive.at("fu.proj_imu.bias"));
    const Tensor probs = nn::activation(nn::linear(pi, archive.at("fu.head_imu.weight"), archive.at("fu.head_imu.bias")),
                                        nn::Activation::softmax);
    // Audio projection pinned to the IMU projection of `ie`.
    archive.replace("fu.proj_audio.weight", Tensor::zeros({256, 576}));
    archive.replace("fu.proj_audio.bias", pi);
    const FusionHead same(archive, cfg.fusion, 256, 576);
    const auto c = same.forward(ie, random_vector(rng, 576));
    for (std::size_t k = 0; k < 8; ++k) CHECK(c.logits[k] == doctest::Approx(probs[k]).epsilon(1e-6));
  }

  TEST_CASE("argmax ties go to the lowest index") {
    const std::vector<float> v = {0.1f, 0.7f, 0.2f, 0.7f};
    CHECK(argmax(v) == 1);
    const std::vector<float> flat(5, 0.2f);
    CHECK(argmax(flat) == 0);
  }

  TEST_CASE("archive checks") {
    const auto cfg = samosa_config();
    auto archive = fixtures::random_archive(cfg, 1);
    CHECK_NOTHROW(check_archive(archive, cfg));
    WeightArchive missing(cfg.to_json().dump());
    for (const auto& e : archive.entries()) {
      if (e.name != "ed.out.weight") missing.add(e.name, e.tensor);
    }
    CHECK_THROWS_AS(check_archive(missing, cfg), ConfigError);
    archive.replace("ie.fc2.bias", Tensor::zeros({255}));
    CHECK_THROWS_AS(check_archive(archive, cfg), ConfigError);
  }

  TEST_CASE("f16 quantization halves payload and is idempotent") {
    const auto cfg = samosa_config();
    const auto archive = fixtures::random_archive(cfg, 2);
    const auto half = quantize_archive_f16(archive);
    CHECK(half.payload_bytes() * 2 == archive.payload_bytes());
    for (const auto& e : half.entries()) CHECK(e.tensor.dtype() == DType::f16);
    CHECK(quantize_archive_f16(half) == half);
    CHECK(half.config_text() == archive.config_text());
    const auto model = HarModel::load(half);
    CHECK(model.config().fusion.n_classes == 8);
  }

  TEST_CASE("seminat preset model runs on 10 s windows") {
    const auto& p = preset("seminat-22k");
    const auto cfg = fixtures::default_config(p);
    CHECK(cfg.imu.window == 500);
    const auto model = HarModel::load(fixtures::random_archive(cfg, 3));
    const auto audio = fixtures::class_audio(p, 1, p.classifier_audio_samples());
    CHECK(model.frontend()(Tensor({audio.size()}, audio)).shape() == Shape{690, 64});
    const auto c = model.classify(Tensor::zeros({1, 500, 6}), Tensor({audio.size()}, audio));
    CHECK(c.logits.size() == 8);
  }
}
