#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "watchhar/archive.hpp"
#include "watchhar/dsp.hpp"
#include "watchhar/nn.hpp"
#include "watchhar/presets.hpp"

// The three networks of the recognizer: an IMU-only event detector, and the
// audio+IMU activity classifier (log-mel frontend, MobileNetV3-Small audio
// encoder, 3-layer CNN IMU encoder, fusion head). All weights come from a
// WeightArchive; f16 archives are upcast to f32 on load.
namespace watchhar::models {

using nlohmann::json;

struct FrontendConfig {
  std::string preset = "samosa-1k";
  dsp::StftConfig stft;
  dsp::MelConfig mel;
  dsp::DbConfig db;
  bool mel_bias = false;
  std::size_t window_samples = 1000;  // classifier audio window
};

struct EventDetectorConfig {
  std::size_t input_channels = 6;
  std::size_t window = 150;
  std::vector<std::size_t> channels{64, 64, 128, 128};
  std::vector<std::size_t> kernels{10, 8, 6, 5};
  std::size_t pool = 2;
  std::vector<std::size_t> dense{512, 256, 128};

  void validate() const;
};

struct ImuEncoderConfig {
  std::string arch = "cnn2d";
  std::size_t window = 50;
  std::size_t axes = 6;
  std::vector<std::size_t> channels{64, 128, 256};
  std::size_t kernel = 5;
  std::size_t pool = 2;
  std::size_t hidden = 512;
  std::size_t embedding_dim = 256;

  void validate() const;
};

struct AudioEncoderConfig {
  std::string arch = "mobilenetv3_small";
  std::size_t stem_channels = 16;
  std::size_t head_channels = 576;
  std::size_t min_frames = 32;

  std::size_t embedding_dim() const noexcept { return head_channels; }
  void validate() const;
};

/// MobileNetV3-Small bottleneck schedule, single-channel input variant.
std::vector<nn::InvertedResidualSpec> mobilenetv3_small_blocks();
std::size_t se_squeeze_channels(std::size_t channels);

enum class FusionVariant { gated, concat, softmax_avg };

std::string fusion_variant_name(FusionVariant v);
FusionVariant parse_fusion_variant(const std::string& name);

struct FusionConfig {
  FusionVariant variant = FusionVariant::gated;
  std::size_t shared_dim = 256;
  std::size_t n_classes = 8;

  void validate() const;
};

struct ModelConfig {
  FrontendConfig frontend;
  EventDetectorConfig detector;
  ImuEncoderConfig imu;
  AudioEncoderConfig audio;
  FusionConfig fusion;
  std::vector<std::string> class_names;
  std::vector<std::string> contexts;
  float bn_eps = 1e-5f;

  /// Defaults for a dataset preset.
  static ModelConfig for_preset(const Preset& p, std::vector<std::string> class_names,
                                std::vector<std::string> contexts);
  static ModelConfig from_json(const json& j);
  json to_json() const;
  void validate() const;
};

struct TensorSpec {
  std::string name;
  Shape shape;
  bool required = true;
};

/// Every tensor the model reads from an archive, with its expected shape.
/// Batchnorm statistics are optional: when absent, the conv is taken as
/// already folded and its bias becomes required.
std::vector<TensorSpec> weight_schema(const ModelConfig& cfg);

/// Checks that `archive` carries a tensor for every required schema entry
/// and that every present one has the right shape; throws ConfigError.
void check_archive(const WeightArchive& archive, const ModelConfig& cfg);

struct LayerInfo {
  std::string name;
  std::string kind;
  Shape out_shape;
  std::uint64_t flops = 0;
};

// Shape-inference passes: walk the graph from the configuration alone and
// report each layer's output shape and FLOPs.
std::vector<LayerInfo> trace_event_detector(const EventDetectorConfig& cfg);
std::vector<LayerInfo> trace_imu_encoder(const ImuEncoderConfig& cfg);
std::vector<LayerInfo> trace_audio_encoder(const AudioEncoderConfig& cfg, std::size_t frames, std::size_t n_mels);
std::vector<LayerInfo> trace_frontend(const FrontendConfig& cfg);
std::vector<LayerInfo> trace_fusion(const FusionConfig& cfg, std::size_t imu_dim, std::size_t audio_dim);

std::uint64_t count_flops(const std::vector<LayerInfo>& layers) noexcept;

struct FlopsReport {
  std::uint64_t detector = 0;
  std::uint64_t frontend = 0;
  std::uint64_t imu_encoder = 0;
  std::uint64_t audio_encoder = 0;
  std::uint64_t fusion = 0;

  std::uint64_t classifier() const noexcept { return frontend + imu_encoder + audio_encoder + fusion; }
};

FlopsReport count_flops(const ModelConfig& cfg);

struct ConvLayer {
  nn::ConvSpec spec;
  Tensor w;
  Tensor b;

  Tensor operator()(const Tensor& x) const { return nn::conv(x, w, b, spec); }
};

struct DenseLayer {
  Tensor w;
  Tensor b;

  Tensor operator()(const Tensor& x) const { return nn::linear(x, w, b); }
};

class EventDetector {
 public:
  EventDetector() = default;
  EventDetector(const WeightArchive& archive, const EventDetectorConfig& cfg, float bn_eps);

  /// `window` is [channels x samples], z-scored per channel. Returns P(event).
  float forward(const Tensor& window) const;
  const EventDetectorConfig& config() const noexcept { return cfg_; }

 private:
  struct Block {
    ConvLayer depthwise;
    ConvLayer pointwise;  // batchnorm folded in
  };
  EventDetectorConfig cfg_;
  std::vector<Block> blocks_;
  std::vector<DenseLayer> dense_;
  DenseLayer out_;
};

class ImuEncoder {
 public:
  ImuEncoder() = default;
  ImuEncoder(const WeightArchive& archive, const ImuEncoderConfig& cfg, float bn_eps);

  /// `window` is [1 x T x axes]; returns the embedding.
  Tensor forward(const Tensor& window) const;
  /// Flattened conv features feeding the dense head.
  Tensor features(const Tensor& window) const;
  const ImuEncoderConfig& config() const noexcept { return cfg_; }

 private:
  ImuEncoderConfig cfg_;
  std::vector<ConvLayer> convs_;
  DenseLayer fc1_, fc2_;
};

class AudioEncoder {
 public:
  AudioEncoder() = default;
  AudioEncoder(const WeightArchive& archive, const AudioEncoderConfig& cfg, float bn_eps);

  /// `logmel` is [frames x n_mels]; returns the pooled embedding.
  Tensor forward(const Tensor& logmel) const;
  /// Feature map after the head conv, before global pooling: [C x H x W].
  Tensor feature_map(const Tensor& logmel) const;
  const AudioEncoderConfig& config() const noexcept { return cfg_; }

 private:
  struct Block {
    nn::InvertedResidualSpec spec;
    nn::InvertedResidualWeights weights;
  };
  AudioEncoderConfig cfg_;
  ConvLayer stem_;
  std::vector<Block> blocks_;
  ConvLayer head_;
};

struct Classification {
  Tensor logits;  // softmax_avg: averaged class probabilities
  std::size_t predicted = 0;
};

/// argmax with ties broken toward the lowest index.
std::size_t argmax(std::span<const float> v);

class FusionHead {
 public:
  FusionHead() = default;
  FusionHead(const WeightArchive& archive, const FusionConfig& cfg, std::size_t imu_dim, std::size_t audio_dim);

  Classification forward(const Tensor& imu_embedding, const Tensor& audio_embedding) const;
  /// Gated variant only: the fused 256-d representation before the head.
  Tensor fused(const Tensor& imu_embedding, const Tensor& audio_embedding) const;
  const FusionConfig& config() const noexcept { return cfg_; }

 private:
  FusionConfig cfg_;
  std::size_t imu_dim_ = 0, audio_dim_ = 0;
  DenseLayer proj_imu_, proj_audio_;
  DenseLayer gate_imu_, gate_audio_, fuse_;
  DenseLayer head_, head_imu_, head_audio_;
};

/// Everything needed at inference time, loaded from one archive.
class HarModel {
 public:
  static HarModel load(const WeightArchive& archive);
  static HarModel load(const std::filesystem::path& path);

  const ModelConfig& config() const noexcept { return cfg_; }
  const EventDetector& detector() const noexcept { return detector_; }
  const ImuEncoder& imu_encoder() const noexcept { return imu_; }
  const AudioEncoder& audio_encoder() const noexcept { return audio_; }
  const FusionHead& fusion() const noexcept { return fusion_; }
  const dsp::LogMelFrontend& frontend() const noexcept { return frontend_; }

  float detect(const Tensor& window) const { return detector_.forward(window); }
  /// `imu` is [1 x T x axes] (normalized), `audio` the raw waveform window.
  Classification classify(const Tensor& imu, const Tensor& audio) const;

 private:
  ModelConfig cfg_;
  EventDetector detector_;
  ImuEncoder imu_;
  AudioEncoder audio_;
  FusionHead fusion_;
  dsp::LogMelFrontend frontend_;
};

/// Converts every f32 entry to f16 storage; f16 entries pass through.
WeightArchive quantize_archive_f16(const WeightArchive& archive);

}  // namespace watchhar::models
