#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>

#include "watchhar/tensor.hpp"

// Inference-time layers. Activations are laid out channel-first without a
// batch axis: [C x L] for 1D and [C x H x W] for 2D. Convolution weights use
// [out x in/groups x K] and [out x in/groups x KH x KW].
namespace watchhar::nn {

enum class Padding { valid, same };
enum class Activation { identity, relu, sigmoid, hardswish, hardsigmoid, softmax };

std::string_view activation_name(Activation a) noexcept;
Activation parse_activation(std::string_view name);

using Extent2 = std::array<std::size_t, 2>;

struct ConvSpec {
  int dims = 1;
  std::size_t in_ch = 1;
  std::size_t out_ch = 1;
  Extent2 kernel{1, 1};  // per spatial axis, in order; 1D uses kernel[0]
  Extent2 stride{1, 1};
  Padding padding = Padding::valid;
  std::size_t groups = 1;

  static ConvSpec conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride = 1,
                         Padding padding = Padding::valid, std::size_t groups = 1);
  static ConvSpec conv2d(std::size_t in_ch, std::size_t out_ch, Extent2 kernel, Extent2 stride = {1, 1},
                         Padding padding = Padding::valid, std::size_t groups = 1);

  void validate() const;
  Shape weight_shape() const;
  bool depthwise() const noexcept { return groups == in_ch && groups > 1; }
};

/// Output extent along one axis: valid = floor((L-K)/S)+1, same = ceil(L/S).
std::size_t conv_out_extent(std::size_t length, std::size_t kernel, std::size_t stride, Padding padding);
/// Spatial output shape of a conv for the given input spatial shape.
Shape conv_out_spatial(const Shape& in_spatial, const ConvSpec& spec);

/// Cross-correlation (no kernel flip). "same" pads with zeros, the extra
/// element going to the trailing side when the total is odd.
Tensor conv(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b, const ConvSpec& spec);

Tensor maxpool(const Tensor& x, Extent2 kernel, Extent2 stride, int dims);

Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b);

Tensor activation(Tensor x, Activation kind);
void activate_inplace(Tensor& x, Activation kind);

inline float sigmoid(float v) noexcept;
inline float hardsigmoid(float v) noexcept;

struct BnParams {
  Tensor gamma, beta, running_mean, running_var;
  float eps = 1e-5f;

  void validate(std::size_t channels) const;
};

/// Folds an inference batchnorm into the preceding conv/linear weights.
/// Returned bias is always present.
std::pair<Tensor, Tensor> batchnorm_fold(const Tensor& w, const std::optional<Tensor>& b, const BnParams& bn);

/// Unfolded batchnorm applied to activations; the two-step reference path.
Tensor batchnorm(const Tensor& x, const BnParams& bn);

Tensor global_avg_pool(const Tensor& x);

struct SeWeights {
  Tensor w1, b1;  // reduce: [squeeze x C], [squeeze]
  Tensor w2, b2;  // expand: [C x squeeze], [C]
};

/// s = hardsigmoid(w2 relu(w1 gap(x) + b1) + b2); returns x scaled per channel by s.
Tensor squeeze_excitation(const Tensor& x, const SeWeights& se);

struct ConvWeights {
  Tensor w;
  std::optional<Tensor> b;
};

struct InvertedResidualSpec {
  std::size_t in_ch = 16;
  std::size_t expand_ch = 16;
  std::size_t out_ch = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool use_se = false;
  Activation act = Activation::relu;

  bool has_expand() const noexcept { return expand_ch != in_ch; }
  bool residual() const noexcept { return stride == 1 && in_ch == out_ch; }
  ConvSpec expand_spec() const;
  ConvSpec depthwise_spec() const;
  ConvSpec project_spec() const;
};

struct InvertedResidualWeights {
  std::optional<ConvWeights> expand;
  ConvWeights depthwise;
  std::optional<SeWeights> se;
  ConvWeights project;
};

/// expand 1x1 -> act -> depthwise kxk -> act -> [SE] -> project 1x1, plus the
/// identity skip when stride == 1 and in_ch == out_ch. Inputs are [C x H x W].
Tensor inverted_residual(const Tensor& x, const InvertedResidualWeights& weights, const InvertedResidualSpec& spec);

// FLOP conventions: a multiply-add is two FLOPs; bias adds, pooling and
// activations cost one FLOP per output element.
std::uint64_t conv_flops(const ConvSpec& spec, std::size_t spatial_out, bool has_bias);
std::uint64_t linear_flops(std::size_t in, std::size_t out, bool has_bias);

inline float sigmoid(float v) noexcept { return 1.0f / (1.0f + std::exp(-v)); }

inline float hardsigmoid(float v) noexcept {
  const float s = (v + 3.0f) / 6.0f;
  return s < 0.0f ? 0.0f : (s > 1.0f ? 1.0f : s);
}

}  // namespace watchhar::nn
