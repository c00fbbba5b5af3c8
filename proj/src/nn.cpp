#include "watchhar/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kernels.hpp"
#include "watchhar/error.hpp"

namespace watchhar::nn {

std::string_view activation_name(Activation a) noexcept {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::hardswish: return "hardswish";
    case Activation::hardsigmoid: return "hardsigmoid";
    case Activation::softmax: return "softmax";
  }
  return "identity";
}

Activation parse_activation(std::string_view name) {
  for (auto a : {Activation::identity, Activation::relu, Activation::sigmoid, Activation::hardswish,
                 Activation::hardsigmoid, Activation::softmax}) {
    if (activation_name(a) == name) return a;
  }
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

ConvSpec ConvSpec::conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                          Padding padding, std::size_t groups) {
  return ConvSpec{1, in_ch, out_ch, {kernel, 1}, {stride, 1}, padding, groups};
}

ConvSpec ConvSpec::conv2d(std::size_t in_ch, std::size_t out_ch, Extent2 kernel, Extent2 stride, Padding padding,
                          std::size_t groups) {
  return ConvSpec{2, in_ch, out_ch, kernel, stride, padding, groups};
}

void ConvSpec::validate() const {
  if (dims != 1 && dims != 2) throw ConfigError("conv dims must be 1 or 2");
  if (groups < 1 || in_ch % groups != 0 || out_ch % groups != 0) {
    throw ConfigError("conv channels " + std::to_string(in_ch) + "->" + std::to_string(out_ch) +
                      " not divisible by groups " + std::to_string(groups));
  }
  for (int d = 0; d < dims; ++d) {
    if (kernel[d] < 1 || stride[d] < 1) throw ConfigError("conv kernel and stride must be >= 1");
  }
}

Shape ConvSpec::weight_shape() const {
  if (dims == 1) return {out_ch, in_ch / groups, kernel[0]};
  return {out_ch, in_ch / groups, kernel[0], kernel[1]};
}

std::size_t conv_out_extent(std::size_t length, std::size_t kernel, std::size_t stride, Padding padding) {
  if (padding == Padding::same) return (length + stride - 1) / stride;
  if (length < kernel) {
    throw ShapeError("extent " + std::to_string(length) + " is smaller than kernel " + std::to_string(kernel));
  }
  return (length - kernel) / stride + 1;
}

Shape conv_out_spatial(const Shape& in_spatial, const ConvSpec& spec) {
  if (static_cast<int>(in_spatial.size()) != spec.dims) {
    throw ShapeError("conv expects " + std::to_string(spec.dims) + " spatial axes, got " + shape_string(in_spatial));
  }
  Shape out(in_spatial.size());
  for (std::size_t d = 0; d < in_spatial.size(); ++d) {
    out[d] = conv_out_extent(in_spatial[d], spec.kernel[d], spec.stride[d], spec.padding);
  }
  return out;
}

namespace {

struct Geometry {
  std::size_t c, h, w;          // input
  std::size_t oh, ow;           // output
  std::size_t kh, kw, sh, sw;   // kernel and stride
  std::size_t pt, pl;           // leading pads
};

std::size_t leading_pad(std::size_t length, std::size_t out, std::size_t kernel, std::size_t stride) {
  const std::size_t needed = (out - 1) * stride + kernel;
  const std::size_t total = needed > length ? needed - length : 0;
  return total / 2;
}

Geometry geometry(const Tensor& x, const ConvSpec& spec) {
  Geometry g{};
  if (spec.dims == 1) {
    if (x.rank() != 2) throw ShapeError("1D op expects [C x L], got " + shape_string(x.shape()));
    g.c = x.dim(0);
    g.h = 1;
    g.w = x.dim(1);
    g.kh = 1;
    g.kw = spec.kernel[0];
    g.sh = 1;
    g.sw = spec.stride[0];
  } else {
    if (x.rank() != 3) throw ShapeError("2D op expects [C x H x W], got " + shape_string(x.shape()));
    g.c = x.dim(0);
    g.h = x.dim(1);
    g.w = x.dim(2);
    g.kh = spec.kernel[0];
    g.kw = spec.kernel[1];
    g.sh = spec.stride[0];
    g.sw = spec.stride[1];
  }
  g.oh = conv_out_extent(g.h, g.kh, g.sh, spec.padding);
  g.ow = conv_out_extent(g.w, g.kw, g.sw, spec.padding);
  if (spec.padding == Padding::same) {
    g.pt = leading_pad(g.h, g.oh, g.kh, g.sh);
    g.pl = leading_pad(g.w, g.ow, g.kw, g.sw);
  }
  return g;
}

// Range of output indices o with 0 <= o*stride + k - pad < length.
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t length, std::size_t k,
                                                std::size_t stride, std::size_t pad) {
  const auto offset = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
  std::ptrdiff_t hi_limit = static_cast<std::ptrdiff_t>(length) - 1 - offset;  // o*s <= hi_limit
  if (hi_limit < 0) return {0, 0};
  std::ptrdiff_t hi = std::min<std::ptrdiff_t>(hi_limit / s + 1, static_cast<std::ptrdiff_t>(out));
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

Tensor conv(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b, const ConvSpec& spec) {
  spec.validate();
  const Geometry g = geometry(x, spec);
  if (g.c != spec.in_ch) {
    throw ShapeError("conv expects " + std::to_string(spec.in_ch) + " input channels, got " + shape_string(x.shape()));
  }
  if (w.shape() != spec.weight_shape()) {
    throw ShapeError("conv weight " + shape_string(w.shape()) + " does not match expected " +
                     shape_string(spec.weight_shape()));
  }
  if (b && b->shape() != Shape{spec.out_ch}) {
    throw ShapeError("conv bias " + shape_string(b->shape()) + " does not match " + std::to_string(spec.out_ch) +
                     " output channels");
  }

  const std::size_t in_per_group = spec.in_ch / spec.groups;
  const std::size_t out_per_group = spec.out_ch / spec.groups;
  const std::size_t out_plane = g.oh * g.ow;
  const std::size_t in_plane = g.h * g.w;
  std::vector<float> out(spec.out_ch * out_plane, 0.0f);
  const float* xin = x.values().data();
  const float* wt = w.values().data();

  // Rows of the output map onto contiguous input rows when only the H axis
  // is strided/padded; then a whole kernel row is one long axpy.
  const bool contiguous_rows = g.kw == 1 && g.sw == 1 && g.ow == g.w && g.sh == 1;

  for (std::size_t oc = 0; oc < spec.out_ch; ++oc) {
    float* dst = out.data() + oc * out_plane;
    if (b) std::fill(dst, dst + out_plane, (*b)[oc]);
    const std::size_t group = oc / out_per_group;
    for (std::size_t icg = 0; icg < in_per_group; ++icg) {
      const std::size_t ic = group * in_per_group + icg;
      const float* src = xin + ic * in_plane;
      const float* wk = wt + (oc * in_per_group + icg) * g.kh * g.kw;
      for (std::size_t kh = 0; kh < g.kh; ++kh) {
        const auto [oh_lo, oh_hi] = valid_range(g.oh, g.h, kh, g.sh, g.pt);
        if (oh_lo >= oh_hi) continue;
        if (contiguous_rows) {
          const std::size_t ih0 = oh_lo + kh - g.pt;
          detail::axpy(wk[kh], src + ih0 * g.w, dst + oh_lo * g.ow, (oh_hi - oh_lo) * g.ow);
          continue;
        }
        for (std::size_t kw = 0; kw < g.kw; ++kw) {
          const float wv = wk[kh * g.kw + kw];
          if (wv == 0.0f) continue;
          const auto [ow_lo, ow_hi] = valid_range(g.ow, g.w, kw, g.sw, g.pl);
          if (ow_lo >= ow_hi) continue;
          for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
            const float* row = src + (oh * g.sh + kh - g.pt) * g.w;
            float* orow = dst + oh * g.ow;
            if (g.sw == 1) {
              detail::axpy(wv, row + ow_lo + kw - g.pl, orow + ow_lo, ow_hi - ow_lo);
            } else {
              for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * row[ow * g.sw + kw - g.pl];
            }
          }
        }
      }
    }
  }
  if (spec.dims == 1) return Tensor({spec.out_ch, g.ow}, std::move(out));
  return Tensor({spec.out_ch, g.oh, g.ow}, std::move(out));
}

Tensor maxpool(const Tensor& x, Extent2 kernel, Extent2 stride, int dims) {
  ConvSpec spec = dims == 1 ? ConvSpec::conv1d(1, 1, kernel[0], stride[0]) : ConvSpec::conv2d(1, 1, kernel, stride);
  spec.validate();
  const Geometry g = geometry(x, spec);
  if (g.kh > g.h || g.kw > g.w) {
    throw ShapeError("pool kernel larger than input " + shape_string(x.shape()));
  }
  std::vector<float> out(g.c * g.oh * g.ow);
  const float* src = x.values().data();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t oh = 0; oh < g.oh; ++oh) {
      for (std::size_t ow = 0; ow < g.ow; ++ow) {
        float m = -std::numeric_limits<float>::infinity();
        for (std::size_t kh = 0; kh < g.kh; ++kh) {
          const float* row = src + c * g.h * g.w + (oh * g.sh + kh) * g.w + ow * g.sw;
          for (std::size_t kw = 0; kw < g.kw; ++kw) m = std::max(m, row[kw]);
        }
        out[(c * g.oh + oh) * g.ow + ow] = m;
      }
    }
  }
  if (dims == 1) return Tensor({g.c, g.ow}, std::move(out));
  return Tensor({g.c, g.oh, g.ow}, std::move(out));
}

Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b) {
  if (w.rank() != 2) throw ShapeError("linear weight must be [out x in], got " + shape_string(w.shape()));
  const std::size_t m = w.dim(0), n = w.dim(1);
  if (x.size() != n) {
    throw ShapeError("linear expects " + std::to_string(n) + " inputs, got " + shape_string(x.shape()));
  }
  if (b && b->shape() != Shape{m}) {
    throw ShapeError("linear bias " + shape_string(b->shape()) + " does not match " + std::to_string(m) + " outputs");
  }
  std::vector<float> out(m);
  const float* xv = x.values().data();
  const float* wv = w.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    out[i] = detail::dot(wv + i * n, xv, n) + (b ? (*b)[i] : 0.0f);
  }
  return Tensor({m}, std::move(out));
}

void activate_inplace(Tensor& x, Activation kind) {
  auto v = x.values();
  switch (kind) {
    case Activation::identity:
      return;
    case Activation::relu:
      for (auto& e : v) e = e > 0.0f ? e : 0.0f;
      return;
    case Activation::sigmoid:
      for (auto& e : v) e = sigmoid(e);
      return;
    case Activation::hardsigmoid:
      for (auto& e : v) e = hardsigmoid(e);
      return;
    case Activation::hardswish:
      for (auto& e : v) e = e * hardsigmoid(e);
      return;
    case Activation::softmax: {
      const std::size_t n = x.rank() == 0 ? 1 : x.shape().back();
      for (std::size_t start = 0; start < v.size(); start += n) {
        float peak = -std::numeric_limits<float>::infinity();
        for (std::size_t i = 0; i < n; ++i) peak = std::max(peak, v[start + i]);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          v[start + i] = std::exp(v[start + i] - peak);
          sum += v[start + i];
        }
        for (std::size_t i = 0; i < n; ++i) v[start + i] = static_cast<float>(v[start + i] / sum);
      }
      return;
    }
  }
}

Tensor activation(Tensor x, Activation kind) {
  activate_inplace(x, kind);
  return x;
}

void BnParams::validate(std::size_t channels) const {
  for (const Tensor* t : {&gamma, &beta, &running_mean, &running_var}) {
    if (t->shape() != Shape{channels}) {
      throw ShapeError("batchnorm vector " + shape_string(t->shape()) + " does not match " +
                       std::to_string(channels) + " channels");
    }
  }
  for (float v : running_var.values()) {
    if (v < 0.0f) throw ConfigError("batchnorm running_var must be nonnegative");
  }
  if (!(eps > 0.0f)) throw ConfigError("batchnorm eps must be positive");
}

std::pair<Tensor, Tensor> batchnorm_fold(const Tensor& w, const std::optional<Tensor>& b, const BnParams& bn) {
  if (w.rank() < 1) throw ShapeError("batchnorm_fold needs a weight with an output axis");
  const std::size_t channels = w.dim(0);
  bn.validate(channels);
  if (b && b->shape() != Shape{channels}) {
    throw ShapeError("bias " + shape_string(b->shape()) + " does not match " + std::to_string(channels) + " channels");
  }
  const std::size_t per = w.size() / channels;
  Tensor wf = w;
  std::vector<float> bf(channels);
  auto wv = wf.values();
  for (std::size_t c = 0; c < channels; ++c) {
    const double scale = static_cast<double>(bn.gamma[c]) / std::sqrt(static_cast<double>(bn.running_var[c]) + bn.eps);
    for (std::size_t i = 0; i < per; ++i) wv[c * per + i] = static_cast<float>(wv[c * per + i] * scale);
    const double bias = b ? (*b)[c] : 0.0;
    bf[c] = static_cast<float>((bias - bn.running_mean[c]) * scale + bn.beta[c]);
  }
  return {std::move(wf), Tensor({channels}, std::move(bf))};
}

Tensor batchnorm(const Tensor& x, const BnParams& bn) {
  const std::size_t channels = x.dim(0);
  bn.validate(channels);
  Tensor out = x;
  auto v = out.values();
  const std::size_t per = x.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    const float inv = 1.0f / std::sqrt(bn.running_var[c] + bn.eps);
    for (std::size_t i = 0; i < per; ++i) {
      auto& e = v[c * per + i];
      e = (e - bn.running_mean[c]) * inv * bn.gamma[c] + bn.beta[c];
    }
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("global_avg_pool expects [C x spatial...], got " + shape_string(x.shape()));
  const std::size_t channels = x.dim(0);
  const std::size_t per = x.size() / channels;
  const auto v = x.values();
  std::vector<float> out(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < per; ++i) sum += v[c * per + i];
    out[c] = static_cast<float>(sum / static_cast<double>(per));
  }
  return Tensor({channels}, std::move(out));
}

Tensor squeeze_excitation(const Tensor& x, const SeWeights& se) {
  const std::size_t channels = x.dim(0);
  if (se.w1.rank() != 2 || se.w1.dim(1) != channels || se.w2.rank() != 2 || se.w2.dim(0) != channels ||
      se.w2.dim(1) != se.w1.dim(0)) {
    throw ShapeError("SE weights " + shape_string(se.w1.shape()) + "/" + shape_string(se.w2.shape()) +
                     " inconsistent with " + std::to_string(channels) + " channels");
  }
  Tensor s = linear(global_avg_pool(x), se.w1, se.b1);
  activate_inplace(s, Activation::relu);
  s = linear(s, se.w2, se.b2);
  activate_inplace(s, Activation::hardsigmoid);

  Tensor out = x;
  auto v = out.values();
  const std::size_t per = x.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < per; ++i) v[c * per + i] *= s[c];
  }
  return out;
}

ConvSpec InvertedResidualSpec::expand_spec() const { return ConvSpec::conv2d(in_ch, expand_ch, {1, 1}); }

ConvSpec InvertedResidualSpec::depthwise_spec() const {
  return ConvSpec::conv2d(expand_ch, expand_ch, {kernel, kernel}, {stride, stride}, Padding::same, expand_ch);
}

ConvSpec InvertedResidualSpec::project_spec() const { return ConvSpec::conv2d(expand_ch, out_ch, {1, 1}); }

Tensor inverted_residual(const Tensor& x, const InvertedResidualWeights& weights, const InvertedResidualSpec& spec) {
  if (x.rank() != 3 || x.dim(0) != spec.in_ch) {
    throw ShapeError("inverted residual expects [" + std::to_string(spec.in_ch) + " x H x W], got " +
                     shape_string(x.shape()));
  }
  if (spec.has_expand() != weights.expand.has_value()) {
    throw ShapeError("expand weights present/absent inconsistently with expand_ch");
  }
  if (spec.use_se != weights.se.has_value()) throw ShapeError("SE weights present/absent inconsistently with use_se");

  Tensor h = x;
  if (weights.expand) {
    h = conv(h, weights.expand->w, weights.expand->b, spec.expand_spec());
    activate_inplace(h, spec.act);
  }
  h = conv(h, weights.depthwise.w, weights.depthwise.b, spec.depthwise_spec());
  activate_inplace(h, spec.act);
  if (weights.se) h = squeeze_excitation(h, *weights.se);
  h = conv(h, weights.project.w, weights.project.b, spec.project_spec());

  if (spec.residual()) {
    auto hv = h.values();
    const auto xv = x.values();
    for (std::size_t i = 0; i < hv.size(); ++i) hv[i] += xv[i];
  }
  return h;
}

std::uint64_t conv_flops(const ConvSpec& spec, std::size_t spatial_out, bool has_bias) {
  const std::uint64_t taps = spec.dims == 1 ? spec.kernel[0] : spec.kernel[0] * spec.kernel[1];
  const std::uint64_t outputs = static_cast<std::uint64_t>(spec.out_ch) * spatial_out;
  return 2 * taps * (spec.in_ch / spec.groups) * outputs + (has_bias ? outputs : 0);
}

std::uint64_t linear_flops(std::size_t in, std::size_t out, bool has_bias) {
  return 2ull * in * out + (has_bias ? out : 0);
}

}  // namespace watchhar::nn
