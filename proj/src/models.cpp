#include "watchhar/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "watchhar/error.hpp"

namespace watchhar::models {

using nn::Activation;
using nn::ConvSpec;
using nn::InvertedResidualSpec;
using nn::Padding;

namespace {

const std::set<std::string> kReservedImuArchs = {"deepconvlstm", "attend_discriminate", "cnn1d"};
const std::set<std::string> kReservedAudioArchs = {"cnn14", "resnet22", "mobilenetv1"};

std::string join_shape(std::size_t a, std::size_t b) { return shape_string({a, b}); }

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void EventDetectorConfig::validate() const {
  if (input_channels == 0 || window == 0) throw ConfigError("event detector input must be non-empty");
  if (channels.size() != 4 || kernels.size() != 4) {
    throw ConfigError("event detector needs exactly 4 conv blocks");
  }
  for (std::size_t i = 1; i < 4; ++i) {
    if (channels[i] < channels[i - 1]) throw ConfigError("event detector channels must be nondecreasing");
    if (kernels[i] > kernels[i - 1]) throw ConfigError("event detector kernels must be nonincreasing");
  }
  if (pool < 1) throw ConfigError("event detector pool must be >= 1");
  if (dense.empty()) throw ConfigError("event detector needs at least one dense layer");
}

void ImuEncoderConfig::validate() const {
  if (kReservedImuArchs.count(arch)) {
    throw ConfigError("IMU encoder '" + arch + "' is a reserved ablation backbone and is not built");
  }
  if (arch != "cnn2d") throw ConfigError("unknown IMU encoder '" + arch + "'");
  if (channels.size() != 3) throw ConfigError("IMU encoder needs exactly 3 conv layers");
  if (kernel < 1 || pool < 1 || hidden < 1 || embedding_dim < 1 || window < 1 || axes < 1) {
    throw ConfigError("IMU encoder extents must be positive");
  }
}

void AudioEncoderConfig::validate() const {
  if (kReservedAudioArchs.count(arch)) {
    throw ConfigError("audio encoder '" + arch + "' is a reserved ablation backbone and is not built");
  }
  if (arch != "mobilenetv3_small") throw ConfigError("unknown audio encoder '" + arch + "'");
}

std::string fusion_variant_name(FusionVariant v) {
  switch (v) {
    case FusionVariant::gated: return "gated";
    case FusionVariant::concat: return "concat";
    case FusionVariant::softmax_avg: return "softmax_avg";
  }
  return "gated";
}

FusionVariant parse_fusion_variant(const std::string& name) {
  if (name == "gated") return FusionVariant::gated;
  if (name == "concat") return FusionVariant::concat;
  if (name == "softmax_avg") return FusionVariant::softmax_avg;
  if (name == "self_attention") {
    throw ConfigError("fusion 'self_attention' is a reserved ablation variant and is not built");
  }
  throw ConfigError("unknown fusion variant '" + name + "'");
}

void FusionConfig::validate() const {
  if (n_classes < 2) throw ConfigError("fusion needs at least 2 classes");
  if (variant == FusionVariant::gated && shared_dim != 256) {
    throw ConfigError("gated fusion projects into a 256-d shared space, got " + std::to_string(shared_dim));
  }
  if (shared_dim < 1) throw ConfigError("fusion shared_dim must be positive");
}

std::size_t se_squeeze_channels(std::size_t channels) {
  // Round channels/4 to a multiple of 8, never dropping more than 10%.
  const double v = static_cast<double>(channels) / 4.0;
  std::size_t r = std::max<std::size_t>(8, (static_cast<std::size_t>(v + 4.0) / 8) * 8);
  if (static_cast<double>(r) < 0.9 * v) r += 8;
  return r;
}

std::vector<InvertedResidualSpec> mobilenetv3_small_blocks() {
  const auto RE = Activation::relu;
  const auto HS = Activation::hardswish;
  // in, expand, out, kernel, stride, se, activation
  return {
      {16, 16, 16, 3, 2, true, RE},    {16, 72, 24, 3, 2, false, RE},  {24, 88, 24, 3, 1, false, RE},
      {24, 96, 40, 5, 2, true, HS},    {40, 240, 40, 5, 1, true, HS},  {40, 240, 40, 5, 1, true, HS},
      {40, 120, 48, 5, 1, true, HS},   {48, 144, 48, 5, 1, true, HS},  {48, 288, 96, 5, 2, true, HS},
      {96, 576, 96, 5, 1, true, HS},   {96, 576, 96, 5, 1, true, HS},
  };
}

ModelConfig ModelConfig::for_preset(const Preset& p, std::vector<std::string> class_names,
                                    std::vector<std::string> contexts) {
  ModelConfig c;
  c.frontend.preset = p.name;
  c.frontend.stft = p.stft;
  c.frontend.mel = p.mel;
  c.frontend.db = p.db;
  c.frontend.window_samples = p.classifier_audio_samples();
  c.imu.window = p.classifier_imu_samples();
  c.imu.hidden = p.imu_encoder_hidden;
  c.fusion.n_classes = class_names.size();
  c.class_names = std::move(class_names);
  c.contexts = std::move(contexts);
  return c;
}

namespace {

std::string norm_name(dsp::MelNorm n) { return n == dsp::MelNorm::area ? "area" : "peak-one"; }

dsp::MelNorm parse_norm(const std::string& s) {
  if (s == "peak-one") return dsp::MelNorm::peak_one;
  if (s == "area") return dsp::MelNorm::area;
  throw ConfigError("unknown mel norm '" + s + "'");
}

}  // namespace

json ModelConfig::to_json() const {
  json j;
  j["format"] = "watchhar-model";
  j["bn_eps"] = bn_eps;
  j["class_names"] = class_names;
  j["contexts"] = contexts;
  j["audio_frontend"] = {
      {"preset", frontend.preset},
      {"sample_rate", frontend.stft.sample_rate},
      {"n_fft", frontend.stft.n_fft},
      {"hop", frontend.stft.hop},
      {"window", "hann"},
      {"center_pad", frontend.stft.center_pad},
      {"n_mels", frontend.mel.n_mels},
      {"f_min", frontend.mel.f_min},
      {"f_max", frontend.mel.f_max},
      {"norm", norm_name(frontend.mel.norm)},
      {"amin", frontend.db.amin},
      {"ref", frontend.db.ref},
      {"top_db", frontend.db.top_db},
      {"mel_bias", frontend.mel_bias},
      {"window_samples", frontend.window_samples},
  };
  j["event_detector"] = {
      {"input_channels", detector.input_channels}, {"window", detector.window}, {"channels", detector.channels},
      {"kernels", detector.kernels},               {"pool", detector.pool},     {"dense", detector.dense},
  };
  j["imu_encoder"] = {
      {"arch", imu.arch},   {"window", imu.window}, {"axes", imu.axes},     {"channels", imu.channels},
      {"kernel", imu.kernel}, {"pool", imu.pool},   {"hidden", imu.hidden}, {"embedding_dim", imu.embedding_dim},
  };
  j["audio_encoder"] = {
      {"arch", audio.arch},
      {"stem_channels", audio.stem_channels},
      {"embedding_dim", audio.embedding_dim()},
      {"min_frames", audio.min_frames},
  };
  j["fusion"] = {
      {"variant", fusion_variant_name(fusion.variant)},
      {"shared_dim", fusion.shared_dim},
      {"n_classes", fusion.n_classes},
      {"imu_dim", imu.embedding_dim},
      {"audio_dim", audio.embedding_dim()},
  };
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  try {
    ModelConfig c;
    c.bn_eps = j.value("bn_eps", 1e-5f);
    c.class_names = j.at("class_names").get<std::vector<std::string>>();
    c.contexts = j.value("contexts", std::vector<std::string>{});

    const auto& fe = j.at("audio_frontend");
    c.frontend.preset = fe.value("preset", std::string("custom"));
    c.frontend.stft.sample_rate = fe.at("sample_rate").get<double>();
    c.frontend.stft.n_fft = fe.at("n_fft").get<std::size_t>();
    c.frontend.stft.hop = fe.at("hop").get<std::size_t>();
    if (fe.value("window", std::string("hann")) != "hann") throw ConfigError("only the hann window is supported");
    c.frontend.stft.center_pad = fe.value("center_pad", true);
    c.frontend.mel.n_mels = fe.at("n_mels").get<std::size_t>();
    c.frontend.mel.f_min = fe.value("f_min", 0.0);
    c.frontend.mel.f_max = fe.at("f_max").get<double>();
    c.frontend.mel.norm = parse_norm(fe.value("norm", std::string("peak-one")));
    c.frontend.db.amin = fe.value("amin", 1e-10f);
    c.frontend.db.ref = fe.value("ref", 1.0f);
    c.frontend.db.top_db = fe.value("top_db", 80.0f);
    c.frontend.mel_bias = fe.value("mel_bias", false);
    c.frontend.window_samples = fe.at("window_samples").get<std::size_t>();

    const auto& ed = j.at("event_detector");
    c.detector.input_channels = ed.value("input_channels", std::size_t{6});
    c.detector.window = ed.value("window", std::size_t{150});
    c.detector.channels = ed.at("channels").get<std::vector<std::size_t>>();
    c.detector.kernels = ed.at("kernels").get<std::vector<std::size_t>>();
    c.detector.pool = ed.value("pool", std::size_t{2});
    c.detector.dense = ed.at("dense").get<std::vector<std::size_t>>();

    const auto& ie = j.at("imu_encoder");
    c.imu.arch = ie.value("arch", std::string("cnn2d"));
    c.imu.window = ie.at("window").get<std::size_t>();
    c.imu.axes = ie.value("axes", std::size_t{6});
    c.imu.channels = ie.at("channels").get<std::vector<std::size_t>>();
    c.imu.kernel = ie.value("kernel", std::size_t{5});
    c.imu.pool = ie.value("pool", std::size_t{2});
    c.imu.hidden = ie.at("hidden").get<std::size_t>();
    c.imu.embedding_dim = ie.value("embedding_dim", std::size_t{256});

    const auto& ae = j.at("audio_encoder");
    c.audio.arch = ae.value("arch", std::string("mobilenetv3_small"));
    c.audio.stem_channels = ae.value("stem_channels", std::size_t{16});
    c.audio.head_channels = ae.value("embedding_dim", std::size_t{576});
    c.audio.min_frames = ae.value("min_frames", std::size_t{32});

    const auto& fu = j.at("fusion");
    c.fusion.variant = parse_fusion_variant(fu.value("variant", std::string("gated")));
    c.fusion.shared_dim = fu.value("shared_dim", std::size_t{256});
    c.fusion.n_classes = fu.at("n_classes").get<std::size_t>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
}

void ModelConfig::validate() const {
  frontend.stft.validate();
  frontend.mel.validate(frontend.stft);
  frontend.db.validate();
  detector.validate();
  imu.validate();
  audio.validate();
  fusion.validate();
  if (audio.stem_channels != 16 || audio.head_channels != 576) {
    throw ConfigError("mobilenetv3_small expects a 16-channel stem and 576-channel head");
  }
  if (class_names.size() != fusion.n_classes) {
    throw ConfigError("class_names lists " + std::to_string(class_names.size()) + " classes but fusion expects " +
                      std::to_string(fusion.n_classes));
  }
  if (!(bn_eps > 0.0f)) throw ConfigError("bn_eps must be positive");
}

// ---------------------------------------------------------------------------
// Weight schema

namespace {

void add_conv(std::vector<TensorSpec>& out, const std::string& prefix, const ConvSpec& spec, bool with_bn) {
  out.push_back({prefix + ".weight", spec.weight_shape(), true});
  out.push_back({prefix + ".bias", {spec.out_ch}, false});
  if (with_bn) {
    for (const char* s : {".bn.gamma", ".bn.beta", ".bn.mean", ".bn.var"}) {
      out.push_back({prefix + s, {spec.out_ch}, false});
    }
  }
}

void add_dense(std::vector<TensorSpec>& out, const std::string& prefix, std::size_t in, std::size_t outs) {
  out.push_back({prefix + ".weight", {outs, in}, true});
  out.push_back({prefix + ".bias", {outs}, true});
}

std::size_t pooled(std::size_t length, std::size_t pool) {
  if (length < pool) throw ShapeError("extent " + std::to_string(length) + " is smaller than pool " + std::to_string(pool));
  return (length - pool) / pool + 1;
}

ConvSpec detector_dw_spec(std::size_t ch, std::size_t k) {
  return ConvSpec::conv1d(ch, ch, k, 1, Padding::valid, ch);
}

ConvSpec imu_conv_spec(std::size_t in, std::size_t out, std::size_t k) {
  return ConvSpec::conv2d(in, out, {k, 1});
}

ConvSpec audio_stem_spec(std::size_t out) { return ConvSpec::conv2d(1, out, {3, 3}, {2, 2}, Padding::same); }

std::size_t detector_flat_dim(const EventDetectorConfig& cfg) {
  std::size_t len = cfg.window;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    len = pooled(nn::conv_out_extent(len, cfg.kernels[i], 1, Padding::valid), cfg.pool);
  }
  return len * cfg.channels.back();
}

std::size_t imu_flat_dim(const ImuEncoderConfig& cfg) {
  std::size_t h = cfg.window;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    h = nn::conv_out_extent(h, cfg.kernel, 1, Padding::valid);
    if (i + 1 < cfg.channels.size()) h = pooled(h, cfg.pool);
  }
  return cfg.channels.back() * h * cfg.axes;
}

}  // namespace

std::vector<TensorSpec> weight_schema(const ModelConfig& cfg) {
  std::vector<TensorSpec> out;
  const auto& fe = cfg.frontend;
  out.push_back({"fe.mel.weight", {fe.mel.n_mels, fe.stft.n_bins()}, true});
  if (fe.mel_bias) out.push_back({"fe.mel.bias", {fe.mel.n_mels}, true});

  const auto& ed = cfg.detector;
  std::size_t ch = ed.input_channels;
  for (std::size_t i = 0; i < ed.channels.size(); ++i) {
    const std::string p = "ed.b" + std::to_string(i);
    add_conv(out, p + ".dw", detector_dw_spec(ch, ed.kernels[i]), false);
    add_conv(out, p + ".pw", ConvSpec::conv1d(ch, ed.channels[i], 1), true);
    ch = ed.channels[i];
  }
  std::size_t in = detector_flat_dim(ed);
  for (std::size_t i = 0; i < ed.dense.size(); ++i) {
    add_dense(out, "ed.fc" + std::to_string(i), in, ed.dense[i]);
    in = ed.dense[i];
  }
  add_dense(out, "ed.out", in, 1);

  const auto& ie = cfg.imu;
  ch = 1;
  for (std::size_t i = 0; i < ie.channels.size(); ++i) {
    add_conv(out, "ie.conv" + std::to_string(i), imu_conv_spec(ch, ie.channels[i], ie.kernel), true);
    ch = ie.channels[i];
  }
  add_dense(out, "ie.fc1", imu_flat_dim(ie), ie.hidden);
  add_dense(out, "ie.fc2", ie.hidden, ie.embedding_dim);

  add_conv(out, "ae.stem", audio_stem_spec(cfg.audio.stem_channels), true);
  const auto blocks = mobilenetv3_small_blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string p = "ae.b" + std::to_string(i);
    if (b.has_expand()) add_conv(out, p + ".expand", b.expand_spec(), true);
    add_conv(out, p + ".dw", b.depthwise_spec(), true);
    if (b.use_se) {
      const auto sq = se_squeeze_channels(b.expand_ch);
      add_dense(out, p + ".se.fc1", b.expand_ch, sq);
      add_dense(out, p + ".se.fc2", sq, b.expand_ch);
    }
    add_conv(out, p + ".project", b.project_spec(), true);
  }
  add_conv(out, "ae.head", ConvSpec::conv2d(blocks.back().out_ch, cfg.audio.head_channels, {1, 1}), true);

  const auto s = cfg.fusion.shared_dim;
  const auto n = cfg.fusion.n_classes;
  add_dense(out, "fu.proj_imu", ie.embedding_dim, s);
  add_dense(out, "fu.proj_audio", cfg.audio.embedding_dim(), s);
  switch (cfg.fusion.variant) {
    case FusionVariant::gated:
      add_dense(out, "fu.gate_imu", s, s);
      add_dense(out, "fu.gate_audio", s, s);
      add_dense(out, "fu.fuse", s, s);
      add_dense(out, "fu.head", s, n);
      break;
    case FusionVariant::concat:
      add_dense(out, "fu.head", 2 * s, n);
      break;
    case FusionVariant::softmax_avg:
      add_dense(out, "fu.head_imu", s, n);
      add_dense(out, "fu.head_audio", s, n);
      break;
  }
  return out;
}

void check_archive(const WeightArchive& archive, const ModelConfig& cfg) {
  std::vector<std::string> missing;
  for (const auto& spec : weight_schema(cfg)) {
    if (!archive.contains(spec.name)) {
      if (spec.required) missing.push_back(spec.name);
      continue;
    }
    const auto& t = archive.at(spec.name);
    if (t.shape() != spec.shape) {
      throw ConfigError("tensor '" + spec.name + "' has shape " + shape_string(t.shape()) + ", model expects " +
                        shape_string(spec.shape));
    }
  }
  if (!missing.empty()) {
    std::string msg = "archive lacks " + std::to_string(missing.size()) + " required tensor(s):";
    for (std::size_t i = 0; i < missing.size() && i < 8; ++i) msg += " " + missing[i];
    throw ConfigError(msg);
  }
}

// ---------------------------------------------------------------------------
// Shape inference and FLOPs

namespace {

void push(std::vector<LayerInfo>& layers, std::string name, std::string kind, Shape shape, std::uint64_t flops) {
  layers.push_back({std::move(name), std::move(kind), std::move(shape), flops});
}

std::uint64_t elements(const Shape& s) { return shape_size(s); }

}  // namespace

std::vector<LayerInfo> trace_event_detector(const EventDetectorConfig& cfg) {
  cfg.validate();
  std::vector<LayerInfo> layers;
  std::size_t ch = cfg.input_channels;
  std::size_t len = cfg.window;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const std::string p = "ed.b" + std::to_string(i);
    const auto dw = detector_dw_spec(ch, cfg.kernels[i]);
    len = nn::conv_out_extent(len, cfg.kernels[i], 1, Padding::valid);
    push(layers, p + ".dw", "conv1d_depthwise", {ch, len}, nn::conv_flops(dw, len, true));
    const auto pw = ConvSpec::conv1d(ch, cfg.channels[i], 1);
    ch = cfg.channels[i];
    push(layers, p + ".pw", "conv1d", {ch, len}, nn::conv_flops(pw, len, true));
    push(layers, p + ".relu", "relu", {ch, len}, elements({ch, len}));
    len = pooled(len, cfg.pool);
    push(layers, p + ".pool", "maxpool1d", {ch, len}, elements({ch, len}));
  }
  std::size_t in = ch * len;
  push(layers, "ed.flatten", "flatten", {in}, 0);
  for (std::size_t i = 0; i < cfg.dense.size(); ++i) {
    const std::string p = "ed.fc" + std::to_string(i);
    push(layers, p, "linear", {cfg.dense[i]}, nn::linear_flops(in, cfg.dense[i], true));
    push(layers, p + ".relu", "relu", {cfg.dense[i]}, cfg.dense[i]);
    in = cfg.dense[i];
  }
  push(layers, "ed.out", "linear", {1}, nn::linear_flops(in, 1, true));
  push(layers, "ed.sigmoid", "sigmoid", {1}, 1);
  return layers;
}

std::vector<LayerInfo> trace_imu_encoder(const ImuEncoderConfig& cfg) {
  cfg.validate();
  std::vector<LayerInfo> layers;
  std::size_t ch = 1, h = cfg.window;
  const std::size_t w = cfg.axes;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const std::string p = "ie.conv" + std::to_string(i);
    const auto spec = imu_conv_spec(ch, cfg.channels[i], cfg.kernel);
    h = nn::conv_out_extent(h, cfg.kernel, 1, Padding::valid);
    ch = cfg.channels[i];
    push(layers, p, "conv2d", {ch, h, w}, nn::conv_flops(spec, h * w, true));
    push(layers, p + ".relu", "relu", {ch, h, w}, ch * h * w);
    if (i + 1 < cfg.channels.size()) {
      h = pooled(h, cfg.pool);
      push(layers, p + ".pool", "maxpool2d", {ch, h, w}, ch * h * w);
    }
  }
  const std::size_t flat = ch * h * w;
  push(layers, "ie.flatten", "flatten", {flat}, 0);
  push(layers, "ie.fc1", "linear", {cfg.hidden}, nn::linear_flops(flat, cfg.hidden, true));
  push(layers, "ie.fc1.relu", "relu", {cfg.hidden}, cfg.hidden);
  push(layers, "ie.fc2", "linear", {cfg.embedding_dim}, nn::linear_flops(cfg.hidden, cfg.embedding_dim, true));
  return layers;
}

std::vector<LayerInfo> trace_audio_encoder(const AudioEncoderConfig& cfg, std::size_t frames, std::size_t n_mels) {
  cfg.validate();
  if (frames < cfg.min_frames) {
    throw ShapeError("audio encoder needs at least " + std::to_string(cfg.min_frames) + " frames, got " +
                     std::to_string(frames));
  }
  std::vector<LayerInfo> layers;
  const auto stem = audio_stem_spec(cfg.stem_channels);
  Shape sp = nn::conv_out_spatial({frames, n_mels}, stem);
  std::size_t ch = cfg.stem_channels;
  push(layers, "ae.stem", "conv2d", {ch, sp[0], sp[1]}, nn::conv_flops(stem, sp[0] * sp[1], true));
  push(layers, "ae.stem.hardswish", "hardswish", {ch, sp[0], sp[1]}, ch * sp[0] * sp[1]);

  const auto blocks = mobilenetv3_small_blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string p = "ae.b" + std::to_string(i);
    const std::string act(nn::activation_name(b.act));
    std::size_t hw = sp[0] * sp[1];
    if (b.has_expand()) {
      push(layers, p + ".expand", "conv2d", {b.expand_ch, sp[0], sp[1]}, nn::conv_flops(b.expand_spec(), hw, true));
      push(layers, p + ".expand." + act, act, {b.expand_ch, sp[0], sp[1]}, b.expand_ch * hw);
    }
    sp = nn::conv_out_spatial(sp, b.depthwise_spec());
    hw = sp[0] * sp[1];
    push(layers, p + ".dw", "conv2d_depthwise", {b.expand_ch, sp[0], sp[1]},
         nn::conv_flops(b.depthwise_spec(), hw, true));
    push(layers, p + ".dw." + act, act, {b.expand_ch, sp[0], sp[1]}, b.expand_ch * hw);
    if (b.use_se) {
      const auto sq = se_squeeze_channels(b.expand_ch);
      push(layers, p + ".se.pool", "global_avg_pool", {b.expand_ch}, b.expand_ch);
      push(layers, p + ".se.fc1", "linear", {sq}, nn::linear_flops(b.expand_ch, sq, true));
      push(layers, p + ".se.relu", "relu", {sq}, sq);
      push(layers, p + ".se.fc2", "linear", {b.expand_ch}, nn::linear_flops(sq, b.expand_ch, true));
      push(layers, p + ".se.hardsigmoid", "hardsigmoid", {b.expand_ch}, b.expand_ch);
      push(layers, p + ".se.scale", "mul", {b.expand_ch, sp[0], sp[1]}, b.expand_ch * hw);
    }
    push(layers, p + ".project", "conv2d", {b.out_ch, sp[0], sp[1]}, nn::conv_flops(b.project_spec(), hw, true));
    if (b.residual()) push(layers, p + ".residual", "add", {b.out_ch, sp[0], sp[1]}, b.out_ch * hw);
    ch = b.out_ch;
  }
  const auto head = ConvSpec::conv2d(ch, cfg.head_channels, {1, 1});
  const std::size_t hw = sp[0] * sp[1];
  push(layers, "ae.head", "conv2d", {cfg.head_channels, sp[0], sp[1]}, nn::conv_flops(head, hw, true));
  push(layers, "ae.head.hardswish", "hardswish", {cfg.head_channels, sp[0], sp[1]}, cfg.head_channels * hw);
  push(layers, "ae.pool", "global_avg_pool", {cfg.head_channels}, cfg.head_channels);
  return layers;
}

std::vector<LayerInfo> trace_frontend(const FrontendConfig& cfg) {
  cfg.stft.validate();
  std::vector<LayerInfo> layers;
  const std::size_t frames = dsp::stft_frame_count(cfg.window_samples, cfg.stft);
  if (frames == 0) throw ShapeError("audio window shorter than one STFT frame");
  const std::size_t bins = cfg.stft.n_bins();
  const auto spec = ConvSpec::conv1d(1, bins, cfg.stft.n_fft, cfg.stft.hop);
  push(layers, "fe.stft.real", "conv1d", {bins, frames}, nn::conv_flops(spec, frames, false));
  push(layers, "fe.stft.imag", "conv1d", {bins, frames}, nn::conv_flops(spec, frames, false));
  push(layers, "fe.power", "power", {frames, bins}, frames * bins);
  push(layers, "fe.mel", "linear", {frames, cfg.mel.n_mels},
       frames * nn::linear_flops(bins, cfg.mel.n_mels, cfg.mel_bias));
  push(layers, "fe.db", "log", {frames, cfg.mel.n_mels}, frames * cfg.mel.n_mels);
  return layers;
}

std::vector<LayerInfo> trace_fusion(const FusionConfig& cfg, std::size_t imu_dim, std::size_t audio_dim) {
  cfg.validate();
  std::vector<LayerInfo> layers;
  const auto s = cfg.shared_dim;
  const auto n = cfg.n_classes;
  push(layers, "fu.proj_imu", "linear", {s}, nn::linear_flops(imu_dim, s, true));
  push(layers, "fu.proj_audio", "linear", {s}, nn::linear_flops(audio_dim, s, true));
  switch (cfg.variant) {
    case FusionVariant::gated:
      for (const char* m : {"imu", "audio"}) {
        push(layers, std::string("fu.gate_") + m, "linear", {s}, nn::linear_flops(s, s, true));
        push(layers, std::string("fu.gate_") + m + ".sigmoid", "sigmoid", {s}, s);
        push(layers, std::string("fu.gated_") + m, "mul", {s}, s);
      }
      push(layers, "fu.sum", "add", {s}, s);
      push(layers, "fu.fuse", "linear", {s}, nn::linear_flops(s, s, true));
      push(layers, "fu.head", "linear", {n}, nn::linear_flops(s, n, true));
      break;
    case FusionVariant::concat:
      push(layers, "fu.concat", "concat", {2 * s}, 0);
      push(layers, "fu.head", "linear", {n}, nn::linear_flops(2 * s, n, true));
      break;
    case FusionVariant::softmax_avg:
      push(layers, "fu.head_imu", "linear", {n}, nn::linear_flops(s, n, true));
      push(layers, "fu.head_audio", "linear", {n}, nn::linear_flops(s, n, true));
      push(layers, "fu.softmax", "softmax", {2, n}, 2 * n);
      push(layers, "fu.mean", "add", {n}, n);
      break;
  }
  return layers;
}

std::uint64_t count_flops(const std::vector<LayerInfo>& layers) noexcept {
  std::uint64_t total = 0;
  for (const auto& l : layers) total += l.flops;
  return total;
}

FlopsReport count_flops(const ModelConfig& cfg) {
  FlopsReport r;
  r.detector = count_flops(trace_event_detector(cfg.detector));
  const auto fe = trace_frontend(cfg.frontend);
  r.frontend = count_flops(fe);
  const std::size_t frames = fe.front().out_shape[1];
  r.imu_encoder = count_flops(trace_imu_encoder(cfg.imu));
  r.audio_encoder = count_flops(trace_audio_encoder(cfg.audio, frames, cfg.frontend.mel.n_mels));
  r.fusion = count_flops(trace_fusion(cfg.fusion, cfg.imu.embedding_dim, cfg.audio.embedding_dim()));
  return r;
}

// ---------------------------------------------------------------------------
// Weight loading

namespace {

Tensor load(const WeightArchive& a, const std::string& name) { return a.at(name).to_f32(); }

std::optional<Tensor> load_opt(const WeightArchive& a, const std::string& name) {
  if (!a.contains(name)) return std::nullopt;
  return a.at(name).to_f32();
}

void expect_shape(const Tensor& t, const Shape& shape, const std::string& name) {
  if (t.shape() != shape) {
    throw ConfigError("tensor '" + name + "' has shape " + shape_string(t.shape()) + ", model expects " +
                      shape_string(shape));
  }
}

ConvLayer load_conv(const WeightArchive& a, const std::string& p, const ConvSpec& spec, float eps) {
  Tensor w = load(a, p + ".weight");
  expect_shape(w, spec.weight_shape(), p + ".weight");
  auto b = load_opt(a, p + ".bias");
  if (b) expect_shape(*b, {spec.out_ch}, p + ".bias");
  if (a.contains(p + ".bn.gamma")) {
    nn::BnParams bn{load(a, p + ".bn.gamma"), load(a, p + ".bn.beta"), load(a, p + ".bn.mean"),
                    load(a, p + ".bn.var"), eps};
    try {
      auto [wf, bf] = nn::batchnorm_fold(w, b, bn);
      return {spec, std::move(wf), std::move(bf)};
    } catch (const ShapeError& e) {
      throw ConfigError("batchnorm for '" + p + "': " + e.what());
    }
  }
  return {spec, std::move(w), b ? std::move(*b) : Tensor::zeros({spec.out_ch})};
}

DenseLayer load_dense(const WeightArchive& a, const std::string& p, std::size_t in, std::size_t out) {
  Tensor w = load(a, p + ".weight");
  expect_shape(w, {out, in}, p + ".weight");
  Tensor b = load(a, p + ".bias");
  expect_shape(b, {out}, p + ".bias");
  return {std::move(w), std::move(b)};
}

}  // namespace

EventDetector::EventDetector(const WeightArchive& archive, const EventDetectorConfig& cfg, float bn_eps) : cfg_(cfg) {
  trace_event_detector(cfg_);
  std::size_t ch = cfg_.input_channels;
  for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
    const std::string p = "ed.b" + std::to_string(i);
    Block b;
    b.depthwise = load_conv(archive, p + ".dw", detector_dw_spec(ch, cfg_.kernels[i]), bn_eps);
    b.pointwise = load_conv(archive, p + ".pw", ConvSpec::conv1d(ch, cfg_.channels[i], 1), bn_eps);
    blocks_.push_back(std::move(b));
    ch = cfg_.channels[i];
  }
  std::size_t in = detector_flat_dim(cfg_);
  for (std::size_t i = 0; i < cfg_.dense.size(); ++i) {
    dense_.push_back(load_dense(archive, "ed.fc" + std::to_string(i), in, cfg_.dense[i]));
    in = cfg_.dense[i];
  }
  out_ = load_dense(archive, "ed.out", in, 1);
}

float EventDetector::forward(const Tensor& window) const {
  if (window.shape() != Shape{cfg_.input_channels, cfg_.window}) {
    throw ShapeError("event detector expects " + join_shape(cfg_.input_channels, cfg_.window) + ", got " +
                     shape_string(window.shape()));
  }
  Tensor h = window;
  for (const auto& b : blocks_) {
    h = b.depthwise(h);
    h = b.pointwise(h);
    nn::activate_inplace(h, Activation::relu);
    h = nn::maxpool(h, {cfg_.pool, 1}, {cfg_.pool, 1}, 1);
  }
  for (const auto& d : dense_) {
    h = d(h);
    nn::activate_inplace(h, Activation::relu);
  }
  h = out_(h);
  return nn::sigmoid(h[0]);
}

ImuEncoder::ImuEncoder(const WeightArchive& archive, const ImuEncoderConfig& cfg, float bn_eps) : cfg_(cfg) {
  trace_imu_encoder(cfg_);
  std::size_t ch = 1;
  for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
    convs_.push_back(
        load_conv(archive, "ie.conv" + std::to_string(i), imu_conv_spec(ch, cfg_.channels[i], cfg_.kernel), bn_eps));
    ch = cfg_.channels[i];
  }
  fc1_ = load_dense(archive, "ie.fc1", imu_flat_dim(cfg_), cfg_.hidden);
  fc2_ = load_dense(archive, "ie.fc2", cfg_.hidden, cfg_.embedding_dim);
}

Tensor ImuEncoder::features(const Tensor& window) const {
  if (window.shape() != Shape{1, cfg_.window, cfg_.axes}) {
    throw ShapeError("IMU encoder expects [1x" + std::to_string(cfg_.window) + "x" + std::to_string(cfg_.axes) +
                     "], got " + shape_string(window.shape()));
  }
  Tensor h = window;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i](h);
    nn::activate_inplace(h, Activation::relu);
    if (i + 1 < convs_.size()) h = nn::maxpool(h, {cfg_.pool, 1}, {cfg_.pool, 1}, 2);
  }
  const std::size_t n = h.size();
  return std::move(h).reshaped({n});
}

Tensor ImuEncoder::forward(const Tensor& window) const {
  // Dropout layers are inference-time identities and have no counterpart here.
  Tensor h = fc1_(features(window));
  nn::activate_inplace(h, Activation::relu);
  return fc2_(h);
}

AudioEncoder::AudioEncoder(const WeightArchive& archive, const AudioEncoderConfig& cfg, float bn_eps) : cfg_(cfg) {
  cfg_.validate();
  stem_ = load_conv(archive, "ae.stem", audio_stem_spec(cfg_.stem_channels), bn_eps);
  const auto specs = mobilenetv3_small_blocks();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    const std::string p = "ae.b" + std::to_string(i);
    Block b;
    b.spec = s;
    if (s.has_expand()) {
      auto c = load_conv(archive, p + ".expand", s.expand_spec(), bn_eps);
      b.weights.expand = nn::ConvWeights{std::move(c.w), std::move(c.b)};
    }
    auto dw = load_conv(archive, p + ".dw", s.depthwise_spec(), bn_eps);
    b.weights.depthwise = {std::move(dw.w), std::move(dw.b)};
    if (s.use_se) {
      const auto sq = se_squeeze_channels(s.expand_ch);
      auto fc1 = load_dense(archive, p + ".se.fc1", s.expand_ch, sq);
      auto fc2 = load_dense(archive, p + ".se.fc2", sq, s.expand_ch);
      b.weights.se = nn::SeWeights{std::move(fc1.w), std::move(fc1.b), std::move(fc2.w), std::move(fc2.b)};
    }
    auto pr = load_conv(archive, p + ".project", s.project_spec(), bn_eps);
    b.weights.project = {std::move(pr.w), std::move(pr.b)};
    blocks_.push_back(std::move(b));
  }
  head_ = load_conv(archive, "ae.head", ConvSpec::conv2d(specs.back().out_ch, cfg_.head_channels, {1, 1}), bn_eps);
}

Tensor AudioEncoder::feature_map(const Tensor& logmel) const {
  if (logmel.rank() != 2) throw ShapeError("audio encoder expects [frames x n_mels], got " + shape_string(logmel.shape()));
  if (logmel.dim(0) < cfg_.min_frames) {
    throw ShapeError("audio encoder needs at least " + std::to_string(cfg_.min_frames) + " frames, got " +
                     std::to_string(logmel.dim(0)));
  }
  Tensor h = stem_(logmel.reshaped({1, logmel.dim(0), logmel.dim(1)}));
  nn::activate_inplace(h, Activation::hardswish);
  for (const auto& b : blocks_) h = nn::inverted_residual(h, b.weights, b.spec);
  h = head_(h);
  nn::activate_inplace(h, Activation::hardswish);
  return h;
}

Tensor AudioEncoder::forward(const Tensor& logmel) const { return nn::global_avg_pool(feature_map(logmel)); }

std::size_t argmax(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

FusionHead::FusionHead(const WeightArchive& archive, const FusionConfig& cfg, std::size_t imu_dim,
                       std::size_t audio_dim)
    : cfg_(cfg), imu_dim_(imu_dim), audio_dim_(audio_dim) {
  cfg_.validate();
  const auto s = cfg_.shared_dim;
  const auto n = cfg_.n_classes;
  proj_imu_ = load_dense(archive, "fu.proj_imu", imu_dim, s);
  proj_audio_ = load_dense(archive, "fu.proj_audio", audio_dim, s);
  switch (cfg_.variant) {
    case FusionVariant::gated:
      gate_imu_ = load_dense(archive, "fu.gate_imu", s, s);
      gate_audio_ = load_dense(archive, "fu.gate_audio", s, s);
      fuse_ = load_dense(archive, "fu.fuse", s, s);
      head_ = load_dense(archive, "fu.head", s, n);
      break;
    case FusionVariant::concat:
      head_ = load_dense(archive, "fu.head", 2 * s, n);
      break;
    case FusionVariant::softmax_avg:
      head_imu_ = load_dense(archive, "fu.head_imu", s, n);
      head_audio_ = load_dense(archive, "fu.head_audio", s, n);
      break;
  }
}

Tensor FusionHead::fused(const Tensor& imu_embedding, const Tensor& audio_embedding) const {
  if (cfg_.variant != FusionVariant::gated) throw ConfigError("fused representation exists only for gated fusion");
  Tensor pi = proj_imu_(imu_embedding);
  Tensor pa = proj_audio_(audio_embedding);
  Tensor gi = nn::activation(gate_imu_(pi), Activation::sigmoid);
  Tensor ga = nn::activation(gate_audio_(pa), Activation::sigmoid);
  std::vector<float> sum(cfg_.shared_dim);
  for (std::size_t k = 0; k < sum.size(); ++k) sum[k] = gi[k] * pi[k] + ga[k] * pa[k];
  return fuse_(Tensor({cfg_.shared_dim}, std::move(sum)));
}

Classification FusionHead::forward(const Tensor& imu_embedding, const Tensor& audio_embedding) const {
  if (imu_embedding.size() != imu_dim_ || audio_embedding.size() != audio_dim_) {
    throw ShapeError("fusion expects embeddings of " + std::to_string(imu_dim_) + " and " +
                     std::to_string(audio_dim_) + " values, got " + shape_string(imu_embedding.shape()) + " and " +
                     shape_string(audio_embedding.shape()));
  }
  Classification c;
  switch (cfg_.variant) {
    case FusionVariant::gated:
      c.logits = head_(fused(imu_embedding, audio_embedding));
      break;
    case FusionVariant::concat: {
      Tensor pi = proj_imu_(imu_embedding);
      Tensor pa = proj_audio_(audio_embedding);
      std::vector<float> cat(pi.values().begin(), pi.values().end());
      cat.insert(cat.end(), pa.values().begin(), pa.values().end());
      const std::size_t len = cat.size();
      c.logits = head_(Tensor({len}, std::move(cat)));
      break;
    }
    case FusionVariant::softmax_avg: {
      Tensor qi = nn::activation(head_imu_(proj_imu_(imu_embedding)), Activation::softmax);
      Tensor qa = nn::activation(head_audio_(proj_audio_(audio_embedding)), Activation::softmax);
      std::vector<float> mean(cfg_.n_classes);
      for (std::size_t k = 0; k < mean.size(); ++k) mean[k] = 0.5f * (qi[k] + qa[k]);
      c.logits = Tensor({cfg_.n_classes}, std::move(mean));
      break;
    }
  }
  c.predicted = argmax(c.logits.values());
  return c;
}

HarModel HarModel::load(const WeightArchive& archive) {
  HarModel m;
  m.cfg_ = ModelConfig::from_json(archive.config());
  // Shape inference over the whole graph before touching any weights.
  count_flops(m.cfg_);
  check_archive(archive, m.cfg_);
  const float eps = m.cfg_.bn_eps;
  m.detector_ = EventDetector(archive, m.cfg_.detector, eps);
  m.imu_ = ImuEncoder(archive, m.cfg_.imu, eps);
  m.audio_ = AudioEncoder(archive, m.cfg_.audio, eps);
  m.fusion_ = FusionHead(archive, m.cfg_.fusion, m.cfg_.imu.embedding_dim, m.cfg_.audio.embedding_dim());
  std::optional<Tensor> bias;
  if (m.cfg_.frontend.mel_bias) bias = archive.at("fe.mel.bias").to_f32();
  m.frontend_ = dsp::LogMelFrontend(m.cfg_.frontend.stft, archive.at("fe.mel.weight").to_f32(), m.cfg_.frontend.db,
                                    std::move(bias));
  return m;
}

HarModel HarModel::load(const std::filesystem::path& path) { return load(read_archive(path)); }

Classification HarModel::classify(const Tensor& imu, const Tensor& audio) const {
  if (audio.size() != cfg_.frontend.window_samples) {
    throw ShapeError("classifier expects " + std::to_string(cfg_.frontend.window_samples) + " audio samples, got " +
                     std::to_string(audio.size()));
  }
  const Tensor audio_embedding = audio_.forward(frontend_(audio));
  const Tensor imu_embedding = imu_.forward(imu);
  return fusion_.forward(imu_embedding, audio_embedding);
}

WeightArchive quantize_archive_f16(const WeightArchive& archive) {
  WeightArchive out(archive.config_text(), archive.version());
  for (const auto& e : archive.entries()) out.add(e.name, quantize_f16(e.tensor, e.name));
  return out;
}

}  // namespace watchhar::models
