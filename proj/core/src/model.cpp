#include "hg/model.hpp"

#include <cmath>
#include <stdexcept>

#include "hg/ops.hpp"

namespace hg {

namespace {

std::string to_string(Discretization d) { return d == Discretization::Direct ? "direct" : "zoh"; }

Discretization parse_discretization(const std::string& s) {
  if (s == "direct") return Discretization::Direct;
  if (s == "zoh") return Discretization::ZeroOrderHold;
  throw ConfigError("unknown scan discretization '" + s + "' (expected direct|zoh)");
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(d_video, "d_video");
  positive(d_text, "d_text");
  positive(dim, "dim");
  positive(num_layers, "num_layers");
  positive(stride, "stride");
  positive(d_state, "d_state");
  positive(d_conv, "d_conv");
  positive(expand, "expand");
  positive(text_layers, "text_layers");
  positive(head_layers, "head_layers");
  if (window % 2 == 0) throw ConfigError("model.window must be odd");
  if (head_kernel % 2 == 0) throw ConfigError("model.head_kernel must be odd");
  for (auto [heads, name] : {std::pair{local_heads, "local_heads"}, std::pair{text_heads, "text_heads"},
                             std::pair{fusion_heads, "fusion_heads"}}) {
    if (heads == 0 || dim % heads != 0) {
      throw ConfigError(std::string("model.") + name + " must divide model.dim");
    }
  }
  if (!(tau > 0)) throw ConfigError("model.tau must be positive");
  if (acc_margin < 1) throw ConfigError("model.acc_margin must be >= 1");
  if (!(acc_neg_cap > 0)) throw ConfigError("model.acc_neg_cap must be positive");
  if (lambda_acc < 0 || lambda_spc < 0) throw ConfigError("loss weights must be non-negative");
  if (!(focal_alpha > 0 && focal_alpha < 1) || focal_gamma < 0) throw ConfigError("invalid focal parameters");
}

AmpConfig ModelConfig::amp_config() const {
  AmpConfig a;
  a.dim = dim;
  a.stride = stride;
  a.pooling = pooling;
  a.scan.d_in = a.scan.d_out = dim;
  a.scan.d_state = d_state;
  a.scan.d_conv = d_conv;
  a.scan.expand = expand;
  a.scan.discretization = discretization;
  a.window = window;
  a.n_heads = local_heads;
  a.local_layers = local_layers;
  a.ffn_mult = ffn_mult;
  a.gate_init_bias = gate_init_bias;
  a.interleave = interleave;
  a.bidirectional = bidirectional;
  a.local = local;
  a.gates = gates;
  return a;
}

void ModelConfig::to_kv(KeyValues& kv, const std::string& p) const {
  kv.set(p + "version", kModelConfigVersion);
  kv.set(p + "d_video", d_video);
  kv.set(p + "d_text", d_text);
  kv.set(p + "dim", dim);
  kv.set(p + "num_layers", num_layers);
  kv.set(p + "stride", stride);
  kv.set(p + "pooling", to_string(pooling));
  kv.set(p + "d_state", d_state);
  kv.set(p + "d_conv", d_conv);
  kv.set(p + "expand", expand);
  kv.set(p + "discretization", to_string(discretization));
  kv.set(p + "window", window);
  kv.set(p + "local_heads", local_heads);
  kv.set(p + "local_layers", local_layers);
  kv.set(p + "ffn_mult", ffn_mult);
  kv.set(p + "gate_init_bias", gate_init_bias);
  kv.set(p + "text_layers", text_layers);
  kv.set(p + "text_heads", text_heads);
  kv.set(p + "fusion_heads", fusion_heads);
  kv.set(p + "head_layers", head_layers);
  kv.set(p + "head_kernel", head_kernel);
  kv.set(p + "lambda_acc", lambda_acc);
  kv.set(p + "lambda_spc", lambda_spc);
  kv.set(p + "tau", tau);
  kv.set(p + "acc_margin", acc_margin);
  kv.set(p + "acc_neg_cap", acc_neg_cap);
  kv.set(p + "proj_dim", proj_dim);
  kv.set(p + "share_proj_across_layers", share_proj_across_layers);
  kv.set(p + "spc_pooled", spc_pooled);
  kv.set(p + "focal_alpha", focal_alpha);
  kv.set(p + "focal_gamma", focal_gamma);
  kv.set(p + "interleave", interleave);
  kv.set(p + "bidirectional", bidirectional);
  kv.set(p + "local", local);
  kv.set(p + "gates", gates);
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv, const std::string& p) {
  const auto version = kv.get_int(p + "version", kModelConfigVersion);
  if (version != kModelConfigVersion) {
    throw ConfigError("unsupported model config version " + std::to_string(version) + " (expected " +
                      std::to_string(kModelConfigVersion) + ")");
  }
  ModelConfig c;
  c.d_video = kv.get_size(p + "d_video", c.d_video);
  c.d_text = kv.get_size(p + "d_text", c.d_text);
  c.dim = kv.get_size(p + "dim", c.dim);
  c.num_layers = kv.get_size(p + "num_layers", c.num_layers);
  c.stride = kv.get_size(p + "stride", c.stride);
  try {
    c.pooling = parse_pool_method(kv.get_string(p + "pooling", to_string(c.pooling)));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.d_state = kv.get_size(p + "d_state", c.d_state);
  c.d_conv = kv.get_size(p + "d_conv", c.d_conv);
  c.expand = kv.get_size(p + "expand", c.expand);
  c.discretization = parse_discretization(kv.get_string(p + "discretization", to_string(c.discretization)));
  c.window = kv.get_size(p + "window", c.window);
  c.local_heads = kv.get_size(p + "local_heads", c.local_heads);
  c.local_layers = kv.get_size(p + "local_layers", c.local_layers);
  c.ffn_mult = kv.get_size(p + "ffn_mult", c.ffn_mult);
  c.gate_init_bias = kv.get_double(p + "gate_init_bias", c.gate_init_bias);
  c.text_layers = kv.get_size(p + "text_layers", c.text_layers);
  c.text_heads = kv.get_size(p + "text_heads", c.text_heads);
  c.fusion_heads = kv.get_size(p + "fusion_heads", c.fusion_heads);
  c.head_layers = kv.get_size(p + "head_layers", c.head_layers);
  c.head_kernel = kv.get_size(p + "head_kernel", c.head_kernel);
  c.lambda_acc = kv.get_double(p + "lambda_acc", c.lambda_acc);
  c.lambda_spc = kv.get_double(p + "lambda_spc", c.lambda_spc);
  c.tau = kv.get_double(p + "tau", c.tau);
  c.acc_margin = kv.get_size(p + "acc_margin", c.acc_margin);
  c.acc_neg_cap = kv.get_double(p + "acc_neg_cap", c.acc_neg_cap);
  c.proj_dim = kv.get_size(p + "proj_dim", c.proj_dim);
  c.share_proj_across_layers = kv.get_bool(p + "share_proj_across_layers", c.share_proj_across_layers);
  c.spc_pooled = kv.get_bool(p + "spc_pooled", c.spc_pooled);
  c.focal_alpha = kv.get_double(p + "focal_alpha", c.focal_alpha);
  c.focal_gamma = kv.get_double(p + "focal_gamma", c.focal_gamma);
  c.interleave = kv.get_bool(p + "interleave", c.interleave);
  c.bidirectional = kv.get_bool(p + "bidirectional", c.bidirectional);
  c.local = kv.get_bool(p + "local", c.local);
  c.gates = kv.get_bool(p + "gates", c.gates);
  if (kv.has(p + "loss_preset")) c = with_loss_preset(c, kv.get_string(p + "loss_preset", ""));
  c.validate();
  return c;
}

ModelConfig with_loss_preset(ModelConfig cfg, const std::string& preset) {
  if (preset == "ego4d") {
    cfg.lambda_acc = 10.0;
    cfg.lambda_spc = 1.0;
  } else if (preset == "tacos") {
    cfg.lambda_acc = 1.0;
    cfg.lambda_spc = 0.1;
  } else if (preset == "mad") {
    cfg.lambda_acc = 0.5;
    cfg.lambda_spc = 0.6;
  } else {
    throw ConfigError("unknown loss preset '" + preset + "' (expected ego4d|tacos|mad)");
  }
  return cfg;
}

std::vector<std::size_t> pyramid_lengths(std::size_t length, std::size_t stride, std::size_t layers) {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < layers; ++l) {
    out.push_back(length);
    length = (length + stride - 1) / stride;
  }
  return out;
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  std::vector<double> v(length * dim);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      v[t * dim + i] = (i % 2 == 0) ? std::sin(static_cast<double>(t) * freq) : std::cos(static_cast<double>(t) * freq);
    }
  }
  return Tensor::from({length, dim}, std::move(v));
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  amp_cfg_ = cfg_.amp_config();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg_.dim;

  video_proj_w_ = store_.add_fan_in("video.proj.weight", {cfg_.d_video, d}, cfg_.d_video, rng);
  video_proj_b_ = store_.add_zeros("video.proj.bias", {d});
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    amp_.push_back(init_amp(store_, "amp." + std::to_string(l), amp_cfg_, rng));
  }

  text_in_w_ = store_.add_fan_in("text.in.weight", {cfg_.d_text, d}, cfg_.d_text, rng);
  text_in_b_ = store_.add_zeros("text.in.bias", {d});
  for (std::size_t l = 0; l < cfg_.text_layers; ++l) {
    const std::string p = "text.layer." + std::to_string(l);
    TextLayer t;
    t.norm1 = store_.add_constant(p + ".norm1", {d}, 1.0);
    t.wq = store_.add_fan_in(p + ".wq", {d, d}, d, rng);
    t.wk = store_.add_fan_in(p + ".wk", {d, d}, d, rng);
    t.wv = store_.add_fan_in(p + ".wv", {d, d}, d, rng);
    t.wo = store_.add_fan_in(p + ".wo", {d, d}, d, rng);
    t.norm2 = store_.add_constant(p + ".norm2", {d}, 1.0);
    t.w1 = store_.add_fan_in(p + ".ffn.w1", {d, 2 * d}, d, rng);
    t.b1 = store_.add_zeros(p + ".ffn.b1", {2 * d});
    t.w2 = store_.add_fan_in(p + ".ffn.w2", {2 * d, d}, 2 * d, rng);
    t.b2 = store_.add_zeros(p + ".ffn.b2", {d});
    text_layers_.push_back(std::move(t));
  }
  text_out_norm_ = store_.add_constant("text.out.norm", {d}, 1.0);
  text_out_w_ = store_.add_fan_in("text.out.weight", {d, d}, d, rng);
  text_out_b_ = store_.add_zeros("text.out.bias", {d});

  fuse_wq_ = store_.add_fan_in("fuse.wq", {d, d}, d, rng);
  fuse_wk_ = store_.add_fan_in("fuse.wk", {d, d}, d, rng);
  fuse_wv_ = store_.add_fan_in("fuse.wv", {d, d}, d, rng);
  fuse_wo_ = store_.add_fan_in("fuse.wo", {d, d}, d, rng);
  fuse_norm_ = store_.add_constant("fuse.norm", {d}, 1.0);

  const std::size_t k = cfg_.head_kernel;
  auto make_head = [&](const std::string& name, std::size_t out, double last_bias) {
    ConvHead h;
    for (std::size_t i = 0; i < cfg_.head_layers; ++i) {
      const bool last = i + 1 == cfg_.head_layers;
      const std::size_t o = last ? out : d;
      const std::string p = name + "." + std::to_string(i);
      h.kernels.push_back(store_.add_fan_in(p + ".kernel", {k, d, o}, k * d, rng));
      h.biases.push_back(store_.add_constant(p + ".bias", {o}, last ? last_bias : 0.0));
    }
    return h;
  };
  // Classification prior of 0.01 at init.
  cls_head_ = make_head("head.cls", 1, -std::log(99.0));
  reg_head_ = make_head("head.reg", 2, 0.0);

  const std::size_t pd = cfg_.projection_dim();
  const std::size_t n_proj = cfg_.share_proj_across_layers ? 1 : cfg_.num_layers;
  for (std::size_t l = 0; l < n_proj; ++l) {
    acc_proj_.push_back(store_.add_fan_in("proj.acc." + std::to_string(l), {d, pd}, d, rng));
    spc_proj_.push_back(store_.add_fan_in("proj.spc." + std::to_string(l), {d, pd}, d, rng));
  }
}

const Tensor& Model::acc_projection(std::size_t layer) const {
  return acc_proj_.at(cfg_.share_proj_across_layers ? 0 : layer);
}

const Tensor& Model::spc_projection(std::size_t layer) const {
  return spc_proj_.at(cfg_.share_proj_across_layers ? 0 : layer);
}

FeaturePyramid Model::encode_video(const Tensor& video) const {
  if (video.ndim() != 2 || video.cols() != cfg_.d_video) {
    throw std::invalid_argument("encode_video: expected [L0," + std::to_string(cfg_.d_video) + "] features, got " +
                                shape_str(video.shape()));
  }
  const std::size_t l0 = video.rows();
  std::size_t need = 1;
  for (std::size_t l = 1; l < cfg_.num_layers; ++l) need *= cfg_.stride;
  if (l0 == 0 || l0 < need) {
    throw std::invalid_argument("encode_video: input of " + std::to_string(l0) + " frames leaves the top level empty for " +
                                std::to_string(cfg_.num_layers) + " layers at stride " + std::to_string(cfg_.stride) +
                                "; use fewer layers or a longer input");
  }
  FeaturePyramid pyr;
  pyr.input_length = l0;
  Tensor x = linear(video, video_proj_w_, &video_proj_b_);
  std::size_t eff = 1;
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    AmpOutput out = amp_forward(x, amp_cfg_, amp_[l]);
    pyr.levels.push_back({out.refined, out.next_anchors, eff});
    x = out.next_anchors;
    eff *= cfg_.stride;
  }
  return pyr;
}

Tensor Model::encode_text(const Tensor& query) const {
  if (query.ndim() != 2 || query.rows() == 0) throw std::invalid_argument("encode_text: empty query");
  if (query.cols() != cfg_.d_text) {
    throw std::invalid_argument("encode_text: expected width " + std::to_string(cfg_.d_text) + ", got " +
                                shape_str(query.shape()));
  }
  const std::size_t lq = query.rows();
  Tensor x = add(linear(query, text_in_w_, &text_in_b_), sinusoidal_positions(lq, cfg_.dim));
  AttentionSpec spec;
  spec.n_heads = cfg_.text_heads;
  spec.ranges = full_ranges(lq, lq);
  for (const auto& t : text_layers_) {
    Tensor h = rms_norm(x, t.norm1, 1e-6);
    x = add(x, matmul(attention(matmul(h, t.wq), matmul(h, t.wk), matmul(h, t.wv), spec), t.wo));
    h = rms_norm(x, t.norm2, 1e-6);
    x = add(x, linear(silu(linear(h, t.w1, &t.b1)), t.w2, &t.b2));
  }
  return linear(rms_norm(x, text_out_norm_, 1e-6), text_out_w_, &text_out_b_);
}

std::vector<Tensor> Model::fuse(const FeaturePyramid& pyramid, const Tensor& text) const {
  if (text.ndim() != 2 || text.cols() != cfg_.dim) {
    throw std::invalid_argument("fuse: text width mismatch " + shape_str(text.shape()));
  }
  Tensor k = matmul(text, fuse_wk_);
  Tensor v = matmul(text, fuse_wv_);
  std::vector<Tensor> out;
  out.reserve(pyramid.levels.size());
  for (const auto& level : pyramid.levels) {
    if (level.refined.cols() != cfg_.dim) throw std::invalid_argument("fuse: video width mismatch");
    AttentionSpec spec;
    spec.n_heads = cfg_.fusion_heads;
    spec.ranges = full_ranges(level.refined.rows(), text.rows());
    Tensor c = matmul(attention(matmul(level.refined, fuse_wq_), k, v, spec), fuse_wo_);
    out.push_back(rms_norm(add(level.refined, c), fuse_norm_, 1e-6));
  }
  return out;
}

Tensor Model::run_head(const ConvHead& head, const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < head.kernels.size(); ++i) {
    h = conv1d(h, head.kernels[i], &head.biases[i]);
    if (i + 1 < head.kernels.size()) h = silu(h);
  }
  return h;
}

HeadOutput Model::heads(const Tensor& level) const {
  HeadOutput out;
  Tensor logits = run_head(cls_head_, level);
  out.logits = reshape(logits, {level.rows()});
  out.scores = sigmoid(out.logits);
  out.offsets = softplus(run_head(reg_head_, level));
  return out;
}

}  // namespace hg
