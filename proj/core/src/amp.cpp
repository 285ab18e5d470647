#include "hg/amp.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hg {

std::string to_string(PoolMethod m) {
  switch (m) {
    case PoolMethod::Mean: return "mean";
    case PoolMethod::Max: return "max";
    case PoolMethod::Attention: return "attention";
    case PoolMethod::Gated: return "gated";
  }
  return "mean";
}

PoolMethod parse_pool_method(const std::string& s) {
  if (s == "mean") return PoolMethod::Mean;
  if (s == "max") return PoolMethod::Max;
  if (s == "attention") return PoolMethod::Attention;
  if (s == "gated") return PoolMethod::Gated;
  throw std::invalid_argument("unknown pooling method '" + s + "' (expected mean|max|attention|gated)");
}

AnchorLayout AnchorLayout::make(std::size_t frames, std::size_t stride) {
  if (frames == 0) throw std::invalid_argument("anchor layout: frame count must be positive");
  if (stride == 0) throw std::invalid_argument("anchor layout: stride must be positive");
  AnchorLayout lay;
  lay.stride = stride;
  lay.frames = frames;
  lay.anchors = (frames + stride - 1) / stride;
  lay.anchor_positions.reserve(lay.anchors);
  lay.frame_positions.reserve(frames);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < lay.anchors; ++i) {
    lay.anchor_positions.push_back(pos++);
    const std::size_t end = std::min(frames, (i + 1) * stride);
    for (std::size_t f = i * stride; f < end; ++f) lay.frame_positions.push_back(pos++);
  }
  return lay;
}

void AmpConfig::validate() const {
  if (dim == 0) throw std::invalid_argument("amp: dim must be positive");
  if (stride == 0) throw std::invalid_argument("amp: stride must be >= 1");
  if (window % 2 == 0) throw std::invalid_argument("amp: local window must be odd, got " + std::to_string(window));
  if (n_heads == 0 || dim % n_heads != 0) {
    throw std::invalid_argument("amp: " + std::to_string(n_heads) + " heads do not divide dim " + std::to_string(dim));
  }
  if (local_layers == 0) throw std::invalid_argument("amp: local_layers must be >= 1");
  if (ffn_mult == 0) throw std::invalid_argument("amp: ffn_mult must be >= 1");
}

namespace {

GateParams init_gate(ParamStore& store, const std::string& prefix, std::size_t d, double bias,
                     std::mt19937_64& rng) {
  GateParams g;
  g.weight = store.add_fan_in(prefix + ".weight", {d, d}, d, rng);
  g.bias = store.add_constant(prefix + ".bias", {d}, bias);
  return g;
}

}  // namespace

AmpParams init_amp(ParamStore& store, const std::string& prefix, const AmpConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  AmpParams p;
  p.pool.n_heads = cfg.n_heads;
  if (cfg.pooling == PoolMethod::Attention) {
    p.pool.query = store.add_normal(prefix + ".pool.query", {d}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    p.pool.wk = store.add_fan_in(prefix + ".pool.wk", {d, d}, d, rng);
    p.pool.wv = store.add_fan_in(prefix + ".pool.wv", {d, d}, d, rng);
  } else if (cfg.pooling == PoolMethod::Gated) {
    p.pool.gate_w = store.add_fan_in(prefix + ".pool.gate.weight", {d, d}, d, rng);
    p.pool.gate_b = store.add_zeros(prefix + ".pool.gate.bias", {d});
  }

  SelectiveConfig sc = cfg.scan;
  sc.d_in = sc.d_out = d;
  p.global_norm = store.add_constant(prefix + ".global.norm", {d}, 1.0);
  p.global = init_bidi(store, prefix + ".global", sc, cfg.bidirectional, rng);
  if (cfg.gates) p.global_gate = init_gate(store, prefix + ".global.gate", d, cfg.gate_init_bias, rng);

  if (cfg.local) {
    for (std::size_t j = 0; j < cfg.local_layers; ++j) {
      const std::string lp = prefix + ".local." + std::to_string(j);
      LocalStage st;
      st.norm_gain = store.add_constant(lp + ".norm", {d}, 1.0);
      st.attn.window = cfg.window;
      st.attn.n_heads = cfg.n_heads;
      st.attn.wq = store.add_fan_in(lp + ".wq", {d, d}, d, rng);
      st.attn.wk = store.add_fan_in(lp + ".wk", {d, d}, d, rng);
      st.attn.wv = store.add_fan_in(lp + ".wv", {d, d}, d, rng);
      st.attn.wo = store.add_fan_in(lp + ".wo", {d, d}, d, rng);
      st.attn.rel_bias = store.add_zeros(lp + ".rel_bias", {cfg.n_heads, cfg.window});
      if (cfg.gates) st.gate = init_gate(store, lp + ".gate", d, cfg.gate_init_bias, rng);
      p.local.push_back(std::move(st));
    }
  }

  const std::size_t f = cfg.ffn_mult * d;
  p.ffn_norm = store.add_constant(prefix + ".ffn.norm", {d}, 1.0);
  p.ffn_w1 = store.add_fan_in(prefix + ".ffn.w1", {d, f}, d, rng);
  p.ffn_b1 = store.add_zeros(prefix + ".ffn.b1", {f});
  p.ffn_w2 = store.add_fan_in(prefix + ".ffn.w2", {f, d}, f, rng);
  p.ffn_b2 = store.add_zeros(prefix + ".ffn.b2", {d});
  return p;
}

Tensor generate_anchors(const Tensor& v, std::size_t stride, PoolMethod method, const PoolParams* pool) {
  if (v.ndim() != 2 || v.rows() == 0) throw std::invalid_argument("generate_anchors: empty input");
  if (stride == 0) throw std::invalid_argument("generate_anchors: stride must be >= 1");
  switch (method) {
    case PoolMethod::Mean: return window_pool(v, stride, PoolMode::Mean);
    case PoolMethod::Max: return window_pool(v, stride, PoolMode::Max);
    case PoolMethod::Gated: {
      if (!pool || !pool->gate_w) throw std::invalid_argument("generate_anchors: gated pooling needs gate params");
      Tensor avg = window_pool(v, stride, PoolMode::Mean);
      Tensor mx = window_pool(v, stride, PoolMode::Max);
      Tensor g = sigmoid(linear(avg, *pool->gate_w, &*pool->gate_b));
      return add(mx, mul(g, sub(avg, mx)));
    }
    case PoolMethod::Attention: {
      if (!pool || !pool->query) throw std::invalid_argument("generate_anchors: attention pooling needs a query");
      const std::size_t l = v.rows(), m = (l + stride - 1) / stride;
      AttentionSpec spec;
      spec.n_heads = pool->n_heads;
      spec.ranges.resize(m);
      for (std::size_t i = 0; i < m; ++i) spec.ranges[i] = {i * stride, std::min(l, (i + 1) * stride)};
      Tensor q = add(Tensor::zeros({m, v.cols()}), *pool->query);
      return attention(q, matmul(v, *pool->wk), matmul(v, *pool->wv), spec);
    }
  }
  throw std::invalid_argument("generate_anchors: unknown pooling method");
}

std::pair<Tensor, AnchorLayout> interleave(const Tensor& frames, const Tensor& anchors, std::size_t stride) {
  if (frames.ndim() != 2 || anchors.ndim() != 2 || frames.cols() != anchors.cols()) {
    throw std::invalid_argument("interleave: shape mismatch " + shape_str(frames.shape()) + " vs " +
                                shape_str(anchors.shape()));
  }
  AnchorLayout lay = AnchorLayout::make(frames.rows(), stride);
  if (anchors.rows() != lay.anchors) {
    std::ostringstream msg;
    msg << "interleave: expected " << lay.anchors << " anchors for L=" << frames.rows() << ", s=" << stride
        << ", got " << anchors.rows();
    throw std::invalid_argument(msg.str());
  }
  // Source rows index into concat(anchors, frames).
  std::vector<std::size_t> src(lay.total());
  for (std::size_t i = 0; i < lay.anchors; ++i) src[lay.anchor_positions[i]] = i;
  for (std::size_t f = 0; f < lay.frames; ++f) src[lay.frame_positions[f]] = lay.anchors + f;
  Tensor h = gather_rows(concat_rows({anchors, frames}), src);
  return {std::move(h), std::move(lay)};
}

Deinterleaved deinterleave(const Tensor& h, const AnchorLayout& layout) {
  if (h.ndim() != 2 || h.rows() != layout.total()) {
    std::ostringstream msg;
    msg << "deinterleave: sequence length " << (h.ndim() == 2 ? h.rows() : 0) << " does not match layout length "
        << layout.total();
    throw std::invalid_argument(msg.str());
  }
  return {gather_rows(h, layout.frame_positions), gather_rows(h, layout.anchor_positions)};
}

Tensor local_attention(const Tensor& x, const LocalAttnParams& p) {
  if (p.window % 2 == 0) throw std::invalid_argument("local_attention: window must be odd");
  if (p.n_heads == 0 || x.cols() % p.n_heads != 0) {
    throw std::invalid_argument("local_attention: " + std::to_string(p.n_heads) + " heads do not divide width " +
                                std::to_string(x.cols()));
  }
  AttentionSpec spec;
  spec.n_heads = p.n_heads;
  spec.half_window = (p.window - 1) / 2;
  spec.ranges = window_ranges(x.rows(), spec.half_window);
  spec.rel_bias = p.rel_bias;
  Tensor o = attention(matmul(x, p.wq), matmul(x, p.wk), matmul(x, p.wv), spec);
  return matmul(o, p.wo);
}

Tensor gated_fuse(const Tensor& residual, const Tensor& update, const GateParams* gate) {
  if (residual.shape() != update.shape()) {
    throw std::invalid_argument("gated_fuse: shape mismatch " + shape_str(residual.shape()) + " vs " +
                                shape_str(update.shape()));
  }
  if (!gate) return add(residual, update);
  return add(residual, mul(sigmoid(linear(update, gate->weight, &gate->bias)), update));
}

namespace {

// Global scan, local attention and FFN stages over one sequence.
Tensor refine(Tensor h, const AmpConfig& cfg, const AmpParams& p) {
  const GateParams* gg = p.global_gate ? &*p.global_gate : nullptr;
  h = gated_fuse(h, bidi_scan(rms_norm(h, p.global_norm, cfg.norm_eps), p.global), gg);
  for (const auto& st : p.local) {
    const GateParams* lg = st.gate ? &*st.gate : nullptr;
    h = gated_fuse(h, local_attention(rms_norm(h, st.norm_gain, cfg.norm_eps), st.attn), lg);
  }
  Tensor u = rms_norm(h, p.ffn_norm, cfg.norm_eps);
  u = linear(silu(linear(u, p.ffn_w1, &p.ffn_b1)), p.ffn_w2, &p.ffn_b2);
  return add(h, u);
}

}  // namespace

AmpOutput amp_forward(const Tensor& input, const AmpConfig& cfg, const AmpParams& params) {
  if (input.ndim() != 2 || input.rows() == 0) throw std::invalid_argument("amp_forward: empty input");
  if (input.cols() != cfg.dim) {
    throw std::invalid_argument("amp_forward: input width " + std::to_string(input.cols()) + " != dim " +
                                std::to_string(cfg.dim));
  }
  Tensor anchors = generate_anchors(input, cfg.stride, cfg.pooling, &params.pool);
  if (!cfg.interleave) {
    return {refine(input, cfg, params), refine(anchors, cfg, params)};
  }
  auto [h, layout] = interleave(input, anchors, cfg.stride);
  auto parts = deinterleave(refine(h, cfg, params), layout);
  return {std::move(parts.frames), std::move(parts.anchors)};
}

std::uint64_t amp_flops(std::size_t length, const AmpConfig& cfg) {
  const std::uint64_t d = cfg.dim;
  const std::uint64_t m = (length + cfg.stride - 1) / cfg.stride;
  std::uint64_t pool = length * d;
  if (cfg.pooling == PoolMethod::Gated) pool += m * d * d;
  if (cfg.pooling == PoolMethod::Attention) pool += 2 * length * d * d + 2 * length * d;

  auto stages = [&](std::uint64_t t) {
    SelectiveConfig sc = cfg.scan;
    sc.d_in = sc.d_out = cfg.dim;
    std::uint64_t f = 2 * t * d + bidi_flops(t, sc, cfg.bidirectional);  // norm + scan
    if (cfg.gates) f += t * d * d + t * d;
    if (cfg.local) {
      const std::uint64_t w = cfg.window;
      for (std::size_t j = 0; j < cfg.local_layers; ++j) {
        f += 2 * t * d + 4 * t * d * d + 2 * t * w * d;
        if (cfg.gates) f += t * d * d + t * d;
      }
    }
    f += 2 * t * d + 2 * t * d * (cfg.ffn_mult * d);
    return f;
  };
  if (!cfg.interleave) return pool + stages(length) + stages(m);
  return pool + stages(length + m);
}

}  // namespace hg
