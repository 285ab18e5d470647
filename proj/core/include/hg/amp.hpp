#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hg/ops.hpp"
#include "hg/params.hpp"
#include "hg/ssm.hpp"

namespace hg {

enum class PoolMethod { Mean, Max, Attention, Gated };

std::string to_string(PoolMethod m);
PoolMethod parse_pool_method(const std::string& s);

// Index bookkeeping for [a_0, v_0..v_{s-1}, a_1, v_s.., ...].
struct AnchorLayout {
  std::size_t stride = 1;
  std::size_t frames = 0;   // L
  std::size_t anchors = 0;  // M = ceil(L/s)
  std::vector<std::size_t> anchor_positions;
  std::vector<std::size_t> frame_positions;

  static AnchorLayout make(std::size_t frames, std::size_t stride);
  std::size_t total() const { return frames + anchors; }
};

struct AmpConfig {
  std::size_t dim = 16;
  std::size_t stride = 2;
  PoolMethod pooling = PoolMethod::Mean;
  SelectiveConfig scan;  // d_in/d_out are forced to dim
  std::size_t window = 5;
  std::size_t n_heads = 2;
  std::size_t local_layers = 1;
  std::size_t ffn_mult = 2;
  double gate_init_bias = 0.0;
  double norm_eps = 1e-6;

  // Ablation switches; all on for the full block.
  bool interleave = true;
  bool bidirectional = true;
  bool local = true;
  bool gates = true;

  void validate() const;
};

struct PoolParams {
  std::optional<Tensor> query;  // attention pooling [D]
  std::optional<Tensor> wk, wv;
  std::optional<Tensor> gate_w, gate_b;  // gated pooling
  std::size_t n_heads = 1;
};

struct GateParams {
  Tensor weight;  // [D,D]
  Tensor bias;    // [D]
};

struct LocalAttnParams {
  Tensor wq, wk, wv, wo;  // [D,D]
  Tensor rel_bias;        // [heads, window]
  std::size_t window = 5;
  std::size_t n_heads = 2;
};

struct LocalStage {
  Tensor norm_gain;
  LocalAttnParams attn;
  std::optional<GateParams> gate;
};

struct AmpParams {
  PoolParams pool;
  Tensor global_norm;
  BidiScanParams global;
  std::optional<GateParams> global_gate;
  std::vector<LocalStage> local;
  Tensor ffn_norm;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

AmpParams init_amp(ParamStore& store, const std::string& prefix, const AmpConfig& cfg, std::mt19937_64& rng);

struct AmpOutput {
  Tensor refined;       // [L,D]
  Tensor next_anchors;  // [M,D]
};

// anchor i pools V[i*s, min((i+1)*s, L)); pool params are only read for the
// learned methods.
Tensor generate_anchors(const Tensor& v, std::size_t stride, PoolMethod method, const PoolParams* pool = nullptr);

std::pair<Tensor, AnchorLayout> interleave(const Tensor& frames, const Tensor& anchors, std::size_t stride);

struct Deinterleaved {
  Tensor frames;
  Tensor anchors;
};
Deinterleaved deinterleave(const Tensor& h, const AnchorLayout& layout);

// Windowed multi-head self-attention with relative position bias; token t
// sees [t - (w-1)/2, t + (w-1)/2] clipped to the sequence.
Tensor local_attention(const Tensor& x, const LocalAttnParams& p);

// residual + sigmoid(update W + b) * update; without a gate, residual + update.
Tensor gated_fuse(const Tensor& residual, const Tensor& update, const GateParams* gate);

AmpOutput amp_forward(const Tensor& input, const AmpConfig& cfg, const AmpParams& params);

// Multiply-add count of one block at input length L (ablation toggles honored).
std::uint64_t amp_flops(std::size_t length, const AmpConfig& cfg);

}  // namespace hg
