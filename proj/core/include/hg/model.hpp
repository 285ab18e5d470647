#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hg/amp.hpp"
#include "hg/config.hpp"
#include "hg/params.hpp"

namespace hg {

inline constexpr int kModelConfigVersion = 1;

// Every architectural and loss hyperparameter. Serialized under the
// `model.` prefix of a key/value config file.
struct ModelConfig {
  std::size_t d_video = 32;  // input video feature width
  std::size_t d_text = 16;   // input query token width
  std::size_t dim = 16;      // model width D
  std::size_t num_layers = 3;
  std::size_t stride = 2;
  PoolMethod pooling = PoolMethod::Mean;

  std::size_t d_state = 8;
  std::size_t d_conv = 4;
  std::size_t expand = 2;
  Discretization discretization = Discretization::Direct;

  std::size_t window = 5;
  std::size_t local_heads = 2;
  std::size_t local_layers = 1;
  std::size_t ffn_mult = 2;
  double gate_init_bias = 0.0;

  std::size_t text_layers = 2;
  std::size_t text_heads = 4;
  std::size_t fusion_heads = 2;
  std::size_t head_layers = 3;
  std::size_t head_kernel = 3;

  // Losses.
  double lambda_acc = 1.0;
  double lambda_spc = 0.1;
  double tau = 0.07;
  std::size_t acc_margin = 2;
  double acc_neg_cap = 4.0;
  std::size_t proj_dim = 0;  // 0 -> dim / 2
  bool share_proj_across_layers = false;
  bool spc_pooled = true;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  // Architectural ablations.
  bool interleave = true;
  bool bidirectional = true;
  bool local = true;
  bool gates = true;

  void validate() const;
  std::size_t projection_dim() const { return proj_dim ? proj_dim : std::max<std::size_t>(1, dim / 2); }
  AmpConfig amp_config() const;

  void to_kv(KeyValues& kv, const std::string& prefix = "model.") const;
  static ModelConfig from_kv(const KeyValues& kv, const std::string& prefix = "model.");
  bool operator==(const ModelConfig&) const = default;
};

// Loss weight presets per benchmark.
ModelConfig with_loss_preset(ModelConfig cfg, const std::string& preset);

struct PyramidLevel {
  Tensor refined;      // [L_l, D]
  Tensor anchors_out;  // [L_{l+1}, D]
  std::size_t stride = 1;  // effective stride S^(l)
};

struct FeaturePyramid {
  std::vector<PyramidLevel> levels;
  std::size_t input_length = 0;
};

struct HeadOutput {
  Tensor logits;   // [L_l]
  Tensor scores;   // sigmoid(logits), [L_l]
  Tensor offsets;  // [L_l, 2], softplus output
};

// Level lengths produced by the ceil rule for an input of `length` frames.
std::vector<std::size_t> pyramid_lengths(std::size_t length, std::size_t stride, std::size_t layers);

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  FeaturePyramid encode_video(const Tensor& video) const;
  Tensor encode_text(const Tensor& query) const;
  std::vector<Tensor> fuse(const FeaturePyramid& pyramid, const Tensor& text) const;
  HeadOutput heads(const Tensor& level) const;

  // Projection heads for the contrastive losses, per layer (or shared).
  const Tensor& acc_projection(std::size_t layer) const;
  const Tensor& spc_projection(std::size_t layer) const;

 private:
  struct TextLayer {
    Tensor norm1, wq, wk, wv, wo, norm2, w1, b1, w2, b2;
  };
  struct ConvHead {
    std::vector<Tensor> kernels;
    std::vector<Tensor> biases;
  };

  Tensor run_head(const ConvHead& head, const Tensor& x) const;

  ModelConfig cfg_;
  AmpConfig amp_cfg_;
  ParamStore store_;
  Tensor video_proj_w_, video_proj_b_;
  std::vector<AmpParams> amp_;
  Tensor text_in_w_, text_in_b_;
  std::vector<TextLayer> text_layers_;
  Tensor text_out_norm_, text_out_w_, text_out_b_;
  Tensor fuse_wq_, fuse_wk_, fuse_wv_, fuse_wo_, fuse_norm_;
  ConvHead cls_head_, reg_head_;
  std::vector<Tensor> acc_proj_, spc_proj_;
};

// Sinusoidal positional table [length, dim].
Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

}  // namespace hg
