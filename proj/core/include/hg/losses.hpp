#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hg/tensor.hpp"

namespace hg {

struct ContrastiveConfig {
  double tau = 0.07;
  std::size_t margin = 2;   // negatives need |i - j| > margin
  double neg_cap = 4.0;     // |N_i| <= floor(neg_cap * |P_i|)
  std::uint64_t seed = 0;   // negative subsampling
  double norm_eps = 1e-8;

  void validate() const;
};

// Linear projection followed by row-wise unit normalization.
Tensor project_normalized(const Tensor& x, const Tensor& weight, double eps = 1e-8);

// Negative anchor indices for anchor i, after deterministic subsampling.
std::vector<std::size_t> acc_negatives(std::size_t anchor, std::size_t num_anchors, std::size_t num_positives,
                                       const ContrastiveConfig& cfg);

// Anchor-conditioned contrastive loss for one layer, averaged over anchors.
// anchors [M,D], tokens [L,D] with M == ceil(L/stride); proj [D,P].
Tensor acc_loss(const Tensor& anchors, const Tensor& tokens, std::size_t stride, const ContrastiveConfig& cfg,
                const Tensor& proj);

// Segment in level-token units; token t is inside iff start <= t + 0.5 < end.
struct LevelSegment {
  double start = 0.0;
  double end = 0.0;
};

std::vector<std::size_t> segment_tokens(std::size_t length, const LevelSegment& seg);

struct SpcStats {
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

// Segment-pooled contrastive loss. An empty segment contributes a zero
// scalar and bumps stats->skipped.
Tensor spc_loss(const Tensor& tokens, const LevelSegment& seg, const ContrastiveConfig& cfg, const Tensor& proj,
                SpcStats* stats = nullptr);
// Variant without the prototype: every in-segment token is its own query.
Tensor spc_loss_unpooled(const Tensor& tokens, const LevelSegment& seg, const ContrastiveConfig& cfg,
                         const Tensor& proj, SpcStats* stats = nullptr);

// Mean over tokens of -alpha_t (1 - p_t)^gamma log p_t. p must lie in (0,1).
Tensor focal_loss(const Tensor& p, const std::vector<double>& labels, double alpha = 0.25, double gamma = 2.0);
// Same value computed from logits (p = sigmoid(z)) without saturating.
Tensor focal_loss_logits(const Tensor& logits, const std::vector<double>& labels, double alpha = 0.25,
                         double gamma = 2.0);

struct Interval {
  double start = 0.0;
  double end = 0.0;
};

// 1 - IoU + (center distance)^2 / (enclosing length)^2
double diou_loss(const Interval& pred, const Interval& gt);
// Mean DIoU over a batch of predicted intervals against fixed targets.
Tensor diou_loss(const Tensor& pred_start, const Tensor& pred_end, const std::vector<Interval>& gt);

struct LossWeights {
  double lambda_acc = 1.0;
  double lambda_spc = 0.1;
};

// cls + reg + lambda_acc * acc + lambda_spc * spc
Tensor total_loss(const Tensor& cls, const Tensor& reg, const Tensor& acc, const Tensor& spc, const LossWeights& w);

}  // namespace hg
