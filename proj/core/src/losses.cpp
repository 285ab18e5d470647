#include "hg/losses.hpp"

#include "hg/config.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "hg/ops.hpp"

namespace hg {

void ContrastiveConfig::validate() const {
  if (!(tau > 0)) throw std::invalid_argument("contrastive loss: temperature must be positive");
  if (margin < 1) throw std::invalid_argument("contrastive loss: margin must be >= 1");
  if (!(neg_cap > 0)) throw std::invalid_argument("contrastive loss: negative cap must be positive");
}

Tensor project_normalized(const Tensor& x, const Tensor& weight, double eps) {
  return l2_normalize_rows(matmul(x, weight), eps);
}

std::vector<std::size_t> acc_negatives(std::size_t anchor, std::size_t num_anchors, std::size_t num_positives,
                                       const ContrastiveConfig& cfg) {
  std::vector<std::size_t> cand;
  for (std::size_t j = 0; j < num_anchors; ++j) {
    const std::size_t gap = j > anchor ? j - anchor : anchor - j;
    if (gap > cfg.margin) cand.push_back(j);
  }
  const auto cap = static_cast<std::size_t>(std::floor(cfg.neg_cap * static_cast<double>(num_positives)));
  if (cand.size() > cap) {
    std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + anchor + 1);
    std::shuffle(cand.begin(), cand.end(), rng);
    cand.resize(cap);
    std::sort(cand.begin(), cand.end());
  }
  return cand;
}

Tensor acc_loss(const Tensor& anchors, const Tensor& tokens, std::size_t stride, const ContrastiveConfig& cfg,
                const Tensor& proj) {
  cfg.validate();
  if (stride == 0) throw std::invalid_argument("acc_loss: stride must be positive");
  const std::size_t m = anchors.rows(), l = tokens.rows();
  if (m != (l + stride - 1) / stride) {
    std::ostringstream msg;
    msg << "acc_loss: expected " << (l + stride - 1) / stride << " anchors for " << l << " tokens at stride " << stride
        << ", got " << m;
    throw std::invalid_argument(msg.str());
  }
  Tensor pa = project_normalized(anchors, proj, cfg.norm_eps);
  Tensor pt = project_normalized(tokens, proj, cfg.norm_eps);
  // Columns [0,L) are tokens, [L,L+M) anchors.
  Tensor sims = scale(matmul_nt(pa, concat_rows({pt, pa})), 1.0 / cfg.tau);
  const std::size_t c = l + m;
  std::vector<std::uint8_t> num(m * c, 0), den(m * c, 0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t b = i * stride, e = std::min(l, b + stride);
    for (std::size_t t = b; t < e; ++t) num[i * c + t] = den[i * c + t] = 1;
    for (std::size_t j : acc_negatives(i, m, e - b, cfg)) den[i * c + l + j] = 1;
  }
  Tensor per_anchor = sub(masked_logsumexp_rows(sims, den), masked_logsumexp_rows(sims, num));
  return mean(per_anchor);
}

std::vector<std::size_t> segment_tokens(std::size_t length, const LevelSegment& seg) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < length; ++t) {
    const double c = static_cast<double>(t) + 0.5;
    if (c >= seg.start && c < seg.end) out.push_back(t);
  }
  return out;
}

namespace {

// -log sum_in exp(x) + log sum_all exp(x), row by row over `sims`.
Tensor in_vs_all(const Tensor& sims, const std::vector<std::size_t>& inside) {
  const std::size_t r = sims.rows(), c = sims.cols();
  std::vector<std::uint8_t> num(r * c, 0), den(r * c, 1);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t t : inside) num[i * c + t] = 1;
  return sub(masked_logsumexp_rows(sims, den), masked_logsumexp_rows(sims, num));
}

}  // namespace

Tensor spc_loss(const Tensor& tokens, const LevelSegment& seg, const ContrastiveConfig& cfg, const Tensor& proj,
                SpcStats* stats) {
  cfg.validate();
  auto inside = segment_tokens(tokens.rows(), seg);
  if (inside.empty()) {
    if (stats) ++stats->skipped;
    return Tensor::scalar(0.0);
  }
  if (stats) ++stats->evaluated;
  Tensor p = project_normalized(tokens, proj, cfg.norm_eps);
  Tensor proto = l2_normalize_rows(reshape(mean_rows(gather_rows(p, inside)), {1, p.cols()}), cfg.norm_eps);
  Tensor sims = scale(matmul_nt(proto, p), 1.0 / cfg.tau);
  return reshape(in_vs_all(sims, inside), {});
}

Tensor spc_loss_unpooled(const Tensor& tokens, const LevelSegment& seg, const ContrastiveConfig& cfg,
                         const Tensor& proj, SpcStats* stats) {
  cfg.validate();
  auto inside = segment_tokens(tokens.rows(), seg);
  if (inside.empty()) {
    if (stats) ++stats->skipped;
    return Tensor::scalar(0.0);
  }
  if (stats) ++stats->evaluated;
  Tensor p = project_normalized(tokens, proj, cfg.norm_eps);
  Tensor sims = scale(matmul_nt(gather_rows(p, inside), p), 1.0 / cfg.tau);
  return mean(in_vs_all(sims, inside));
}

namespace {

void check_labels(const Tensor& x, const std::vector<double>& labels) {
  if (x.numel() != labels.size()) {
    throw std::invalid_argument("focal_loss: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(x.numel()) + " predictions");
  }
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("focal_loss: labels must be 0 or 1");
  }
}

// alpha_t per entry, negated so the result is directly the loss weight.
Tensor neg_alpha(const std::vector<double>& labels, double alpha) {
  std::vector<double> a(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) a[i] = -(labels[i] == 1.0 ? alpha : 1.0 - alpha);
  return Tensor::from({labels.size()}, std::move(a));
}

}  // namespace

Tensor focal_loss(const Tensor& p, const std::vector<double>& labels, double alpha, double gamma) {
  check_labels(p, labels);
  for (double v : p.data()) {
    if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument("focal_loss: probability outside (0,1): " + std::to_string(v));
  }
  const std::size_t n = labels.size();
  std::vector<double> sign(n), offset(n);
  for (std::size_t i = 0; i < n; ++i) {
    sign[i] = labels[i] == 1.0 ? 1.0 : -1.0;
    offset[i] = labels[i] == 1.0 ? 0.0 : 1.0;
  }
  Tensor flat = reshape(p, {n});
  // p_t = p for positives, 1 - p for negatives.
  Tensor pt = add(mul(flat, Tensor::from({n}, sign)), Tensor::from({n}, offset));
  Tensor w = pow_scalar(add_scalar(neg(pt), 1.0), gamma);
  return mean(mul(mul(w, log(pt)), neg_alpha(labels, alpha)));
}

Tensor focal_loss_logits(const Tensor& logits, const std::vector<double>& labels, double alpha, double gamma) {
  check_labels(logits, labels);
  const std::size_t n = labels.size();
  std::vector<double> sign(n);
  for (std::size_t i = 0; i < n; ++i) sign[i] = labels[i] == 1.0 ? 1.0 : -1.0;
  Tensor sz = mul(reshape(logits, {n}), Tensor::from({n}, sign));
  // log p_t = log sigmoid(s z), 1 - p_t = sigmoid(-s z)
  Tensor w = pow_scalar(sigmoid(neg(sz)), gamma);
  return mean(mul(mul(w, log_sigmoid(sz)), neg_alpha(labels, alpha)));
}

double diou_loss(const Interval& pred, const Interval& gt) {
  if (!(pred.start < pred.end) || !(gt.start < gt.end)) {
    throw std::invalid_argument("diou_loss: degenerate interval");
  }
  const double inter = std::max(0.0, std::min(pred.end, gt.end) - std::max(pred.start, gt.start));
  const double uni = (pred.end - pred.start) + (gt.end - gt.start) - inter;
  const double enclose = std::max(pred.end, gt.end) - std::min(pred.start, gt.start);
  const double dc = 0.5 * (pred.start + pred.end) - 0.5 * (gt.start + gt.end);
  return 1.0 - inter / uni + dc * dc / (enclose * enclose);
}

Tensor diou_loss(const Tensor& pred_start, const Tensor& pred_end, const std::vector<Interval>& gt) {
  const std::size_t n = gt.size();
  if (n == 0) throw std::invalid_argument("diou_loss: empty batch");
  if (pred_start.numel() != n || pred_end.numel() != n) throw std::invalid_argument("diou_loss: batch size mismatch");
  std::vector<double> gs(n), ge(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(gt[i].start < gt[i].end)) throw std::invalid_argument("diou_loss: degenerate target interval");
    if (!(pred_start.data()[i] < pred_end.data()[i])) throw std::invalid_argument("diou_loss: degenerate predicted interval");
    gs[i] = gt[i].start;
    ge[i] = gt[i].end;
  }
  Tensor a = reshape(pred_start, {n});
  Tensor b = reshape(pred_end, {n});
  Tensor c = Tensor::from({n}, gs);
  Tensor d = Tensor::from({n}, ge);
  // min/max via relu: min(b,d) = d - relu(d-b), max(a,c) = c + relu(a-c)
  Tensor lo = add(c, relu(sub(a, c)));
  Tensor hi = sub(d, relu(sub(d, b)));
  Tensor inter = relu(sub(hi, lo));
  Tensor uni = sub(add(sub(b, a), sub(d, c)), inter);
  Tensor enc = sub(add(b, relu(sub(d, b))), sub(a, relu(sub(a, c))));
  Tensor dc = scale(sub(add(a, b), add(c, d)), 0.5);
  Tensor per = add(add_scalar(neg(div(inter, uni)), 1.0), div(square(dc), square(enc)));
  return mean(per);
}

Tensor total_loss(const Tensor& cls, const Tensor& reg, const Tensor& acc, const Tensor& spc, const LossWeights& w) {
  for (auto [t, name] : {std::pair{&cls, "cls"}, std::pair{&reg, "reg"}, std::pair{&acc, "acc"}, std::pair{&spc, "spc"}}) {
    if (t->numel() != 1) throw std::invalid_argument(std::string("total_loss: ") + name + " is not a scalar");
    if (!std::isfinite(t->item())) throw NumericError(std::string("total_loss: non-finite ") + name + " component");
  }
  return add(add(cls, reg), add(scale(acc, w.lambda_acc), scale(spc, w.lambda_spc)));
}

}  // namespace hg
