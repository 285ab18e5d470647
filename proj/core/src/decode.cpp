#include "hg/decode.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace hg {

void DecodeConfig::validate() const {
  if (!(sigma > 0)) throw std::invalid_argument("decode: sigma must be positive");
  if (top_k == 0) throw std::invalid_argument("decode: top_k must be >= 1");
  if (!(score_floor >= 0)) throw std::invalid_argument("decode: score_floor must be >= 0");
}

std::vector<Proposal> make_proposals(const std::vector<LevelPrediction>& levels, double score_floor,
                                     double video_length) {
  std::vector<Proposal> out;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const auto& lv = levels[l];
    if (lv.scores.size() != lv.offsets.size()) {
      throw std::invalid_argument("make_proposals: level " + std::to_string(l) + " has " +
                                  std::to_string(lv.scores.size()) + " scores but " +
                                  std::to_string(lv.offsets.size()) + " offsets");
    }
    const double s = static_cast<double>(lv.stride);
    for (std::size_t t = 0; t < lv.scores.size(); ++t) {
      if (!(lv.scores[t] >= score_floor) || !(lv.scores[t] > 0)) continue;
      const double tt = static_cast<double>(t);
      const double ts = std::clamp(s * (tt - lv.offsets[t].first), 0.0, video_length);
      const double te = std::clamp(s * (tt + lv.offsets[t].second), 0.0, video_length);
      if (!(ts < te)) continue;
      out.push_back({ts, te, lv.scores[t], l, t});
    }
  }
  return out;
}

double tiou(double a_s, double a_e, double b_s, double b_e) {
  if (!(a_s < a_e) || !(b_s < b_e)) throw std::invalid_argument("tiou: degenerate interval");
  const double inter = std::max(0.0, std::min(a_e, b_e) - std::max(a_s, b_s));
  const double uni = (a_e - a_s) + (b_e - b_s) - inter;
  return inter / uni;
}

bool proposal_before(const Proposal& a, const Proposal& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.t_s != b.t_s) return a.t_s < b.t_s;
  if (a.level != b.level) return a.level < b.level;
  return a.token < b.token;
}

std::vector<Proposal> soft_nms(std::vector<Proposal> props, double sigma, std::size_t top_k) {
  if (!(sigma > 0)) throw std::invalid_argument("soft_nms: sigma must be positive");
  std::vector<Proposal> kept;
  kept.reserve(std::min(top_k, props.size()));
  while (!props.empty() && kept.size() < top_k) {
    auto best = std::min_element(props.begin(), props.end(), proposal_before);
    Proposal sel = *best;
    props.erase(best);
    for (auto& p : props) {
      const double iou = tiou(sel.t_s, sel.t_e, p.t_s, p.t_e);
      if (iou > 0) p.score *= std::exp(-iou * iou / sigma);
    }
    kept.push_back(sel);
  }
  // Selection order already respects final scores: every later pick was
  // below the earlier one before decay and only decays further.
  return kept;
}

double recall_at(const std::vector<std::vector<Proposal>>& preds, const std::vector<GroundTruth>& gt, std::size_t k,
                 double theta) {
  if (k == 0) throw std::invalid_argument("recall_at: k must be >= 1");
  if (!(theta > 0 && theta < 1)) throw std::invalid_argument("recall_at: theta must lie in (0,1)");
  if (preds.size() != gt.size()) throw std::invalid_argument("recall_at: prediction/ground-truth count mismatch");
  if (gt.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < gt.size(); ++q) {
    const auto& p = preds[q];
    const std::size_t n = std::min(k, p.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (tiou(p[i], gt[q]) >= theta) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

RecallTable recall_table(const std::vector<std::vector<Proposal>>& preds, const std::vector<GroundTruth>& gt) {
  RecallTable t;
  t.r1_03 = 100.0 * recall_at(preds, gt, 1, 0.3);
  t.r1_05 = 100.0 * recall_at(preds, gt, 1, 0.5);
  t.r5_03 = 100.0 * recall_at(preds, gt, 5, 0.3);
  t.r5_05 = 100.0 * recall_at(preds, gt, 5, 0.5);
  return t;
}

std::string format_recall_table(const RecallTable& t) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "R@1 IoU=0.3 | R@1 IoU=0.5 | R@5 IoU=0.3 | R@5 IoU=0.5 |  Avg.\n"
                "%11.2f | %11.2f | %11.2f | %11.2f | %5.2f\n",
                t.r1_03, t.r1_05, t.r5_03, t.r5_05, t.average());
  return buf;
}

void write_predictions(std::ostream& os, const std::vector<std::string>& query_ids,
                       const std::vector<std::vector<Proposal>>& preds) {
  if (query_ids.size() != preds.size()) throw std::invalid_argument("write_predictions: id/prediction count mismatch");
  for (std::size_t q = 0; q < preds.size(); ++q) {
    nlohmann::json rec;
    rec["query_id"] = query_ids[q];
    rec["topk"] = nlohmann::json::array();
    for (const auto& p : preds[q]) rec["topk"].push_back({p.t_s, p.t_e, p.score});
    os << rec.dump() << '\n';
  }
}

}  // namespace hg
