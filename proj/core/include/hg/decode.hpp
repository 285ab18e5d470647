#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace hg {

struct Proposal {
  double t_s = 0.0;
  double t_e = 0.0;
  double score = 0.0;
  std::size_t level = 0;
  std::size_t token = 0;
};

struct GroundTruth {
  double t_start = 0.0;
  double t_end = 0.0;
};

// Plain-number view of one pyramid level's head output.
struct LevelPrediction {
  std::vector<double> scores;                   // [L_l]
  std::vector<std::pair<double, double>> offsets;  // [L_l] (delta_s, delta_e)
  std::size_t stride = 1;
};

struct DecodeConfig {
  double score_floor = 0.001;
  double sigma = 0.5;
  std::size_t top_k = 5;

  void validate() const;
};

// One proposal (S(t - ds), S(t + de)) per token scoring >= score_floor,
// clamped to [0, video_length]; zero-length results are dropped.
std::vector<Proposal> make_proposals(const std::vector<LevelPrediction>& levels, double score_floor,
                                     double video_length);

double tiou(double a_s, double a_e, double b_s, double b_e);
inline double tiou(const Proposal& a, const GroundTruth& b) { return tiou(a.t_s, a.t_e, b.t_start, b.t_end); }

// Gaussian Soft-NMS; returns at most top_k proposals in selection order.
std::vector<Proposal> soft_nms(std::vector<Proposal> props, double sigma, std::size_t top_k);

// Proposal ordering: higher score first, then earlier t_s, lower level, lower token.
bool proposal_before(const Proposal& a, const Proposal& b);

double recall_at(const std::vector<std::vector<Proposal>>& preds, const std::vector<GroundTruth>& gt, std::size_t k,
                 double theta);

struct RecallTable {
  double r1_03 = 0.0, r1_05 = 0.0, r5_03 = 0.0, r5_05 = 0.0;
  double average() const { return (r1_03 + r1_05 + r5_03 + r5_05) / 4.0; }
};

// Percentages (0..100) for R@{1,5} x IoU {0.3,0.5}.
RecallTable recall_table(const std::vector<std::vector<Proposal>>& preds, const std::vector<GroundTruth>& gt);
std::string format_recall_table(const RecallTable& t);

// One JSON object per line: {"query_id":..., "topk":[[ts,te,score],...]}
void write_predictions(std::ostream& os, const std::vector<std::string>& query_ids,
                       const std::vector<std::vector<Proposal>>& preds);

}  // namespace hg
