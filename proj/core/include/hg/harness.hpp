#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "hg/config.hpp"
#include "hg/decode.hpp"
#include "hg/gradcheck.hpp"
#include "hg/losses.hpp"
#include "hg/model.hpp"
#include "hg/parallel.hpp"
#include "hg/synthdata.hpp"

namespace hg {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t epochs = 30;
  std::size_t batch_size = 1;  // episodes per optimizer step
  double grad_clip = 1.0;      // global L2 norm; 0 disables
  std::size_t warmup_steps = 100;
  std::size_t eval_every = 1;  // epochs; 0 disables per-epoch eval
  std::uint64_t seed = 0;
  std::string checkpoint_path;

  void validate() const;
  void to_kv(KeyValues& kv, const std::string& prefix = "train.") const;
  static TrainConfig from_kv(const KeyValues& kv, const std::string& prefix = "train.");
};

// Token labels and regression targets for one query at one pyramid level.
struct LevelTargets {
  std::vector<double> labels;          // 1 iff S(t + 0.5) lies in [t_start, t_end)
  std::vector<std::size_t> positives;  // indices with label 1
  Interval target;                     // ground truth in level-token units
};
LevelTargets assign_targets(std::size_t level_length, std::size_t stride, const GroundTruth& gt);

struct LossBreakdown {
  double total = 0.0, cls = 0.0, reg = 0.0, acc = 0.0, spc = 0.0;
  std::size_t spc_evaluated = 0, spc_skipped = 0;
};

struct EpisodeLoss {
  Tensor total;
  LossBreakdown parts;
};

// Full training objective for one episode: classification and regression
// averaged over its queries plus the weighted contrastive terms.
EpisodeLoss episode_loss(const Model& model, const Episode& episode);

// Ranked proposals for every query of the episode.
std::vector<std::vector<Proposal>> predict(const Model& model, const Episode& episode, const DecodeConfig& decode);

struct EvalResult {
  RecallTable table;
  std::vector<std::string> query_ids;
  std::vector<std::vector<Proposal>> predictions;
  std::vector<GroundTruth> ground_truth;
};
EvalResult evaluate(const Model& model, const std::vector<Episode>& episodes, const DecodeConfig& decode,
                    std::size_t threads = default_threads());
// Scores the ground truth itself as the only prediction; every cell is 100.
EvalResult evaluate_oracle(const std::vector<Episode>& episodes);

// Expected recall of `proposals` uniformly random intervals per query. R@1 is
// the hit rate of single proposals; R@5 the hit rate of disjoint groups of 5.
RecallTable random_baseline(const std::vector<Episode>& episodes, std::size_t proposals, std::uint64_t seed);

class AdamW {
 public:
  AdamW(ParamStore& params, const TrainConfig& cfg);
  // Applies one update from the accumulated gradients, then zeroes them.
  // Returns the pre-clipping gradient norm.
  double step();
  std::size_t steps() const { return t_; }

 private:
  ParamStore& params_;
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown loss;  // means over the epoch's episodes
  double grad_norm = 0.0;
  bool evaluated = false;
  RecallTable recall;
  double seconds = 0.0;
  std::string to_json() const;
};

struct TrainResult {
  std::vector<EpochRecord> trace;
  RecallTable final_recall;
};

// Single-threaded optimisation; evaluation uses `eval_threads` workers.
// Each epoch record is written to `trace_out` as one JSON line when given.
TrainResult train(Model& model, const TrainConfig& cfg, const std::vector<Episode>& train_set,
                  const std::vector<Episode>& eval_set, const DecodeConfig& decode, std::ostream* trace_out = nullptr,
                  std::size_t eval_threads = default_threads());

void save_model(const std::string& path, const Model& model);
Model load_model(const std::string& path);
// Rejects datasets whose widths or length the model cannot consume.
void check_compatible(const ModelConfig& model, const GenConfig& data);

struct AblationVariant {
  std::string name;
  ModelConfig model;
  bool architectural = false;
};
// Four single-component removals followed by the ACC/SPC on-off grid; the
// last grid entry (both on) is the full model.
std::vector<AblationVariant> ablation_variants(const ModelConfig& base);

struct AblationRow {
  std::string name;
  bool architectural = false;
  std::size_t parameters = 0;
  std::vector<RecallTable> per_seed;
  RecallTable mean;
};

struct AblationResult {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;
  const AblationRow& full() const { return rows.back(); }
  // Architectural variants whose mean average recall the full model matches or beats.
  std::size_t full_model_wins() const;
  std::string to_table() const;
  std::string to_jsonl() const;
};

AblationResult ablate(const ModelConfig& base, const TrainConfig& train_cfg, const std::vector<Episode>& train_set,
                      const std::vector<Episode>& eval_set, const DecodeConfig& decode,
                      const std::vector<std::uint64_t>& seeds, std::size_t threads = default_threads());

// Analytic multiply-add counts for the pyramid encoder and for the same
// encoder with full self-attention in place of every scan.
std::uint64_t encoder_flops(std::size_t length, const ModelConfig& cfg);
std::uint64_t attention_baseline_flops(std::size_t length, const ModelConfig& cfg);

struct BenchPoint {
  std::size_t length = 0;
  std::uint64_t encoder_flops = 0;
  std::uint64_t attention_flops = 0;
  double seconds = 0.0;  // best of the repeats
};

struct BenchReport {
  std::vector<BenchPoint> points;
  double encoder_flop_exponent = 0.0;
  double attention_flop_exponent = 0.0;
  double time_exponent = 0.0;
  double time_coefficient = 0.0;
  std::string to_jsonl() const;
};

// Exponent b and coefficient a of y = a x^b, by least squares in log space.
std::pair<double, double> fit_power_law(const std::vector<double>& x, const std::vector<double>& y);

// Lengths must be ascending with at least 4 points. repeats == 0 skips timing.
BenchReport bench_scaling(const ModelConfig& cfg, const std::vector<std::size_t>& lengths, std::size_t repeats,
                          std::uint64_t seed);

// Tiny configuration used by the model-wide gradient check.
struct GradCheckSetup {
  ModelConfig model;
  GenConfig data;
};
GradCheckSetup default_gradcheck_setup();

// Optional extra term added to the loss, used to test the checker itself.
using LossHook = std::function<Tensor(const Model&, const Tensor&)>;
GradCheckReport gradcheck_model(const GradCheckSetup& setup, std::uint64_t seed, const GradCheckOptions& options,
                                const LossHook& hook = {});

// Every section of an experiment config file.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  GenConfig data;
  DecodeConfig decode;
  std::size_t train_episodes = 200;
  std::size_t eval_episodes = 50;
  std::uint64_t eval_seed_offset = 1000000;  // eval episodes use seed + offset + i
  std::size_t baseline_proposals = 1000;
  std::size_t ablate_epochs = 8;
  std::size_t ablate_train_episodes = 64;
  std::size_t ablate_eval_episodes = 32;
  std::size_t ablate_seeds = 3;
  std::vector<std::size_t> bench_lengths{1024, 2048, 4096, 8192};
  std::size_t bench_repeats = 3;
  std::size_t bench_dim = 32;

  static ExperimentConfig from_kv(const KeyValues& kv);
  KeyValues to_kv() const;
};

}  // namespace hg
