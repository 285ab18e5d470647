#include "hg/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "hg/checkpoint.hpp"
#include "hg/ops.hpp"

namespace hg {

// ---------------------------------------------------------------- configs

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("train.lr must be positive");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("train betas must lie in [0,1)");
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(grad_clip >= 0)) throw ConfigError("train.grad_clip must be >= 0");
  if (!(adam_eps > 0)) throw ConfigError("train.adam_eps must be positive");
}

void TrainConfig::to_kv(KeyValues& kv, const std::string& p) const {
  kv.set(p + "lr", lr);
  kv.set(p + "beta1", beta1);
  kv.set(p + "beta2", beta2);
  kv.set(p + "adam_eps", adam_eps);
  kv.set(p + "weight_decay", weight_decay);
  kv.set(p + "epochs", static_cast<std::uint64_t>(epochs));
  kv.set(p + "batch_size", static_cast<std::uint64_t>(batch_size));
  kv.set(p + "grad_clip", grad_clip);
  kv.set(p + "warmup_steps", static_cast<std::uint64_t>(warmup_steps));
  kv.set(p + "eval_every", static_cast<std::uint64_t>(eval_every));
  kv.set(p + "seed", seed);
  kv.set(p + "checkpoint_path", checkpoint_path);
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv, const std::string& p) {
  TrainConfig c;
  c.lr = kv.get_double(p + "lr", c.lr);
  c.beta1 = kv.get_double(p + "beta1", c.beta1);
  c.beta2 = kv.get_double(p + "beta2", c.beta2);
  c.adam_eps = kv.get_double(p + "adam_eps", c.adam_eps);
  c.weight_decay = kv.get_double(p + "weight_decay", c.weight_decay);
  c.epochs = kv.get_size(p + "epochs", c.epochs);
  c.batch_size = kv.get_size(p + "batch_size", c.batch_size);
  c.grad_clip = kv.get_double(p + "grad_clip", c.grad_clip);
  c.warmup_steps = kv.get_size(p + "warmup_steps", c.warmup_steps);
  c.eval_every = kv.get_size(p + "eval_every", c.eval_every);
  c.seed = kv.get_uint(p + "seed", c.seed);
  c.checkpoint_path = kv.get_string(p + "checkpoint_path", c.checkpoint_path);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_kv(const KeyValues& kv) {
  ExperimentConfig e;
  e.model = ModelConfig::from_kv(kv);
  e.train = TrainConfig::from_kv(kv);
  e.data = GenConfig::from_kv(kv);
  e.decode.score_floor = kv.get_double("decode.score_floor", e.decode.score_floor);
  e.decode.sigma = kv.get_double("decode.sigma", e.decode.sigma);
  e.decode.top_k = kv.get_size("decode.top_k", e.decode.top_k);
  try {
    e.decode.validate();
  } catch (const std::invalid_argument& err) {
    throw ConfigError(err.what());
  }
  e.train_episodes = kv.get_size("experiment.train_episodes", e.train_episodes);
  e.eval_episodes = kv.get_size("experiment.eval_episodes", e.eval_episodes);
  e.eval_seed_offset = kv.get_uint("experiment.eval_seed_offset", e.eval_seed_offset);
  e.baseline_proposals = kv.get_size("experiment.baseline_proposals", e.baseline_proposals);
  e.ablate_epochs = kv.get_size("ablate.epochs", e.ablate_epochs);
  e.ablate_train_episodes = kv.get_size("ablate.train_episodes", e.ablate_train_episodes);
  e.ablate_eval_episodes = kv.get_size("ablate.eval_episodes", e.ablate_eval_episodes);
  e.ablate_seeds = kv.get_size("ablate.seeds", e.ablate_seeds);
  e.bench_repeats = kv.get_size("bench.repeats", e.bench_repeats);
  e.bench_dim = kv.get_size("bench.dim", e.bench_dim);
  if (kv.has("bench.lengths")) {
    e.bench_lengths.clear();
    std::stringstream ss(kv.get_string("bench.lengths", ""));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        e.bench_lengths.push_back(std::stoul(item));
      } catch (const std::exception&) {
        throw ConfigError("bench.lengths: '" + item + "' is not a length");
      }
    }
  }
  if (e.train_episodes == 0) throw ConfigError("experiment.train_episodes must be positive");
  if (e.baseline_proposals < 5) throw ConfigError("experiment.baseline_proposals must be >= 5");
  if (e.ablate_seeds == 0 || e.ablate_epochs == 0 || e.ablate_train_episodes == 0 || e.ablate_eval_episodes == 0) {
    throw ConfigError("ablate.* counts must be positive");
  }
  if (e.bench_lengths.size() < 4 || !std::is_sorted(e.bench_lengths.begin(), e.bench_lengths.end()) ||
      std::adjacent_find(e.bench_lengths.begin(), e.bench_lengths.end()) != e.bench_lengths.end()) {
    throw ConfigError("bench.lengths must list at least 4 strictly ascending lengths");
  }
  return e;
}

KeyValues ExperimentConfig::to_kv() const {
  KeyValues kv;
  model.to_kv(kv);
  train.to_kv(kv);
  data.to_kv(kv);
  kv.set("decode.score_floor", decode.score_floor);
  kv.set("decode.sigma", decode.sigma);
  kv.set("decode.top_k", static_cast<std::uint64_t>(decode.top_k));
  kv.set("experiment.train_episodes", static_cast<std::uint64_t>(train_episodes));
  kv.set("experiment.eval_episodes", static_cast<std::uint64_t>(eval_episodes));
  kv.set("experiment.eval_seed_offset", eval_seed_offset);
  kv.set("experiment.baseline_proposals", static_cast<std::uint64_t>(baseline_proposals));
  kv.set("ablate.epochs", static_cast<std::uint64_t>(ablate_epochs));
  kv.set("ablate.train_episodes", static_cast<std::uint64_t>(ablate_train_episodes));
  kv.set("ablate.eval_episodes", static_cast<std::uint64_t>(ablate_eval_episodes));
  kv.set("ablate.seeds", static_cast<std::uint64_t>(ablate_seeds));
  std::string lens;
  for (std::size_t i = 0; i < bench_lengths.size(); ++i) lens += (i ? "," : "") + std::to_string(bench_lengths[i]);
  kv.set("bench.lengths", lens);
  kv.set("bench.repeats", static_cast<std::uint64_t>(bench_repeats));
  kv.set("bench.dim", static_cast<std::uint64_t>(bench_dim));
  return kv;
}

// ------------------------------------------------------------- objective

LevelTargets assign_targets(std::size_t level_length, std::size_t stride, const GroundTruth& gt) {
  LevelTargets out;
  const double s = static_cast<double>(stride);
  out.labels.assign(level_length, 0.0);
  for (std::size_t t = 0; t < level_length; ++t) {
    const double center = s * (static_cast<double>(t) + 0.5);
    if (center >= gt.t_start && center < gt.t_end) {
      out.labels[t] = 1.0;
      out.positives.push_back(t);
    }
  }
  out.target = {gt.t_start / s, gt.t_end / s};
  return out;
}

namespace {

Tensor mean_of(const std::vector<Tensor>& terms) {
  if (terms.empty()) return Tensor::scalar(0.0);
  return mean(stack_scalars(terms));
}

}  // namespace

EpisodeLoss episode_loss(const Model& model, const Episode& ep) {
  const ModelConfig& cfg = model.config();
  if (ep.queries.empty()) throw std::invalid_argument("episode_loss: episode has no queries");
  const FeaturePyramid pyr = model.encode_video(ep.features);
  ContrastiveConfig cc;
  cc.tau = cfg.tau;
  cc.margin = cfg.acc_margin;
  cc.neg_cap = cfg.acc_neg_cap;
  cc.seed = ep.seed;

  EpisodeLoss out;
  std::vector<Tensor> cls_terms, reg_terms, spc_terms;
  SpcStats stats;
  for (const auto& q : ep.queries) {
    const Tensor text = model.encode_text(q.embedding);
    const std::vector<Tensor> fused = model.fuse(pyr, text);
    std::vector<Tensor> logits, starts, ends;
    std::vector<double> labels;
    std::vector<Interval> targets;
    for (std::size_t l = 0; l < fused.size(); ++l) {
      const std::size_t len = fused[l].rows(), stride = pyr.levels[l].stride;
      const HeadOutput h = model.heads(fused[l]);
      const LevelTargets tg = assign_targets(len, stride, q.gt);
      logits.push_back(reshape(h.logits, {len, 1}));
      labels.insert(labels.end(), tg.labels.begin(), tg.labels.end());
      if (!tg.positives.empty()) {
        const std::size_t p = tg.positives.size();
        const Tensor off = gather_rows(h.offsets, tg.positives);
        std::vector<double> pos(tg.positives.begin(), tg.positives.end());
        const Tensor t = Tensor::from({p, 1}, std::move(pos));
        starts.push_back(sub(t, slice_cols(off, 0, 1)));
        ends.push_back(add(t, slice_cols(off, 1, 2)));
        targets.insert(targets.end(), p, tg.target);
      }
      if (cfg.lambda_spc > 0) {
        const LevelSegment seg{q.gt.t_start / static_cast<double>(stride), q.gt.t_end / static_cast<double>(stride)};
        const std::size_t before = stats.evaluated;
        Tensor s = cfg.spc_pooled ? spc_loss(pyr.levels[l].refined, seg, cc, model.spc_projection(l), &stats)
                                  : spc_loss_unpooled(pyr.levels[l].refined, seg, cc, model.spc_projection(l), &stats);
        if (stats.evaluated > before) spc_terms.push_back(s);
      }
    }
    // Focal loss normalised by the positive count rather than all tokens.
    const std::size_t n_pos = targets.size();
    const double norm = static_cast<double>(labels.size()) / static_cast<double>(std::max<std::size_t>(1, n_pos));
    Tensor all_logits = reshape(concat_rows(logits), {labels.size()});
    cls_terms.push_back(scale(focal_loss_logits(all_logits, labels, cfg.focal_alpha, cfg.focal_gamma), norm));
    if (n_pos > 0) {
      reg_terms.push_back(diou_loss(reshape(concat_rows(starts), {n_pos}), reshape(concat_rows(ends), {n_pos}), targets));
    }
  }

  std::vector<Tensor> acc_terms;
  if (cfg.lambda_acc > 0) {
    for (std::size_t l = 0; l < pyr.levels.size(); ++l) {
      acc_terms.push_back(acc_loss(pyr.levels[l].anchors_out, pyr.levels[l].refined, cfg.stride, cc,
                                   model.acc_projection(l)));
    }
  }

  const Tensor cls = mean_of(cls_terms), reg = mean_of(reg_terms), acc = mean_of(acc_terms), spc = mean_of(spc_terms);
  out.parts.cls = cls.item();
  out.parts.reg = reg.item();
  out.parts.acc = acc.item();
  out.parts.spc = spc.item();
  out.parts.spc_evaluated = stats.evaluated;
  out.parts.spc_skipped = stats.skipped;
  out.total = total_loss(cls, reg, acc, spc, LossWeights{cfg.lambda_acc, cfg.lambda_spc});
  out.parts.total = out.total.item();
  return out;
}

// ------------------------------------------------------------ evaluation

std::vector<std::vector<Proposal>> predict(const Model& model, const Episode& ep, const DecodeConfig& decode) {
  decode.validate();
  NoGradGuard no_grad;
  const FeaturePyramid pyr = model.encode_video(ep.features);
  const double l0 = static_cast<double>(ep.features.rows());
  std::vector<std::vector<Proposal>> out;
  for (const auto& q : ep.queries) {
    const std::vector<Tensor> fused = model.fuse(pyr, model.encode_text(q.embedding));
    std::vector<LevelPrediction> levels;
    for (std::size_t l = 0; l < fused.size(); ++l) {
      const HeadOutput h = model.heads(fused[l]);
      LevelPrediction lp;
      lp.stride = pyr.levels[l].stride;
      lp.scores = h.scores.to_vector();
      const auto off = h.offsets.data();
      for (std::size_t t = 0; t < lp.scores.size(); ++t) lp.offsets.emplace_back(off[2 * t], off[2 * t + 1]);
      levels.push_back(std::move(lp));
    }
    out.push_back(soft_nms(make_proposals(levels, decode.score_floor, l0), decode.sigma, decode.top_k));
  }
  return out;
}

namespace {

std::string query_id(const Episode& ep, std::size_t q) {
  return "ep" + std::to_string(ep.seed) + "_q" + std::to_string(q);
}

}  // namespace

EvalResult evaluate(const Model& model, const std::vector<Episode>& episodes, const DecodeConfig& decode,
                    std::size_t threads) {
  std::vector<std::vector<std::vector<Proposal>>> per(episodes.size());
  parallel_for(episodes.size(), [&](std::size_t i) { per[i] = predict(model, episodes[i], decode); }, threads);
  EvalResult r;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    for (std::size_t q = 0; q < episodes[i].queries.size(); ++q) {
      r.query_ids.push_back(query_id(episodes[i], q));
      r.predictions.push_back(std::move(per[i][q]));
      r.ground_truth.push_back(episodes[i].queries[q].gt);
    }
  }
  r.table = recall_table(r.predictions, r.ground_truth);
  return r;
}

EvalResult evaluate_oracle(const std::vector<Episode>& episodes) {
  EvalResult r;
  for (const auto& ep : episodes) {
    for (std::size_t q = 0; q < ep.queries.size(); ++q) {
      const auto& gt = ep.queries[q].gt;
      r.query_ids.push_back(query_id(ep, q));
      r.predictions.push_back({Proposal{gt.t_start, gt.t_end, 1.0, 0, 0}});
      r.ground_truth.push_back(gt);
    }
  }
  r.table = recall_table(r.predictions, r.ground_truth);
  return r;
}

RecallTable random_baseline(const std::vector<Episode>& episodes, std::size_t proposals, std::uint64_t seed) {
  if (proposals < 5) throw std::invalid_argument("random_baseline: need at least 5 proposals per query");
  std::mt19937_64 rng(seed);
  RecallTable sum;
  std::size_t queries = 0;
  const std::size_t groups = proposals / 5;
  for (const auto& ep : episodes) {
    std::uniform_real_distribution<double> u(0.0, static_cast<double>(ep.features.rows()));
    for (const auto& q : ep.queries) {
      std::vector<double> iou(proposals);
      for (auto& v : iou) {
        double a = u(rng), b = u(rng);
        while (a == b) b = u(rng);
        if (a > b) std::swap(a, b);
        v = tiou(a, b, q.gt.t_start, q.gt.t_end);
      }
      double h1_03 = 0, h1_05 = 0, h5_03 = 0, h5_05 = 0;
      for (double v : iou) {
        h1_03 += v >= 0.3;
        h1_05 += v >= 0.5;
      }
      for (std::size_t g = 0; g < groups; ++g) {
        const double best = *std::max_element(iou.begin() + 5 * g, iou.begin() + 5 * g + 5);
        h5_03 += best >= 0.3;
        h5_05 += best >= 0.5;
      }
      const double n = static_cast<double>(proposals), ng = static_cast<double>(groups);
      sum.r1_03 += h1_03 / n;
      sum.r1_05 += h1_05 / n;
      sum.r5_03 += h5_03 / ng;
      sum.r5_05 += h5_05 / ng;
      ++queries;
    }
  }
  if (queries == 0) return sum;
  const double s = 100.0 / static_cast<double>(queries);
  return {sum.r1_03 * s, sum.r1_05 * s, sum.r5_03 * s, sum.r5_05 * s};
}

// -------------------------------------------------------------- training

AdamW::AdamW(ParamStore& params, const TrainConfig& cfg) : params_(params), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : params_.all()) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

double AdamW::step() {
  ++t_;
  double sq = 0.0;
  for (const auto& p : params_.all())
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("AdamW: non-finite gradient norm at step " + std::to_string(t_));
  const double clip = (cfg_.grad_clip > 0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
  const double warm = cfg_.warmup_steps ? std::min(1.0, static_cast<double>(t_) / cfg_.warmup_steps) : 1.0;
  const double lr = cfg_.lr * warm;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto& all = params_.all();
  for (std::size_t i = 0; i < all.size(); ++i) {
    Tensor& w = all[i].tensor;
    const auto g = w.grad();
    auto x = w.mutable_data();
    // Gains and biases are not decayed.
    const double wd = w.ndim() >= 2 ? cfg_.weight_decay : 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j] * clip;
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1 - cfg_.beta1) * gj;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1 - cfg_.beta2) * gj * gj;
      x[j] -= lr * ((m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + cfg_.adam_eps) + wd * x[j]);
    }
  }
  params_.zero_grad();
  return norm;
}

std::string EpochRecord::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["loss"] = loss.total;
  j["cls"] = loss.cls;
  j["reg"] = loss.reg;
  j["acc"] = loss.acc;
  j["spc"] = loss.spc;
  j["spc_skipped"] = loss.spc_skipped;
  j["grad_norm"] = grad_norm;
  if (evaluated) {
    j["r1_iou0.3"] = recall.r1_03;
    j["r1_iou0.5"] = recall.r1_05;
    j["r5_iou0.3"] = recall.r5_03;
    j["r5_iou0.5"] = recall.r5_05;
    j["avg"] = recall.average();
  }
  j["seconds"] = seconds;
  return j.dump();
}

TrainResult train(Model& model, const TrainConfig& cfg, const std::vector<Episode>& train_set,
                  const std::vector<Episode>& eval_set, const DecodeConfig& decode, std::ostream* trace_out,
                  std::size_t eval_threads) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  AdamW opt(model.params(), cfg);
  model.params().zero_grad();
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  bool have_recall = false;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    double norm_sum = 0.0;
    std::size_t steps = 0, in_batch = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const Episode& ep = train_set[order[k]];
      EpisodeLoss el = episode_loss(model, ep);
      scale(el.total, 1.0 / static_cast<double>(cfg.batch_size)).backward();
      rec.loss.total += el.parts.total;
      rec.loss.cls += el.parts.cls;
      rec.loss.reg += el.parts.reg;
      rec.loss.acc += el.parts.acc;
      rec.loss.spc += el.parts.spc;
      rec.loss.spc_evaluated += el.parts.spc_evaluated;
      rec.loss.spc_skipped += el.parts.spc_skipped;
      if (++in_batch == cfg.batch_size || k + 1 == order.size()) {
        norm_sum += opt.step();
        ++steps;
        in_batch = 0;
      }
    }
    const double n = static_cast<double>(order.size());
    rec.loss.total /= n;
    rec.loss.cls /= n;
    rec.loss.reg /= n;
    rec.loss.acc /= n;
    rec.loss.spc /= n;
    rec.grad_norm = norm_sum / static_cast<double>(std::max<std::size_t>(1, steps));
    const bool last = epoch == cfg.epochs;
    if (!eval_set.empty() && cfg.eval_every && (epoch % cfg.eval_every == 0 || last)) {
      rec.recall = evaluate(model, eval_set, decode, eval_threads).table;
      rec.evaluated = true;
      result.final_recall = rec.recall;
      have_recall = true;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (trace_out) *trace_out << rec.to_json() << '\n' << std::flush;
    result.trace.push_back(rec);
  }
  if (!have_recall && !eval_set.empty()) result.final_recall = evaluate(model, eval_set, decode, eval_threads).table;
  if (!cfg.checkpoint_path.empty()) save_model(cfg.checkpoint_path, model);
  return result;
}

void save_model(const std::string& path, const Model& model) {
  KeyValues kv;
  model.config().to_kv(kv);
  save_checkpoint(path, kv, model.params());
}

Model load_model(const std::string& path) {
  CheckpointData data = read_checkpoint(path);
  Model model(ModelConfig::from_kv(data.config), 0);
  load_params_into(data.params, model.params());
  return model;
}

void check_compatible(const ModelConfig& m, const GenConfig& d) {
  if (m.d_video != d.d_video) {
    throw ConfigError("model.d_video = " + std::to_string(m.d_video) + " but the dataset has " +
                      std::to_string(d.d_video) + "-wide video features");
  }
  if (m.d_text != d.d_query) {
    throw ConfigError("model.d_text = " + std::to_string(m.d_text) + " but the dataset has " +
                      std::to_string(d.d_query) + "-wide query tokens");
  }
  std::size_t need = 1;
  for (std::size_t l = 1; l < m.num_layers; ++l) need *= m.stride;
  if (d.length < need) {
    throw ConfigError("videos of " + std::to_string(d.length) + " frames are too short for " +
                      std::to_string(m.num_layers) + " layers at stride " + std::to_string(m.stride));
  }
}

// -------------------------------------------------------------- ablation

std::vector<AblationVariant> ablation_variants(const ModelConfig& base) {
  std::vector<AblationVariant> v;
  auto arch = [&](const char* name, bool ModelConfig::*flag) {
    ModelConfig c = base;
    c.*flag = false;
    v.push_back({name, c, true});
  };
  arch("w/o Interleaving", &ModelConfig::interleave);
  arch("w/o Bidirectional Scan", &ModelConfig::bidirectional);
  arch("w/o Local Encoding", &ModelConfig::local);
  arch("w/o Gates", &ModelConfig::gates);
  for (int mask = 0; mask < 4; ++mask) {
    ModelConfig c = base;
    const bool acc = mask & 1, spc = mask & 2;
    if (!acc) c.lambda_acc = 0.0;
    if (!spc) c.lambda_spc = 0.0;
    std::string name = mask == 0 ? "w/o ACC, w/o SPC" : mask == 1 ? "ACC only" : mask == 2 ? "SPC only" : "ACC + SPC (full)";
    v.push_back({name, c, false});
  }
  return v;
}

namespace {

RecallTable mean_table(const std::vector<RecallTable>& ts) {
  RecallTable m;
  for (const auto& t : ts) {
    m.r1_03 += t.r1_03;
    m.r1_05 += t.r1_05;
    m.r5_03 += t.r5_03;
    m.r5_05 += t.r5_05;
  }
  const double n = ts.empty() ? 1.0 : static_cast<double>(ts.size());
  return {m.r1_03 / n, m.r1_05 / n, m.r5_03 / n, m.r5_05 / n};
}

}  // namespace

std::size_t AblationResult::full_model_wins() const {
  std::size_t wins = 0;
  for (const auto& r : rows)
    if (r.architectural && full().mean.average() >= r.mean.average()) ++wins;
  return wins;
}

std::string AblationResult::to_table() const {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-24s %8s %8s %8s %8s %8s %8s\n", "Variant", "Params", "R1@0.3", "R1@0.5", "R5@0.3",
                "R5@0.5", "Avg.");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-24s %8zu %8.2f %8.2f %8.2f %8.2f %8.2f\n", r.name.c_str(), r.parameters,
                  r.mean.r1_03, r.mean.r1_05, r.mean.r5_03, r.mean.r5_05, r.mean.average());
    os << buf;
  }
  return os.str();
}

std::string AblationResult::to_jsonl() const {
  std::ostringstream os;
  for (const auto& r : rows) {
    nlohmann::json j;
    j["variant"] = r.name;
    j["architectural"] = r.architectural;
    j["parameters"] = r.parameters;
    j["avg"] = r.mean.average();
    j["per_seed_avg"] = nlohmann::json::array();
    for (const auto& t : r.per_seed) j["per_seed_avg"].push_back(t.average());
    j["seeds"] = seeds;
    os << j.dump() << '\n';
  }
  return os.str();
}

AblationResult ablate(const ModelConfig& base, const TrainConfig& train_cfg, const std::vector<Episode>& train_set,
                      const std::vector<Episode>& eval_set, const DecodeConfig& decode,
                      const std::vector<std::uint64_t>& seeds, std::size_t threads) {
  if (seeds.empty()) throw ConfigError("ablate: at least one seed is required");
  if (train_set.empty()) throw ConfigError("ablate: empty training set");
  const auto variants = ablation_variants(base);
  const std::size_t ns = seeds.size();
  std::vector<RecallTable> tables(variants.size() * ns);
  std::vector<std::size_t> counts(variants.size());
  parallel_for(
      tables.size(),
      [&](std::size_t job) {
        const std::size_t vi = job / ns, si = job % ns;
        Model model(variants[vi].model, seeds[si]);
        if (si == 0) counts[vi] = model.params().scalar_count();
        TrainConfig tc = train_cfg;
        tc.seed = seeds[si];
        tc.eval_every = 0;
        tc.checkpoint_path.clear();
        train(model, tc, train_set, {}, decode, nullptr, 1);
        tables[job] = evaluate(model, eval_set, decode, 1).table;
      },
      threads);
  AblationResult res;
  res.seeds = seeds;
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    AblationRow row;
    row.name = variants[vi].name;
    row.architectural = variants[vi].architectural;
    row.parameters = counts[vi];
    row.per_seed.assign(tables.begin() + vi * ns, tables.begin() + (vi + 1) * ns);
    row.mean = mean_table(row.per_seed);
    res.rows.push_back(std::move(row));
  }
  return res;
}

// ------------------------------------------------------------- benchmark

std::uint64_t encoder_flops(std::size_t length, const ModelConfig& cfg) {
  const AmpConfig amp = cfg.amp_config();
  std::uint64_t f = static_cast<std::uint64_t>(length) * cfg.d_video * cfg.dim;
  for (std::size_t len : pyramid_lengths(length, cfg.stride, cfg.num_layers)) f += amp_flops(len, amp);
  return f;
}

std::uint64_t attention_baseline_flops(std::size_t length, const ModelConfig& cfg) {
  const AmpConfig amp = cfg.amp_config();
  SelectiveConfig sc = amp.scan;
  sc.d_in = sc.d_out = cfg.dim;
  const std::uint64_t d = cfg.dim;
  auto swap_scan = [&](std::uint64_t t) {
    // Q, K, V and output projections plus scores and the weighted sum.
    return 4 * t * d * d + 2 * t * t * d - bidi_flops(t, sc, amp.bidirectional);
  };
  std::uint64_t f = static_cast<std::uint64_t>(length) * cfg.d_video * cfg.dim;
  for (std::size_t len : pyramid_lengths(length, cfg.stride, cfg.num_layers)) {
    const std::uint64_t m = (len + cfg.stride - 1) / cfg.stride;
    f += amp_flops(len, amp);
    f += amp.interleave ? swap_scan(len + m) : swap_scan(len) + swap_scan(m);
  }
  return f;
}

std::pair<double, double> fit_power_law(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_power_law: need >= 2 paired points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0 && y[i] > 0)) throw std::invalid_argument("fit_power_law: values must be positive");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return {slope, std::exp((sy - slope * sx) / n)};
}

std::string BenchReport::to_jsonl() const {
  std::ostringstream os;
  for (const auto& p : points) {
    nlohmann::json j;
    j["length"] = p.length;
    j["encoder_flops"] = p.encoder_flops;
    j["attention_flops"] = p.attention_flops;
    j["seconds"] = p.seconds;
    os << j.dump() << '\n';
  }
  nlohmann::json fit;
  fit["fit"] = "power_law";
  fit["encoder_flop_exponent"] = encoder_flop_exponent;
  fit["attention_flop_exponent"] = attention_flop_exponent;
  fit["time_exponent"] = time_exponent;
  fit["time_coefficient"] = time_coefficient;
  os << fit.dump() << '\n';
  return os.str();
}

BenchReport bench_scaling(const ModelConfig& cfg, const std::vector<std::size_t>& lengths, std::size_t repeats,
                          std::uint64_t seed) {
  if (lengths.size() < 4 || !std::is_sorted(lengths.begin(), lengths.end())) {
    throw ConfigError("bench_scaling: need at least 4 ascending lengths");
  }
  BenchReport rep;
  Model model(cfg, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::vector<double> xs, ef, af, ts;
  for (std::size_t len : lengths) {
    BenchPoint p;
    p.length = len;
    p.encoder_flops = encoder_flops(len, cfg);
    p.attention_flops = attention_baseline_flops(len, cfg);
    if (repeats > 0) {
      std::vector<double> v(len * cfg.d_video);
      for (auto& x : v) x = n01(rng);
      const Tensor video = Tensor::from({len, cfg.d_video}, std::move(v));
      NoGradGuard no_grad;
      double best = 1e300;
      for (std::size_t r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const FeaturePyramid pyr = model.encode_video(video);
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
      p.seconds = best;
      ts.push_back(best);
    }
    xs.push_back(static_cast<double>(len));
    ef.push_back(static_cast<double>(p.encoder_flops));
    af.push_back(static_cast<double>(p.attention_flops));
    rep.points.push_back(p);
  }
  rep.encoder_flop_exponent = fit_power_law(xs, ef).first;
  rep.attention_flop_exponent = fit_power_law(xs, af).first;
  if (repeats > 0) std::tie(rep.time_exponent, rep.time_coefficient) = fit_power_law(xs, ts);
  return rep;
}

// ------------------------------------------------------------- gradcheck

GradCheckSetup default_gradcheck_setup() {
  GradCheckSetup s;
  s.model.d_video = 8;
  s.model.d_text = 8;
  s.model.dim = 16;
  s.model.num_layers = 2;
  s.model.lambda_acc = 1.0;
  s.model.lambda_spc = 1.0;
  s.data.length = 24;
  s.data.d_video = 8;
  s.data.d_query = 8;
  s.data.n_classes = 4;
  s.data.query_length = 3;
  s.data.short_min = 1;
  s.data.short_max = 2;
  s.data.medium_min = 3;
  s.data.medium_max = 5;
  s.data.long_min = 6;
  s.data.long_max = 8;
  s.data.events_per_episode = 2;
  s.data.queries_per_episode = 2;
  return s;
}

GradCheckReport gradcheck_model(const GradCheckSetup& setup, std::uint64_t seed, const GradCheckOptions& options,
                                const LossHook& hook) {
  check_compatible(setup.model, setup.data);
  Model model(setup.model, seed);
  const Episode ep = gen_episode(setup.data, seed);
  auto loss_fn = [&]() {
    Tensor loss = episode_loss(model, ep).total;
    if (hook) loss = add(loss, hook(model, loss));
    return loss;
  };
  return grad_check(loss_fn, model.params().all(), options);
}

}  // namespace hg
