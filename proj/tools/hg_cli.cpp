// hg: data generation, training, evaluation, ablation, gradient check and
// scaling benchmark. Exit codes: 0 ok, 1 validation failure, 2 numeric failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "hg/checkpoint.hpp"
#include "hg/harness.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value config file (defaults apply when omitted)");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--out", c.out, "output directory");
}

hg::ExperimentConfig load_config(const Common& c) {
  hg::KeyValues kv = c.config.empty() ? hg::KeyValues{} : hg::KeyValues::load(c.config);
  return hg::ExperimentConfig::from_kv(kv);
}

fs::path prepare_out(const Common& c) {
  fs::path out(c.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw hg::ConfigError("cannot create output directory " + c.out + ": " + ec.message());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

struct Splits {
  hg::Dataset train, eval;
};

// Reads <dir>/train.hgd and <dir>/eval.hgd, or generates both in memory.
Splits get_data(const hg::ExperimentConfig& cfg, std::uint64_t seed, const std::string& data_dir,
                std::size_t n_train, std::size_t n_eval) {
  Splits s;
  if (!data_dir.empty()) {
    s.train = hg::read_dataset((fs::path(data_dir) / "train.hgd").string());
    s.eval = hg::read_dataset((fs::path(data_dir) / "eval.hgd").string());
    return s;
  }
  s.train.config = s.eval.config = cfg.data;
  s.train.episodes = hg::gen_dataset(cfg.data, seed, n_train);
  s.eval.episodes = hg::gen_dataset(cfg.data, seed + cfg.eval_seed_offset, n_eval);
  return s;
}

int cmd_gen_data(const Common& c) {
  const auto cfg = load_config(c);
  const auto out = prepare_out(c);
  Splits s = get_data(cfg, c.seed, "", cfg.train_episodes, std::max<std::size_t>(1, cfg.eval_episodes));
  hg::write_dataset(s.train, (out / "train.hgd").string());
  hg::write_dataset(s.eval, (out / "eval.hgd").string());
  hg::KeyValues kv = cfg.to_kv();
  kv.set("run.seed", c.seed);
  kv.save((out / "config.txt").string());
  std::printf("wrote %zu train and %zu eval episodes to %s\n", s.train.episodes.size(), s.eval.episodes.size(),
              out.string().c_str());
  return 0;
}

int cmd_train(const Common& c, const std::string& data_dir) {
  auto cfg = load_config(c);
  const auto out = prepare_out(c);
  Splits s = get_data(cfg, c.seed, data_dir, cfg.train_episodes, cfg.eval_episodes);
  hg::check_compatible(cfg.model, s.train.config);
  cfg.train.seed = c.seed;
  cfg.train.checkpoint_path = (out / "model.ckpt").string();
  hg::Model model(cfg.model, c.seed);
  std::printf("model: %zu parameter tensors, %zu scalars\n", model.params().size(), model.params().scalar_count());

  const auto untrained = hg::evaluate(model, s.eval.episodes, cfg.decode).table;
  const auto baseline = hg::random_baseline(s.eval.episodes, cfg.baseline_proposals, c.seed);
  std::ofstream trace(out / "trace.jsonl");
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = hg::train(model, cfg.train, s.train.episodes, s.eval.episodes, cfg.decode, &trace);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::string report = "random baseline (" + std::to_string(cfg.baseline_proposals) + " proposals/query)\n" +
                       hg::format_recall_table(baseline) + "untrained model\n" + hg::format_recall_table(untrained) +
                       "trained model\n" + hg::format_recall_table(result.final_recall);
  write_text(out / "recall.txt", report);
  std::printf("%strain time %.1f s\n", report.c_str(), secs);
  return 0;
}

int cmd_eval(const Common& c, const std::string& data_dir, const std::string& ckpt) {
  const auto cfg = load_config(c);
  const auto out = prepare_out(c);
  if (ckpt.empty()) throw hg::ConfigError("eval: --checkpoint is required");
  hg::Model model = hg::load_model(ckpt);
  Splits s = get_data(cfg, c.seed, data_dir, 1, cfg.eval_episodes);
  hg::check_compatible(model.config(), s.eval.config);
  const auto res = hg::evaluate(model, s.eval.episodes, cfg.decode);
  std::ofstream preds(out / "predictions.jsonl");
  hg::write_predictions(preds, res.query_ids, res.predictions);
  const auto baseline = hg::random_baseline(s.eval.episodes, cfg.baseline_proposals, c.seed);
  const std::string report = hg::format_recall_table(res.table) + "random baseline\n" + hg::format_recall_table(baseline);
  write_text(out / "recall.txt", report);
  std::printf("%s", report.c_str());
  return 0;
}

int cmd_ablate(const Common& c) {
  auto cfg = load_config(c);
  const auto out = prepare_out(c);
  Splits s = get_data(cfg, c.seed, "", cfg.ablate_train_episodes, cfg.ablate_eval_episodes);
  hg::check_compatible(cfg.model, cfg.data);
  cfg.train.epochs = cfg.ablate_epochs;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < cfg.ablate_seeds; ++i) seeds.push_back(c.seed + i);
  const auto res = hg::ablate(cfg.model, cfg.train, s.train.episodes, s.eval.episodes, cfg.decode, seeds);
  write_text(out / "ablation.txt", res.to_table());
  write_text(out / "ablation.jsonl", res.to_jsonl());
  std::printf("%sfull model >= %zu of 4 architectural removals\n", res.to_table().c_str(), res.full_model_wins());
  return 0;
}

int cmd_gradcheck(const Common& c, double tol) {
  hg::GradCheckSetup setup = hg::default_gradcheck_setup();
  if (!c.config.empty()) {
    const auto kv = hg::KeyValues::load(c.config);
    hg::KeyValues model_kv, data_kv;
    setup.model.to_kv(model_kv);
    setup.data.to_kv(data_kv);
    model_kv.merge(kv.subset("model."));
    data_kv.merge(kv.subset("data."));
    setup.model = hg::ModelConfig::from_kv(model_kv);
    setup.data = hg::GenConfig::from_kv(data_kv);
  }
  const auto out = prepare_out(c);
  hg::GradCheckOptions opts;
  opts.tol = tol;
  opts.seed = c.seed;
  const auto rep = hg::gradcheck_model(setup, c.seed, opts);
  write_text(out / "gradcheck.txt", rep.to_string());
  std::printf("%s", rep.to_string().c_str());
  return rep.passed() ? 0 : 2;
}

int cmd_bench(const Common& c) {
  auto cfg = load_config(c);
  const auto out = prepare_out(c);
  hg::ModelConfig m = cfg.model;
  m.dim = cfg.bench_dim;
  m.validate();
  const auto rep = hg::bench_scaling(m, cfg.bench_lengths, cfg.bench_repeats, c.seed);
  write_text(out / "bench.jsonl", rep.to_jsonl());
  std::printf("%8s %16s %16s %10s\n", "length", "encoder_flops", "attention_flops", "seconds");
  for (const auto& p : rep.points) {
    std::printf("%8zu %16llu %16llu %10.4f\n", p.length, static_cast<unsigned long long>(p.encoder_flops),
                static_cast<unsigned long long>(p.attention_flops), p.seconds);
  }
  const auto& last = rep.points.back();
  std::printf("flop exponents: encoder %.3f, attention %.3f; time exponent %.3f\n", rep.encoder_flop_exponent,
              rep.attention_flop_exponent, rep.time_exponent);
  std::printf("attention/encoder FLOPs at L=%zu: %.2fx\n", last.length,
              static_cast<double>(last.attention_flops) / static_cast<double>(last.encoder_flops));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hg: hierarchical selective-scan temporal grounding"};
  app.require_subcommand(1);
  Common common;
  std::string data_dir, ckpt;
  double tol = 1e-4;

  auto* gen = app.add_subcommand("gen-data", "generate synthetic train/eval datasets");
  add_common(gen, common);
  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint and metric trace");
  add_common(tr, common);
  tr->add_option("--data", data_dir, "directory written by gen-data (generated in memory when omitted)");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, common);
  ev->add_option("--data", data_dir, "directory written by gen-data");
  ev->add_option("--checkpoint", ckpt, "checkpoint written by train");
  auto* ab = app.add_subcommand("ablate", "run the 8-variant ablation matrix");
  add_common(ab, common);
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full model loss");
  add_common(gc, common);
  gc->add_option("--tol", tol, "relative error tolerance");
  auto* be = app.add_subcommand("bench", "FLOP and wall-time scaling benchmark");
  add_common(be, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common);
    if (tr->parsed()) return cmd_train(common, data_dir);
    if (ev->parsed()) return cmd_eval(common, data_dir, ckpt);
    if (ab->parsed()) return cmd_ablate(common);
    if (gc->parsed()) return cmd_gradcheck(common, tol);
    if (be->parsed()) return cmd_bench(common);
  } catch (const hg::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
