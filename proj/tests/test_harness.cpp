#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "hg/harness.hpp"

using namespace hg;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "hg_harness_test";
  fs::create_directories(dir);
  return (dir / name).string();
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.warmup_steps = 2;
  t.lr = 3e-3;
  return t;
}

bool same_table(const RecallTable& a, const RecallTable& b) {
  return a.r1_03 == b.r1_03 && a.r1_05 == b.r1_05 && a.r5_03 == b.r5_03 && a.r5_05 == b.r5_05;
}

bool same_predictions(const EvalResult& a, const EvalResult& b) {
  if (a.predictions.size() != b.predictions.size() || a.query_ids != b.query_ids) return false;
  for (std::size_t q = 0; q < a.predictions.size(); ++q) {
    const auto &pa = a.predictions[q], &pb = b.predictions[q];
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
      if (pa[i].t_s != pb[i].t_s || pa[i].t_e != pb[i].t_e || pa[i].score != pb[i].score) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("target assignment") {
  auto tg = assign_targets(8, 1, {2.0, 5.0});
  CHECK(tg.positives == std::vector<std::size_t>{2, 3, 4});
  CHECK(tg.labels == std::vector<double>{0, 0, 1, 1, 1, 0, 0, 0});
  CHECK(tg.target.start == 2.0);
  CHECK(tg.target.end == 5.0);

  // Stride 4: centres at 2, 6, 10, 14.
  auto coarse = assign_targets(4, 4, {5.0, 11.0});
  CHECK(coarse.positives == std::vector<std::size_t>{1, 2});
  CHECK(coarse.target.start == 1.25);
  CHECK(coarse.target.end == 2.75);

  // A short event between centres has no positive at this level.
  CHECK(assign_targets(4, 4, {3.0, 5.0}).positives.empty());
}

TEST_CASE("smoke training writes a loadable checkpoint") {
  auto setup = default_gradcheck_setup();
  auto train_set = gen_dataset(setup.data, 1, 4);
  auto eval_set = gen_dataset(setup.data, 100, 3);
  Model model(setup.model, 5);
  TrainConfig cfg = quick(1);
  std::ostringstream trace;
  auto res = train(model, cfg, train_set, eval_set, DecodeConfig{}, &trace, 1);
  REQUIRE(res.trace.size() == 1);
  CHECK(std::isfinite(res.trace[0].loss.total));
  auto line = nlohmann::json::parse(trace.str().substr(0, trace.str().find('\n')));
  CHECK(line["epoch"] == 1);

  const auto path = scratch("smoke.ckpt");
  save_model(path, model);
  Model back = load_model(path);
  CHECK(back.config() == model.config());
  const auto a = evaluate(model, eval_set, DecodeConfig{}, 1);
  const auto b = evaluate(back, eval_set, DecodeConfig{}, 1);
  CHECK(same_table(a.table, b.table));
  CHECK(same_predictions(a, b));
  // Repeated evaluation, and a different worker count, change nothing.
  CHECK(same_predictions(a, evaluate(back, eval_set, DecodeConfig{}, 3)));

  GenConfig wrong = setup.data;
  wrong.d_video = setup.model.d_video + 1;
  CHECK_THROWS(check_compatible(model.config(), wrong));
  CHECK_THROWS(train(model, cfg, {}, eval_set, DecodeConfig{}, nullptr, 1));
}

TEST_CASE("contrastive terms are exactly zero when switched off") {
  auto setup = default_gradcheck_setup();
  setup.model.lambda_acc = 0.0;
  setup.model.lambda_spc = 0.0;
  auto data = gen_dataset(setup.data, 3, 4);
  Model model(setup.model, 2);
  TrainConfig cfg = quick(2);
  cfg.eval_every = 0;
  auto res = train(model, cfg, data, {}, DecodeConfig{}, nullptr, 1);
  for (const auto& r : res.trace) {
    CHECK(r.loss.acc == 0.0);
    CHECK(r.loss.spc == 0.0);
    CHECK(r.loss.cls > 0.0);
  }
}

TEST_CASE("training is deterministic in the seed") {
  auto setup = default_gradcheck_setup();
  auto data = gen_dataset(setup.data, 9, 4);
  auto eval_set = gen_dataset(setup.data, 90, 2);
  auto run = [&](std::uint64_t seed) {
    Model m(setup.model, seed);
    TrainConfig cfg = quick(2);
    cfg.seed = seed;
    train(m, cfg, data, eval_set, DecodeConfig{}, nullptr, 2);
    return m;
  };
  Model a = run(4), b = run(4), c = run(5);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    same = same && a.params().all()[i].tensor.to_vector() == b.params().all()[i].tensor.to_vector();
    differs = differs || a.params().all()[i].tensor.to_vector() != c.params().all()[i].tensor.to_vector();
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("training reduces the loss on the desk task") {
  GenConfig data;  // default desk generator
  ModelConfig mc;
  mc.d_video = data.d_video;
  mc.d_text = data.d_query;
  auto train_set = gen_dataset(data, 11, 24);
  for (std::uint64_t seed : {1, 2, 3}) {
    Model m(mc, seed);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.eval_every = 0;
    cfg.seed = seed;
    cfg.warmup_steps = 10;
    auto res = train(m, cfg, train_set, {}, DecodeConfig{}, nullptr, 1);
    INFO("seed " << seed << " epoch1 " << res.trace.front().loss.total << " epoch5 " << res.trace.back().loss.total);
    CHECK(res.trace.back().loss.total < res.trace.front().loss.total);
  }
}

TEST_CASE("oracle and random baselines") {
  GenConfig data;
  auto eps = gen_dataset(data, 20, 10);
  auto oracle = evaluate_oracle(eps);
  CHECK(oracle.table.r1_03 == 100.0);
  CHECK(oracle.table.r1_05 == 100.0);
  CHECK(oracle.table.r5_03 == 100.0);
  CHECK(oracle.table.r5_05 == 100.0);

  auto base = random_baseline(eps, 1000, 1);
  CHECK(base.r1_05 > 0.0);
  CHECK(base.r1_05 < 20.0);
  CHECK(base.r1_03 >= base.r1_05);
  CHECK(base.r5_05 >= base.r1_05);
  CHECK(same_table(base, random_baseline(eps, 1000, 1)));
}

TEST_CASE("every parameter receives gradient from the full objective") {
  auto setup = default_gradcheck_setup();
  Model m(setup.model, 3);
  auto ep = gen_episode(setup.data, 3);
  auto loss = episode_loss(m, ep);
  CHECK(loss.parts.acc > 0.0);
  CHECK(loss.parts.spc_evaluated > 0);
  loss.total.backward();
  for (const auto& p : m.params().all()) {
    double n2 = 0;
    for (double g : p.tensor.grad()) n2 += g * g;
    INFO(p.name);
    CHECK(n2 > 0.0);
  }
}

TEST_CASE("model gradient check passes and catches an injected bug") {
  auto setup = default_gradcheck_setup();
  GradCheckOptions opts;
  opts.max_entries = 12;
  auto rep = gradcheck_model(setup, 1, opts);
  INFO(rep.to_string());
  CHECK(rep.passed());
  Model m(setup.model, 1);
  REQUIRE(rep.entries.size() == m.params().size());
  for (std::size_t i = 0; i < rep.entries.size(); ++i) CHECK(rep.entries[i].name == m.params().all()[i].name);

  // A term whose backward doubles the true gradient of one weight.
  const std::string target = "head.cls.2.bias";
  LossHook bug = [&](const Model& model, const Tensor&) {
    const Tensor w = model.params().get(target);
    return make_result(
        {}, {0.5 * std::pow(w.to_vector()[0], 2)}, {w},
        [](Node& n) {
          auto& p = *n.parents[0];
          p.ensure_grad();
          p.grad[0] += 2.0 * n.grad[0] * p.data[0];
        },
        "buggy_square");
  };
  auto bad = gradcheck_model(setup, 1, opts, bug);
  CHECK_FALSE(bad.passed());
  CHECK(bad.failures() == std::vector<std::string>{target});
}

TEST_CASE("ablation variants") {
  ModelConfig base;
  auto v = ablation_variants(base);
  REQUIRE(v.size() == 8);
  std::size_t arch = 0;
  for (const auto& x : v) arch += x.architectural;
  CHECK(arch == 4);
  CHECK(v.back().model == base);
  const std::size_t full = Model(base, 1).params().scalar_count();
  CHECK(Model(v[3].model, 1).params().scalar_count() < full);
  CHECK(v[4].model.lambda_acc == 0.0);
  CHECK(v[4].model.lambda_spc == 0.0);
}

TEST_CASE("all ablation variants run on a smoke dataset") {
  auto setup = default_gradcheck_setup();
  auto train_set = gen_dataset(setup.data, 1, 3);
  auto eval_set = gen_dataset(setup.data, 50, 2);
  TrainConfig cfg = quick(1);
  auto res = ablate(setup.model, cfg, train_set, eval_set, DecodeConfig{}, {1, 2}, 2);
  REQUIRE(res.rows.size() == 8);
  for (const auto& r : res.rows) CHECK(r.per_seed.size() == 2);
  CHECK(res.full_model_wins() <= 4);
  CHECK(res.to_table().find("w/o Gates") != std::string::npos);
  std::istringstream lines(res.to_jsonl());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    CHECK(nlohmann::json::parse(line).is_object());
    ++n;
  }
  CHECK(n >= 8);
}

TEST_CASE("scaling report") {
  ModelConfig c;
  c.dim = 32;
  auto rep = bench_scaling(c, {1024, 2048, 4096, 8192}, 0, 1);
  REQUIRE(rep.points.size() == 4);
  for (std::size_t i = 1; i < 4; ++i) {
    CHECK(rep.points[i].encoder_flops > rep.points[i - 1].encoder_flops);
    CHECK(rep.points[i].attention_flops > rep.points[i - 1].attention_flops);
  }
  const double enc = static_cast<double>(rep.points[3].encoder_flops) / static_cast<double>(rep.points[2].encoder_flops);
  const double att =
      static_cast<double>(rep.points[3].attention_flops) / static_cast<double>(rep.points[2].attention_flops);
  CHECK(enc <= 2.2);
  CHECK(att >= 3.5);
  CHECK(rep.encoder_flop_exponent < 1.05);
  CHECK(rep.attention_flop_exponent > 1.5);
  CHECK_THROWS(bench_scaling(c, {1024, 512, 2048, 4096}, 0, 1));
  CHECK_THROWS(bench_scaling(c, {1024, 2048, 4096}, 0, 1));

  auto [slope, coef] = fit_power_law({1, 2, 4, 8}, {3, 12, 48, 192});
  CHECK(slope == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(coef == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("config sections round-trip") {
  TrainConfig t;
  t.lr = 5e-4;
  t.epochs = 7;
  t.checkpoint_path = "x.ckpt";
  KeyValues kv;
  t.to_kv(kv);
  auto back = TrainConfig::from_kv(KeyValues::parse(kv.to_text()));
  CHECK(back.lr == t.lr);
  CHECK(back.epochs == 7);
  CHECK(back.checkpoint_path == "x.ckpt");
  TrainConfig bad = t;
  bad.lr = 0;
  CHECK_THROWS(bad.validate());
  bad = t;
  bad.epochs = 0;
  CHECK_THROWS(bad.validate());

  ExperimentConfig e;
  e.train_episodes = 17;
  e.model.dim = 24;
  e.bench_lengths = {8, 16, 32, 64};
  auto text = e.to_kv().to_text();
  auto e2 = ExperimentConfig::from_kv(KeyValues::parse(text));
  CHECK(e2.to_kv().to_text() == text);
  CHECK(e2.train_episodes == 17);
  CHECK(e2.model.dim == 24);
}
