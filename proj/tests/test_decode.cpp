#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <json.hpp>

#include "hg/decode.hpp"

using namespace hg;

namespace {

Proposal prop(double s, double e, double score, std::size_t level = 0, std::size_t token = 0) {
  return {s, e, score, level, token};
}

}  // namespace

TEST_CASE("proposal formula") {
  LevelPrediction lv;
  lv.stride = 2;
  lv.scores.assign(6, 0.0);
  lv.offsets.assign(6, {0.0, 0.0});
  lv.scores[4] = 0.7;
  lv.offsets[4] = {1.0, 2.0};
  auto props = make_proposals({lv}, 0.001, 100.0);
  REQUIRE(props.size() == 1);
  CHECK(props[0].t_s == 6.0);
  CHECK(props[0].t_e == 12.0);
  CHECK(props[0].score == 0.7);
  CHECK(props[0].level == 0);
  CHECK(props[0].token == 4);

  lv.offsets[4] = {0.0, 0.0};
  CHECK(make_proposals({lv}, 0.001, 100.0).empty());

  lv.offsets[4] = {1.0, 2.0};
  for (auto& s : lv.scores) s = 0.99;
  CHECK(make_proposals({lv}, 1.0, 100.0).empty());

  // Clamped to the video; a proposal entirely past the end vanishes.
  LevelPrediction edge;
  edge.stride = 4;
  edge.scores = {0.5, 0.5};
  edge.offsets = {{3.0, 1.0}, {0.5, 9.0}};
  auto clamped = make_proposals({edge}, 0.001, 10.0);
  REQUIRE(clamped.size() == 2);
  CHECK(clamped[0].t_s == 0.0);
  CHECK(clamped[0].t_e == 4.0);
  CHECK(clamped[1].t_s == 2.0);
  CHECK(clamped[1].t_e == 10.0);
  edge.scores = {0.0, 0.5};
  edge.offsets = {{0, 0}, {-4.0, 9.0}};
  CHECK(make_proposals({edge}, 0.001, 4.0).empty());
}

TEST_CASE("proposals are collected across levels") {
  LevelPrediction a, b;
  a.stride = 1;
  a.scores = {0.2, 0.3};
  a.offsets = {{0.5, 0.5}, {0.5, 0.5}};
  b.stride = 2;
  b.scores = {0.4};
  b.offsets = {{0.5, 1.5}};
  auto props = make_proposals({a, b}, 0.001, 4.0);
  REQUIRE(props.size() == 3);
  CHECK(props[2].level == 1);
  CHECK(props[2].t_s == 0.0);
  CHECK(props[2].t_e == 3.0);
}

TEST_CASE("exact offsets reconstruct the ground truth") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const double gs = static_cast<double>(rng() % 20), ge = gs + 1 + static_cast<double>(rng() % 20);
    const std::size_t t = static_cast<std::size_t>((gs + ge) / 2);
    LevelPrediction lv;
    lv.stride = 1;
    lv.scores.assign(t + 1, 0.0);
    lv.offsets.assign(t + 1, {0.0, 0.0});
    lv.scores[t] = 0.9;
    lv.offsets[t] = {static_cast<double>(t) - gs, ge - static_cast<double>(t)};
    auto props = make_proposals({lv}, 0.001, 64.0);
    REQUIRE(props.size() == 1);
    CHECK(tiou(props[0], GroundTruth{gs, ge}) == 1.0);
  }
}

TEST_CASE("temporal IoU") {
  CHECK(tiou(1, 5, 1, 5) == 1.0);
  CHECK(tiou(0, 1, 2, 3) == 0.0);
  CHECK(tiou(0, 1, 1, 2) == 0.0);
  CHECK(tiou(0, 2, 1, 3) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(tiou(0, 4, 1, 2) == 0.25);
  CHECK_THROWS_AS(tiou(2, 2, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(tiou(0, 1, 3, 2), std::invalid_argument);
}

TEST_CASE("soft-NMS") {
  std::vector<Proposal> disjoint{prop(0, 1, 0.3), prop(2, 3, 0.9), prop(4, 5, 0.6), prop(6, 7, 0.1)};
  auto out = soft_nms(disjoint, 0.5, 10);
  REQUIRE(out.size() == 4);
  CHECK(out[0].score == 0.9);
  CHECK(out[1].score == 0.6);
  CHECK(out[2].score == 0.3);
  CHECK(out[3].score == 0.1);
  CHECK(soft_nms(disjoint, 0.5, 2).size() == 2);

  auto two = soft_nms({prop(2, 6, 0.8, 0, 1), prop(2, 6, 0.9, 0, 0)}, 0.5, 5);
  REQUIRE(two.size() == 2);
  CHECK(two[0].score == 0.9);
  CHECK(two[1].score == doctest::Approx(0.8 * std::exp(-2.0)).epsilon(1e-14));
  CHECK(two[1].score == doctest::Approx(0.1083).epsilon(1e-3));

  CHECK(soft_nms({}, 0.5, 5).empty());

  // Tiny sigma drives every overlapping proposal to zero.
  auto hard = soft_nms({prop(0, 4, 0.9), prop(1, 5, 0.8), prop(10, 12, 0.5)}, 1e-4, 5);
  REQUIRE(hard.size() == 3);
  CHECK(hard[0].score == 0.9);
  CHECK(hard[1].score == 0.5);
  CHECK(hard[2].score < 1e-100);
}

TEST_CASE("soft-NMS never raises a score and breaks ties deterministically") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 50), sc(0.01, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Proposal> ps;
    for (std::size_t i = 0; i < 12; ++i) {
      const double a = u(rng);
      ps.push_back(prop(a, a + 1 + u(rng) / 5, sc(rng), i % 3, i));
    }
    auto out = soft_nms(ps, 0.5, 12);
    REQUIRE(out.size() == 12);
    for (const auto& o : out) {
      const auto& orig = ps[o.token];
      CHECK(o.score <= orig.score);
    }
    for (std::size_t i = 1; i < out.size(); ++i) CHECK_FALSE(proposal_before(out[i], out[i - 1]));
    auto shuffled = ps;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto again = soft_nms(shuffled, 0.5, 12);
    for (std::size_t i = 0; i < 12; ++i) CHECK(again[i].token == out[i].token);
  }
  // Equal scores: earlier start, then lower level, then lower token.
  auto tie = soft_nms({prop(5, 6, 0.5, 1, 0), prop(5, 6.5, 0.5, 0, 3), prop(1, 2, 0.5, 2, 9)}, 0.5, 3);
  CHECK(tie[0].t_s == 1.0);
  CHECK(tie[1].level == 0);
}

TEST_CASE("recall at k and theta") {
  std::vector<GroundTruth> gt{{0, 10}, {0, 10}, {0, 10}};
  // tIoU 1.0, 0.4 and 0.2 against (0,10).
  std::vector<std::vector<Proposal>> preds{{prop(0, 10, 0.9)}, {prop(0, 4, 0.9)}, {prop(0, 2, 0.9)}};
  CHECK(recall_at(preds, gt, 1, 0.3) == doctest::Approx(2.0 / 3.0));
  CHECK(recall_at(preds, gt, 1, 0.5) == doctest::Approx(1.0 / 3.0));

  std::vector<std::vector<Proposal>> perfect{{prop(0, 10, 1)}, {prop(0, 10, 1)}, {prop(0, 10, 1)}};
  auto t = recall_table(perfect, gt);
  CHECK(t.r1_03 == 100.0);
  CHECK(t.r5_05 == 100.0);
  CHECK(t.average() == 100.0);

  std::vector<std::vector<Proposal>> miss{{prop(20, 30, 1)}, {}, {prop(11, 12, 1)}};
  CHECK(recall_table(miss, gt).average() == 0.0);

  CHECK_THROWS_AS(recall_at(preds, gt, 0, 0.3), std::invalid_argument);
  CHECK_THROWS_AS(recall_at(preds, gt, 1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(recall_at(preds, {{0, 1}}, 1, 0.3), std::invalid_argument);
}

TEST_CASE("recall is monotone in k and theta") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 40);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<GroundTruth> gt;
    std::vector<std::vector<Proposal>> preds;
    for (int q = 0; q < 10; ++q) {
      const double a = u(rng);
      gt.push_back({a, a + 1 + u(rng) / 4});
      std::vector<Proposal> ps;
      const std::size_t n = rng() % 8;
      for (std::size_t i = 0; i < n; ++i) {
        const double b = u(rng);
        ps.push_back(prop(b, b + 1 + u(rng) / 4, 1.0 - 0.1 * static_cast<double>(i)));
      }
      preds.push_back(ps);
    }
    for (double th : {0.1, 0.3, 0.5, 0.7}) {
      double prev = -1;
      for (std::size_t k = 1; k <= 8; ++k) {
        const double r = recall_at(preds, gt, k, th);
        CHECK(r >= prev);
        prev = r;
      }
    }
    for (std::size_t k : {1, 5}) {
      double prev = 2;
      for (double th : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        const double r = recall_at(preds, gt, k, th);
        CHECK(r <= prev);
        prev = r;
      }
    }
  }
}

TEST_CASE("prediction dump") {
  std::ostringstream os;
  write_predictions(os, {"ep1_q0", "ep1_q1"}, {{prop(1, 2, 0.5), prop(3, 4.5, 0.25)}, {}});
  std::istringstream is(os.str());
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(is, line)) rows.push_back(nlohmann::json::parse(line));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0]["query_id"] == "ep1_q0");
  CHECK(rows[0]["topk"].size() == 2);
  CHECK(rows[0]["topk"][1][1].get<double>() == 4.5);
  CHECK(rows[1]["topk"].empty());
  CHECK(format_recall_table(RecallTable{10, 20, 30, 40}).find("25.00") != std::string::npos);

  DecodeConfig c;
  c.sigma = 0;
  CHECK_THROWS(c.validate());
}
