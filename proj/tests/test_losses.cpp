#include <doctest.h>

#include <cmath>
#include <random>

#include "hg/config.hpp"
#include "hg/gradcheck.hpp"
#include "hg/losses.hpp"
#include "hg/ops.hpp"
#include "oracles.hpp"

using namespace hg;
using oracle::random_tensor;

namespace {

ContrastiveConfig no_cap(std::size_t margin = 1, double tau = 0.07) {
  ContrastiveConfig c;
  c.tau = tau;
  c.margin = margin;
  c.neg_cap = 1e9;
  return c;
}

Tensor scaled(const Tensor& t, double c) { return Tensor::from(t.shape(), scale(t, c).to_vector()); }

}  // namespace

TEST_CASE("acc loss matches the brute-force oracle") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t s = 1 + seed % 3, l = 3 + seed % 6, m = (l + s - 1) / s, d = 4;
    Tensor anchors = random_tensor({m, d}, rng), tokens = random_tensor({l, d}, rng);
    Tensor proj = random_tensor({d, 3}, rng);
    const std::size_t margin = 1 + seed % 2;
    const double tau = 0.07 + 0.1 * (seed % 3);
    const double got = acc_loss(anchors, tokens, s, no_cap(margin, tau), proj).item();
    const double want = oracle::acc_loss(anchors, tokens, s, tau, margin, proj);
    INFO("seed " << seed);
    CHECK(std::abs(got - want) < 1e-10);
    CHECK(got >= 0.0);
  }
  // The worked configuration: M=3, s=2, L=6, m=1.
  std::mt19937_64 rng(77);
  Tensor a = random_tensor({3, 4}, rng), t = random_tensor({6, 4}, rng), p = random_tensor({4, 2}, rng);
  CHECK(std::abs(acc_loss(a, t, 2, no_cap(1), p).item() - oracle::acc_loss(a, t, 2, 0.07, 1, p)) < 1e-10);
}

TEST_CASE("acc loss zero case, scale invariance and errors") {
  std::mt19937_64 rng(1);
  Tensor proj = random_tensor({4, 3}, rng);
  Tensor one = random_tensor({1, 4}, rng), toks = random_tensor({3, 4}, rng);
  CHECK(acc_loss(one, toks, 3, no_cap(5), proj).item() == 0.0);

  Tensor a = random_tensor({4, 4}, rng), t = random_tensor({8, 4}, rng);
  const double base = acc_loss(a, t, 2, no_cap(1), proj).item();
  CHECK(std::abs(acc_loss(scaled(a, 3.7), scaled(t, 3.7), 2, no_cap(1), proj).item() - base) < 1e-10);

  auto bad_tau = no_cap();
  bad_tau.tau = 0.0;
  CHECK_THROWS_AS(acc_loss(a, t, 2, bad_tau, proj), std::invalid_argument);
  CHECK_THROWS_WITH_AS(acc_loss(random_tensor({3, 4}, rng), t, 2, no_cap(), proj), doctest::Contains("expected 4"),
                       std::invalid_argument);
}

TEST_CASE("acc negatives respect the margin and the cap") {
  ContrastiveConfig c;
  c.margin = 2;
  c.neg_cap = 1.5;
  c.seed = 9;
  for (std::size_t i = 0; i < 20; ++i) {
    auto n = acc_negatives(i, 20, 2, c);
    CHECK(n.size() <= 3);
    for (std::size_t j : n) CHECK((j > i ? j - i : i - j) > 2);
    CHECK(n == acc_negatives(i, 20, 2, c));
  }
  c.neg_cap = 100;
  CHECK(acc_negatives(0, 6, 1, c) == std::vector<std::size_t>{3, 4, 5});
  ContrastiveConfig other = c;
  other.neg_cap = 1;
  other.seed = 10;
  c.neg_cap = 1;
  bool any_diff = false;
  for (std::size_t i = 0; i < 20; ++i) any_diff = any_diff || acc_negatives(i, 40, 3, c) != acc_negatives(i, 40, 3, other);
  CHECK(any_diff);
}

TEST_CASE("spc loss matches the brute-force oracle") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed + 300);
    const std::size_t l = 3 + seed % 6;
    Tensor toks = random_tensor({l, 4}, rng), proj = random_tensor({4, 3}, rng);
    // Straddle the center of token k so the segment is never empty.
    std::uniform_real_distribution<double> u(0.0, 2.0);
    const double k = static_cast<double>(rng() % l) + 0.5;
    const double a = std::max(0.0, k - u(rng)), b = std::min(static_cast<double>(l), k + 0.01 + u(rng));
    const LevelSegment seg{a, b};
    INFO("seed " << seed << " seg " << a << "," << b);
    CHECK(std::abs(spc_loss(toks, seg, no_cap(), proj).item() - oracle::spc_loss(toks, a, b, 0.07, proj)) < 1e-10);
    CHECK(std::abs(spc_loss_unpooled(toks, seg, no_cap(), proj).item() -
                   oracle::spc_loss_unpooled(toks, a, b, 0.07, proj)) < 1e-10);
  }
  std::mt19937_64 rng(5);
  Tensor toks = random_tensor({6, 4}, rng), proj = random_tensor({4, 3}, rng);
  CHECK(std::abs(spc_loss(toks, {2.0, 4.0}, no_cap(), proj).item() - oracle::spc_loss(toks, 2.0, 4.0, 0.07, proj)) <
        1e-10);
  CHECK(segment_tokens(6, {2.0, 4.0}) == std::vector<std::size_t>{2, 3});
}

TEST_CASE("spc loss special cases") {
  std::mt19937_64 rng(6);
  Tensor toks = random_tensor({5, 4}, rng), proj = random_tensor({4, 3}, rng);
  CHECK(spc_loss(toks, {0.0, 5.0}, no_cap(), proj).item() == 0.0);
  CHECK(spc_loss_unpooled(toks, {0.0, 5.0}, no_cap(), proj).item() == 0.0);

  const double single = spc_loss(toks, {2.0, 3.0}, no_cap(), proj).item();
  CHECK(std::abs(single - spc_loss_unpooled(toks, {2.0, 3.0}, no_cap(), proj).item()) < 1e-10);

  const LevelSegment seg{1.2, 3.9};
  const double base = spc_loss(toks, seg, no_cap(), proj).item();
  CHECK(std::abs(spc_loss(scaled(toks, 3.7), seg, no_cap(), proj).item() - base) < 1e-10);

  SpcStats stats;
  // Centers at 0.5, 1.5, ...: (1.6, 2.4) holds none.
  CHECK(spc_loss(toks, {1.6, 2.4}, no_cap(), proj, &stats).item() == 0.0);
  CHECK(stats.skipped == 1);
  CHECK(stats.evaluated == 0);
  spc_loss(toks, seg, no_cap(), proj, &stats);
  CHECK(stats.evaluated == 1);
}

TEST_CASE("contrastive losses stay scale invariant until the norm floor") {
  std::mt19937_64 rng(7);
  Tensor a = random_tensor({3, 4}, rng), t = random_tensor({6, 4}, rng), p = random_tensor({4, 3}, rng);
  const double base = acc_loss(a, t, 2, no_cap(1), p).item();
  // Rows are divided by sqrt(|x|^2 + eps^2), eps = 1e-8, so the relative
  // error grows like (eps/|x|)^2.
  for (double c : {1e3, 1e-2, 1e-3}) {
    CHECK(std::abs(acc_loss(scaled(a, c), scaled(t, c), 2, no_cap(1), p).item() - base) < 1e-9);
  }
  const double far = acc_loss(scaled(a, 1e-12), scaled(t, 1e-12), 2, no_cap(1), p).item();
  CHECK(std::isfinite(far));
  CHECK(std::abs(far - base) > 1e-3);
}

TEST_CASE("focal loss") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> p(7), y(7);
    for (std::size_t i = 0; i < 7; ++i) {
      p[i] = u(rng);
      y[i] = (rng() % 3 == 0) ? 1.0 : 0.0;
    }
    Tensor pt = Tensor::from({7}, p);
    CHECK(std::abs(focal_loss(pt, y).item() - oracle::focal_loss(p, y, 0.25, 2.0)) < 1e-12);
    // Logit form agrees.
    std::vector<double> z(7);
    for (std::size_t i = 0; i < 7; ++i) z[i] = std::log(p[i] / (1 - p[i]));
    CHECK(std::abs(focal_loss_logits(Tensor::from({7}, z), y).item() - oracle::focal_loss(p, y, 0.25, 2.0)) < 1e-12);

    double bce = 0;
    for (std::size_t i = 0; i < 7; ++i) bce += -(y[i] * std::log(p[i]) + (1 - y[i]) * std::log(1 - p[i]));
    bce /= 7;
    CHECK(std::abs(focal_loss(pt, y, 0.5, 0.0).item() - 0.5 * bce) < 1e-12);
  }
  const std::vector<double> y{1, 0, 1, 0};
  double prev = 1e9;
  for (double eps : {1e-2, 1e-4, 1e-6, 1e-8}) {
    const double l = focal_loss(Tensor::from({4}, {1 - eps, eps, 1 - eps, eps}), y).item();
    CHECK(l < prev);
    prev = l;
  }
  CHECK(prev < 1e-15);
  CHECK_THROWS_AS(focal_loss(Tensor::from({2}, {0.0, 0.5}), {1, 0}), std::invalid_argument);
  CHECK_THROWS_AS(focal_loss(Tensor::from({2}, {1.0, 0.5}), {1, 0}), std::invalid_argument);
  CHECK_THROWS_AS(focal_loss(Tensor::from({2}, {0.3, 0.5}), {1}), std::invalid_argument);
  // Logit form stays finite where the probability saturates.
  CHECK(std::isfinite(focal_loss_logits(Tensor::from({2}, {80.0, -80.0}), {0, 1}).item()));
}

TEST_CASE("distance-IoU loss") {
  CHECK(diou_loss({1.0, 4.0}, {1.0, 4.0}) == 0.0);
  CHECK(diou_loss({0.0, 1.0}, {2.0, 3.0}) == doctest::Approx(1.0 + 4.0 / 9.0).epsilon(1e-15));
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int i = 0; i < 50; ++i) {
    double a = u(rng), b = a + 0.1 + std::abs(u(rng)), c = u(rng), d = c + 0.1 + std::abs(u(rng));
    const double base = diou_loss({a, b}, {c, d});
    CHECK(std::abs(diou_loss({a + 10, b + 10}, {c + 10, d + 10}) - base) < 1e-12);
    CHECK(base >= 0.0);
    CHECK(base < 2.0);
    Tensor ts = Tensor::from({1}, {a}), te = Tensor::from({1}, {b});
    CHECK(std::abs(diou_loss(ts, te, {{c, d}}).item() - base) < 1e-12);
  }
  CHECK_THROWS_AS(diou_loss({1.0, 1.0}, {0.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(diou_loss({0.0, 1.0}, {3.0, 2.0}), std::invalid_argument);
}

TEST_CASE("total loss") {
  Tensor cls = Tensor::scalar(0.7), reg = Tensor::scalar(0.4), acc = Tensor::scalar(2.0), spc = Tensor::scalar(3.0);
  CHECK(total_loss(cls, reg, acc, spc, {0.0, 0.0}).item() == 0.7 + 0.4);
  CHECK(total_loss(cls, reg, acc, spc, {10.0, 1.0}).item() == doctest::Approx(0.7 + 0.4 + 20.0 + 3.0));
  CHECK(total_loss(cls, reg, acc, spc, {1.0, 0.1}).item() == doctest::Approx(1.1 + 2.0 + 0.3));
  CHECK(total_loss(cls, reg, acc, spc, {0.5, 0.6}).item() == doctest::Approx(1.1 + 1.0 + 1.8));
  // Linear in each component.
  const LossWeights w{0.5, 0.6};
  const double base = total_loss(cls, reg, acc, spc, w).item();
  CHECK(total_loss(Tensor::scalar(1.7), reg, acc, spc, w).item() - base == doctest::Approx(1.0));
  CHECK(total_loss(cls, reg, Tensor::scalar(3.0), spc, w).item() - base == doctest::Approx(0.5));
  CHECK(total_loss(cls, reg, acc, Tensor::scalar(4.0), w).item() - base == doctest::Approx(0.6));
  CHECK_THROWS_WITH_AS(total_loss(cls, Tensor::scalar(std::nan("")), acc, spc, w), doctest::Contains("reg"),
                       NumericError);
  CHECK_THROWS_WITH_AS(total_loss(cls, reg, acc, Tensor::scalar(INFINITY), w), doctest::Contains("spc"), NumericError);
}

TEST_CASE("loss gradients") {
  std::mt19937_64 rng(10);
  Tensor a = random_tensor({3, 4}, rng, 1.0, true), t = random_tensor({6, 4}, rng, 1.0, true);
  Tensor p = random_tensor({4, 3}, rng, 1.0, true);
  std::vector<Parameter> ps{{"anchors", a}, {"tokens", t}, {"proj", p}};
  auto cfg = no_cap(1, 0.5);
  auto rep = grad_check([&] { return acc_loss(a, t, 2, cfg, p); }, ps, {});
  INFO(rep.to_string());
  CHECK(rep.passed());

  std::vector<Parameter> ps2{{"tokens", t}, {"proj", p}};
  CHECK(grad_check([&] { return spc_loss(t, {1.3, 4.2}, cfg, p); }, ps2, {}).passed());
  CHECK(grad_check([&] { return spc_loss_unpooled(t, {1.3, 4.2}, cfg, p); }, ps2, {}).passed());

  Tensor z = random_tensor({6}, rng, 2.0, true);
  std::vector<Parameter> ps3{{"logits", z}};
  CHECK(grad_check([&] { return focal_loss_logits(z, {1, 0, 0, 1, 0, 0}); }, ps3, {}).passed());
  CHECK(grad_check([&] { return focal_loss(sigmoid(z), {1, 0, 0, 1, 0, 0}); }, ps3, {}).passed());

  // Overlapping and disjoint boxes, kept away from the relu kinks.
  Tensor s = Tensor::from({3}, {0.1, 2.3, -1.0}, true), e = Tensor::from({3}, {1.7, 3.9, 0.4}, true);
  std::vector<Parameter> ps4{{"start", s}, {"end", e}};
  CHECK(grad_check([&] { return diou_loss(s, e, {{0.5, 2.0}, {0.0, 1.0}, {-3.0, 2.0}}); }, ps4, {}).passed());
}
