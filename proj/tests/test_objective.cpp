#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "apnet/objective.hpp"
#include "support/reference.hpp"

using namespace apnet;
using testsupport::fill_uniform;
using testsupport::max_grad_error;

TEST_CASE("cross-pathway similarity values") {
  SUBCASE("hand example: single channels [1,2] vs [1,-1] over two positions") {
    Tensor u({1, 1, 1, 2});
    u[0] = 1.0;
    u[1] = 2.0;
    Tensor v({1, 1, 1, 2});
    v[0] = 1.0;
    v[1] = -1.0;
    PathwayGroup g{{&u, &v}};
    CHECK(cross_pathway_similarity({g}) == doctest::Approx(0.25).epsilon(1e-12));
  }

  SUBCASE("channel-wise orthogonal outputs give exactly zero") {
    Tensor u({1, 2, 1, 2});
    // channel 0: (1, 1); channel 1: (2, -2)
    u[0] = 1.0;
    u[1] = 1.0;
    u[2] = 2.0;
    u[3] = -2.0;
    Tensor v({1, 1, 1, 2});
    v[0] = 1.0;
    v[1] = -1.0;  // orthogonal to channel 0; <(2,-2),(1,-1)> = 4 on channel 1
    PathwayGroup g{{&u, &v}};
    const double s = cross_pathway_similarity({g});
    CHECK(s == doctest::Approx(4.0).epsilon(1e-12));  // (4/2)^2 from the second channel
    // A pathway pair orthogonal channel-by-channel:
    Tensor a({1, 1, 1, 2});
    a[0] = 1.0;
    a[1] = 1.0;
    Tensor b({1, 1, 1, 2});
    b[0] = 1.0;
    b[1] = -1.0;
    PathwayGroup g2{{&a, &b}};
    CHECK(cross_pathway_similarity({g2}) == 0.0);
  }

  SUBCASE("an all-zero pathway output zeroes the term") {
    Rng rng(3);
    Tensor u({2, 3, 4, 4});
    fill_uniform(u, rng);
    Tensor z({2, 2, 4, 4});
    PathwayGroup g{{&u, &z}};
    CHECK(cross_pathway_similarity({g}) == 0.0);
  }

  SUBCASE("non-negative on random inputs, multiple groups accumulate") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor a({2, 3, 3, 3}), b({2, 2, 3, 3}), c({2, 1, 3, 3});
      fill_uniform(a, rng);
      fill_uniform(b, rng);
      fill_uniform(c, rng);
      PathwayGroup g{{&a, &b, &c}};
      const double s = cross_pathway_similarity({g});
      CHECK(s >= 0.0);
      const double twice = cross_pathway_similarity({g, g});
      CHECK(twice == doctest::Approx(2.0 * s).epsilon(1e-12));
    }
  }

  SUBCASE("mismatched spatial dims rejected") {
    Tensor a({1, 2, 4, 4}), b({1, 2, 3, 3});
    PathwayGroup g{{&a, &b}};
    CHECK_THROWS_AS(cross_pathway_similarity({g}), std::invalid_argument);
  }
}

TEST_CASE("similarity gradient matches finite differences") {
  Rng rng(7);
  for (int trial = 0; trial < 6; ++trial) {
    Tensor a({2, 3, 3, 3}), b({2, 2, 3, 3}), c({2, 1, 3, 3});
    fill_uniform(a, rng);
    fill_uniform(b, rng);
    fill_uniform(c, rng);
    auto scalar = [&]() {
      PathwayGroup g{{&a, &b, &c}};
      return cross_pathway_similarity({g});
    };
    PathwayGroup g{{&a, &b, &c}};
    std::vector<std::vector<Tensor>> grads;
    cross_pathway_similarity({g}, &grads);
    REQUIRE(grads.size() == 1);
    REQUIRE(grads[0].size() == 3);
    CHECK(max_grad_error(a, grads[0][0], scalar, 1e-6) < 1e-4);
    CHECK(max_grad_error(b, grads[0][1], scalar, 1e-6) < 1e-4);
    CHECK(max_grad_error(c, grads[0][2], scalar, 1e-6) < 1e-4);
  }
}

TEST_CASE("gradient descent on the similarity alone is non-increasing") {
  Rng rng(9);
  Tensor a({1, 3, 4, 4}), b({1, 2, 4, 4});
  fill_uniform(a, rng);
  fill_uniform(b, rng);
  double prev = -1.0;
  for (int step = 0; step < 100; ++step) {
    PathwayGroup g{{&a, &b}};
    std::vector<std::vector<Tensor>> grads;
    const double s = cross_pathway_similarity({g}, &grads);
    if (step > 0) CHECK(s <= prev + 1e-12);
    prev = s;
    a.axpy_(-1e-2, grads[0][0]);
    b.axpy_(-1e-2, grads[0][1]);
  }
  CHECK(prev >= 0.0);
}

TEST_CASE("total loss") {
  Rng rng(11);
  auto make_logits = [&](std::int64_t n, std::int64_t c) {
    Tensor t({n, c});
    fill_uniform(t, rng, -2.0, 2.0);
    return t;
  };
  const std::vector<int> labels = {0, 2, 1, 2};

  SUBCASE("lambda = 0 sums the head losses exactly") {
    LossConfig cfg;
    cfg.similarity_weight = 0.0;
    const std::vector<Tensor> logits = {make_logits(4, 3), make_logits(4, 3)};
    const LossBreakdown b = total_loss(logits, labels, /*similarity=*/123.0, cfg);
    CHECK(b.total == b.head_losses[0] + b.head_losses[1]);
  }

  SUBCASE("default coupling follows the weight decay") {
    LossConfig cfg;
    cfg.weight_decay = 1e-4;
    const std::vector<Tensor> logits = {make_logits(4, 3)};
    const LossBreakdown b = total_loss(logits, labels, 2.0, cfg);
    CHECK(b.lambda == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(b.total == doctest::Approx(b.head_losses[0] + 1e-5 * 2.0).epsilon(1e-12));
    LossConfig changed = cfg;
    changed.weight_decay = 2e-4;  // schedule-aware: lambda follows
    CHECK(total_loss(logits, labels, 2.0, changed).lambda == doctest::Approx(2e-5).epsilon(1e-12));
  }

  SUBCASE("one-hot-perfect logits with zero similarity give exactly zero") {
    Tensor logits({4, 3});
    for (std::size_t i = 0; i < labels.size(); ++i)
      logits.at(static_cast<std::int64_t>(i), labels[i]) = 1e4;
    LossConfig cfg;
    const LossBreakdown b = total_loss({logits, logits}, labels, 0.0, cfg);
    CHECK(b.total == 0.0);
  }

  SUBCASE("non-finite components abort") {
    Tensor logits({4, 3});
    logits[0] = std::numeric_limits<double>::quiet_NaN();
    LossConfig cfg;
    CHECK_THROWS_AS(total_loss({logits}, labels, 0.0, cfg), std::runtime_error);
    Tensor fine = make_logits(4, 3);
    CHECK_THROWS_AS(total_loss({fine}, labels, std::numeric_limits<double>::infinity(), cfg),
                    std::runtime_error);
  }

  SUBCASE("permutation-equivariant over the batch") {
    LossConfig cfg;
    Tensor logits = make_logits(4, 3);
    const LossBreakdown b = total_loss({logits}, labels, 0.0, cfg);
    Tensor permuted({4, 3});
    const std::vector<int> perm = {2, 0, 3, 1};
    std::vector<int> plabels(4);
    for (int i = 0; i < 4; ++i) {
      plabels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
      for (int c = 0; c < 3; ++c)
        permuted.at(i, c) = logits.at(perm[static_cast<std::size_t>(i)], c);
    }
    const LossBreakdown pb = total_loss({permuted}, plabels, 0.0, cfg);
    CHECK(pb.total == doctest::Approx(b.total).epsilon(1e-12));
  }

  SUBCASE("cross-entropy gradient matches finite differences") {
    Tensor logits = make_logits(4, 3);
    Tensor dlogits;
    cross_entropy(logits, labels, 0.1, &dlogits);
    auto scalar = [&]() { return cross_entropy(logits, labels, 0.1, nullptr); };
    CHECK(max_grad_error(logits, dlogits, scalar, 1e-6) < 1e-4);
  }
}
