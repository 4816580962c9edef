#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "apnet/augment.hpp"
#include "apnet/image.hpp"
#include "support/reference.hpp"

using namespace apnet;
using testsupport::bitwise_equal;

namespace {

Tensor random_image(Rng& rng, std::int64_t c = 3, std::int64_t h = 8, std::int64_t w = 8) {
  Tensor img({c, h, w});
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform();
  return img;
}

std::vector<double> sorted_pixels(const Tensor& t) {
  std::vector<double> v(t.data(), t.data() + t.numel());
  std::sort(v.begin(), v.end());
  return v;
}

// Rebuilds a 4x4 single-channel image from its four 2x2 tiles placed by a
// permutation; used to enumerate every possible grid-shuffle outcome.
Tensor place_tiles(const Tensor& img, const std::vector<int>& perm) {
  Tensor out({1, 4, 4});
  for (int t = 0; t < 4; ++t) {
    const int src = perm[static_cast<std::size_t>(t)];
    const std::int64_t dy = (t / 2) * 2, dx = (t % 2) * 2;
    const std::int64_t sy = (src / 2) * 2, sx = (src % 2) * 2;
    for (std::int64_t y = 0; y < 2; ++y)
      for (std::int64_t x = 0; x < 2; ++x) out.at(0, dy + y, dx + x) = img.at(0, sy + y, sx + x);
  }
  return out;
}

}  // namespace

TEST_CASE("gray blend") {
  Rng rng(11);
  Tensor img = random_image(rng);

  SUBCASE("alpha 0 is the identity, bitwise") {
    Rng r(1);
    CHECK(bitwise_equal(apply_policy(img, PolicySpec::gray(0.0), r), img));
  }
  SUBCASE("alpha 1 makes the channels pairwise equal") {
    Rng r(2);
    Tensor out = apply_policy(img, PolicySpec::gray(1.0), r);
    for (std::int64_t y = 0; y < out.dim(1); ++y)
      for (std::int64_t x = 0; x < out.dim(2); ++x) {
        CHECK(out.at(0, y, x) == doctest::Approx(out.at(1, y, x)).epsilon(1e-15));
        CHECK(out.at(1, y, x) == doctest::Approx(out.at(2, y, x)).epsilon(1e-15));
      }
  }
  SUBCASE("alpha outside [0,1] rejected") {
    Rng r(3);
    CHECK_THROWS_AS(apply_policy(img, PolicySpec::gray(1.2), r), std::invalid_argument);
  }
}

TEST_CASE("grid shuffle") {
  SUBCASE("g=1 is the identity, bitwise") {
    Rng rng(5);
    Tensor img = random_image(rng);
    Rng r(7);
    CHECK(bitwise_equal(apply_policy(img, PolicySpec::grid_shuffle(1), r), img));
  }

  SUBCASE("g=2 on 4x4 lands on one of the 24 tile permutations, same pixel multiset") {
    Tensor img({1, 4, 4});
    for (std::int64_t i = 0; i < 16; ++i) img[i] = static_cast<double>(i) / 16.0;
    // Oracle: enumerate all 4! tile placements.
    std::vector<Tensor> expected;
    std::vector<int> perm = {0, 1, 2, 3};
    do {
      expected.push_back(place_tiles(img, perm));
    } while (std::next_permutation(perm.begin(), perm.end()));
    REQUIRE(expected.size() == 24);

    Rng r(123);
    Tensor out = apply_policy(img, PolicySpec::grid_shuffle(2), r);
    bool member = false;
    for (const Tensor& e : expected) member = member || bitwise_equal(out, e);
    CHECK(member);
    CHECK(sorted_pixels(out) == sorted_pixels(img));
  }

  SUBCASE("pixel multiset conserved whenever g divides both dims") {
    Rng rng(9);
    for (int g : {2, 3, 4, 6}) {
      Tensor img = random_image(rng, 3, 12, 12);
      Rng r(Rng::mix(31, static_cast<std::uint64_t>(g)));
      Tensor out = apply_policy(img, PolicySpec::grid_shuffle(g), r);
      CHECK(sorted_pixels(out) == sorted_pixels(img));
    }
  }

  SUBCASE("non-divisible dims go through reflect-pad and keep the shape") {
    Rng rng(13);
    Tensor img = random_image(rng, 3, 10, 7);
    Rng r(17);
    Tensor out = apply_policy(img, PolicySpec::grid_shuffle(3), r);
    CHECK(out.shape() == img.shape());
  }

  SUBCASE("rejected when reflect padding cannot reach a multiple of g") {
    Rng rng(15);
    Tensor img = random_image(rng, 1, 2, 2);
    Rng r(19);
    CHECK_THROWS_AS(apply_policy(img, PolicySpec::grid_shuffle(7), r), std::invalid_argument);
  }
}

TEST_CASE("multiplicative pixel noise") {
  SUBCASE("s=1.5 turns constant 0.4 into constant 0.6") {
    Tensor img = Tensor::full({3, 5, 5}, 0.4);
    Rng r(1);
    Tensor out = apply_policy(img, PolicySpec::mpn(1.5), r);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(0.6).epsilon(1e-15));
  }
  SUBCASE("clips at 1") {
    Tensor img = Tensor::full({1, 3, 3}, 0.9);
    Rng r(1);
    Tensor out = apply_policy(img, PolicySpec::mpn(2.0), r);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 1.0);
  }
  SUBCASE("non-positive scale rejected") {
    Tensor img = Tensor::full({1, 3, 3}, 0.5);
    Rng r(1);
    CHECK_THROWS_AS(apply_policy(img, PolicySpec::mpn(0.0), r), std::invalid_argument);
  }
}

TEST_CASE("blur") {
  Rng rng(21);
  Tensor img = random_image(rng);
  SUBCASE("even kernel rejected") {
    Rng r(1);
    CHECK_THROWS_AS(apply_policy(img, PolicySpec::blur(4), r), std::invalid_argument);
  }
  SUBCASE("k=1 is the identity") {
    Rng r(1);
    CHECK(bitwise_equal(apply_policy(img, PolicySpec::blur(1), r), img));
  }
  SUBCASE("edge replication keeps a constant image constant") {
    Tensor flat = Tensor::full({3, 6, 6}, 0.5);
    Rng r(1);
    Tensor out = apply_policy(flat, PolicySpec::blur(3), r);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(0.5).epsilon(1e-15));
  }
}

TEST_CASE("policy application is deterministic given the seed") {
  Rng img_rng(33);
  const std::vector<PolicySpec> policies = {
      PolicySpec::gray(0.7),          PolicySpec::blur(3),
      PolicySpec::grid_shuffle(4),    PolicySpec::mpn(0.8),
      PolicySpec::rand_augment(2, 9), PolicySpec::crop(4),
      PolicySpec::flip(),             PolicySpec::identity()};
  for (const PolicySpec& p : policies) {
    Tensor img = random_image(img_rng, 3, 12, 12);
    Rng a(999), b(999);
    CHECK(bitwise_equal(apply_policy(img, p, a), apply_policy(img, p, b)));
  }
}

TEST_CASE("rand augment stays in range and changes with n > 0") {
  Rng rng(55);
  Tensor img = random_image(rng, 3, 16, 16);
  Rng r(77);
  Tensor out = apply_policy(img, PolicySpec::rand_augment(3, 15), r);
  CHECK(out.shape() == img.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out[i] >= 0.0);
    CHECK(out[i] <= 1.0);
  }
  Rng r0(77);
  CHECK(bitwise_equal(apply_policy(img, PolicySpec::rand_augment(0, 15), r0), img));
}

TEST_CASE("deviation grading") {
  SUBCASE("searched-policy pairs order by (count, magnitude); identity is lightest") {
    std::vector<PolicySpec> graded = grade_policies(
        {PolicySpec::rand_augment(2, 9), PolicySpec::identity(), PolicySpec::rand_augment(1, 5)});
    REQUIRE(graded.size() == 3);
    CHECK(graded[0].kind == PolicyKind::Identity);
    CHECK(graded[0].level == 1);
    CHECK(graded[1].count() == 1);
    CHECK(graded[1].level == 2);
    CHECK(graded[2].count() == 2);
    CHECK(graded[2].level == 3);
  }

  SUBCASE("grid shuffle orders by grid count, smaller grid count lighter") {
    std::vector<PolicySpec> graded = grade_policies(
        {PolicySpec::grid_shuffle(7), PolicySpec::grid_shuffle(2), PolicySpec::grid_shuffle(4)});
    CHECK(graded[0].grids() == 2);
    CHECK(graded[1].grids() == 4);
    CHECK(graded[2].grids() == 7);
    for (int i = 0; i < 3; ++i) CHECK(graded[static_cast<std::size_t>(i)].level == i + 1);
  }

  SUBCASE("different families are incomparable") {
    CHECK_THROWS_AS(grade_policies({PolicySpec::gray(0.5), PolicySpec::blur(3)}),
                    IncomparablePoliciesError);
  }

  SUBCASE("equal deviation is rejected (levels must strictly increase)") {
    CHECK_THROWS_AS(grade_policies({PolicySpec::gray(0.5), PolicySpec::gray(0.5)}),
                    IncomparablePoliciesError);
  }

  SUBCASE("mixed rand-augment hyperparameters are incomparable") {
    CHECK_THROWS_AS(grade_policies({PolicySpec::rand_augment(1, 9), PolicySpec::rand_augment(2, 5)}),
                    IncomparablePoliciesError);
  }

  SUBCASE("idempotent and permutation-invariant") {
    std::vector<PolicySpec> input = {PolicySpec::mpn(1.5), PolicySpec::identity(),
                                     PolicySpec::mpn(1.2)};
    std::vector<PolicySpec> graded = grade_policies(input);
    std::vector<PolicySpec> twice = grade_policies(graded);
    REQUIRE(graded.size() == twice.size());
    for (std::size_t i = 0; i < graded.size(); ++i) {
      CHECK(graded[i].kind == twice[i].kind);
      CHECK(graded[i].level == twice[i].level);
    }
    std::vector<PolicySpec> shuffled = {input[2], input[0], input[1]};
    std::vector<PolicySpec> regraded = grade_policies(shuffled);
    for (std::size_t i = 0; i < graded.size(); ++i) {
      CHECK(regraded[i].kind == graded[i].kind);
      CHECK(regraded[i].params == graded[i].params);
    }
  }
}

TEST_CASE("view batches") {
  Rng rng(101);
  std::vector<Tensor> images;
  std::vector<int> labels;
  for (int i = 0; i < 6; ++i) {
    images.push_back(random_image(rng, 3, 8, 8));
    labels.push_back(i % 3);
  }
  const std::vector<PolicySpec> light = {PolicySpec::crop(2), PolicySpec::flip()};

  SUBCASE("no graded policy degenerates to one augmented view") {
    ViewBatch batch = make_view_batch(images, labels, {}, light, Rng(5));
    CHECK(batch.levels() == 1);
    CHECK(batch.views[0].dim(0) == 6);
    CHECK(batch.labels == labels);
  }

  SUBCASE("level 2 with gray(1) is the grayscale of the light view, per image") {
    std::vector<PolicySpec> graded = grade_policies({PolicySpec::identity(), PolicySpec::gray(1.0)});
    const Rng batch_rng(42);
    ViewBatch batch = make_view_batch(images, labels, graded, light, batch_rng);
    REQUIRE(batch.levels() == 2);
    CHECK(batch.seed == 42);
    const std::int64_t plane = 3 * 8 * 8;
    for (std::size_t i = 0; i < images.size(); ++i) {
      // Replay from the recorded seed: the light view recomputed per image,
      // then the level-2 policy on top of it.
      Tensor light_view({3, 8, 8});
      std::copy(batch.views[0].data() + static_cast<std::int64_t>(i) * plane,
                batch.views[0].data() + static_cast<std::int64_t>(i + 1) * plane, light_view.data());
      Rng replay = Rng(batch.seed).fork(Rng::mix(i, 1));
      Tensor expect = apply_policy(light_view, graded[1], replay);
      Tensor got({3, 8, 8});
      std::copy(batch.views[1].data() + static_cast<std::int64_t>(i) * plane,
                batch.views[1].data() + static_cast<std::int64_t>(i + 1) * plane, got.data());
      CHECK(bitwise_equal(expect, got));
    }
  }

  SUBCASE("labels are shared across levels") {
    std::vector<PolicySpec> graded =
        grade_policies({PolicySpec::identity(), PolicySpec::rand_augment(2, 9)});
    ViewBatch batch = make_view_batch(images, labels, graded, light, Rng(9));
    CHECK(batch.labels == labels);
    CHECK(batch.views[0].dim(0) == batch.views[1].dim(0));
  }

  SUBCASE("inputs are not mutated") {
    std::vector<Tensor> copies = images;
    std::vector<PolicySpec> graded = grade_policies({PolicySpec::identity(), PolicySpec::mpn(1.5)});
    make_view_batch(images, labels, graded, light, Rng(1));
    for (std::size_t i = 0; i < images.size(); ++i) CHECK(bitwise_equal(images[i], copies[i]));
  }

  SUBCASE("mismatched lengths rejected") {
    std::vector<int> bad_labels = {0, 1};
    CHECK_THROWS_AS(make_view_batch(images, bad_labels, {}, light, Rng(1)), std::invalid_argument);
  }

  SUBCASE("equal seeds give bitwise-equal batches") {
    std::vector<PolicySpec> graded =
        grade_policies({PolicySpec::identity(), PolicySpec::rand_augment(2, 9)});
    ViewBatch a = make_view_batch(images, labels, graded, light, Rng(77));
    ViewBatch b = make_view_batch(images, labels, graded, light, Rng(77));
    for (int j = 0; j < a.levels(); ++j)
      CHECK(bitwise_equal(a.views[static_cast<std::size_t>(j)], b.views[static_cast<std::size_t>(j)]));
  }
}
