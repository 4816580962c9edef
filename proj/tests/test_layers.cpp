#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "apnet/blocks.hpp"
#include "apnet/layers.hpp"
#include "support/reference.hpp"

using namespace apnet;
using testsupport::bitwise_equal;
using testsupport::fill_uniform;
using testsupport::max_abs_diff;
using testsupport::max_grad_error;
using testsupport::reference_conv2d;

TEST_CASE("conv2d forward equals the loop oracle") {
  Rng rng(3);
  for (int stride : {1, 2}) {
    Conv2d conv(3, 5, 3, 3, stride, 1, true, rng);
    Tensor x({2, 3, 7, 7});
    fill_uniform(x, rng);
    const Tensor got = conv.forward(x, 0, false);
    const Tensor want = reference_conv2d(x, conv.weight, &conv.bias, stride, 1);
    CHECK(max_abs_diff(got, want) < 1e-12);
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(5);
  Conv2d conv(2, 3, 3, 3, 2, 1, true, rng);
  Tensor x({2, 2, 6, 6});
  fill_uniform(x, rng);
  Tensor probe(conv.forward(x, 0, true).shape());
  fill_uniform(probe, rng);
  auto scalar = [&]() {
    const Tensor out = conv.forward(x, 0, true);
    double acc = 0.0;
    for (std::int64_t i = 0; i < out.numel(); ++i) acc += out[i] * probe[i];
    return acc;
  };
  conv.zero_grad();
  conv.forward(x, 0, true);
  const Tensor dx = conv.backward(probe, 0);
  CHECK(max_grad_error(x, dx, scalar) < 1e-4);
  CHECK(max_grad_error(conv.weight, conv.weight_grad, scalar) < 1e-4);
  CHECK(max_grad_error(conv.bias, conv.bias_grad, scalar) < 1e-4);
}

TEST_CASE("batch norm") {
  SUBCASE("training normalizes to zero mean, unit variance per channel") {
    Rng rng(7);
    BatchNorm2d bn(4, 1);
    Tensor x({8, 4, 5, 5});
    fill_uniform(x, rng, -3.0, 5.0);
    const Tensor y = bn.forward(x, 0, true);
    const std::int64_t plane = 25;
    for (std::int64_t c = 0; c < 4; ++c) {
      double sum = 0.0, sq = 0.0;
      for (std::int64_t n = 0; n < 8; ++n)
        for (std::int64_t p = 0; p < plane; ++p) {
          const double v = y.at(n, c, p / 5, p % 5);
          sum += v;
          sq += v * v;
        }
      const double mean = sum / (8 * plane);
      CHECK(std::abs(mean) < 1e-10);
      // variance comes out as sigma^2 / (sigma^2 + eps) with eps = 1e-5
      CHECK(std::abs(sq / (8 * plane) - 1.0) < 1e-4);
    }
  }

  SUBCASE("running statistics are tracked per slot and trailing slices update") {
    Rng rng(9);
    BatchNorm2d bn(6, 2);
    Tensor light({4, 6, 3, 3});
    fill_uniform(light, rng, 0.0, 1.0);
    Tensor heavy({4, 3, 3, 3});  // trailing 3 channels
    fill_uniform(heavy, rng, 5.0, 6.0);
    bn.forward(light, 0, true);
    bn.forward(heavy, 1, true);
    // Slot 0 saw the full width; slot 1 only its trailing slice moved.
    for (int c = 0; c < 3; ++c) CHECK(bn.running_mean[1][c] == 0.0);
    for (int c = 3; c < 6; ++c) CHECK(bn.running_mean[1][c] != 0.0);
    for (int c = 0; c < 6; ++c) CHECK(bn.running_mean[0][c] != 0.0);
    // Inference on the light level uses slot 0.
    const Tensor eval_out = bn.forward(light, 0, false);
    CHECK(eval_out.same_shape(light));
  }

  SUBCASE("training-mode gradients match finite differences") {
    Rng rng(11);
    BatchNorm2d bn(3, 1);
    fill_uniform(bn.gamma, rng, 0.5, 1.5);
    fill_uniform(bn.beta, rng, -0.5, 0.5);
    Tensor x({3, 3, 4, 4});
    fill_uniform(x, rng);
    Tensor probe(x.shape());
    fill_uniform(probe, rng);
    auto scalar = [&]() {
      BatchNorm2d fresh(3, 1);  // stateless check: running stats must not leak
      fresh.gamma = bn.gamma;
      fresh.beta = bn.beta;
      const Tensor out = fresh.forward(x, 0, true);
      double acc = 0.0;
      for (std::int64_t i = 0; i < out.numel(); ++i) acc += out[i] * probe[i];
      return acc;
    };
    bn.zero_grad();
    bn.forward(x, 0, true);
    const Tensor dx = bn.backward(probe, 0);
    CHECK(max_grad_error(x, dx, scalar, 1e-6) < 1e-4);
    CHECK(max_grad_error(bn.gamma, bn.gamma_grad, scalar, 1e-6) < 1e-4);
    CHECK(max_grad_error(bn.beta, bn.beta_grad, scalar, 1e-6) < 1e-4);
  }
}

TEST_CASE("relu, pooling and linear gradients") {
  Rng rng(13);

  SUBCASE("relu") {
    ReLU relu;
    Tensor x({2, 3, 4, 4});
    fill_uniform(x, rng);
    Tensor probe(x.shape());
    fill_uniform(probe, rng);
    auto scalar = [&]() {
      const Tensor out = relu.forward(x, 0, true);
      double acc = 0.0;
      for (std::int64_t i = 0; i < out.numel(); ++i) acc += out[i] * probe[i];
      return acc;
    };
    relu.forward(x, 0, true);
    const Tensor dx = relu.backward(probe, 0);
    CHECK(max_grad_error(x, dx, scalar, 1e-7) < 1e-4);
  }

  SUBCASE("global average pooling") {
    GlobalAvgPool pool;
    Tensor x({2, 3, 4, 4});
    fill_uniform(x, rng);
    const Tensor y = pool.forward(x, 0, true);
    CHECK(y.shape() == std::vector<std::int64_t>{2, 3});
    Tensor probe(y.shape());
    fill_uniform(probe, rng);
    auto scalar = [&]() {
      const Tensor out = pool.forward(x, 0, true);
      double acc = 0.0;
      for (std::int64_t i = 0; i < out.numel(); ++i) acc += out[i] * probe[i];
      return acc;
    };
    pool.forward(x, 0, true);
    const Tensor dx = pool.backward(probe, 0);
    CHECK(max_grad_error(x, dx, scalar) < 1e-4);
  }

  SUBCASE("max pooling") {
    MaxPool2d pool(3, 2, 1);
    Tensor x({2, 2, 7, 7});
    fill_uniform(x, rng);
    const Tensor y = pool.forward(x, 0, true);
    CHECK(y.dim(2) == 4);
    Tensor probe(y.shape());
    fill_uniform(probe, rng);
    pool.forward(x, 0, true);
    const Tensor dx = pool.backward(probe, 0);
    // Gradient scatters to argmax positions only; away from ties the finite
    // difference agrees.
    auto scalar = [&]() {
      const Tensor out = pool.forward(x, 0, true);
      double acc = 0.0;
      for (std::int64_t i = 0; i < out.numel(); ++i) acc += out[i] * probe[i];
      return acc;
    };
    CHECK(max_grad_error(x, dx, scalar, 1e-7) < 1e-4);
  }

  SUBCASE("linear") {
    Linear lin(6, 4, rng);
    Tensor x({3, 6});
    fill_uniform(x, rng);
    Tensor probe({3, 4});
    fill_uniform(probe, rng);
    auto scalar = [&]() {
      const Tensor out = lin.forward(x, 0, true);
      double acc = 0.0;
      for (std::int64_t i = 0; i < out.numel(); ++i) acc += out[i] * probe[i];
      return acc;
    };
    lin.zero_grad();
    lin.forward(x, 0, true);
    const Tensor dx = lin.backward(probe, 0);
    CHECK(max_grad_error(x, dx, scalar) < 1e-4);
    CHECK(max_grad_error(lin.weight, lin.weight_grad, scalar) < 1e-4);
    CHECK(max_grad_error(lin.bias, lin.bias_grad, scalar) < 1e-4);
  }
}

TEST_CASE("residual block end-to-end gradient check") {
  Rng rng(17);
  SUBCASE("standard block with projection") {
    ResidualBlock block(false, 1, {}, 4, {{3, 2, 6}, {3, 1, 6}}, rng);
    Tensor x({2, 4, 6, 6});
    fill_uniform(x, rng);
    Tensor probe(block.forward(x, 0, true).shape());
    fill_uniform(probe, rng);
    auto scalar = [&]() {
      const Tensor out = block.forward(x, 0, true);
      double acc = 0.0;
      for (std::int64_t i = 0; i < out.numel(); ++i) acc += out[i] * probe[i];
      return acc;
    };
    block.forward(x, 0, true);
    const Tensor dx = block.backward(probe, 0);
    CHECK(max_grad_error(x, dx, scalar, 1e-6) < 1e-3);
  }

  SUBCASE("pathway block routes every level shape-consistently") {
    ResidualBlock block(true, 2, {1.0, 0.5}, 4, {{3, 1, 8}, {3, 1, 8}}, rng);
    Tensor light({2, 4, 6, 6});
    fill_uniform(light, rng);
    CHECK(block.forward(light, 0, true).dim(1) == 8);
    Tensor heavy({2, 2, 6, 6});
    fill_uniform(heavy, rng);
    CHECK(block.forward(heavy, 1, true).dim(1) == 4);
  }
}
