#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "gridread/ops.hpp"
#include "gridread/rng.hpp"
#include "gridread/tensor.hpp"

using namespace gridread;
using Catch::Approx;

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;  // relative error bound for gradient checks

// Weighted sum turning a tensor-valued op into a scalar objective.
double weighted(const Tensor<double>& y, const std::vector<double>& c) {
  double s = 0;
  for (size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * c[i];
  return s;
}

std::vector<double> random_weights(size_t n, Rng& rng) {
  std::vector<double> c(n);
  for (auto& v : c) v = rng.uniform(-1, 1);
  return c;
}

// Central-difference check of an analytic gradient dL/dx.
void check_against_fd(Tensor<double>& x, const std::vector<double>& analytic,
                      const std::function<double()>& loss) {
  REQUIRE(analytic.size() == x.data.size());
  double max_rel = 0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double orig = x.data[i];
    x.data[i] = orig + kStep;
    const double lp = loss();
    x.data[i] = orig - kStep;
    const double lm = loss();
    x.data[i] = orig;
    const double fd = (lp - lm) / (2 * kStep);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
    max_rel = std::max(max_rel, std::abs(fd - analytic[i]) / denom);
  }
  CHECK(max_rel < kTol);
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

TEST_CASE("conv2d forward fixtures") {
  // All-ones 3x3 kernel over an all-ones 3x3 input, no padding -> 9.
  Tensor<double> x({1, 1, 3, 3});
  for (auto& v : x.data) v = 1;
  Tensor<double> w({1, 1, 3, 3});
  for (auto& v : w.data) v = 1;
  Tensor<double> b({1});
  auto y = conv2d_forward(x, w, b, ConvParams{1, 0, 1, 1});
  REQUIRE(y.shape == std::vector<int>({1, 1, 1, 1}));
  CHECK(y.data[0] == Approx(9.0));

  // Identity (delta) kernel with padding 1 reproduces the input.
  Tensor<double> xr({1, 1, 4, 4});
  Rng rng(1);
  for (auto& v : xr.data) v = rng.uniform(-1, 1);
  Tensor<double> wd({1, 1, 3, 3});
  wd.data[4] = 1;  // center tap
  auto yr = conv2d_forward(xr, wd, b, ConvParams{1, 1, 1, 1});
  REQUIRE(yr.shape == xr.shape);
  for (size_t i = 0; i < xr.data.size(); ++i) CHECK(yr.data[i] == Approx(xr.data[i]));

  // Bias broadcast.
  Tensor<double> b2({1});
  b2.data[0] = 0.5;
  auto yb = conv2d_forward(x, w, b2, ConvParams{1, 0, 1, 1});
  CHECK(yb.data[0] == Approx(9.5));
}

TEST_CASE("conv2d gradients match finite differences across configurations") {
  Rng rng(17);
  struct Cfg {
    int n, cin, h, w, cout, k, stride, pad, dil, groups;
  };
  const Cfg cfgs[] = {
      {1, 1, 5, 5, 1, 3, 1, 0, 1, 1}, {2, 2, 6, 6, 3, 3, 1, 1, 1, 1},
      {1, 3, 7, 5, 2, 3, 2, 1, 1, 1}, {2, 2, 5, 5, 2, 1, 1, 0, 1, 1},
      {1, 2, 7, 7, 2, 3, 1, 2, 2, 1}, {1, 4, 6, 6, 4, 3, 1, 1, 1, 4},  // depthwise
      {2, 4, 5, 5, 2, 3, 1, 1, 1, 2},                                  // grouped
      {1, 1, 9, 4, 3, 3, 2, 1, 1, 1},
  };
  for (const auto& c : cfgs) {
    Tensor<double> x = random_uniform<double>({c.n, c.cin, c.h, c.w}, -1.0, 1.0, rng);
    Tensor<double> w = random_uniform<double>({c.cout, c.cin / c.groups, c.k, c.k}, -1.0, 1.0, rng);
    Tensor<double> b = random_uniform<double>({c.cout}, -1.0, 1.0, rng);
    const ConvParams cp{c.stride, c.pad, c.dil, c.groups};
    auto y0 = conv2d_forward(x, w, b, cp);
    const auto cw = random_weights(y0.data.size(), rng);

    Tensor<double> dy(y0.shape);
    for (size_t i = 0; i < cw.size(); ++i) dy.data[i] = cw[i];
    Tensor<double> dx, dw, db;
    conv2d_backward(x, w, cp, dy, dx, dw, db);

    auto loss = [&]() { return weighted(conv2d_forward(x, w, b, cp), cw); };
    check_against_fd(x, dx.data, loss);
    check_against_fd(w, dw.data, loss);
    check_against_fd(b, db.data, loss);
  }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

TEST_CASE("batchnorm normalizes to zero mean unit variance in training") {
  Rng rng(23);
  Tensor<double> x = random_uniform<double>({4, 3, 5, 5}, -2.0, 3.0, rng);
  Tensor<double> gamma({3}), beta({3}), rm({3}), rv({3});
  for (auto& v : gamma.data) v = 1;
  for (auto& v : rv.data) v = 1;
  BatchNormCache<double> cache;
  auto y = batchnorm2d_forward(x, gamma, beta, rm, rv, true, &cache);
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    int n = 0;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
          mean += y.at4(b, c, i, j);
          ++n;
        }
    mean /= n;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) var += (y.at4(b, c, i, j) - mean) * (y.at4(b, c, i, j) - mean);
    var /= n;
    CHECK(mean == Approx(0.0).margin(1e-10));
    CHECK(var == Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("batchnorm training requires batch statistics") {
  Tensor<double> x({1, 2, 3, 3});
  Tensor<double> gamma({2}), beta({2}), rm({2}), rv({2});
  BatchNormCache<double> cache;
  CHECK_THROWS(batchnorm2d_forward(x, gamma, beta, rm, rv, true, &cache));
}

TEST_CASE("batchnorm gradients match finite differences") {
  Rng rng(29);
  for (int trial = 0; trial < 4; ++trial) {
    Tensor<double> x = random_uniform<double>({3, 2, 4, 4}, -1.0, 1.0, rng);
    Tensor<double> gamma = random_uniform<double>({2}, 0.5, 1.5, rng);
    Tensor<double> beta = random_uniform<double>({2}, -0.5, 0.5, rng);
    auto loss_cfg = [&]() {
      Tensor<double> rm({2}), rv({2});
      for (auto& v : rv.data) v = 1;
      BatchNormCache<double> cache;
      return batchnorm2d_forward(x, gamma, beta, rm, rv, true, &cache);
    };
    auto y0 = loss_cfg();
    const auto cw = random_weights(y0.data.size(), rng);

    Tensor<double> rm({2}), rv({2});
    for (auto& v : rv.data) v = 1;
    BatchNormCache<double> cache;
    batchnorm2d_forward(x, gamma, beta, rm, rv, true, &cache);
    Tensor<double> dy(y0.shape);
    for (size_t i = 0; i < cw.size(); ++i) dy.data[i] = cw[i];
    Tensor<double> dx, dgamma, dbeta;
    batchnorm2d_backward(cache, gamma, dy, true, dx, dgamma, dbeta);

    auto loss = [&]() { return weighted(loss_cfg(), cw); };
    check_against_fd(x, dx.data, loss);
    check_against_fd(gamma, dgamma.data, loss);
    check_against_fd(beta, dbeta.data, loss);
  }
}

TEST_CASE("batchnorm eval mode uses running statistics") {
  Tensor<double> x({1, 1, 1, 2});
  x.data = {2.0, 4.0};
  Tensor<double> gamma({1}), beta({1}), rm({1}), rv({1});
  gamma.data[0] = 2.0;
  beta.data[0] = 1.0;
  rm.data[0] = 2.0;
  rv.data[0] = 4.0;
  auto y = batchnorm2d_forward(x, gamma, beta, rm, rv, false,
                               static_cast<BatchNormCache<double>*>(nullptr));
  CHECK(y.data[0] == Approx(1.0).epsilon(1e-5));                       // (2-2)/2*2+1
  CHECK(y.data[1] == Approx(2.0 * 2.0 / std::sqrt(4.0 + 1e-5) + 1.0)); // (4-2)/2*2+1
}

// ---------------------------------------------------------------------------
// Activations and pooling
// ---------------------------------------------------------------------------

TEST_CASE("relu and relu6 gradients match finite differences") {
  Rng rng(31);
  for (double cap : {0.0, 6.0}) {
    // Keep samples away from the kinks at 0 and cap.
    Tensor<double> x({2, 2, 3, 3});
    for (auto& v : x.data) {
      do {
        v = rng.uniform(-3, 9);
      } while (std::abs(v) < 0.05 || (cap > 0 && std::abs(v - cap) < 0.05));
    }
    auto y0 = relu_forward(x, cap);
    const auto cw = random_weights(y0.data.size(), rng);
    Tensor<double> dy(y0.shape);
    for (size_t i = 0; i < cw.size(); ++i) dy.data[i] = cw[i];
    auto dx = relu_backward(x, dy, cap);
    auto loss = [&]() { return weighted(relu_forward(x, cap), cw); };
    check_against_fd(x, dx.data, loss);
  }
}

TEST_CASE("maxpool forward fixture and gradient") {
  Tensor<double> x({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) x.data[i] = i;  // strictly increasing, unique argmax
  PoolCache<double> cache;
  auto y = maxpool_forward(x, 2, 2, &cache);
  REQUIRE(y.shape == std::vector<int>({1, 1, 2, 2}));
  CHECK(y.data[0] == 5);
  CHECK(y.data[1] == 7);
  CHECK(y.data[2] == 13);
  CHECK(y.data[3] == 15);

  Rng rng(37);
  const auto cw = random_weights(y.data.size(), rng);
  Tensor<double> dy(y.shape);
  for (size_t i = 0; i < cw.size(); ++i) dy.data[i] = cw[i];
  auto dx = pool_backward(cache, x.shape, dy);
  auto loss = [&]() {
    PoolCache<double> c2;
    return weighted(maxpool_forward(x, 2, 2, &c2), cw);
  };
  check_against_fd(x, dx.data, loss);
}

TEST_CASE("adaptive maxpool partitions cover the input exactly") {
  Rng rng(41);
  for (int in : {6, 7, 12, 13}) {
    for (int target : {2, 3, 6}) {
      if (target > in) continue;
      Tensor<double> x = random_uniform<double>({1, 2, in, in}, -1.0, 1.0, rng);
      PoolCache<double> cache;
      auto y = adaptive_maxpool_forward(x, target, target, &cache);
      REQUIRE(y.dim(2) == target);
      REQUIRE(y.dim(3) == target);
      // Every input element must belong to some window: the max over all
      // outputs equals the max over all inputs per channel.
      for (int c = 0; c < 2; ++c) {
        double xin = -1e9, xout = -1e9;
        for (int i = 0; i < in; ++i)
          for (int j = 0; j < in; ++j) xin = std::max(xin, x.at4(0, c, i, j));
        for (int i = 0; i < target; ++i)
          for (int j = 0; j < target; ++j) xout = std::max(xout, y.at4(0, c, i, j));
        CHECK(xin == Approx(xout));
      }
    }
  }
}

TEST_CASE("adaptive maxpool gradient matches finite differences") {
  Rng rng(43);
  Tensor<double> x = random_uniform<double>({2, 2, 7, 7}, -1.0, 1.0, rng);
  PoolCache<double> cache;
  auto y = adaptive_maxpool_forward(x, 3, 3, &cache);
  const auto cw = random_weights(y.data.size(), rng);
  Tensor<double> dy(y.shape);
  for (size_t i = 0; i < cw.size(); ++i) dy.data[i] = cw[i];
  auto dx = pool_backward(cache, x.shape, dy);
  auto loss = [&]() {
    PoolCache<double> c2;
    return weighted(adaptive_maxpool_forward(x, 3, 3, &c2), cw);
  };
  check_against_fd(x, dx.data, loss);
}

// ---------------------------------------------------------------------------
// Group softmax
// ---------------------------------------------------------------------------

TEST_CASE("group softmax rows sum to one and stay in (0,1)") {
  Rng rng(47);
  Tensor<double> x = random_uniform<double>({2, 10, 3, 3}, -30.0, 30.0, rng);
  const std::vector<ChannelGroup> groups = {{0, 4}, {4, 6}};
  auto y = softmax_group_forward(x, groups);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (const auto& g : groups) {
          double s = 0;
          for (int c = g.offset; c < g.offset + g.size; ++c) {
            const double p = y.at4(n, c, i, j);
            CHECK(p > 0.0);
            CHECK(p < 1.0 + 1e-12);
            s += p;
          }
          CHECK(s == Approx(1.0).epsilon(1e-10));
        }
}

TEST_CASE("group softmax gradient matches finite differences") {
  Rng rng(53);
  for (int trial = 0; trial < 4; ++trial) {
    Tensor<double> x = random_uniform<double>({1, 7, 2, 2}, -2.0, 2.0, rng);
    const std::vector<ChannelGroup> groups = {{0, 3}, {3, 4}};
    auto y = softmax_group_forward(x, groups);
    const auto cw = random_weights(y.data.size(), rng);
    Tensor<double> dy(y.shape);
    for (size_t i = 0; i < cw.size(); ++i) dy.data[i] = cw[i];
    auto dx = softmax_group_backward(y, groups, dy);
    auto loss = [&]() { return weighted(softmax_group_forward(x, groups), cw); };
    check_against_fd(x, dx.data, loss);
  }
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

TEST_CASE("sgd single-step arithmetic") {
  Tensor<double> p({2});
  p.data = {1.0, -2.0};
  p.enable_grad();
  p.grad = {0.5, -0.5};
  std::vector<double> vel = {0.1, 0.2};
  // v <- mu*v + g + wd*p ; p <- p - lr*v
  sgd_step(p, vel, 0.1, 0.9, 0.01);
  CHECK(vel[0] == Approx(0.9 * 0.1 + 0.5 + 0.01 * 1.0));
  CHECK(vel[1] == Approx(0.9 * 0.2 - 0.5 + 0.01 * -2.0));
  CHECK(p.data[0] == Approx(1.0 - 0.1 * vel[0]));
  CHECK(p.data[1] == Approx(-2.0 - 0.1 * vel[1]));
}

TEST_CASE("sgd with momentum minimizes a quadratic bowl in under 200 steps") {
  Tensor<double> p({2});
  p.data = {3.0, -4.0};
  p.enable_grad();
  std::vector<double> vel;
  for (int step = 0; step < 200; ++step) {
    p.grad = {2 * p.data[0], 2 * p.data[1]};  // d/dp (x^2 + y^2)
    sgd_step(p, vel, 0.05, 0.9, 0.0);
  }
  CHECK(std::abs(p.data[0]) < 1e-3);
  CHECK(std::abs(p.data[1]) < 1e-3);
}

TEST_CASE("shape mismatches are rejected") {
  Tensor<double> x({1, 2, 3});
  Tensor<double> w({1, 1, 3, 3});
  Tensor<double> b({1});
  CHECK_THROWS_AS(conv2d_forward(x, w, b, ConvParams{}), ShapeError);
  Tensor<double> a({2, 2}), bb({2, 3});
  CHECK_THROWS_AS(add_inplace(a, bb), ShapeError);
}
