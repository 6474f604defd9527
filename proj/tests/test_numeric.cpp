#include <gtest/gtest.h>

#include <cmath>

#include "jodie/numeric.hpp"

using namespace jodie;

namespace {

// relative error with an absolute floor for near-zero gradients
double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

Mat random_mat(std::size_t r, std::size_t c, Rng& rng) {
  Mat m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, 1.0);
  return m;
}

Vec random_vec(std::size_t n, Rng& rng) {
  Vec v(n);
  for (double& x : v) x = rng.normal(0.0, 1.0);
  return v;
}

}  // namespace

TEST(Linear, IdentityAndConstant) {
  LinearLayer id(3, 3);
  for (std::size_t k = 0; k < 3; ++k) id.w(k, k) = 1.0;
  const Vec x{1.0, -2.0, 0.5};
  EXPECT_EQ(id.forward(x), x);

  LinearLayer constant(2, 3);
  constant.b = {4.0, -1.0};
  EXPECT_EQ(constant.forward(x), (Vec{4.0, -1.0}));

  LinearGrads grads(constant);
  Vec gx;
  linear_backward(constant, x, Vec{1.0, 1.0}, grads, &gx);
  EXPECT_EQ(gx, (Vec{0.0, 0.0, 0.0}));  // zero weights propagate nothing
}

TEST(Linear, ShapeMismatchThrows) {
  LinearLayer l(2, 3);
  EXPECT_THROW(l.forward(Vec{1.0, 2.0}), InvalidArgument);
}

TEST(Linear, BackwardMatchesFiniteDifferences) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    LinearLayer layer(4, 3);
    layer.w = random_mat(4, 3, rng);
    layer.b = random_vec(4, rng);
    const Vec x = random_vec(3, rng);
    const Vec gout = random_vec(4, rng);

    LinearGrads grads(layer);
    grads.zero();
    Vec gx;
    linear_backward(layer, x, gout, grads, &gx);

    // scalar objective: dot(gout, layer(x))
    const auto loss_for_w = [&](const Vec& flat) {
      LinearLayer probe = layer;
      std::copy(flat.begin(), flat.begin() + 12, probe.w.data());
      std::copy(flat.begin() + 12, flat.end(), probe.b.begin());
      return dot(gout.data(), probe.forward(x).data(), 4);
    };
    Vec flat(16);
    std::copy_n(layer.w.data(), 12, flat.begin());
    std::copy(layer.b.begin(), layer.b.end(), flat.begin() + 12);
    const Vec fd = finite_diff_grad(loss_for_w, flat, 1e-6);
    for (std::size_t i = 0; i < 12; ++i) EXPECT_LT(rel_err(grads.w.data()[i], fd[i]), 1e-6);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_LT(rel_err(grads.b[i], fd[12 + i]), 1e-6);

    const auto loss_for_x = [&](const Vec& probe) {
      return dot(gout.data(), layer.forward(probe).data(), 4);
    };
    const Vec fdx = finite_diff_grad(loss_for_x, x, 1e-6);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(rel_err(gx[i], fdx[i]), 1e-6);
  }
}

TEST(Rnn, ZeroEverythingGivesZeroState) {
  RnnCell cell(3, 4);
  const Vec out = cell.forward(Vec(3, 0.0), Vec(4, 0.0));
  EXPECT_EQ(out, Vec(3, 0.0));
}

TEST(Rnn, OutputStaysInsideTanhRange) {
  Rng rng(3);
  RnnCell cell(5, 6);
  cell.w_state = random_mat(5, 5, rng);
  cell.w_input = random_mat(5, 6, rng);
  cell.b = random_vec(5, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec out = cell.forward(random_vec(5, rng), random_vec(6, rng));
    for (const double v : out) {
      EXPECT_GT(v, -1.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Rnn, BackwardMatchesFiniteDifferences) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    RnnCell cell(4, 5);
    cell.w_state = random_mat(4, 4, rng);
    cell.w_input = random_mat(4, 5, rng);
    cell.b = random_vec(4, rng);
    const Vec state = random_vec(4, rng);
    const Vec input = random_vec(5, rng);
    const Vec gout = random_vec(4, rng);

    const Vec out = cell.forward(state, input);
    RnnGrads grads(cell);
    grads.zero();
    Vec gstate, ginput;
    rnn_backward(cell, state, input, out, gout, grads, &gstate, &ginput);

    const std::size_t nw = 16 + 20 + 4;
    const auto pack = [&](Vec& flat) {
      flat.resize(nw + 4 + 5);
      std::copy_n(cell.w_state.data(), 16, flat.begin());
      std::copy_n(cell.w_input.data(), 20, flat.begin() + 16);
      std::copy(cell.b.begin(), cell.b.end(), flat.begin() + 36);
      std::copy(state.begin(), state.end(), flat.begin() + 40);
      std::copy(input.begin(), input.end(), flat.begin() + 44);
    };
    const auto loss = [&](const Vec& flat) {
      RnnCell probe(4, 5);
      std::copy_n(flat.begin(), 16, probe.w_state.data());
      std::copy_n(flat.begin() + 16, 20, probe.w_input.data());
      std::copy_n(flat.begin() + 36, 4, probe.b.begin());
      Vec s(flat.begin() + 40, flat.begin() + 44);
      Vec in(flat.begin() + 44, flat.end());
      return dot(gout.data(), probe.forward(s, in).data(), 4);
    };
    Vec flat;
    pack(flat);
    const Vec fd = finite_diff_grad(loss, flat, 1e-5);
    std::size_t k = 0;
    for (std::size_t i = 0; i < 16; ++i, ++k) EXPECT_LT(rel_err(grads.w_state.data()[i], fd[k]), 1e-4);
    for (std::size_t i = 0; i < 20; ++i, ++k) EXPECT_LT(rel_err(grads.w_input.data()[i], fd[k]), 1e-4);
    for (std::size_t i = 0; i < 4; ++i, ++k) EXPECT_LT(rel_err(grads.b[i], fd[k]), 1e-4);
    for (std::size_t i = 0; i < 4; ++i, ++k) EXPECT_LT(rel_err(gstate[i], fd[k]), 1e-4);
    for (std::size_t i = 0; i < 5; ++i, ++k) EXPECT_LT(rel_err(ginput[i], fd[k]), 1e-4);
  }
}

TEST(FiniteDiff, KnownGradients) {
  const auto norm_sq = [](const Vec& x) { return x[0] * x[0] + x[1] * x[1]; };
  const Vec g = finite_diff_grad(norm_sq, Vec{1.0, 2.0}, 1e-6);
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 4.0, 1e-8);

  const auto constant = [](const Vec&) { return 3.5; };
  const Vec gc = finite_diff_grad(constant, Vec{1.0, -1.0, 2.0}, 1e-6);
  EXPECT_EQ(gc, Vec(3, 0.0));
}

TEST(Scalars, L2AndSigmoid) {
  const Vec a{0.0, 3.0};
  const Vec b{4.0, 0.0};
  EXPECT_DOUBLE_EQ(l2_dist(a, b), 5.0);
  EXPECT_DOUBLE_EQ(l2_dist(a, a), 0.0);
  EXPECT_THROW(l2_dist(a, Vec{1.0}), InvalidArgument);
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(40.0), 1.0, 1e-12);
  EXPECT_NEAR(sigmoid(-40.0), 0.0, 1e-12);
}

TEST(Forward, PureAndBitwiseRepeatable) {
  Rng rng(21);
  RnnCell cell(6, 7);
  cell.w_state = random_mat(6, 6, rng);
  cell.w_input = random_mat(6, 7, rng);
  cell.b = random_vec(6, rng);
  const Vec state = random_vec(6, rng);
  const Vec input = random_vec(7, rng);
  const Vec once = cell.forward(state, input);
  const Vec twice = cell.forward(state, input);
  EXPECT_EQ(once, twice);
}
