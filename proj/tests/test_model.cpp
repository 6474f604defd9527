#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "jodie/checkpoint.hpp"
#include "jodie/model.hpp"
#include "jodie/synth.hpp"

#include "fixtures.hpp"

using namespace jodie;

namespace {

ModelDims small_dims(EntityId users = 3, EntityId items = 3, std::int32_t f = 2,
                     std::int32_t n = 4, std::int32_t m = 4) {
  ModelDims d;
  d.n = n;
  d.m = m;
  d.num_users = users;
  d.num_items = items;
  d.feature_dim = f;
  return d;
}

Vec random_vec(std::size_t n, Rng& rng, double sd = 1.0) {
  Vec v(n);
  for (double& x : v) x = rng.normal(0.0, sd);
  return v;
}

}  // namespace

TEST(UpdateOps, ZeroParamsGiveZeroOutput) {
  const ModelParams p = ModelParams::zeros(small_dims());
  Rng rng(1);
  const Vec u = random_vec(4, rng), i = random_vec(4, rng), f = random_vec(2, rng);
  EXPECT_EQ(update_user(p, u, i, 3.0, f), Vec(4, 0.0));
  EXPECT_EQ(update_item(p, i, u, 2.0, f), Vec(4, 0.0));
}

TEST(UpdateOps, SharedAcrossEntities) {
  // two different users with identical inputs get identical updates; the cell
  // is one set of parameters, not per-entity state
  const ModelParams p = ModelParams::init(small_dims(), 5);
  Rng rng(2);
  const Vec u = random_vec(4, rng), i = random_vec(4, rng), f = random_vec(2, rng);
  const Vec a = update_user(p, u, i, 1.5, f);
  const Vec b = update_user(p, u, i, 1.5, f);
  EXPECT_EQ(a, b);
  for (const double v : a) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(UpdateOps, ShapeErrors) {
  const ModelParams p = ModelParams::init(small_dims(), 5);
  Rng rng(3);
  EXPECT_THROW(update_user(p, random_vec(3, rng), random_vec(4, rng), 1.0, random_vec(2, rng)),
               InvalidArgument);
  EXPECT_THROW(update_user(p, random_vec(4, rng), random_vec(4, rng), 1.0, random_vec(1, rng)),
               InvalidArgument);
}

TEST(Project, IdentityAtZeroDelta) {
  const ModelParams p = ModelParams::init(small_dims(), 9);
  Rng rng(4);
  const Vec u = random_vec(4, rng);
  EXPECT_EQ(project_user(p, u, 0.0), u);  // bias-free context layer, exact
  EXPECT_EQ(project_user(p, Vec(4, 0.0), 123.0), Vec(4, 0.0));
}

TEST(Project, AffineInDelta) {
  const ModelParams p = ModelParams::init(small_dims(), 10);
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec u = random_vec(4, rng);
    const double delta = std::abs(rng.normal(0.0, 2.0));
    const double a = std::abs(rng.normal(0.0, 2.0));
    const Vec base = project_user(p, u, delta);
    const Vec scaled = project_user(p, u, a * delta);
    for (std::size_t k = 0; k < 4; ++k) {
      const double lhs = scaled[k] - u[k];
      const double rhs = a * (base[k] - u[k]);
      EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST(Predict, ConstantLayerIgnoresInput) {
  ModelParams p = ModelParams::zeros(small_dims());
  for (std::size_t r = 0; r < p.theta.b.size(); ++r) p.theta.b[r] = 0.5 * (r + 1);
  Rng rng(6);
  const Vec pred = predict_item(p, random_vec(4, rng), 1, random_vec(4, rng), 2);
  for (std::size_t r = 0; r < pred.size(); ++r) EXPECT_DOUBLE_EQ(pred[r], 0.5 * (r + 1));
}

TEST(Predict, ColumnSelectionEqualsExplicitOneHot) {
  const ModelDims d = small_dims();
  const ModelParams p = ModelParams::init(d, 77);
  Rng rng(7);
  const Vec u_hat = random_vec(4, rng);
  const Vec k_dyn = random_vec(4, rng);
  for (EntityId user = 0; user < d.num_users; ++user) {
    for (EntityId prev = 0; prev < d.item_static_dim(); ++prev) {
      const Vec fast = predict_item(p, u_hat, user, k_dyn, prev);
      // brute force: materialize the one-hot blocks and run a plain mat-vec
      Vec full(d.theta_in(), 0.0);
      std::copy(u_hat.begin(), u_hat.end(), full.begin());
      full[d.n + user] = 1.0;
      std::copy(k_dyn.begin(), k_dyn.end(), full.begin() + d.n + d.user_static_dim());
      full[d.n + d.user_static_dim() + d.m + prev] = 1.0;
      const Vec slow = p.theta.forward(full);
      ASSERT_EQ(fast.size(), slow.size());
      for (std::size_t r = 0; r < fast.size(); ++r)
        EXPECT_NEAR(fast[r], slow[r], 1e-12 * std::max(1.0, std::abs(slow[r])));
    }
  }
  EXPECT_EQ(static_cast<std::int32_t>(predict_item(p, u_hat, 0, k_dyn, 0).size()),
            d.m + d.item_static_dim());
  EXPECT_THROW(predict_item(p, u_hat, d.num_users, k_dyn, 0), InvalidArgument);
  EXPECT_THROW(predict_item(p, u_hat, 0, k_dyn, d.item_static_dim()), InvalidArgument);
}

TEST(NearestItem, ExactMatchRanksFirst) {
  const ModelDims d = small_dims(3, 6, 0);
  const ModelParams p = ModelParams::init(d, 3);
  EmbeddingBank bank(p);
  Rng rng(8);
  for (std::size_t r = 0; r < bank.item_dyn.rows(); ++r)
    for (std::int32_t c = 0; c < d.m; ++c) bank.item_dyn(r, c) = rng.normal(0.0, 1.0);

  Vec pred(d.theta_out(), 0.0);
  pred[5] = 1.0;  // one-hot of item 5
  std::copy_n(bank.item_dyn.row(5), d.m, pred.begin() + d.item_static_dim());
  EXPECT_EQ(rank_of_true_item(p, pred.data(), bank, 5), 1);
  EXPECT_EQ(nearest_item(p, pred, bank, 5).front(), 5);
}

TEST(NearestItem, AllEquidistantRanksTruthLast) {
  const ModelDims d = small_dims(2, 7, 0);
  ModelParams p = ModelParams::zeros(d);
  EmbeddingBank bank(p);  // all item rows identical (shared init vector)
  const Vec pred(d.theta_out(), 0.0);
  // static block is all zeros, so every item distance ties exactly
  EXPECT_EQ(rank_of_true_item(p, pred.data(), bank, 3), d.num_items);
  const auto ranking = nearest_item(p, pred, bank, 3);
  EXPECT_EQ(ranking.back(), 3);
}

TEST(NearestItem, HandComputedToyRanking) {
  const ModelDims d = small_dims(2, 4, 0, 2, 2);
  ModelParams p = ModelParams::zeros(d);
  EmbeddingBank bank(p);
  // items on a line: dynamic embeddings (0,0), (1,0), (2,0), (3,0)
  for (EntityId j = 0; j < 4; ++j) bank.item_dyn(j, 0) = static_cast<double>(j);
  Vec pred(d.theta_out(), 0.0);
  pred[d.item_static_dim() + 0] = 1.2;  // dynamic part (1.2, 0), static part zero
  // squared distances: item0 1+1.44, item1 1+0.04, item2 1+0.64, item3 1+3.24
  EXPECT_EQ(nearest_item(p, pred, bank, 0), (std::vector<EntityId>{1, 2, 0, 3}));
  EXPECT_EQ(rank_of_true_item(p, pred.data(), bank, 0), 3);
}

TEST(NearestItem, InvariantUnderAppendingFartherItems) {
  const ModelDims d = small_dims(2, 3, 0, 2, 2);
  const ModelDims bigger = small_dims(2, 5, 0, 2, 2);
  ModelParams p = ModelParams::zeros(d);
  ModelParams pb = ModelParams::zeros(bigger);
  EmbeddingBank bank(p), bankb(pb);
  for (EntityId j = 0; j < 3; ++j) {
    bank.item_dyn(j, 0) = static_cast<double>(j);
    bankb.item_dyn(j, 0) = static_cast<double>(j);
  }
  bankb.item_dyn(3, 0) = 100.0;
  bankb.item_dyn(4, 0) = -100.0;

  Vec pred(d.theta_out(), 0.0);
  pred[d.item_static_dim()] = 0.9;
  Vec predb(bigger.theta_out(), 0.0);
  predb[bigger.item_static_dim()] = 0.9;

  const int r_small = rank_of_true_item(p, pred.data(), bank, 2);
  const int r_big = rank_of_true_item(pb, predb.data(), bankb, 2);
  EXPECT_EQ(r_small, r_big);
}

TEST(Loss, PerfectPredictionIsZero) {
  const ModelDims d = small_dims();
  ModelParams p = ModelParams::init(d, 12);
  Rng rng(9);
  const Vec before = random_vec(4, rng);
  Vec pred(d.theta_out(), 0.0);
  pred[1] = 1.0;  // one-hot of item 1
  std::copy(before.begin(), before.end(), pred.begin() + d.item_static_dim());
  EXPECT_DOUBLE_EQ(interaction_loss(p, pred, 1, before, before, before, before), 0.0);
}

TEST(Loss, LambdaZeroLeavesPredictionTerm) {
  const ModelDims d = small_dims();
  ModelParams p = ModelParams::init(d, 13);
  p.lambda_u = p.lambda_i = 0.0;
  Rng rng(10);
  const Vec pred = random_vec(d.theta_out(), rng);
  const Vec before = random_vec(4, rng), after = random_vec(4, rng);
  const Vec ubefore = random_vec(4, rng), uafter = random_vec(4, rng);
  const double loss = interaction_loss(p, pred, 2, before, uafter, ubefore, after);
  EXPECT_DOUBLE_EQ(loss, std::sqrt(prediction_distance_sq(p, pred.data(), 2, before.data())));
  EXPECT_GE(loss, 0.0);
}

TEST(Loss, HandComputedDistances) {
  const ModelDims d = small_dims(2, 2, 0, 2, 2);
  ModelParams p = ModelParams::zeros(d);
  const Vec zero2(2, 0.0);

  // pred differs from the target in exactly one coordinate by 1, frozen
  // embeddings: loss 1
  Vec pred(d.theta_out(), 0.0);
  pred[0] = 1.0;                       // matches onehot(0)
  pred[d.item_static_dim()] = 1.0;     // dynamic part off by (1, 0)
  EXPECT_DOUBLE_EQ(interaction_loss(p, pred, 0, zero2, zero2, zero2, zero2), 1.0);

  // mass on the wrong static slot: sqrt(1^2 + 1^2)
  Vec off(d.theta_out(), 0.0);
  off[1] = 1.0;
  EXPECT_DOUBLE_EQ(interaction_loss(p, off, 0, zero2, zero2, zero2, zero2), std::sqrt(2.0));

  ModelParams psq = p;
  psq.squared_loss = true;
  EXPECT_DOUBLE_EQ(interaction_loss(psq, off, 0, zero2, zero2, zero2, zero2), 2.0);
}

TEST(Loss, DriftTermsVanishIffUnchanged) {
  const ModelDims d = small_dims();
  ModelParams p = ModelParams::init(d, 14);
  Rng rng(11);
  const Vec before = random_vec(4, rng);
  Vec pred(d.theta_out(), 0.0);
  pred[0] = 1.0;
  std::copy(before.begin(), before.end(), pred.begin() + d.item_static_dim());
  Vec moved = before;
  moved[2] += 0.25;
  const double frozen = interaction_loss(p, pred, 0, before, before, before, before);
  const double drifted = interaction_loss(p, pred, 0, before, moved, before, before);
  EXPECT_DOUBLE_EQ(frozen, 0.0);
  EXPECT_DOUBLE_EQ(drifted, p.lambda_u * 0.25);
}

TEST(StateLoss, KnownValues) {
  const ModelDims d = small_dims();
  ModelParams p = ModelParams::zeros(d);  // head output 0 -> probability 1/2
  EXPECT_DOUBLE_EQ(state_change_loss(p, Vec(4, 0.0), 0), std::log(2.0));
  EXPECT_DOUBLE_EQ(state_change_loss(p, Vec(4, 0.0), 1), std::log(2.0));

  p.state_head.b[0] = 30.0;  // probability ~ 1
  EXPECT_NEAR(state_change_loss(p, Vec(4, 0.0), 1), 0.0, 1e-12);
  EXPECT_GT(state_change_loss(p, Vec(4, 0.0), 0), 20.0);
  EXPECT_THROW(state_change_loss(p, Vec(4, 0.0), 2), InvalidArgument);
}

TEST(StateLoss, GradientMatchesFiniteDifferences) {
  const ModelDims d = small_dims();
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    ModelParams p = ModelParams::init(d, 100 + trial);
    const Vec u = random_vec(4, rng);
    const int label = trial % 2;
    const double z = state_head_logit(p, u.data());
    const double dz = sigmoid(z) - static_cast<double>(label);

    Vec flat(5);
    std::copy_n(p.state_head.w.row(0), 4, flat.begin());
    flat[4] = p.state_head.b[0];
    const auto loss = [&](const Vec& probe) {
      ModelParams q = p;
      std::copy_n(probe.begin(), 4, q.state_head.w.row(0));
      q.state_head.b[0] = probe[4];
      return state_change_loss(q, u, label);
    };
    const Vec fd = finite_diff_grad(loss, flat, 1e-5);
    for (std::size_t k = 0; k < 4; ++k) {
      const double analytic = dz * u[k];
      EXPECT_LT(std::abs(analytic - fd[k]) / std::max({std::abs(analytic), std::abs(fd[k]), 1e-6}),
                1e-4);
    }
    EXPECT_LT(std::abs(dz - fd[4]) / std::max({std::abs(dz), std::abs(fd[4]), 1e-6}), 1e-4);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const Dataset ds = make_random_stream(7, 5, 50, 33, 3);
  ModelParams p = fixtures::tiny_params(ds, 6, 5, 21);
  p.lambda_u = 0.75;
  p.lambda_s = 2.5;
  p.squared_loss = true;
  p.delta_scale = 17.25;

  std::stringstream buf;
  save_checkpoint(p, buf);
  const ModelParams q = load_checkpoint(buf);

  EXPECT_EQ(q.dims.num_users, p.dims.num_users);
  EXPECT_EQ(q.dims.n, p.dims.n);
  EXPECT_EQ(q.lambda_u, p.lambda_u);
  EXPECT_EQ(q.lambda_s, p.lambda_s);
  EXPECT_EQ(q.squared_loss, p.squared_loss);
  EXPECT_EQ(q.delta_scale, p.delta_scale);
  EXPECT_EQ(flatten_params(q), flatten_params(p));
}

TEST(Checkpoint, RejectsCorruptedInput) {
  std::stringstream buf("not-a-checkpoint v9");
  EXPECT_THROW(load_checkpoint(buf), RuntimeError);
}

TEST(Bank, ResetFillsSharedInitialVectors) {
  const Dataset ds = make_random_stream(4, 3, 10, 2, 0);
  ModelParams p = fixtures::tiny_params(ds);
  Rng rng(5);
  for (double& v : p.init_user) v = rng.normal(0.0, 1.0);
  for (double& v : p.init_item) v = rng.normal(0.0, 1.0);
  EmbeddingBank bank(p);
  for (std::size_t r = 0; r < bank.user_dyn.rows(); ++r)
    for (std::int32_t c = 0; c < p.dims.n; ++c) EXPECT_EQ(bank.user_dyn(r, c), p.init_user[c]);
  for (std::size_t r = 0; r < bank.item_dyn.rows(); ++r)
    for (std::int32_t c = 0; c < p.dims.m; ++c) EXPECT_EQ(bank.item_dyn(r, c), p.init_item[c]);
  EXPECT_EQ(bank.item_dyn.rows(), static_cast<std::size_t>(ds.num_items) + 1);
}
