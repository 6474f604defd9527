#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "jodie/common.hpp"
#include "jodie/dataset.hpp"
#include "jodie/numeric.hpp"

namespace jodie {

struct ModelDims {
  std::int32_t n = 128;  // dynamic user embedding size
  std::int32_t m = 128;  // dynamic item embedding size
  EntityId num_users = 0;
  EntityId num_items = 0;
  std::int32_t feature_dim = 0;

  // Static embeddings are implicit one-hot indices; items carry one extra row
  // for the padding item backing first interactions.
  std::int32_t user_static_dim() const { return num_users; }
  std::int32_t item_static_dim() const { return num_items + 1; }
  EntityId sentinel_item() const { return num_items; }

  std::int32_t rnn_user_input() const { return m + feature_dim + 1; }
  std::int32_t rnn_item_input() const { return n + feature_dim + 1; }

  // predictor input layout: [u_hat | onehot(user) | prev_item_dyn | onehot(prev_item)]
  std::int32_t theta_in() const { return n + user_static_dim() + m + item_static_dim(); }
  // predicted embedding layout: [static (item_static_dim) | dynamic (m)]
  std::int32_t theta_out() const { return item_static_dim() + m; }

  static ModelDims for_dataset(const Dataset& ds, std::int32_t n = 128, std::int32_t m = 128) {
    ModelDims d;
    d.n = n;
    d.m = m;
    d.num_users = ds.num_users;
    d.num_items = ds.num_items;
    d.feature_dim = ds.feature_dim;
    return d;
  }
};

// Every trainable tensor plus the loss scales and the delta normalization
// constant (carried here so a checkpoint is self-contained).
struct ModelParams {
  ModelDims dims;
  RnnCell rnn_user;        // state n, input [i_dyn | f | delta_u]
  RnnCell rnn_item;        // state m, input [u_dyn | f | delta_i]
  Vec proj_w;              // n, bias-free map from elapsed time to the scaling context
  LinearLayer theta;       // theta_out x theta_in, with bias
  LinearLayer state_head;  // 1 x n, with bias
  Vec init_user;           // shared trainable initial user embedding
  Vec init_item;           // shared trainable initial item embedding
  double lambda_u = 1.0;
  double lambda_i = 1.0;
  double lambda_s = 1.0;
  bool squared_loss = false;
  double delta_scale = 1.0;

  static ModelParams zeros(const ModelDims& dims) {
    ModelParams p;
    p.dims = dims;
    p.rnn_user = RnnCell(dims.n, dims.rnn_user_input());
    p.rnn_item = RnnCell(dims.m, dims.rnn_item_input());
    p.proj_w.assign(dims.n, 0.0);
    p.theta = LinearLayer(dims.theta_out(), dims.theta_in(), true);
    p.state_head = LinearLayer(1, dims.n, true);
    p.init_user.assign(dims.n, 0.0);
    p.init_item.assign(dims.m, 0.0);
    return p;
  }

  // Gaussian sigma=0.1 everywhere except theta, which gets fan-in scaled
  // uniform init; biases and the shared initial embeddings start at zero.
  static ModelParams init(const ModelDims& dims, std::uint64_t seed) {
    ModelParams p = zeros(dims);
    Rng rng(seed);
    const auto gauss = [&](Mat& w) {
      for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, 0.1);
    };
    gauss(p.rnn_user.w_state);
    gauss(p.rnn_user.w_input);
    gauss(p.rnn_item.w_state);
    gauss(p.rnn_item.w_input);
    for (double& v : p.proj_w) v = rng.normal(0.0, 0.1);
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims.theta_in()));
    for (std::size_t i = 0; i < p.theta.w.size(); ++i)
      p.theta.w.data()[i] = rng.uniform(-bound, bound);
    gauss(p.state_head.w);
    return p;
  }
};

// Fixed traversal order over the trainable tensors; the optimizer, the
// checkpoint format and the gradient checks all rely on it.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn("rnn_user.w_state", p.rnn_user.w_state.data(), p.rnn_user.w_state.size());
  fn("rnn_user.w_input", p.rnn_user.w_input.data(), p.rnn_user.w_input.size());
  fn("rnn_user.b", p.rnn_user.b.data(), p.rnn_user.b.size());
  fn("rnn_item.w_state", p.rnn_item.w_state.data(), p.rnn_item.w_state.size());
  fn("rnn_item.w_input", p.rnn_item.w_input.data(), p.rnn_item.w_input.size());
  fn("rnn_item.b", p.rnn_item.b.data(), p.rnn_item.b.size());
  fn("proj_w", p.proj_w.data(), p.proj_w.size());
  fn("theta.w", p.theta.w.data(), p.theta.w.size());
  fn("theta.b", p.theta.b.data(), p.theta.b.size());
  fn("state_head.w", p.state_head.w.data(), p.state_head.w.size());
  fn("state_head.b", p.state_head.b.data(), p.state_head.b.size());
  fn("init_user", p.init_user.data(), p.init_user.size());
  fn("init_item", p.init_item.data(), p.init_item.size());
}

inline std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  for_each_tensor(const_cast<ModelParams&>(p),
                  [&](const char*, const double*, std::size_t sz) { n += sz; });
  return n;
}

inline Vec flatten_params(const ModelParams& p) {
  Vec out;
  out.reserve(parameter_count(p));
  for_each_tensor(const_cast<ModelParams&>(p),
                  [&](const char*, const double* d, std::size_t sz) {
                    out.insert(out.end(), d, d + sz);
                  });
  return out;
}

inline void unflatten_params(ModelParams& p, const Vec& flat) {
  check(flat.size() == parameter_count(p), "unflatten_params: size mismatch");
  std::size_t off = 0;
  for_each_tensor(p, [&](const char*, double* d, std::size_t sz) {
    std::copy(flat.begin() + off, flat.begin() + off + sz, d);
    off += sz;
  });
}

// Dynamic embeddings per entity, versioned by the interactions processed so
// far. Row `sentinel_item` stays at the shared initial item vector.
struct EmbeddingBank {
  Mat user_dyn;  // num_users x n
  Mat item_dyn;  // (num_items + 1) x m
  Vec user_last_time;
  Vec item_last_time;
  std::vector<std::uint8_t> user_touched;
  std::vector<std::uint8_t> item_touched;

  EmbeddingBank() = default;
  explicit EmbeddingBank(const ModelParams& p) { reset(p); }

  void reset(const ModelParams& p) {
    const ModelDims& d = p.dims;
    user_dyn = Mat(static_cast<std::size_t>(d.num_users), d.n);
    item_dyn = Mat(static_cast<std::size_t>(d.num_items) + 1, d.m);
    for (std::size_t r = 0; r < user_dyn.rows(); ++r)
      std::copy(p.init_user.begin(), p.init_user.end(), user_dyn.row(r));
    for (std::size_t r = 0; r < item_dyn.rows(); ++r)
      std::copy(p.init_item.begin(), p.init_item.end(), item_dyn.row(r));
    user_last_time.assign(user_dyn.rows(), 0.0);
    item_last_time.assign(item_dyn.rows(), 0.0);
    user_touched.assign(user_dyn.rows(), 0);
    item_touched.assign(item_dyn.rows(), 0);
  }
};

namespace detail {

// input = [other_dyn | f | delta]
inline void fill_rnn_input(const double* other, std::size_t other_dim, const double* f,
                           std::size_t fdim, double delta, double* out) {
  std::copy(other, other + other_dim, out);
  std::copy(f, f + fdim, out + other_dim);
  out[other_dim + fdim] = delta;
}

}  // namespace detail

// u(t) = RNN_U(u(t-), [i(t-) | f | delta_u]); one cell shared across users.
inline Vec update_user(const ModelParams& p, const Vec& u_prev, const Vec& i_prev, double delta_u,
                       const Vec& f) {
  const ModelDims& d = p.dims;
  check(u_prev.size() == static_cast<std::size_t>(d.n) &&
            i_prev.size() == static_cast<std::size_t>(d.m) &&
            f.size() == static_cast<std::size_t>(d.feature_dim),
        "update_user: shape mismatch");
  check(delta_u >= 0.0, "update_user: negative delta");
  Vec input(d.rnn_user_input());
  detail::fill_rnn_input(i_prev.data(), d.m, f.data(), d.feature_dim, delta_u, input.data());
  return p.rnn_user.forward(u_prev, input);
}

// i(t) = RNN_I(i(t-), [u(t-) | f | delta_i]); one cell shared across items.
inline Vec update_item(const ModelParams& p, const Vec& i_prev, const Vec& u_prev, double delta_i,
                       const Vec& f) {
  const ModelDims& d = p.dims;
  check(u_prev.size() == static_cast<std::size_t>(d.n) &&
            i_prev.size() == static_cast<std::size_t>(d.m) &&
            f.size() == static_cast<std::size_t>(d.feature_dim),
        "update_item: shape mismatch");
  check(delta_i >= 0.0, "update_item: negative delta");
  Vec input(d.rnn_item_input());
  detail::fill_rnn_input(u_prev.data(), d.n, f.data(), d.feature_dim, delta_i, input.data());
  return p.rnn_item.forward(i_prev, input);
}

// u_hat = (1 + w) * u with w = proj_w * delta. Bias-free by construction, so
// delta = 0 projects to u exactly.
inline void project_user_into(const ModelParams& p, const double* u, double delta, double* out) {
  for (std::int32_t k = 0; k < p.dims.n; ++k) out[k] = (1.0 + p.proj_w[k] * delta) * u[k];
}

inline Vec project_user(const ModelParams& p, const Vec& u, double delta) {
  check(u.size() == static_cast<std::size_t>(p.dims.n), "project_user: shape mismatch");
  check(delta >= 0.0, "project_user: negative delta");
  Vec out(p.dims.n);
  project_user_into(p, u.data(), delta, out.data());
  return out;
}

// theta applied to [u_hat | onehot(user) | prev_item_dyn | onehot(prev_item)].
// The one-hot blocks reduce to column selections of theta.w, so the cost is
// O(theta_out * (n + m)) regardless of the entity counts.
inline void predict_item_into(const ModelParams& p, const double* u_hat, EntityId user_id,
                              const double* prev_item_dyn, EntityId prev_item_id, double* out) {
  const ModelDims& d = p.dims;
  const std::size_t out_dim = d.theta_out();
  const std::size_t ucol = static_cast<std::size_t>(d.n) + user_id;
  const std::size_t kcol =
      static_cast<std::size_t>(d.n) + d.user_static_dim() + d.m + prev_item_id;
  const Mat& w = p.theta.w;
  for (std::size_t r = 0; r < out_dim; ++r) {
    const double* row = w.row(r);
    double acc = dot(row, u_hat, d.n);
    acc += dot(row + d.n + d.user_static_dim(), prev_item_dyn, d.m);
    out[r] = acc + row[ucol] + row[kcol] + p.theta.b[r];
  }
  debug_assert_finite(out, out_dim);
}

inline Vec predict_item(const ModelParams& p, const Vec& u_hat, EntityId user_id,
                        const Vec& prev_item_dyn, EntityId prev_item_id) {
  const ModelDims& d = p.dims;
  check(u_hat.size() == static_cast<std::size_t>(d.n) &&
            prev_item_dyn.size() == static_cast<std::size_t>(d.m),
        "predict_item: shape mismatch");
  check(user_id >= 0 && user_id < d.num_users, "predict_item: user id out of range");
  check(prev_item_id >= 0 && prev_item_id < d.item_static_dim(),
        "predict_item: prev item id out of range");
  Vec out(d.theta_out());
  predict_item_into(p, u_hat.data(), user_id, prev_item_dyn.data(), prev_item_id, out.data());
  return out;
}

// ||pred - [onehot(item) | item_dyn]||, factored so the one-hot target is
// never materialized: the static block contributes ||ps||^2 - 2 ps[item] + 1.
inline double prediction_distance_sq(const ModelParams& p, const double* pred, EntityId item_id,
                                     const double* item_dyn) {
  const ModelDims& d = p.dims;
  const std::size_t ds_dim = d.item_static_dim();
  double stat = 1.0 - 2.0 * pred[item_id];
  for (std::size_t k = 0; k < ds_dim; ++k) stat += pred[k] * pred[k];
  double dyn = 0.0;
  for (std::int32_t k = 0; k < d.m; ++k) {
    const double diff = pred[ds_dim + k] - item_dyn[k];
    dyn += diff * diff;
  }
  return stat + dyn;
}

// Full per-interaction training loss:
//   ||pred - [onehot(j) | j(t-)]|| + lambda_u ||u(t)-u(t-)|| + lambda_i ||j(t)-j(t-)||
// Norms are plain L2 unless squared_loss is set.
inline double interaction_loss(const ModelParams& p, const Vec& pred, EntityId true_item_id,
                               const Vec& item_before, const Vec& u_after, const Vec& u_before,
                               const Vec& item_after) {
  const ModelDims& d = p.dims;
  check(pred.size() == static_cast<std::size_t>(d.theta_out()), "interaction_loss: bad pred size");
  check(true_item_id >= 0 && true_item_id < d.num_items, "interaction_loss: item out of range");
  const double dist_sq = prediction_distance_sq(p, pred.data(), true_item_id, item_before.data());
  const double pred_term = p.squared_loss ? dist_sq : std::sqrt(dist_sq);

  Vec du(d.n), di(d.m);
  for (std::int32_t k = 0; k < d.n; ++k) du[k] = u_after[k] - u_before[k];
  for (std::int32_t k = 0; k < d.m; ++k) di[k] = item_after[k] - item_before[k];
  return pred_term + p.lambda_u * norm_term(du.data(), d.n, p.squared_loss) +
         p.lambda_i * norm_term(di.data(), d.m, p.squared_loss);
}

inline double state_head_logit(const ModelParams& p, const double* u_after) {
  return dot(p.state_head.w.row(0), u_after, p.dims.n) + p.state_head.b[0];
}

inline double bce_from_logit(double z, int label) {
  // max(z,0) - z*y + log(1 + exp(-|z|)), stable for large |z|
  return std::max(z, 0.0) - z * static_cast<double>(label) + std::log1p(std::exp(-std::abs(z)));
}

// Binary cross-entropy of sigmoid(state_head(u_after)) against the label.
// The lambda_s scale is applied where this joins the main loss.
inline double state_change_loss(const ModelParams& p, const Vec& u_after, int label) {
  check(u_after.size() == static_cast<std::size_t>(p.dims.n), "state_change_loss: shape mismatch");
  check(label == 0 || label == 1, "state_change_loss: label must be binary");
  return bce_from_logit(state_head_logit(p, u_after.data()), label);
}

// Rank of the ground-truth item among all real items by ascending distance,
// with ties resolved against the ground truth (it ranks last among equals).
inline int rank_of_true_item(const ModelParams& p, const double* pred, const EmbeddingBank& bank,
                             EntityId true_item_id) {
  const ModelDims& d = p.dims;
  const std::size_t ds_dim = d.item_static_dim();
  double stat_base = 1.0;
  for (std::size_t k = 0; k < ds_dim; ++k) stat_base += pred[k] * pred[k];
  const double* pd = pred + ds_dim;

  const auto dist_sq = [&](EntityId j) {
    double dyn = 0.0;
    const double* row = bank.item_dyn.row(j);
    for (std::int32_t k = 0; k < d.m; ++k) {
      const double diff = pd[k] - row[k];
      dyn += diff * diff;
    }
    return stat_base - 2.0 * pred[j] + dyn;
  };

  const double true_dist = dist_sq(true_item_id);
  int rank = 1;
  for (EntityId j = 0; j < d.num_items; ++j) {
    if (j == true_item_id) continue;
    if (dist_sq(j) <= true_dist) ++rank;
  }
  return rank;
}

// Full ranking over real items (padding item excluded), ascending distance.
// Ground truth ranks last among equals; other ties break by item id.
inline std::vector<EntityId> nearest_item(const ModelParams& p, const Vec& pred,
                                          const EmbeddingBank& bank, EntityId true_item_id) {
  const ModelDims& d = p.dims;
  check(pred.size() == static_cast<std::size_t>(d.theta_out()), "nearest_item: bad pred size");
  const std::size_t ds_dim = d.item_static_dim();
  double stat_base = 1.0;
  for (std::size_t k = 0; k < ds_dim; ++k) stat_base += pred[k] * pred[k];
  const double* pd = pred.data() + ds_dim;

  std::vector<std::pair<double, EntityId>> scored(d.num_items);
  for (EntityId j = 0; j < d.num_items; ++j) {
    double dyn = 0.0;
    const double* row = bank.item_dyn.row(j);
    for (std::int32_t k = 0; k < d.m; ++k) {
      const double diff = pd[k] - row[k];
      dyn += diff * diff;
    }
    scored[j] = {stat_base - 2.0 * pred[j] + dyn, j};
  }
  std::sort(scored.begin(), scored.end(),
            [&](const std::pair<double, EntityId>& a, const std::pair<double, EntityId>& b) {
              if (a.first != b.first) return a.first < b.first;
              const bool a_true = a.second == true_item_id;
              const bool b_true = b.second == true_item_id;
              if (a_true != b_true) return b_true;  // ground truth last among equals
              return a.second < b.second;
            });
  std::vector<EntityId> out(d.num_items);
  for (EntityId j = 0; j < d.num_items; ++j) out[j] = scored[j].second;
  return out;
}

}  // namespace jodie
