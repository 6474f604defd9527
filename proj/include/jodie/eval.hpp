#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "jodie/common.hpp"
#include "jodie/dataset.hpp"
#include "jodie/model.hpp"

namespace jodie {

struct EarlyWarningPoint {
  int interactions_before_final = 0;
  double mean_ratio = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n_droppers = 0;
};

struct EvalReport {
  double mrr = std::numeric_limits<double>::quiet_NaN();
  std::map<int, double> recall_at_k;
  double auc = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_evaluated = 0;
  std::vector<EarlyWarningPoint> early_warning;

  double recall10() const {
    const auto it = recall_at_k.find(10);
    return it == recall_at_k.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
  }
};

namespace detail {

// Shared update step: writes both post-interaction embeddings into the bank.
inline void apply_update(const ModelParams& p, EmbeddingBank& bank, const Interaction& e,
                         const DeltaAnnotation& a, Vec& input_u, Vec& input_i, Vec& u_after,
                         Vec& i_after) {
  const ModelDims& d = p.dims;
  const double* ub = bank.user_dyn.row(e.user_id);
  const double* ib = bank.item_dyn.row(e.item_id);
  fill_rnn_input(ib, d.m, e.features.data(), d.feature_dim, a.delta_u, input_u.data());
  fill_rnn_input(ub, d.n, e.features.data(), d.feature_dim, a.delta_i, input_i.data());
  p.rnn_user.forward_into(ub, input_u.data(), u_after.data());
  p.rnn_item.forward_into(ib, input_i.data(), i_after.data());
  std::copy_n(u_after.data(), d.n, bank.user_dyn.row(e.user_id));
  std::copy_n(i_after.data(), d.m, bank.item_dyn.row(e.item_id));
  bank.user_last_time[e.user_id] = e.timestamp;
  bank.item_last_time[e.item_id] = e.timestamp;
  bank.user_touched[e.user_id] = 1;
  bank.item_touched[e.item_id] = 1;
}

}  // namespace detail

// Advance the bank through a range with a frozen model (updates only).
inline void advance_bank(const ModelParams& p, EmbeddingBank& bank, const Dataset& ds,
                         const std::vector<DeltaAnnotation>& ann, Range range) {
  const ModelDims& d = p.dims;
  Vec input_u(d.rnn_user_input()), input_i(d.rnn_item_input());
  Vec u_after(d.n), i_after(d.m);
  for (std::size_t j = range.begin; j < range.end; ++j)
    detail::apply_update(p, bank, ds.interactions[j], ann[j], input_u, input_i, u_after, i_after);
}

struct InteractionEval {
  double mrr = 0.0;
  std::map<int, double> recall_at_k;
  std::vector<int> ranks;
};

// Rank the ground-truth item for every interaction in the range, advancing
// the bank as it goes. The model stays frozen; only embeddings move.
inline InteractionEval eval_interaction(const ModelParams& p, EmbeddingBank& bank,
                                        const Dataset& ds,
                                        const std::vector<DeltaAnnotation>& ann, Range range,
                                        const std::vector<int>& ks = {10}) {
  check(range.size() > 0, "eval_interaction: empty range");
  const ModelDims& d = p.dims;
  InteractionEval out;
  out.ranks.reserve(range.size());
  Vec input_u(d.rnn_user_input()), input_i(d.rnn_item_input());
  Vec u_after(d.n), i_after(d.m), u_hat(d.n), pred(d.theta_out());

  double mrr_sum = 0.0;
  for (std::size_t j = range.begin; j < range.end; ++j) {
    const Interaction& e = ds.interactions[j];
    const DeltaAnnotation& a = ann[j];
    project_user_into(p, bank.user_dyn.row(e.user_id), a.delta_u, u_hat.data());
    predict_item_into(p, u_hat.data(), e.user_id, bank.item_dyn.row(a.prev_item_of_user),
                      a.prev_item_of_user, pred.data());
    const int rank = rank_of_true_item(p, pred.data(), bank, e.item_id);
    out.ranks.push_back(rank);
    mrr_sum += 1.0 / static_cast<double>(rank);
    detail::apply_update(p, bank, e, a, input_u, input_i, u_after, i_after);
  }
  out.mrr = mrr_sum / static_cast<double>(out.ranks.size());
  for (const int k : ks) {
    std::size_t hits = 0;
    for (const int r : out.ranks)
      if (r <= k) ++hits;
    out.recall_at_k[k] = static_cast<double>(hits) / static_cast<double>(out.ranks.size());
  }
  return out;
}

// Mann-Whitney AUC over (score, label) pairs; ties contribute 1/2 through
// midranks. Requires at least one positive and one negative.
inline double mann_whitney_auc(const std::vector<double>& scores,
                               const std::vector<std::uint8_t>& labels) {
  check(scores.size() == labels.size(), "auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t k = i;
    while (k + 1 < n && scores[order[k + 1]] == scores[order[i]]) ++k;
    const double mid = 0.5 * static_cast<double>(i + k) + 1.0;  // ranks are 1-based
    for (std::size_t t = i; t <= k; ++t) rank[order[t]] = mid;
    i = k + 1;
  }

  std::size_t n_pos = 0;
  double rank_sum_pos = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    if (labels[t]) {
      ++n_pos;
      rank_sum_pos += rank[t];
    }
  }
  const std::size_t n_neg = n - n_pos;
  require(n_pos > 0 && n_neg > 0, "auc: need both positive and negative labels");
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct StateChangeEval {
  double auc = 0.0;
  std::vector<double> scores;  // sigmoid of the state head on each post-interaction embedding
};

inline StateChangeEval eval_state_change(const ModelParams& p, EmbeddingBank& bank,
                                         const Dataset& ds,
                                         const std::vector<DeltaAnnotation>& ann, Range range) {
  check(range.size() > 0, "eval_state_change: empty range");
  const ModelDims& d = p.dims;
  StateChangeEval out;
  out.scores.reserve(range.size());
  std::vector<std::uint8_t> labels;
  labels.reserve(range.size());
  Vec input_u(d.rnn_user_input()), input_i(d.rnn_item_input());
  Vec u_after(d.n), i_after(d.m);
  for (std::size_t j = range.begin; j < range.end; ++j) {
    const Interaction& e = ds.interactions[j];
    detail::apply_update(p, bank, e, ann[j], input_u, input_i, u_after, i_after);
    out.scores.push_back(sigmoid(state_head_logit(p, u_after.data())));
    labels.push_back(e.state_label);
  }
  out.auc = mann_whitney_auc(out.scores, labels);
  return out;
}

// Mean predicted drop-out score of dropping users at a fixed number of
// interactions before their final one, divided by the mean score of users who
// never drop, with a delta-method 95% interval on the ratio. Only
// interactions inside `range` contribute; `scores` is aligned to the range.
inline std::vector<EarlyWarningPoint> early_warning_curve(const std::vector<double>& scores,
                                                          const Dataset& ds, Range range,
                                                          int horizon) {
  check(horizon >= 1, "early_warning_curve: horizon must be >= 1");
  check(scores.size() == range.size(), "early_warning_curve: score/range size mismatch");

  // final (label-1) interaction per user; users without one never drop
  std::vector<std::int64_t> final_seq(ds.num_users, -1);
  for (std::size_t j = 0; j < ds.size(); ++j)
    if (ds.interactions[j].state_label)
      final_seq[ds.interactions[j].user_id] = static_cast<std::int64_t>(j);

  double base_sum = 0.0, base_sq = 0.0;
  std::size_t base_n = 0;
  for (std::size_t j = range.begin; j < range.end; ++j) {
    if (final_seq[ds.interactions[j].user_id] >= 0) continue;
    const double s = scores[j - range.begin];
    base_sum += s;
    base_sq += s * s;
    ++base_n;
  }
  require(base_n > 1, "early_warning_curve: no non-dropping users in range");
  const double base_mean = base_sum / static_cast<double>(base_n);
  const double base_var =
      (base_sq - base_sum * base_mean) / static_cast<double>(base_n - 1);

  // per dropping user whose final interaction falls in the range, walk its
  // own sequence backwards and bucket scores by distance from the end
  std::vector<std::vector<std::size_t>> user_events(ds.num_users);
  for (std::size_t j = range.begin; j < range.end; ++j)
    user_events[ds.interactions[j].user_id].push_back(j);

  std::vector<double> sum(horizon + 1, 0.0), sq(horizon + 1, 0.0);
  std::vector<std::size_t> cnt(horizon + 1, 0);
  std::size_t droppers_in_range = 0;
  for (EntityId u = 0; u < ds.num_users; ++u) {
    const std::int64_t f = final_seq[u];
    if (f < 0 || static_cast<std::size_t>(f) < range.begin ||
        static_cast<std::size_t>(f) >= range.end)
      continue;
    ++droppers_in_range;
    const std::vector<std::size_t>& events = user_events[u];
    // events are in seq order; the final interaction is the last one
    for (int o = 0; o <= horizon; ++o) {
      if (events.size() <= static_cast<std::size_t>(o)) break;
      const std::size_t j = events[events.size() - 1 - static_cast<std::size_t>(o)];
      const double s = scores[j - range.begin];
      sum[o] += s;
      sq[o] += s * s;
      ++cnt[o];
    }
  }
  require(droppers_in_range > 0, "early_warning_curve: no dropping users in range");

  std::vector<EarlyWarningPoint> out;
  for (int o = horizon; o >= 0; --o) {
    EarlyWarningPoint pt;
    pt.interactions_before_final = o;
    pt.n_droppers = cnt[o];
    if (cnt[o] == 0) {
      pt.mean_ratio = pt.ci_low = pt.ci_high = std::numeric_limits<double>::quiet_NaN();
      out.push_back(pt);
      continue;
    }
    const double a_mean = sum[o] / static_cast<double>(cnt[o]);
    const double a_var =
        cnt[o] > 1 ? (sq[o] - sum[o] * a_mean) / static_cast<double>(cnt[o] - 1) : 0.0;
    const double ratio = a_mean / base_mean;
    // delta method on A/B with independent samples
    const double var = a_var / static_cast<double>(cnt[o]) / (base_mean * base_mean) +
                       a_mean * a_mean * (base_var / static_cast<double>(base_n)) /
                           (base_mean * base_mean * base_mean * base_mean);
    const double half = 1.96 * std::sqrt(std::max(var, 0.0));
    pt.mean_ratio = ratio;
    pt.ci_low = ratio - half;
    pt.ci_high = ratio + half;
    out.push_back(pt);
  }
  return out;
}

}  // namespace jodie
