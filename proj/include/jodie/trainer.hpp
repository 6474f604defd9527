#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "jodie/common.hpp"
#include "jodie/dataset.hpp"
#include "jodie/model.hpp"
#include "jodie/tbatch.hpp"
#include "jodie/threads.hpp"

namespace jodie {

enum class Task { Interaction, StateChange };

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  int bptt_window = 64;  // consecutive batches per backprop segment
  std::uint64_t seed = 0;
  double lambda_u = 1.0;
  double lambda_i = 1.0;
  double lambda_s = 1.0;
  bool squared_loss = false;
  Task task = Task::Interaction;
  int threads = 1;
  double delta_scale = 0.0;  // 0 = mean nonzero train-range user delta

  void validate() const {
    check(epochs >= 1, "epochs must be >= 1");
    check(bptt_window >= 1, "bptt_window must be >= 1");
    check(learning_rate > 0.0, "learning_rate must be positive");
    check(weight_decay >= 0.0, "weight_decay must be non-negative");
    check(threads >= 1, "threads must be >= 1");
    check(delta_scale >= 0.0, "delta_scale must be >= 0");
  }
};

struct LossBreakdown {
  double pred = 0.0;
  double drift_u = 0.0;
  double drift_i = 0.0;
  double state = 0.0;

  double total() const { return pred + drift_u + drift_i + state; }

  LossBreakdown& operator+=(const LossBreakdown& o) {
    pred += o.pred;
    drift_u += o.drift_u;
    drift_i += o.drift_i;
    state += o.state;
    return *this;
  }
};

struct EpochReport {
  int epoch = 0;
  LossBreakdown loss;
  double val_metric = 0.0;
  double seconds = 0.0;

  double loss_total() const { return loss.total(); }
};

// Gradient buffers, one per trainable tensor. Field names mirror ModelParams
// so for_each_tensor walks both in the same order.
struct ParamGrads {
  RnnGrads rnn_user, rnn_item;
  Vec proj_w;
  LinearGrads theta, state_head;
  Vec init_user, init_item;

  ParamGrads() = default;
  explicit ParamGrads(const ModelParams& p)
      : rnn_user(p.rnn_user),
        rnn_item(p.rnn_item),
        proj_w(p.proj_w.size(), 0.0),
        theta(p.theta),
        state_head(p.state_head),
        init_user(p.init_user.size(), 0.0),
        init_item(p.init_item.size(), 0.0) {}

  void zero() {
    rnn_user.zero();
    rnn_item.zero();
    std::fill(proj_w.begin(), proj_w.end(), 0.0);
    theta.zero();
    state_head.zero();
    std::fill(init_user.begin(), init_user.end(), 0.0);
    std::fill(init_item.begin(), init_item.end(), 0.0);
  }
};

// Adam with decoupled weight decay; moments persist across steps.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::size_t params, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps), m_(params, 0.0), v_(params, 0.0) {}

  std::int64_t steps() const { return t_; }

  void step(ModelParams& params, ParamGrads& grads, double lr, double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t off = 0;
    std::vector<std::pair<double*, std::size_t>> pspans, gspans;
    for_each_tensor(params, [&](const char*, double* d, std::size_t n) { pspans.push_back({d, n}); });
    for_each_tensor(grads, [&](const char*, double* d, std::size_t n) { gspans.push_back({d, n}); });
    for (std::size_t s = 0; s < pspans.size(); ++s) {
      double* p = pspans[s].first;
      const double* g = gspans[s].first;
      const std::size_t n = pspans[s].second;
      for (std::size_t i = 0; i < n; ++i) {
        require(std::isfinite(g[i]), "optimizer_step: non-finite gradient");
        const std::size_t k = off + i;
        m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g[i];
        v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = m_[k] / bc1;
        const double vhat = v_[k] / bc2;
        p[i] = p[i] * (1.0 - lr * weight_decay) - lr * mhat / (std::sqrt(vhat) + eps_);
      }
      off += n;
    }
  }

 private:
  double beta1_, beta2_, eps_;
  Vec m_, v_;
  std::int64_t t_ = 0;
};

// Forward/backward engine over a batch plan.
//
// A segment is a window of consecutive batches. Each segment runs in two
// passes: first all embedding updates in batch order (the recurrent part),
// then all predictions. Update inputs only ever depend on the same entity's
// previous version, so the update pass is exact under any batch schedule;
// prediction inputs resolve the previous item's embedding by interaction
// order against the segment tape, which makes the batched forward reproduce
// one-at-a-time processing bit for bit when the window spans the plan.
//
// Backward walks the segment tape in reverse interaction order. Embeddings
// entering a segment are constants, except that entities still at their
// shared initial vector route their gradient into init_user / init_item.
class Engine {
 public:
  Engine(const Dataset& ds, const std::vector<DeltaAnnotation>& ann, Task task, int threads = 1)
      : ds_(ds), ann_(ann), task_(task), pool_(threads), slot_of_(ds.size(), -1) {}

  // One interaction at a time in time order; the reference semantics.
  LossBreakdown forward_sequential(const ModelParams& p, EmbeddingBank& bank, Range range) {
    LossBreakdown sum;
    const ModelDims& d = p.dims;
    Vec input_u(d.rnn_user_input()), input_i(d.rnn_item_input());
    Vec u_before(d.n), i_before(d.m), u_hat(d.n), pred(d.theta_out());
    Vec u_after(d.n), i_after(d.m);
    for (std::size_t j = range.begin; j < range.end; ++j) {
      const Interaction& e = ds_.interactions[j];
      const DeltaAnnotation& a = ann_[j];
      std::copy_n(bank.user_dyn.row(e.user_id), d.n, u_before.data());
      std::copy_n(bank.item_dyn.row(e.item_id), d.m, i_before.data());

      project_user_into(p, u_before.data(), a.delta_u, u_hat.data());
      predict_item_into(p, u_hat.data(), e.user_id, bank.item_dyn.row(a.prev_item_of_user),
                        a.prev_item_of_user, pred.data());
      const double dist_sq = prediction_distance_sq(p, pred.data(), e.item_id, i_before.data());

      detail::fill_rnn_input(i_before.data(), d.m, e.features.data(), d.feature_dim, a.delta_u,
                             input_u.data());
      detail::fill_rnn_input(u_before.data(), d.n, e.features.data(), d.feature_dim, a.delta_i,
                             input_i.data());
      p.rnn_user.forward_into(u_before.data(), input_u.data(), u_after.data());
      p.rnn_item.forward_into(i_before.data(), input_i.data(), i_after.data());

      accumulate_loss(p, sum, dist_sq, u_before.data(), u_after.data(), i_before.data(),
                      i_after.data(),
                      task_ == Task::StateChange ? state_head_logit(p, u_after.data()) : 0.0,
                      e.state_label, j);

      std::copy_n(u_after.data(), d.n, bank.user_dyn.row(e.user_id));
      std::copy_n(i_after.data(), d.m, bank.item_dyn.row(e.item_id));
      bank.user_last_time[e.user_id] = e.timestamp;
      bank.item_last_time[e.item_id] = e.timestamp;
      bank.user_touched[e.user_id] = 1;
      bank.item_touched[e.item_id] = 1;
    }
    return sum;
  }

  // Batched two-pass forward, no gradients. `window` counts batches per
  // segment; use the plan size to reproduce sequential results exactly.
  LossBreakdown forward_batched(const ModelParams& p, EmbeddingBank& bank, const BatchPlan& plan,
                                std::size_t window) {
    LossBreakdown sum;
    for (std::size_t b0 = 0; b0 < plan.num_batches(); b0 += window) {
      const std::size_t b1 = std::min(b0 + window, plan.num_batches());
      sum += segment_forward(p, bank, plan, b0, b1, /*store_pred=*/false);
    }
    return sum;
  }

  // Forward + backward over every segment without stepping; grads accumulate.
  LossBreakdown accumulate_gradients(const ModelParams& p, EmbeddingBank& bank,
                                     const BatchPlan& plan, std::size_t window,
                                     ParamGrads& grads) {
    LossBreakdown sum;
    for (std::size_t b0 = 0; b0 < plan.num_batches(); b0 += window) {
      const std::size_t b1 = std::min(b0 + window, plan.num_batches());
      snapshot_pristine(bank);
      sum += segment_forward(p, bank, plan, b0, b1, /*store_pred=*/true);
      segment_backward(p, grads);
    }
    return sum;
  }

  // One training epoch: per segment, forward, backward, optimizer step.
  // The bank must be freshly reset by the caller.
  EpochReport train_epoch(ModelParams& p, EmbeddingBank& bank, const BatchPlan& plan,
                          const TrainConfig& cfg, AdamOptimizer& opt, int epoch_index) {
    const auto start = std::chrono::steady_clock::now();
    epoch_tag_ = epoch_index;
    EpochReport report;
    report.epoch = epoch_index;
    ParamGrads grads(p);
    const std::size_t window = static_cast<std::size_t>(cfg.bptt_window);
    for (std::size_t b0 = 0; b0 < plan.num_batches(); b0 += window) {
      const std::size_t b1 = std::min(b0 + window, plan.num_batches());
      snapshot_pristine(bank);
      report.loss += segment_forward(p, bank, plan, b0, b1, /*store_pred=*/true);
      grads.zero();
      segment_backward(p, grads);
      opt.step(p, grads, cfg.learning_rate, cfg.weight_decay);
    }
    epoch_tag_ = -1;
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
  }

 private:
  struct Scratch {
    Vec input_u, input_i, pred, u_hat;
  };

  void ensure_buffers(const ModelParams& p) {
    const ModelDims& d = p.dims;
    if (static_cast<std::int32_t>(grad_user_.rows()) != d.num_users ||
        static_cast<std::int32_t>(grad_user_.cols()) != d.n ||
        static_cast<std::int32_t>(grad_item_.cols()) != d.m) {
      grad_user_ = Mat(d.num_users, d.n);
      grad_item_ = Mat(static_cast<std::size_t>(d.num_items) + 1, d.m);
      grad_user_touched_.assign(d.num_users, 0);
      grad_item_touched_.assign(static_cast<std::size_t>(d.num_items) + 1, 0);
    }
    scratch_.resize(pool_.workers());
    for (Scratch& s : scratch_) {
      s.input_u.resize(d.rnn_user_input());
      s.input_i.resize(d.rnn_item_input());
      s.pred.resize(d.theta_out());
      s.u_hat.resize(d.n);
    }
  }

  void snapshot_pristine(const EmbeddingBank& bank) {
    user_pristine_ = bank.user_touched;
    item_pristine_ = bank.item_touched;
    for (auto& f : user_pristine_) f ^= 1;
    for (auto& f : item_pristine_) f ^= 1;
  }

  void accumulate_loss(const ModelParams& p, LossBreakdown& sum, double dist_sq,
                       const double* u_before, const double* u_after, const double* i_before,
                       const double* i_after, double state_z, int label, std::size_t seq) {
    const ModelDims& d = p.dims;
    const double pred_term = p.squared_loss ? dist_sq : std::sqrt(dist_sq);
    double du = 0.0, di = 0.0;
    for (std::int32_t k = 0; k < d.n; ++k) {
      const double x = u_after[k] - u_before[k];
      du += x * x;
    }
    for (std::int32_t k = 0; k < d.m; ++k) {
      const double x = i_after[k] - i_before[k];
      di += x * x;
    }
    const double drift_u = p.lambda_u * (p.squared_loss ? du : std::sqrt(du));
    const double drift_i = p.lambda_i * (p.squared_loss ? di : std::sqrt(di));
    const double state =
        task_ == Task::StateChange ? p.lambda_s * bce_from_logit(state_z, label) : 0.0;
    const double total = pred_term + drift_u + drift_i + state;
    if (!std::isfinite(total))
      throw RuntimeError("non-finite loss at interaction " + std::to_string(seq) +
                         (epoch_tag_ >= 0 ? " (epoch " + std::to_string(epoch_tag_) + ")" : ""));
    sum.pred += pred_term;
    sum.drift_u += drift_u;
    sum.drift_i += drift_i;
    sum.state += state;
  }

  // ---- segment forward ----

  LossBreakdown segment_forward(const ModelParams& p, EmbeddingBank& bank, const BatchPlan& plan,
                                std::size_t b0, std::size_t b1, bool store_pred) {
    ensure_buffers(p);
    const ModelDims& d = p.dims;

    // slot table: segment interactions in ascending seq order
    tape_seq_.clear();
    for (std::size_t b = b0; b < b1; ++b)
      tape_seq_.insert(tape_seq_.end(), plan.batches[b].begin(), plan.batches[b].end());
    std::sort(tape_seq_.begin(), tape_seq_.end());
    const std::size_t slots = tape_seq_.size();
    for (std::size_t s = 0; s < slots; ++s) slot_of_[tape_seq_[s]] = static_cast<std::int64_t>(s);

    tape_u_before_ = Mat(slots, d.n);
    tape_i_before_ = Mat(slots, d.m);
    tape_u_after_ = Mat(slots, d.n);
    tape_i_after_ = Mat(slots, d.m);
    tape_pred_ = store_pred ? Mat(slots, d.theta_out()) : Mat();
    tape_pred_dist_sq_.assign(slots, 0.0);
    tape_drift_u_sq_.assign(slots, 0.0);
    tape_drift_i_sq_.assign(slots, 0.0);
    tape_state_z_.assign(slots, 0.0);
    tape_k_src_.assign(slots, -1);
    tape_stored_pred_ = store_pred;
    seg_item_base_ = bank.item_dyn;  // pre-segment item versions for prediction reads

    // pass 1: updates, batch by batch; rows touched within one batch are
    // disjoint, so entries run in parallel and write the bank directly.
    for (std::size_t b = b0; b < b1; ++b) {
      const std::vector<std::uint32_t>& batch = plan.batches[b];
      pool_.run(batch.size(), [&](std::size_t lo, std::size_t hi, int worker) {
        Scratch& sc = scratch_[worker];
        for (std::size_t e = lo; e < hi; ++e) {
          const std::uint32_t j = batch[e];
          const std::size_t s = static_cast<std::size_t>(slot_of_[j]);
          const Interaction& ev = ds_.interactions[j];
          const DeltaAnnotation& a = ann_[j];
          double* ub = tape_u_before_.row(s);
          double* ib = tape_i_before_.row(s);
          double* ua = tape_u_after_.row(s);
          double* ia = tape_i_after_.row(s);
          std::copy_n(bank.user_dyn.row(ev.user_id), d.n, ub);
          std::copy_n(bank.item_dyn.row(ev.item_id), d.m, ib);
          detail::fill_rnn_input(ib, d.m, ev.features.data(), d.feature_dim, a.delta_u,
                                 sc.input_u.data());
          detail::fill_rnn_input(ub, d.n, ev.features.data(), d.feature_dim, a.delta_i,
                                 sc.input_i.data());
          p.rnn_user.forward_into(ub, sc.input_u.data(), ua);
          p.rnn_item.forward_into(ib, sc.input_i.data(), ia);
          std::copy_n(ua, d.n, bank.user_dyn.row(ev.user_id));
          std::copy_n(ia, d.m, bank.item_dyn.row(ev.item_id));
          bank.user_last_time[ev.user_id] = ev.timestamp;
          bank.item_last_time[ev.item_id] = ev.timestamp;
          bank.user_touched[ev.user_id] = 1;
          bank.item_touched[ev.item_id] = 1;
        }
      });
    }

    // resolve each slot's previous-item read: latest in-segment update of
    // that item with a smaller seq, else the pre-segment version
    {
      scratch_item_slot_.assign(static_cast<std::size_t>(d.num_items) + 1, -1);
      for (std::size_t s = 0; s < slots; ++s) {
        const Interaction& ev = ds_.interactions[tape_seq_[s]];
        const EntityId k = ann_[tape_seq_[s]].prev_item_of_user;
        tape_k_src_[s] = scratch_item_slot_[k];
        scratch_item_slot_[ev.item_id] = static_cast<std::int32_t>(s);
      }
    }

    // pass 2: projections, predictions, loss terms; embarrassingly parallel
    pool_.run(slots, [&](std::size_t lo, std::size_t hi, int worker) {
      Scratch& sc = scratch_[worker];
      for (std::size_t s = lo; s < hi; ++s) {
        const std::uint32_t j = tape_seq_[s];
        const Interaction& ev = ds_.interactions[j];
        const DeltaAnnotation& a = ann_[j];
        const double* ub = tape_u_before_.row(s);
        project_user_into(p, ub, a.delta_u, sc.u_hat.data());
        const double* k_dyn = tape_k_src_[s] >= 0
                                  ? tape_i_after_.row(static_cast<std::size_t>(tape_k_src_[s]))
                                  : seg_item_base_.row(a.prev_item_of_user);
        double* pred = store_pred ? tape_pred_.row(s) : sc.pred.data();
        predict_item_into(p, sc.u_hat.data(), ev.user_id, k_dyn, a.prev_item_of_user, pred);
        tape_pred_dist_sq_[s] =
            prediction_distance_sq(p, pred, ev.item_id, tape_i_before_.row(s));
        double du = 0.0, di = 0.0;
        const double* ua = tape_u_after_.row(s);
        const double* ia = tape_i_after_.row(s);
        const double* ibr = tape_i_before_.row(s);
        for (std::int32_t k = 0; k < d.n; ++k) {
          const double x = ua[k] - ub[k];
          du += x * x;
        }
        for (std::int32_t k = 0; k < d.m; ++k) {
          const double x = ia[k] - ibr[k];
          di += x * x;
        }
        tape_drift_u_sq_[s] = du;
        tape_drift_i_sq_[s] = di;
        if (task_ == Task::StateChange) tape_state_z_[s] = state_head_logit(p, ua);
      }
    });

    // losses summed in interaction order, independent of thread count
    LossBreakdown sum;
    for (std::size_t s = 0; s < slots; ++s) {
      const Interaction& ev = ds_.interactions[tape_seq_[s]];
      const double pred_term =
          p.squared_loss ? tape_pred_dist_sq_[s] : std::sqrt(tape_pred_dist_sq_[s]);
      const double drift_u =
          p.lambda_u * (p.squared_loss ? tape_drift_u_sq_[s] : std::sqrt(tape_drift_u_sq_[s]));
      const double drift_i =
          p.lambda_i * (p.squared_loss ? tape_drift_i_sq_[s] : std::sqrt(tape_drift_i_sq_[s]));
      const double state = task_ == Task::StateChange
                               ? p.lambda_s * bce_from_logit(tape_state_z_[s], ev.state_label)
                               : 0.0;
      const double total = pred_term + drift_u + drift_i + state;
      if (!std::isfinite(total))
        throw RuntimeError(
            "non-finite loss at interaction " + std::to_string(tape_seq_[s]) +
            (epoch_tag_ >= 0 ? " (epoch " + std::to_string(epoch_tag_) + ")" : ""));
      sum.pred += pred_term;
      sum.drift_u += drift_u;
      sum.drift_i += drift_i;
      sum.state += state;
    }
    return sum;
  }

  // ---- segment backward ----

  void touch_grad_user(EntityId u) {
    if (!grad_user_touched_[u]) {
      grad_user_touched_[u] = 1;
      grad_user_list_.push_back(u);
      std::fill_n(grad_user_.row(u), grad_user_.cols(), 0.0);
    }
  }

  void touch_grad_item(EntityId i) {
    if (!grad_item_touched_[i]) {
      grad_item_touched_[i] = 1;
      grad_item_list_.push_back(i);
      std::fill_n(grad_item_.row(i), grad_item_.cols(), 0.0);
    }
  }

  void segment_backward(const ModelParams& p, ParamGrads& grads) {
    require(tape_stored_pred_, "segment_backward: tape has no stored predictions");
    const ModelDims& d = p.dims;
    const std::size_t slots = tape_seq_.size();
    grad_user_list_.clear();
    grad_item_list_.clear();

    Vec g_u_after(d.n), g_i_after(d.m);
    Vec g_u_before(d.n), g_i_before(d.m);
    Vec gpred(d.theta_out());
    Vec g_uhat(d.n), g_kdyn(d.m);
    Vec input(std::max(d.rnn_user_input(), d.rnn_item_input()));
    Vec ginput(std::max(d.rnn_user_input(), d.rnn_item_input()));
    Vec pre(std::max(d.n, d.m));
    Vec u_hat(d.n);

    for (std::size_t s = slots; s-- > 0;) {
      const std::uint32_t j = tape_seq_[s];
      const Interaction& ev = ds_.interactions[j];
      const DeltaAnnotation& a = ann_[j];
      const double* ub = tape_u_before_.row(s);
      const double* ib = tape_i_before_.row(s);
      const double* ua = tape_u_after_.row(s);
      const double* ia = tape_i_after_.row(s);

      // gradient wrt this slot's outputs: everything later consumers left us
      if (grad_user_touched_[ev.user_id]) {
        std::copy_n(grad_user_.row(ev.user_id), d.n, g_u_after.data());
        grad_user_touched_[ev.user_id] = 0;
      } else {
        std::fill(g_u_after.begin(), g_u_after.end(), 0.0);
      }
      if (grad_item_touched_[ev.item_id]) {
        std::copy_n(grad_item_.row(ev.item_id), d.m, g_i_after.data());
        grad_item_touched_[ev.item_id] = 0;
      } else {
        std::fill(g_i_after.begin(), g_i_after.end(), 0.0);
      }
      std::fill(g_u_before.begin(), g_u_before.end(), 0.0);
      std::fill(g_i_before.begin(), g_i_before.end(), 0.0);

      // state head
      if (task_ == Task::StateChange) {
        const double dz =
            p.lambda_s * (sigmoid(tape_state_z_[s]) - static_cast<double>(ev.state_label));
        axpy(dz, ua, grads.state_head.w.row(0), d.n);
        grads.state_head.b[0] += dz;
        axpy(dz, p.state_head.w.row(0), g_u_after.data(), d.n);
      }

      // drift terms: lambda * ||after - before|| (or squared)
      apply_drift_grad(p.lambda_u, ua, ub, d.n, tape_drift_u_sq_[s], p.squared_loss,
                       g_u_after.data(), g_u_before.data());
      apply_drift_grad(p.lambda_i, ia, ib, d.m, tape_drift_i_sq_[s], p.squared_loss,
                       g_i_after.data(), g_i_before.data());

      // user RNN
      detail::fill_rnn_input(ib, d.m, ev.features.data(), d.feature_dim, a.delta_u, input.data());
      rnn_backward(p.rnn_user, ub, input.data(), ua, g_u_after.data(), grads.rnn_user,
                   g_u_before.data(),
                   (std::fill_n(ginput.data(), d.rnn_user_input(), 0.0), ginput.data()),
                   pre.data());
      axpy(1.0, ginput.data(), g_i_before.data(), d.m);

      // item RNN
      detail::fill_rnn_input(ub, d.n, ev.features.data(), d.feature_dim, a.delta_i, input.data());
      rnn_backward(p.rnn_item, ib, input.data(), ia, g_i_after.data(), grads.rnn_item,
                   g_i_before.data(),
                   (std::fill_n(ginput.data(), d.rnn_item_input(), 0.0), ginput.data()),
                   pre.data());
      axpy(1.0, ginput.data(), g_u_before.data(), d.n);

      // prediction loss through theta, the projection, and the target
      const double* predrow = tape_pred_.row(s);
      const double dist_sq = tape_pred_dist_sq_[s];
      const std::size_t ds_dim = static_cast<std::size_t>(d.item_static_dim());
      double scale = 0.0;
      if (p.squared_loss)
        scale = 2.0;
      else if (dist_sq > 0.0)
        scale = 1.0 / std::sqrt(dist_sq);
      if (scale != 0.0) {
        for (std::size_t r = 0; r < ds_dim; ++r) gpred[r] = scale * predrow[r];
        gpred[ev.item_id] -= scale;  // one-hot target
        for (std::int32_t k = 0; k < d.m; ++k)
          gpred[ds_dim + k] = scale * (predrow[ds_dim + k] - ib[k]);

        // target dynamic block is the item's pre-interaction embedding
        for (std::int32_t k = 0; k < d.m; ++k) g_i_before[k] -= gpred[ds_dim + k];

        const double* k_dyn = tape_k_src_[s] >= 0
                                  ? tape_i_after_.row(static_cast<std::size_t>(tape_k_src_[s]))
                                  : seg_item_base_.row(a.prev_item_of_user);
        project_user_into(p, ub, a.delta_u, u_hat.data());

        std::fill(g_uhat.begin(), g_uhat.end(), 0.0);
        std::fill(g_kdyn.begin(), g_kdyn.end(), 0.0);
        const std::size_t ucol = static_cast<std::size_t>(d.n) + ev.user_id;
        const std::size_t kcol = static_cast<std::size_t>(d.n) + d.user_static_dim() + d.m +
                                 a.prev_item_of_user;
        const std::size_t kblock = static_cast<std::size_t>(d.n) + d.user_static_dim();
        for (std::size_t r = 0; r < gpred.size(); ++r) {
          const double g = gpred[r];
          if (g == 0.0) continue;
          double* wrow = grads.theta.w.row(r);
          axpy(g, u_hat.data(), wrow, d.n);
          wrow[ucol] += g;
          axpy(g, k_dyn, wrow + kblock, d.m);
          wrow[kcol] += g;
          grads.theta.b[r] += g;
          const double* prow = p.theta.w.row(r);
          axpy(g, prow, g_uhat.data(), d.n);
          axpy(g, prow + kblock, g_kdyn.data(), d.m);
        }

        // through the projection: u_hat = (1 + proj_w * delta) .* u_before
        for (std::int32_t k = 0; k < d.n; ++k) {
          g_u_before[k] += g_uhat[k] * (1.0 + p.proj_w[k] * a.delta_u);
          grads.proj_w[k] += g_uhat[k] * ub[k] * a.delta_u;
        }

        // previous-item read
        if (a.prev_item_of_user == ev.item_id) {
          axpy(1.0, g_kdyn.data(), g_i_before.data(), d.m);
        } else {
          touch_grad_item(a.prev_item_of_user);
          axpy(1.0, g_kdyn.data(), grad_item_.row(a.prev_item_of_user), d.m);
        }
      }

      touch_grad_user(ev.user_id);
      std::copy_n(g_u_before.data(), d.n, grad_user_.row(ev.user_id));
      touch_grad_item(ev.item_id);
      std::copy_n(g_i_before.data(), d.m, grad_item_.row(ev.item_id));
    }

    // gradients that reached the segment boundary: flow into the shared
    // initial vectors for entities never updated before this segment,
    // otherwise the BPTT window cuts them off
    for (const EntityId u : grad_user_list_) {
      if (grad_user_touched_[u] && user_pristine_[u])
        axpy(1.0, grad_user_.row(u), grads.init_user.data(), d.n);
      grad_user_touched_[u] = 0;
    }
    for (const EntityId i : grad_item_list_) {
      if (grad_item_touched_[i] && item_pristine_[i])
        axpy(1.0, grad_item_.row(i), grads.init_item.data(), d.m);
      grad_item_touched_[i] = 0;
    }
    grad_user_list_.clear();
    grad_item_list_.clear();
  }

  static void apply_drift_grad(double lambda, const double* after, const double* before,
                               std::int32_t n, double dist_sq, bool squared, double* g_after,
                               double* g_before) {
    double scale = 0.0;
    if (squared)
      scale = 2.0 * lambda;
    else if (dist_sq > 0.0)
      scale = lambda / std::sqrt(dist_sq);
    if (scale == 0.0) return;
    for (std::int32_t k = 0; k < n; ++k) {
      const double g = scale * (after[k] - before[k]);
      g_after[k] += g;
      g_before[k] -= g;
    }
  }

  const Dataset& ds_;
  const std::vector<DeltaAnnotation>& ann_;
  Task task_;
  WorkerPool pool_;
  int epoch_tag_ = -1;

  // segment tape, slot-major in ascending seq order
  std::vector<std::uint32_t> tape_seq_;
  Mat tape_u_before_, tape_i_before_, tape_u_after_, tape_i_after_, tape_pred_;
  Vec tape_pred_dist_sq_, tape_drift_u_sq_, tape_drift_i_sq_, tape_state_z_;
  std::vector<std::int32_t> tape_k_src_;
  bool tape_stored_pred_ = false;
  Mat seg_item_base_;
  std::vector<std::int64_t> slot_of_;
  std::vector<std::int32_t> scratch_item_slot_;
  std::vector<Scratch> scratch_;

  // per-entity gradient accumulators for the reverse sweep
  Mat grad_user_, grad_item_;
  std::vector<std::uint8_t> grad_user_touched_, grad_item_touched_;
  std::vector<EntityId> grad_user_list_, grad_item_list_;
  std::vector<std::uint8_t> user_pristine_, item_pristine_;
};

}  // namespace jodie
