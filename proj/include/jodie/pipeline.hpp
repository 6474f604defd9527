#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "jodie/eval.hpp"
#include "jodie/trainer.hpp"

namespace jodie {

struct TrainResult {
  ModelParams best_params;
  std::vector<EpochReport> reports;
  int best_epoch = -1;
  double best_val_metric = -std::numeric_limits<double>::infinity();
  double delta_scale = 1.0;
};

using EpochCallback = std::function<void(const EpochReport&)>;

// First index of the maximal validation metric; ties keep the earliest epoch.
inline int best_epoch_index(const std::vector<double>& val_metrics) {
  check(!val_metrics.empty(), "best_epoch_index: no epochs");
  int best = 0;
  for (std::size_t e = 1; e < val_metrics.size(); ++e)
    if (val_metrics[e] > val_metrics[best]) best = static_cast<int>(e);
  return best;
}

// Full training loop: one t-batch plan over the train range, epoch-start bank
// re-initialization, per-epoch validation with frozen parameters, and
// best-validation checkpoint selection (MRR for the interaction task, AUC for
// state change).
inline TrainResult train(const Dataset& ds, const SplitRanges& split, const ModelDims& dims,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = nullptr) {
  cfg.validate();
  std::vector<DeltaAnnotation> ann = annotate_deltas(ds);
  const double scale =
      cfg.delta_scale > 0.0 ? cfg.delta_scale : mean_nonzero_user_delta(ann, split.train);
  normalize_deltas(ann, scale);

  ModelParams params = ModelParams::init(dims, cfg.seed);
  params.lambda_u = cfg.lambda_u;
  params.lambda_i = cfg.lambda_i;
  params.lambda_s = cfg.lambda_s;
  params.squared_loss = cfg.squared_loss;
  params.delta_scale = scale;

  const BatchPlan plan = build_tbatches(ds, split.train);
  Engine engine(ds, ann, cfg.task, cfg.threads);
  AdamOptimizer opt(parameter_count(params));
  EmbeddingBank bank;

  TrainResult result;
  result.delta_scale = scale;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    bank.reset(params);
    EpochReport report = engine.train_epoch(params, bank, plan, cfg, opt, epoch);

    EmbeddingBank val_bank = bank;  // frozen copy advanced through validation
    if (cfg.task == Task::Interaction)
      report.val_metric = eval_interaction(params, val_bank, ds, ann, split.valid).mrr;
    else
      report.val_metric = eval_state_change(params, val_bank, ds, ann, split.valid).auc;

    result.reports.push_back(report);
    if (on_epoch) on_epoch(report);
    if (report.val_metric > result.best_val_metric) {
      result.best_val_metric = report.val_metric;
      result.best_epoch = epoch;
      result.best_params = params;
    }
  }
  return result;
}

// Frozen-model evaluation of one range: reset the bank, advance it through
// everything before the range, then score the range.
inline EvalReport evaluate(const ModelParams& params, const Dataset& ds, Range range, Task task,
                           int early_warning_horizon = 0) {
  std::vector<DeltaAnnotation> ann = annotate_deltas(ds);
  normalize_deltas(ann, params.delta_scale);
  EmbeddingBank bank(params);
  advance_bank(params, bank, ds, ann, Range{0, range.begin});

  EvalReport report;
  report.n_evaluated = range.size();
  if (task == Task::Interaction) {
    InteractionEval ie = eval_interaction(params, bank, ds, ann, range);
    report.mrr = ie.mrr;
    report.recall_at_k = ie.recall_at_k;
  } else {
    StateChangeEval se = eval_state_change(params, bank, ds, ann, range);
    report.auc = se.auc;
    if (early_warning_horizon > 0)
      report.early_warning = early_warning_curve(se.scores, ds, range, early_warning_horizon);
  }
  return report;
}

enum class SweepVariable { TrainFrac, EmbedDim };

struct SweepRow {
  double setting = 0.0;
  EvalReport test;
};

// One full train + test evaluation per setting. TrainFrac keeps the
// validation/test fractions fixed and moves the training cut; EmbedDim sets
// both dynamic embedding sizes.
inline std::vector<SweepRow> sweep(const Dataset& ds, const SplitConfig& base_split,
                                   const ModelDims& base_dims, const TrainConfig& cfg,
                                   SweepVariable var, const std::vector<double>& values) {
  check(!values.empty(), "sweep: no settings");
  std::vector<SweepRow> rows;
  for (const double v : values) {
    SplitConfig sc = base_split;
    ModelDims dims = base_dims;
    if (var == SweepVariable::TrainFrac)
      sc.train_frac = v;
    else
      dims.n = dims.m = static_cast<std::int32_t>(v);
    const SplitRanges split = chronological_split(ds, sc);
    const TrainResult r = train(ds, split, dims, cfg);
    SweepRow row;
    row.setting = v;
    row.test = evaluate(r.best_params, ds, split.test, cfg.task);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- CSV outputs ----

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace detail

inline const char* kTrainingLogHeader =
    "epoch,loss_total,loss_pred,loss_drift_u,loss_drift_i,loss_state,val_metric,seconds";

inline std::string training_log_row(const EpochReport& r) {
  std::string s = std::to_string(r.epoch);
  for (const double v : {r.loss_total(), r.loss.pred, r.loss.drift_u, r.loss.drift_i,
                         r.loss.state, r.val_metric, r.seconds}) {
    s += ',';
    s += detail::fmt(v);
  }
  return s;
}

inline void write_training_log(const std::vector<EpochReport>& reports, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write '" + path + "'");
  out << kTrainingLogHeader << '\n';
  for (const EpochReport& r : reports) out << training_log_row(r) << '\n';
}

inline const char* kMetricsHeader = "task,split,mrr,recall10,auc,n";

inline std::string metrics_row(Task task, const std::string& split_name, const EvalReport& r) {
  std::string s = task == Task::Interaction ? "interaction" : "statechange";
  s += ',';
  s += split_name;
  s += ',';
  s += detail::fmt(r.mrr);
  s += ',';
  s += detail::fmt(r.recall10());
  s += ',';
  s += detail::fmt(r.auc);
  s += ',';
  s += std::to_string(r.n_evaluated);
  return s;
}

inline void write_metrics_csv(const std::vector<std::string>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write '" + path + "'");
  out << kMetricsHeader << '\n';
  for (const std::string& r : rows) out << r << '\n';
}

inline void write_early_warning_csv(const std::vector<EarlyWarningPoint>& points,
                                    const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write '" + path + "'");
  out << "offset,mean_ratio,ci_low,ci_high\n";
  for (const EarlyWarningPoint& p : points)
    out << p.interactions_before_final << ',' << detail::fmt(p.mean_ratio) << ','
        << detail::fmt(p.ci_low) << ',' << detail::fmt(p.ci_high) << '\n';
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, SweepVariable var,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write '" + path + "'");
  out << (var == SweepVariable::TrainFrac ? "train_frac" : "embed_dim")
      << ",mrr,recall10,auc,n\n";
  for (const SweepRow& r : rows)
    out << detail::fmt(r.setting) << ',' << detail::fmt(r.test.mrr) << ','
        << detail::fmt(r.test.recall10()) << ',' << detail::fmt(r.test.auc) << ','
        << r.test.n_evaluated << '\n';
}

}  // namespace jodie
