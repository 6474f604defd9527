// Command-line front end: train / eval / tbatch-stats / synth / sweep.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jodie/checkpoint.hpp"
#include "jodie/config.hpp"
#include "jodie/pipeline.hpp"
#include "jodie/synth.hpp"
#include "jodie/tbatch.hpp"

namespace fs = std::filesystem;

namespace {

struct FlagOverrides {
  int epochs = -1;
  double learning_rate = -1.0;
  std::int64_t seed = -1;
  int threads = -1;
  std::string task;
};

void apply_overrides(jodie::RunConfig& cfg, const FlagOverrides& f) {
  if (f.epochs >= 0) cfg.train.epochs = f.epochs;
  if (f.learning_rate > 0.0) cfg.train.learning_rate = f.learning_rate;
  if (f.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(f.seed);
  if (f.threads >= 0) cfg.train.threads = f.threads;
  if (!f.task.empty()) {
    jodie::check(f.task == "interaction" || f.task == "statechange",
                 "--task must be interaction|statechange");
    cfg.train.task = f.task == "statechange" ? jodie::Task::StateChange : jodie::Task::Interaction;
  }
}

jodie::Task parse_task(const std::string& s) {
  jodie::check(s == "interaction" || s == "statechange", "--task must be interaction|statechange");
  return s == "statechange" ? jodie::Task::StateChange : jodie::Task::Interaction;
}

int cmd_train(const std::string& data_path, const std::string& config_path,
              const std::string& out_dir, const FlagOverrides& flags) {
  jodie::RunConfig cfg = jodie::load_run_config(config_path);
  apply_overrides(cfg, flags);

  const jodie::Dataset ds = jodie::parse_csv_file(data_path);
  const jodie::SplitRanges split = jodie::chronological_split(ds, cfg.resolved_split());
  const jodie::ModelDims dims = jodie::ModelDims::for_dataset(ds, cfg.n, cfg.m);

  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "training_log.csv", std::ios::binary);
  jodie::require(log.good(), "cannot write training_log.csv");
  log << jodie::kTrainingLogHeader << '\n';

  std::printf("training: %zu interactions, %d users, %d items, dims %d/%d, %d epochs\n",
              ds.size(), ds.num_users, ds.num_items, dims.n, dims.m, cfg.train.epochs);
  const jodie::TrainResult result =
      jodie::train(ds, split, dims, cfg.train, [&](const jodie::EpochReport& r) {
        log << jodie::training_log_row(r) << '\n';
        log.flush();
        std::printf("epoch %3d  loss %.6f  val %.4f  (%.2fs)\n", r.epoch, r.loss_total(),
                    r.val_metric, r.seconds);
        std::fflush(stdout);
      });

  jodie::save_checkpoint(result.best_params, (fs::path(out_dir) / "model.ckpt").string());

  const jodie::EvalReport valid =
      jodie::evaluate(result.best_params, ds, split.valid, cfg.train.task);
  const jodie::EvalReport test = jodie::evaluate(result.best_params, ds, split.test,
                                                 cfg.train.task, cfg.early_warning);
  jodie::write_metrics_csv({jodie::metrics_row(cfg.train.task, "valid", valid),
                            jodie::metrics_row(cfg.train.task, "test", test)},
                           (fs::path(out_dir) / "metrics.csv").string());
  if (!test.early_warning.empty())
    jodie::write_early_warning_csv(test.early_warning,
                                   (fs::path(out_dir) / "early_warning.csv").string());

  std::printf("best epoch %d (val %.4f)\n", result.best_epoch, result.best_val_metric);
  if (cfg.train.task == jodie::Task::Interaction)
    std::printf("test mrr %.4f recall@10 %.4f\n", test.mrr, test.recall10());
  else
    std::printf("test auc %.4f\n", test.auc);
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& task_name, int early_warning, const std::string& config_path,
             const std::string& out_dir) {
  const jodie::Task task = parse_task(task_name);
  fs::path ckpt(checkpoint_path);
  if (fs::is_directory(ckpt)) ckpt /= "model.ckpt";
  const jodie::ModelParams params = jodie::load_checkpoint_file(ckpt.string());

  const jodie::Dataset ds = jodie::parse_csv_file(data_path);
  jodie::require(params.dims.num_users == ds.num_users && params.dims.num_items == ds.num_items &&
                     params.dims.feature_dim == ds.feature_dim,
                 "checkpoint was trained on a dataset with different entity counts");

  jodie::RunConfig cfg;
  if (!config_path.empty()) cfg = jodie::load_run_config(config_path);
  cfg.train.task = task;
  const jodie::SplitRanges split = jodie::chronological_split(ds, cfg.resolved_split());

  const jodie::EvalReport test = jodie::evaluate(params, ds, split.test, task, early_warning);
  fs::create_directories(out_dir);
  jodie::write_metrics_csv({jodie::metrics_row(task, "test", test)},
                           (fs::path(out_dir) / "metrics.csv").string());
  if (!test.early_warning.empty())
    jodie::write_early_warning_csv(test.early_warning,
                                   (fs::path(out_dir) / "early_warning.csv").string());

  if (task == jodie::Task::Interaction)
    std::printf("test mrr %.4f recall@10 %.4f (n=%zu)\n", test.mrr, test.recall10(),
                test.n_evaluated);
  else
    std::printf("test auc %.4f (n=%zu)\n", test.auc, test.n_evaluated);
  return 0;
}

int cmd_tbatch_stats(const std::string& data_path, int threads, int embed_dim, bool timing) {
  const jodie::Dataset ds = jodie::parse_csv_file(data_path);
  jodie::require(ds.size() > 0, "dataset has no interactions");

  const jodie::BatchPlan plan = jodie::build_tbatches(ds);
  const jodie::PlanStats st = jodie::plan_stats(plan);
  std::printf("num_interactions,num_batches,mean_batch,max_batch,parallelism\n");
  std::printf("%zu,%zu,%.10g,%zu,%.10g\n", st.num_interactions, st.num_batches, st.mean_batch,
              st.max_batch, st.parallelism);

  if (!timing) return 0;

  // one forward epoch, batch-parallel vs one interaction at a time
  std::vector<jodie::DeltaAnnotation> ann = jodie::annotate_deltas(ds);
  jodie::normalize_deltas(ann, jodie::mean_nonzero_user_delta(ann, jodie::full_range(ds)));
  const jodie::ModelDims dims = jodie::ModelDims::for_dataset(ds, embed_dim, embed_dim);
  const jodie::ModelParams params = jodie::ModelParams::init(dims, 1);

  jodie::EmbeddingBank bank(params);
  jodie::Engine seq_engine(ds, ann, jodie::Task::Interaction, 1);
  const auto t0 = std::chrono::steady_clock::now();
  const jodie::LossBreakdown seq_loss =
      seq_engine.forward_sequential(params, bank, jodie::full_range(ds));
  const double naive_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  bank.reset(params);
  jodie::Engine batch_engine(ds, ann, jodie::Task::Interaction, threads);
  const auto t1 = std::chrono::steady_clock::now();
  const jodie::LossBreakdown batch_loss =
      batch_engine.forward_batched(params, bank, plan, plan.num_batches());
  const double batched_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();

  jodie::require(std::abs(seq_loss.total() - batch_loss.total()) <=
                     1e-10 * std::max(1.0, std::abs(seq_loss.total())),
                 "batched forward diverged from sequential forward");
  std::printf("naive_seconds,batched_seconds,speedup,threads\n");
  std::printf("%.6f,%.6f,%.3f,%d\n", naive_s, batched_s, naive_s / batched_s, threads);
  return 0;
}

int cmd_synth(const std::string& preset, int users, int items, std::int64_t events,
              std::int64_t seed, const std::string& out_path) {
  jodie::check(users > 0 && items > 0 && events > 0, "--users/--items/--events must be positive");
  const jodie::Dataset ds =
      jodie::make_synthetic(preset, users, items, static_cast<std::size_t>(events),
                            static_cast<std::uint64_t>(seed));
  jodie::write_csv_file(ds, out_path);
  std::printf("wrote %zu interactions (%d users, %d items) to %s\n", ds.size(), ds.num_users,
              ds.num_items, out_path.c_str());
  return 0;
}

int cmd_sweep(const std::string& data_path, const std::string& config_path,
              const std::string& out_dir, const std::string& vary,
              const std::vector<double>& values, const FlagOverrides& flags) {
  jodie::check(vary == "train_frac" || vary == "embed_dim", "--vary must be train_frac|embed_dim");
  jodie::RunConfig cfg = jodie::load_run_config(config_path);
  apply_overrides(cfg, flags);

  const jodie::Dataset ds = jodie::parse_csv_file(data_path);
  const jodie::SweepVariable var =
      vary == "train_frac" ? jodie::SweepVariable::TrainFrac : jodie::SweepVariable::EmbedDim;
  const std::vector<jodie::SweepRow> rows =
      jodie::sweep(ds, cfg.resolved_split(), jodie::ModelDims::for_dataset(ds, cfg.n, cfg.m),
                   cfg.train, var, values);
  fs::create_directories(out_dir);
  jodie::write_sweep_csv(rows, var, (fs::path(out_dir) / "sweep.csv").string());
  for (const jodie::SweepRow& r : rows)
    std::printf("%s=%.10g  mrr %.4f  auc %.4f\n", vary.c_str(), r.setting, r.test.mrr,
                r.test.auc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coupled dynamic user/item embeddings over interaction streams"};
  app.require_subcommand(1);

  std::string data, config, out = ".", checkpoint, task = "interaction", preset, vary;
  std::vector<double> values;
  int users = 0, items = 0, threads = 4, embed_dim = 64, early_warning = 0;
  std::int64_t events = 0, synth_seed = 0;
  bool no_timing = false;
  FlagOverrides flags;

  CLI::App* train = app.add_subcommand("train", "train a model and write checkpoint + metrics");
  train->add_option("--data", data, "interaction csv")->required();
  train->add_option("--config", config, "key=value run config")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--epochs", flags.epochs);
  train->add_option("--learning-rate", flags.learning_rate);
  train->add_option("--seed", flags.seed);
  train->add_option("--threads", flags.threads);
  train->add_option("--task", flags.task, "interaction|statechange");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file or directory")->required();
  eval->add_option("--data", data, "interaction csv")->required();
  eval->add_option("--task", task, "interaction|statechange")->required();
  eval->add_option("--early-warning", early_warning, "early-warning horizon (statechange only)");
  eval->add_option("--config", config, "run config for the split fractions");
  eval->add_option("--out", out, "output directory");

  CLI::App* stats = app.add_subcommand("tbatch-stats", "batch plan statistics and timing");
  stats->add_option("--data", data, "interaction csv")->required();
  stats->add_option("--threads", threads, "workers for the batched pass");
  stats->add_option("--embed-dim", embed_dim, "embedding size for the timing run");
  stats->add_flag("--no-timing", no_timing, "skip the forward-pass timing");

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic interaction stream");
  synth->add_option("--preset", preset, "repetitive|drift|dropout")->required();
  synth->add_option("--users", users)->required();
  synth->add_option("--items", items)->required();
  synth->add_option("--events", events)->required();
  synth->add_option("--seed", synth_seed)->required();
  synth->add_option("--out", out, "output csv path")->required();

  CLI::App* sweep = app.add_subcommand("sweep", "train once per setting and tabulate metrics");
  sweep->add_option("--data", data)->required();
  sweep->add_option("--config", config)->required();
  sweep->add_option("--out", out)->required();
  sweep->add_option("--vary", vary, "train_frac|embed_dim")->required();
  sweep->add_option("--values", values, "comma separated settings")->required()->delimiter(',');
  sweep->add_option("--seed", flags.seed);
  sweep->add_option("--threads", flags.threads);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(data, config, out, flags);
    if (eval->parsed()) return cmd_eval(checkpoint, data, task, early_warning, config, out);
    if (stats->parsed()) return cmd_tbatch_stats(data, threads, embed_dim, !no_timing);
    if (synth->parsed()) return cmd_synth(preset, users, items, events, synth_seed, out);
    if (sweep->parsed()) return cmd_sweep(data, config, out, vary, values, flags);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
