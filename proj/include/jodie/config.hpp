#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>

#include "jodie/common.hpp"
#include "jodie/dataset.hpp"
#include "jodie/trainer.hpp"

namespace jodie {

// Flat key=value run configuration. Unknown keys are errors so typos cannot
// silently fall back to defaults. '#' starts a comment.
struct RunConfig {
  TrainConfig train;
  SplitConfig split;
  bool split_given = false;  // when absent, the task picks its usual split
  std::int32_t n = 128;
  std::int32_t m = 128;
  std::string data_path;
  std::string out_dir;
  int early_warning = 0;

  // 80/10/10 for interaction ranking, 60/20/20 for the sparse-label state
  // change task
  SplitConfig resolved_split() const {
    if (split_given) return split;
    if (train.task == Task::StateChange) return SplitConfig{0.6, 0.2, 0.2};
    return SplitConfig{0.8, 0.1, 0.1};
  }

  void apply(const std::string& key, const std::string& value) {
    const auto as_double = [&] {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      check(used == value.size(), "config: bad number for '" + key + "': '" + value + "'");
      return v;
    };
    const auto as_int = [&] {
      const double v = as_double();
      const auto i = static_cast<std::int64_t>(v);
      check(static_cast<double>(i) == v, "config: expected integer for '" + key + "'");
      return i;
    };
    const auto as_bool = [&] {
      if (value == "1" || value == "true") return true;
      if (value == "0" || value == "false") return false;
      throw InvalidArgument("config: expected 0/1 for '" + key + "', got '" + value + "'");
    };

    if (key == "epochs") train.epochs = static_cast<int>(as_int());
    else if (key == "learning_rate") train.learning_rate = as_double();
    else if (key == "weight_decay") train.weight_decay = as_double();
    else if (key == "bptt_window") train.bptt_window = static_cast<int>(as_int());
    else if (key == "seed") train.seed = static_cast<std::uint64_t>(as_int());
    else if (key == "lambda_u") train.lambda_u = as_double();
    else if (key == "lambda_i") train.lambda_i = as_double();
    else if (key == "lambda_s") train.lambda_s = as_double();
    else if (key == "squared_loss") train.squared_loss = as_bool();
    else if (key == "threads") train.threads = static_cast<int>(as_int());
    else if (key == "delta_scale") train.delta_scale = as_double();
    else if (key == "task") {
      if (value == "interaction") train.task = Task::Interaction;
      else if (value == "statechange") train.task = Task::StateChange;
      else throw InvalidArgument("config: task must be interaction|statechange");
    }
    else if (key == "train_frac") { split.train_frac = as_double(); split_given = true; }
    else if (key == "valid_frac") { split.valid_frac = as_double(); split_given = true; }
    else if (key == "test_frac") { split.test_frac = as_double(); split_given = true; }
    else if (key == "n") n = static_cast<std::int32_t>(as_int());
    else if (key == "m") m = static_cast<std::int32_t>(as_int());
    else if (key == "embed_dim") n = m = static_cast<std::int32_t>(as_int());
    else if (key == "data") data_path = value;
    else if (key == "out") out_dir = value;
    else if (key == "early_warning") early_warning = static_cast<int>(as_int());
    else throw InvalidArgument("config: unknown key '" + key + "'");
  }
};

inline RunConfig parse_run_config(std::istream& in) {
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t");
    line = line.substr(first, last - first + 1);
    const std::size_t eq = line.find('=');
    check(eq != std::string::npos, "config line " + std::to_string(line_no) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto kl = key.find_last_not_of(" \t");
    key = key.substr(0, kl == std::string::npos ? 0 : kl + 1);
    const auto vf = value.find_first_not_of(" \t");
    value = vf == std::string::npos ? "" : value.substr(vf);
    check(!key.empty(), "config line " + std::to_string(line_no) + ": empty key");
    cfg.apply(key, value);
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open config '" + path + "'");
  return parse_run_config(in);
}

}  // namespace jodie
