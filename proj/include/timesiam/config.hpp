#pragma once

// Run configuration: a flat text file of dotted keys (`model.window=96`),
// applied on top of paper-style defaults, overridable by CLI flags and the
// TIMESIAM_SEED environment variable. Unknown keys are rejected. dump()
// emits the full effective configuration, which re-parses to itself.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "timesiam/common.hpp"
#include "timesiam/finetune.hpp"
#include "timesiam/model.hpp"
#include "timesiam/train.hpp"

namespace timesiam {

struct RunConfig {
  uint64_t seed = 0;
  std::string timestamp_column;  // empty: no timestamp column
  double train_ratio = 0.7;
  double val_ratio = 0.1;
  double test_ratio = 0.2;
  ModelConfig model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;

  // Task-dependent defaults (batch/epochs) only apply when not set explicitly.
  bool pretrain_epochs_set = false;
  bool pretrain_batch_set = false;
  bool finetune_epochs_set = false;
  bool finetune_batch_set = false;

  void apply(const std::string& key, const std::string& value) {
    if (model_config_apply(model, key, value)) return;
    if (key == "seed") {
      try {
        seed = std::stoull(value);
      } catch (const std::exception&) {
        throw ConfigError("key 'seed': cannot parse '" + value + "' as an integer");
      }
    } else if (key == "data.timestamp_column") {
      timestamp_column = value;
    } else if (key == "data.train_ratio") {
      train_ratio = detail::parse_double_value(key, value);
    } else if (key == "data.val_ratio") {
      val_ratio = detail::parse_double_value(key, value);
    } else if (key == "data.test_ratio") {
      test_ratio = detail::parse_double_value(key, value);
    } else if (key == "pretrain.learning_rate") {
      pretrain.learning_rate = detail::parse_double_value(key, value);
    } else if (key == "pretrain.batch_size") {
      pretrain.batch_size = detail::parse_int_value(key, value);
      pretrain_batch_set = true;
    } else if (key == "pretrain.epochs") {
      pretrain.epochs = detail::parse_int_value(key, value);
      pretrain_epochs_set = true;
    } else if (key == "pretrain.steps_per_epoch") {
      pretrain.steps_per_epoch = detail::parse_int_value(key, value);
    } else if (key == "pretrain.loss_mode") {
      pretrain.loss_mode = parse_loss_mode(value);
    } else if (key == "finetune.task") {
      finetune.task = parse_task(value);
    } else if (key == "finetune.mode") {
      finetune.mode = parse_tune_mode(value);
    } else if (key == "finetune.fusion") {
      finetune.fusion = parse_fusion(value);
    } else if (key == "finetune.lineages_used") {
      finetune.lineages_used = detail::parse_int_value(key, value);
    } else if (key == "finetune.horizons") {
      finetune.horizons.clear();
      std::istringstream is(value);
      std::string tok;
      while (std::getline(is, tok, ','))
        if (!tok.empty())
          finetune.horizons.push_back(detail::parse_int_value(key, tok));
      if (finetune.horizons.empty())
        throw ConfigError("key 'finetune.horizons': no horizons given");
    } else if (key == "finetune.learning_rate") {
      finetune.learning_rate = detail::parse_double_value(key, value);
    } else if (key == "finetune.epochs") {
      finetune.epochs = detail::parse_int_value(key, value);
      finetune_epochs_set = true;
    } else if (key == "finetune.batch_size") {
      finetune.batch_size = detail::parse_int_value(key, value);
      finetune_batch_set = true;
    } else if (key == "finetune.steps_per_epoch") {
      finetune.steps_per_epoch = detail::parse_int_value(key, value);
    } else if (key == "finetune.input_length") {
      finetune.input_length = detail::parse_int_value(key, value);
    } else if (key == "finetune.test_fraction") {
      finetune.test_fraction = detail::parse_double_value(key, value);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }

  // Applies `key=value` text (one override string, e.g. from a --set flag).
  void apply_line(const std::string& line) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config override '" + line + "' is not key=value");
    apply(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }

  // Paper-style task-dependent defaults and seed propagation. Call after all
  // overrides are in.
  void finalize() {
    const bool classify = finetune.task == TaskKind::classify;
    if (classify && !pretrain_epochs_set) pretrain.epochs = 100;
    if (classify && !pretrain_batch_set) pretrain.batch_size = 256;
    if (classify && !finetune_epochs_set) finetune.epochs = 50;
    if (classify && !finetune_batch_set) finetune.batch_size = 64;
    pretrain.seed = seed;
    finetune.seed = seed;
  }

  std::string dump() const {
    std::ostringstream os;
    os.precision(17);
    os << "seed=" << seed << "\n";
    os << "data.timestamp_column=" << timestamp_column << "\n";
    os << "data.train_ratio=" << train_ratio << "\n";
    os << "data.val_ratio=" << val_ratio << "\n";
    os << "data.test_ratio=" << test_ratio << "\n";
    for (const auto& [k, v] : model_config_entries(model)) os << k << "=" << v << "\n";
    os << "pretrain.learning_rate=" << pretrain.learning_rate << "\n";
    os << "pretrain.batch_size=" << pretrain.batch_size << "\n";
    os << "pretrain.epochs=" << pretrain.epochs << "\n";
    os << "pretrain.steps_per_epoch=" << pretrain.steps_per_epoch << "\n";
    os << "pretrain.loss_mode="
       << (pretrain.loss_mode == LossMode::all ? "all" : "masked_only") << "\n";
    os << "finetune.task=" << task_name(finetune.task) << "\n";
    os << "finetune.mode=" << tune_mode_name(finetune.mode) << "\n";
    os << "finetune.fusion=" << fusion_name(finetune.fusion) << "\n";
    os << "finetune.lineages_used=" << finetune.lineages_used << "\n";
    std::string hs;
    for (size_t i = 0; i < finetune.horizons.size(); ++i)
      hs += (i ? "," : "") + std::to_string(finetune.horizons[i]);
    os << "finetune.horizons=" << hs << "\n";
    os << "finetune.learning_rate=" << finetune.learning_rate << "\n";
    os << "finetune.epochs=" << finetune.epochs << "\n";
    os << "finetune.batch_size=" << finetune.batch_size << "\n";
    os << "finetune.steps_per_epoch=" << finetune.steps_per_epoch << "\n";
    os << "finetune.input_length=" << finetune.input_length << "\n";
    os << "finetune.test_fraction=" << finetune.test_fraction << "\n";
    return os.str();
  }
};

// Parses a config file: `key = value` lines, '#' comments, blank lines ok.
inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  RunConfig rc;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected key=value, got '" + line + "'");
    rc.apply(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return rc;
}

// TIMESIAM_SEED wins over config files and flags when set.
inline void apply_seed_env(RunConfig& rc) {
  if (const char* env = std::getenv("TIMESIAM_SEED")) {
    try {
      size_t pos = 0;
      rc.seed = std::stoull(std::string(env), &pos);
      if (pos != std::string(env).size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError(std::string("TIMESIAM_SEED is not an integer: '") + env + "'");
    }
  }
}

}  // namespace timesiam
