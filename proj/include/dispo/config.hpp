#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dispo/objectives.hpp"
#include "dispo/sampler.hpp"
#include "dispo/task.hpp"
#include "dispo/trainer.hpp"

namespace dispo {

// Full experiment description. File format is `key = value` lines with '#'
// comments; CLI flags override file values, file values override defaults.
struct ExperimentConfig {
  std::string preset;  // optional, applied before explicit overrides
  ClipConfig clip;
  bool correct_only = false;  // zero gradient contributions of incorrect responses

  TaskKind task_kind = TaskKind::AddMod;
  int modulus = 10;
  SampleLimits limits;

  int group_size = 16;
  TrainSchedule schedule;
  int max_attempts = 0;  // 0 -> 10 * mini_batch_groups

  double learning_rate = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_epsilon = 1e-15;
  double weight_decay = 0.1;

  int context_window = 8;
  std::string init = "zeros";  // zeros | gaussian | checkpoint
  double init_std = 0.02;
  std::string init_checkpoint;  // required when init == "checkpoint"

  int eval_task_count = 32;
  int eval_k = 16;

  std::uint64_t seed = 1;
  std::string out_dir = "runs/out";
  bool dump_rollouts = false;

  int effective_max_attempts() const {
    return max_attempts > 0 ? max_attempts : 10 * schedule.mini_batch_groups;
  }

  void validate() const {
    clip.validate();
    limits.validate();
    schedule.validate();
    if (group_size < 2) throw std::invalid_argument("group_size must be >= 2");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (context_window < 1) throw std::invalid_argument("context_window must be >= 1");
    if (init != "zeros" && init != "gaussian" && init != "checkpoint")
      throw std::invalid_argument("init must be 'zeros', 'gaussian', or 'checkpoint'");
    if (init == "checkpoint" && init_checkpoint.empty())
      throw std::invalid_argument("init = checkpoint requires init_checkpoint");
    if (eval_task_count < 1 || eval_k < 1)
      throw std::invalid_argument("eval_task_count and eval_k must be positive");
  }
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {
      "reinforce",         "grpo",
      "dapo-paper",        "cispo-paper",
      "dispo-paper",       "online-sft",
      "plus-regime1",      "plus-regime1-wide",
      "plus-regime2",      "plus-regime2-wide",
      "dispo-minus-regime3", "dispo-minus-regime4",
  };
  return names;
}

/// Applies a named clipping preset. The regime-ablation presets also set the
/// correct-only flag (positive-regime rows train on correct responses only).
inline void apply_preset(ExperimentConfig& cfg, const std::string& name) {
  ClipConfig c;
  bool correct_only = false;
  if (name == "reinforce") {
    c.algorithm = Algorithm::Reinforce;
  } else if (name == "grpo") {
    c.algorithm = Algorithm::Grpo;
    c.eps_low = c.eps_high = 0.2;
  } else if (name == "dapo-paper") {
    c.algorithm = Algorithm::Dapo;
    c.eps_low = 0.2;
    c.eps_high = 0.28;
  } else if (name == "cispo-paper") {
    c.algorithm = Algorithm::Cispo;
    c.eps_low = 1.0;
    c.eps_high = 100.0;
  } else if (name == "dispo-paper") {
    c.algorithm = Algorithm::Dispo;
    c.eps_plus_low = 0.2;
    c.eps_plus_high = 10.0;
    c.eps_minus_low = 1.0;
    c.eps_minus_high = 100.0;
  } else if (name == "online-sft") {
    c.algorithm = Algorithm::Dispo;
    correct_only = true;
  } else if (name == "plus-regime1") {
    c.algorithm = Algorithm::Dispo;
    c.eps_plus_high = 0.28;
    correct_only = true;
  } else if (name == "plus-regime1-wide") {
    c.algorithm = Algorithm::Dispo;
    c.eps_plus_high = 10.0;
    correct_only = true;
  } else if (name == "plus-regime2") {
    c.algorithm = Algorithm::Dispo;
    c.eps_plus_low = 0.2;
    correct_only = true;
  } else if (name == "plus-regime2-wide") {
    c.algorithm = Algorithm::Dispo;
    c.eps_plus_low = 1.0;
    correct_only = true;
  } else if (name == "dispo-minus-regime3") {
    c.algorithm = Algorithm::Dispo;
    c.eps_plus_low = 0.2;
    c.eps_plus_high = 10.0;
    c.eps_minus_low = 1.0;
    c.eps_minus_high = 0.0;
  } else if (name == "dispo-minus-regime4") {
    c.algorithm = Algorithm::Dispo;
    c.eps_plus_low = 0.2;
    c.eps_plus_high = 10.0;
    c.eps_minus_low = 0.0;
    c.eps_minus_high = 100.0;
  } else {
    std::ostringstream msg;
    msg << "unknown preset '" << name << "'; valid presets:";
    for (const std::string& p : preset_names()) msg << ' ' << p;
    throw std::invalid_argument(msg.str());
  }
  cfg.preset = name;
  cfg.clip = c;
  cfg.correct_only = correct_only;
}

namespace detail {
inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace detail

/// Applies one `key = value` setting. Throws on unknown keys or bad values.
inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
  const auto to_int = [&](const std::string& v) { return std::stoi(v); };
  const auto to_double = [&](const std::string& v) { return std::stod(v); };
  const auto to_bool = [&](const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("expected boolean for " + key + ", got " + v);
  };
  if (key == "preset") apply_preset(cfg, value);
  else if (key == "algorithm") cfg.clip.algorithm = algorithm_from_string(value);
  else if (key == "eps_low") cfg.clip.eps_low = to_double(value);
  else if (key == "eps_high") cfg.clip.eps_high = to_double(value);
  else if (key == "eps_plus_low") cfg.clip.eps_plus_low = to_double(value);
  else if (key == "eps_plus_high") cfg.clip.eps_plus_high = to_double(value);
  else if (key == "eps_minus_low") cfg.clip.eps_minus_low = to_double(value);
  else if (key == "eps_minus_high") cfg.clip.eps_minus_high = to_double(value);
  else if (key == "correct_only") cfg.correct_only = to_bool(value);
  else if (key == "task_kind") cfg.task_kind = task_kind_from_string(value);
  else if (key == "modulus") cfg.modulus = to_int(value);
  else if (key == "soft_limit") cfg.limits.soft_limit = to_int(value);
  else if (key == "hard_limit") cfg.limits.hard_limit = to_int(value);
  else if (key == "rep_window") cfg.limits.rep_window = to_int(value);
  else if (key == "rep_threshold") cfg.limits.rep_threshold = to_int(value);
  else if (key == "group_size") cfg.group_size = to_int(value);
  else if (key == "mini_batch_groups") cfg.schedule.mini_batch_groups = to_int(value);
  else if (key == "micro_batch_groups") cfg.schedule.micro_batch_groups = to_int(value);
  else if (key == "total_rollout_rounds") cfg.schedule.total_rollout_rounds = to_int(value);
  else if (key == "grad_clip_norm") cfg.schedule.grad_clip_norm = to_double(value);
  else if (key == "eval_every") cfg.schedule.eval_every = to_int(value);
  else if (key == "max_attempts") cfg.max_attempts = to_int(value);
  else if (key == "learning_rate") cfg.learning_rate = to_double(value);
  else if (key == "beta1") cfg.beta1 = to_double(value);
  else if (key == "beta2") cfg.beta2 = to_double(value);
  else if (key == "adam_epsilon") cfg.adam_epsilon = to_double(value);
  else if (key == "weight_decay") cfg.weight_decay = to_double(value);
  else if (key == "context_window") cfg.context_window = to_int(value);
  else if (key == "init") cfg.init = value;
  else if (key == "init_std") cfg.init_std = to_double(value);
  else if (key == "init_checkpoint") cfg.init_checkpoint = value;
  else if (key == "eval_task_count") cfg.eval_task_count = to_int(value);
  else if (key == "eval_k") cfg.eval_k = to_int(value);
  else if (key == "seed") cfg.seed = std::stoull(value);
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "dump_rollouts") cfg.dump_rollouts = to_bool(value);
  else throw std::invalid_argument("unknown config key: " + key);
}

inline void load_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno += 1;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    apply_config_entry(cfg, key, value);
  }
}

/// Resolved-config snapshot, loadable back through load_config_file.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  const auto d = [](double x) { return detail::fmt_double(x); };
  if (!cfg.preset.empty()) os << "# preset applied: " << cfg.preset << '\n';
  os << "algorithm = " << to_string(cfg.clip.algorithm) << '\n';
  os << "eps_low = " << d(cfg.clip.eps_low) << '\n';
  os << "eps_high = " << d(cfg.clip.eps_high) << '\n';
  os << "eps_plus_low = " << d(cfg.clip.eps_plus_low) << '\n';
  os << "eps_plus_high = " << d(cfg.clip.eps_plus_high) << '\n';
  os << "eps_minus_low = " << d(cfg.clip.eps_minus_low) << '\n';
  os << "eps_minus_high = " << d(cfg.clip.eps_minus_high) << '\n';
  os << "correct_only = " << (cfg.correct_only ? "true" : "false") << '\n';
  os << "task_kind = " << to_string(cfg.task_kind) << '\n';
  os << "modulus = " << cfg.modulus << '\n';
  os << "soft_limit = " << cfg.limits.soft_limit << '\n';
  os << "hard_limit = " << cfg.limits.hard_limit << '\n';
  os << "rep_window = " << cfg.limits.rep_window << '\n';
  os << "rep_threshold = " << cfg.limits.rep_threshold << '\n';
  os << "group_size = " << cfg.group_size << '\n';
  os << "mini_batch_groups = " << cfg.schedule.mini_batch_groups << '\n';
  os << "micro_batch_groups = " << cfg.schedule.micro_batch_groups << '\n';
  os << "total_rollout_rounds = " << cfg.schedule.total_rollout_rounds << '\n';
  os << "grad_clip_norm = " << d(cfg.schedule.grad_clip_norm) << '\n';
  os << "eval_every = " << cfg.schedule.eval_every << '\n';
  os << "max_attempts = " << cfg.max_attempts << '\n';
  os << "learning_rate = " << d(cfg.learning_rate) << '\n';
  os << "beta1 = " << d(cfg.beta1) << '\n';
  os << "beta2 = " << d(cfg.beta2) << '\n';
  os << "adam_epsilon = " << d(cfg.adam_epsilon) << '\n';
  os << "weight_decay = " << d(cfg.weight_decay) << '\n';
  os << "context_window = " << cfg.context_window << '\n';
  os << "init = " << cfg.init << '\n';
  os << "init_std = " << d(cfg.init_std) << '\n';
  if (!cfg.init_checkpoint.empty()) os << "init_checkpoint = " << cfg.init_checkpoint << '\n';
  os << "eval_task_count = " << cfg.eval_task_count << '\n';
  os << "eval_k = " << cfg.eval_k << '\n';
  os << "seed = " << cfg.seed << '\n';
  os << "out_dir = " << cfg.out_dir << '\n';
  os << "dump_rollouts = " << (cfg.dump_rollouts ? "true" : "false") << '\n';
  return os.str();
}

}  // namespace dispo
