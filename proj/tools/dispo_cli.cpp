// Command-line front end: train / eval / profile / ablate.
//
// Flags mirror config-file keys; a config file overrides built-in defaults
// and explicit flags override the file. Errors exit nonzero with a
// machine-readable JSON record on stderr.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dispo/dispo.hpp"

namespace {

struct FlagValues {
  std::string config_path;
  std::string preset;
  std::string algorithm;
  double eps_low = 0, eps_high = 0;
  double eps_plus_low = 0, eps_plus_high = 0, eps_minus_low = 0, eps_minus_high = 0;
  bool correct_only = false;
  std::string task_kind;
  int modulus = 0;
  int soft_limit = 0, hard_limit = 0, rep_window = 0, rep_threshold = 0;
  int group_size = 0, target_groups = 0, micro_groups = 0, rounds = 0, max_attempts = 0;
  double grad_clip = 0, lr = 0, weight_decay = -1;
  int eval_every = 0, eval_tasks = 0, eval_k = 0;
  int context_window = 0;
  std::string init;
  double init_std = -1;
  std::string init_checkpoint;
  std::uint64_t seed = 0;
  std::string out_dir;
  bool dump_rollouts = false;
};

// Registers the shared experiment flags on a subcommand and returns a
// resolver that folds defaults <- config file <- explicit flags.
void add_experiment_flags(CLI::App* cmd, FlagValues& fv) {
  cmd->add_option("--config", fv.config_path, "config file (key = value lines)");
  cmd->add_option("--preset", fv.preset, "named clipping preset");
  cmd->add_option("--algorithm", fv.algorithm, "REINFORCE|GRPO|DAPO|CISPO|DISPO");
  cmd->add_option("--eps-low", fv.eps_low, "symmetric/asymmetric lower epsilon");
  cmd->add_option("--eps-high", fv.eps_high, "symmetric/asymmetric upper epsilon");
  cmd->add_option("--eps-plus-low", fv.eps_plus_low, "DISPO positive-branch lower epsilon");
  cmd->add_option("--eps-plus-high", fv.eps_plus_high, "DISPO positive-branch upper epsilon");
  cmd->add_option("--eps-minus-low", fv.eps_minus_low, "DISPO negative-branch lower epsilon");
  cmd->add_option("--eps-minus-high", fv.eps_minus_high, "DISPO negative-branch upper epsilon");
  cmd->add_flag("--correct-only", fv.correct_only,
                "zero gradient contributions from incorrect responses");
  cmd->add_option("--task-kind", fv.task_kind, "ADD_MOD|MUL_MOD|COPY");
  cmd->add_option("--modulus", fv.modulus, "task modulus (2..100)");
  cmd->add_option("--soft-limit", fv.soft_limit, "overlong penalty onset (tokens)");
  cmd->add_option("--hard-limit", fv.hard_limit, "hard truncation length (tokens)");
  cmd->add_option("--rep-window", fv.rep_window, "repetition detector n-gram length");
  cmd->add_option("--rep-threshold", fv.rep_threshold, "consecutive repeats to truncate");
  cmd->add_option("--group-size", fv.group_size, "rollouts per question (G)");
  cmd->add_option("--target-groups", fv.target_groups, "kept groups per rollout round");
  cmd->add_option("--micro-groups", fv.micro_groups, "groups per gradient update");
  cmd->add_option("--rounds", fv.rounds, "total rollout rounds");
  cmd->add_option("--max-attempts", fv.max_attempts, "sampling attempts per round (0=auto)");
  cmd->add_option("--grad-clip", fv.grad_clip, "global gradient norm clip");
  cmd->add_option("--lr", fv.lr, "learning rate");
  cmd->add_option("--weight-decay", fv.weight_decay, "AdamW decoupled weight decay");
  cmd->add_option("--eval-every", fv.eval_every, "rounds between evaluations");
  cmd->add_option("--eval-tasks", fv.eval_tasks, "evaluation task count");
  cmd->add_option("--eval-k", fv.eval_k, "completions per eval task (Avg@k)");
  cmd->add_option("--context-window", fv.context_window, "policy context window k");
  cmd->add_option("--init", fv.init, "parameter init: zeros|gaussian|checkpoint");
  cmd->add_option("--init-std", fv.init_std, "gaussian init stddev");
  cmd->add_option("--init-checkpoint", fv.init_checkpoint, "checkpoint to initialize from");
  cmd->add_option("--seed", fv.seed, "master seed");
  cmd->add_option("--out", fv.out_dir, "output directory");
  cmd->add_flag("--dump-rollouts", fv.dump_rollouts, "write debug rollout dump");
}

dispo::ExperimentConfig resolve_config(const CLI::App* cmd, const FlagValues& fv) {
  dispo::ExperimentConfig cfg;
  if (cmd->count("--config")) dispo::load_config_file(cfg, fv.config_path);
  const auto set = [&](const char* flag) { return cmd->count(flag) > 0; };
  if (set("--preset")) dispo::apply_preset(cfg, fv.preset);
  if (set("--algorithm")) cfg.clip.algorithm = dispo::algorithm_from_string(fv.algorithm);
  if (set("--eps-low")) cfg.clip.eps_low = fv.eps_low;
  if (set("--eps-high")) cfg.clip.eps_high = fv.eps_high;
  if (set("--eps-plus-low")) cfg.clip.eps_plus_low = fv.eps_plus_low;
  if (set("--eps-plus-high")) cfg.clip.eps_plus_high = fv.eps_plus_high;
  if (set("--eps-minus-low")) cfg.clip.eps_minus_low = fv.eps_minus_low;
  if (set("--eps-minus-high")) cfg.clip.eps_minus_high = fv.eps_minus_high;
  if (set("--correct-only")) cfg.correct_only = fv.correct_only;
  if (set("--task-kind")) cfg.task_kind = dispo::task_kind_from_string(fv.task_kind);
  if (set("--modulus")) cfg.modulus = fv.modulus;
  if (set("--soft-limit")) cfg.limits.soft_limit = fv.soft_limit;
  if (set("--hard-limit")) cfg.limits.hard_limit = fv.hard_limit;
  if (set("--rep-window")) cfg.limits.rep_window = fv.rep_window;
  if (set("--rep-threshold")) cfg.limits.rep_threshold = fv.rep_threshold;
  if (set("--group-size")) cfg.group_size = fv.group_size;
  if (set("--target-groups")) cfg.schedule.mini_batch_groups = fv.target_groups;
  if (set("--micro-groups")) cfg.schedule.micro_batch_groups = fv.micro_groups;
  if (set("--rounds")) cfg.schedule.total_rollout_rounds = fv.rounds;
  if (set("--max-attempts")) cfg.max_attempts = fv.max_attempts;
  if (set("--grad-clip")) cfg.schedule.grad_clip_norm = fv.grad_clip;
  if (set("--lr")) cfg.learning_rate = fv.lr;
  if (set("--weight-decay")) cfg.weight_decay = fv.weight_decay;
  if (set("--eval-every")) cfg.schedule.eval_every = fv.eval_every;
  if (set("--eval-tasks")) cfg.eval_task_count = fv.eval_tasks;
  if (set("--eval-k")) cfg.eval_k = fv.eval_k;
  if (set("--context-window")) cfg.context_window = fv.context_window;
  if (set("--init")) cfg.init = fv.init;
  if (set("--init-std")) cfg.init_std = fv.init_std;
  if (set("--init-checkpoint")) {
    cfg.init_checkpoint = fv.init_checkpoint;
    cfg.init = "checkpoint";
  }
  if (set("--seed")) cfg.seed = fv.seed;
  if (set("--out")) cfg.out_dir = fv.out_dir;
  if (set("--dump-rollouts")) cfg.dump_rollouts = fv.dump_rollouts;
  return cfg;
}

void dump_rollout_debug(const dispo::RunResult& result, const dispo::ExperimentConfig& cfg) {
  // Debug dump: re-sample a handful of groups under the best checkpoint and
  // log them, then score the kept ones against the final policy so the
  // regime log shows real importance-ratio drift.
  namespace fs = std::filesystem;
  const dispo::Vocab vocab = dispo::Vocab::arithmetic();
  dispo::TaskStream tasks(vocab, cfg.task_kind, cfg.modulus,
                          dispo::Rng::derive(cfg.seed, 0xd00dULL));
  dispo::Rng rng(dispo::Rng::derive(cfg.seed, 0xd00d5ULL));
  const dispo::PolicySnapshot snap(result.best_params);
  std::ofstream out((fs::path(cfg.out_dir) / "rollouts.jsonl").string(), std::ios::binary);
  std::vector<dispo::GroupBatch> kept;
  for (int g = 0; g < 8; ++g) {
    dispo::Rng group_rng(rng.next_u64());
    dispo::GroupBatch batch = dispo::rollout_group(tasks.next(), snap, cfg.group_size,
                                                   cfg.limits, vocab, group_rng);
    for (const dispo::Rollout& r : batch.rollouts) {
      nlohmann::ordered_json j;
      j["question"] = vocab.decode(batch.task.question);
      j["response"] = vocab.decode(r.tokens);
      j["base_reward"] = r.reward.base_reward;
      j["shaped_reward"] = r.reward.shaped_reward;
      j["truncated"] = r.reward.truncated;
      j["repetition_truncated"] = r.reward.repetition_truncated;
      j["kept_group"] = batch.kept;
      out << j.dump() << '\n';
    }
    if (batch.kept) kept.push_back(std::move(batch));
  }
  if (!kept.empty()) {
    const auto acc = dispo::accumulate_gradient(kept, cfg.clip, result.final_params,
                                                dispo::Normalization::ByAlgorithm,
                                                cfg.correct_only);
    dispo::write_regime_log((fs::path(cfg.out_dir) / "regime_log.jsonl").string(),
                            acc.per_token);
  }
}

int run_train(const dispo::ExperimentConfig& cfg) {
  const dispo::RunResult result = dispo::run_experiment(cfg);
  dispo::emit_outputs(result, cfg);
  if (cfg.dump_rollouts) dump_rollout_debug(result, cfg);
  const dispo::EvalReport& best = result.eval_reports[result.best_eval_index];
  std::printf("status: %s\n", dispo::to_string(result.status).c_str());
  std::printf("rounds completed: %d, updates: %zu\n", result.rounds_completed,
              result.step_metrics.size());
  std::printf("best Avg@%d: %.4f (update %d)\n", best.k, best.avg_at_k, best.update_index);
  std::printf("outputs: %s\n", cfg.out_dir.c_str());
  if (result.status == dispo::RunStatus::Completed) return 0;
  nlohmann::ordered_json err;
  err["error"] = dispo::to_string(result.status);
  err["rounds_completed"] = result.rounds_completed;
  err["updates"] = result.step_metrics.size();
  std::cerr << err.dump() << '\n';
  return 3;
}

int run_eval(const dispo::ExperimentConfig& cfg, const std::string& checkpoint) {
  const dispo::Vocab vocab = dispo::Vocab::arithmetic();
  const dispo::PolicyParams params = dispo::load_checkpoint(checkpoint);
  std::vector<dispo::Task> tasks;
  for (int i = 0; i < cfg.eval_task_count; ++i) {
    tasks.push_back(dispo::generate_task(
        vocab,
        dispo::Rng::derive(dispo::Rng::derive(cfg.seed, dispo::seed_ns::kEvalTasks),
                           static_cast<std::uint64_t>(i)),
        cfg.task_kind, cfg.modulus));
  }
  dispo::Rng rng(dispo::Rng::derive(cfg.seed, dispo::seed_ns::kEvalSample));
  const dispo::EvalReport report =
      dispo::evaluate(params, tasks, cfg.eval_k, cfg.limits, vocab, rng);
  nlohmann::ordered_json j;
  j["k"] = report.k;
  j["avg_at_k"] = report.avg_at_k;
  j["mean_entropy"] = report.mean_entropy;
  j["mean_length"] = report.mean_length;
  j["tasks"] = tasks.size();
  std::cout << j.dump(2) << '\n';
  return 0;
}

int run_profile(const std::string& out_path, double r_max, int points) {
  if (points < 2 || !(r_max > 0.0)) throw std::invalid_argument("bad profile grid");
  std::vector<double> grid;
  for (int i = 1; i <= points; ++i) grid.push_back(r_max * i / points);
  dispo::write_profiles_csv(out_path, dispo::default_profile_configs(), grid);
  std::printf("wrote %s (%zu rows)\n", out_path.c_str(),
              dispo::default_profile_configs().size() * 2 * grid.size());
  return 0;
}

int run_ablate(dispo::ExperimentConfig base, const std::string& out_root) {
  // The regime-analysis grid: online-SFT plus each positive regime enabled,
  // then full DISPO with each negative regime removed.
  const std::vector<std::string> grid = {
      "online-sft",        "plus-regime1", "plus-regime1-wide", "plus-regime2",
      "plus-regime2-wide", "dispo-paper",  "dispo-minus-regime3", "dispo-minus-regime4",
  };
  int failures = 0;
  for (const std::string& name : grid) {
    dispo::ExperimentConfig cfg = base;
    dispo::apply_preset(cfg, name);
    cfg.out_dir = (std::filesystem::path(out_root) / name).string();
    const dispo::RunResult result = dispo::run_experiment(cfg);
    dispo::emit_outputs(result, cfg);
    const dispo::EvalReport& best = result.eval_reports[result.best_eval_index];
    std::printf("%-22s status=%-18s rounds=%-4d best Avg@%d=%.4f\n", name.c_str(),
                dispo::to_string(result.status).c_str(), result.rounds_completed, best.k,
                best.avg_at_k);
    if (result.status == dispo::RunStatus::NonFiniteGradient) failures += 1;
  }
  return failures == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale RLVR laboratory (DISPO + baselines)"};
  app.require_subcommand(1);

  FlagValues train_fv, eval_fv, ablate_fv;
  CLI::App* train_cmd = app.add_subcommand("train", "run one training experiment");
  add_experiment_flags(train_cmd, train_fv);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (Avg@k)");
  std::string checkpoint;
  add_experiment_flags(eval_cmd, eval_fv);
  eval_cmd->add_option("--checkpoint", checkpoint, "policy checkpoint file")->required();

  CLI::App* profile_cmd = app.add_subcommand("profile", "gradient-weight profiles CSV");
  std::string profile_out = "profiles.csv";
  double r_max = 4.0;
  int r_points = 400;
  profile_cmd->add_option("--out", profile_out, "output CSV path");
  profile_cmd->add_option("--r-max", r_max, "grid upper end");
  profile_cmd->add_option("--points", r_points, "grid point count");

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the regime ablation grid");
  add_experiment_flags(ablate_cmd, ablate_fv);
  std::string ablate_out = "runs/ablation";
  ablate_cmd->add_option("--out-root", ablate_out, "root directory for the grid runs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return run_train(resolve_config(train_cmd, train_fv));
    if (eval_cmd->parsed()) return run_eval(resolve_config(eval_cmd, eval_fv), checkpoint);
    if (profile_cmd->parsed()) return run_profile(profile_out, r_max, r_points);
    if (ablate_cmd->parsed()) {
      dispo::ExperimentConfig cfg = resolve_config(ablate_cmd, ablate_fv);
      return run_ablate(cfg, ablate_out);
    }
  } catch (const std::exception& e) {
    nlohmann::ordered_json err;
    err["error"] = "exception";
    err["message"] = e.what();
    std::cerr << err.dump() << '\n';
    return 2;
  }
  return 1;
}
