#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dispo/config.hpp"
#include "dispo/metrics.hpp"
#include "dispo/trainer.hpp"

namespace dispo {

enum class RunStatus { Completed, BatchStarved, NonFiniteGradient };

inline std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Completed: return "completed";
    case RunStatus::BatchStarved: return "batch_starved";
    case RunStatus::NonFiniteGradient: return "non_finite_gradient";
  }
  return "unknown";
}

struct RunResult {
  std::vector<StepMetrics> step_metrics;
  std::vector<EvalReport> eval_reports;
  PolicyParams final_params;
  PolicyParams best_params;
  std::size_t best_eval_index = 0;
  std::vector<Task> eval_tasks;
  RunStatus status = RunStatus::Completed;
  int rounds_completed = 0;
};

// Seed namespaces: training tasks, rollout sampling, eval tasks and eval
// sampling are all derived from the master seed through distinct streams, so
// the eval set is disjoint from the training stream by construction.
namespace seed_ns {
constexpr std::uint64_t kTaskStream = 0x7461736bULL;   // training task stream
constexpr std::uint64_t kRollouts = 0x726f6c6cULL;     // rollout sampling
constexpr std::uint64_t kEvalTasks = 0x6576616cULL;    // eval task set
constexpr std::uint64_t kEvalSample = 0x65736d70ULL;   // eval-time sampling
constexpr std::uint64_t kInit = 0x696e6974ULL;         // gaussian init
}  // namespace seed_ns

/// Runs one experiment to completion (or starvation/numerical abort),
/// evaluating every eval_every rounds plus once at the end. Deterministic
/// given the config, including the metrics and evaluation series.
inline RunResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const Vocab vocab = Vocab::arithmetic();

  PolicyParams live = PolicyParams::zeros(vocab.size(), cfg.context_window);
  if (cfg.init == "gaussian") {
    Rng init_rng(Rng::derive(cfg.seed, seed_ns::kInit));
    live = PolicyParams::gaussian(vocab.size(), cfg.context_window, cfg.init_std, init_rng);
  } else if (cfg.init == "checkpoint") {
    live = load_checkpoint(cfg.init_checkpoint);
    if (live.vocab_size != vocab.size())
      throw std::invalid_argument("init checkpoint vocab size does not match the task vocab");
  }
  OptimizerState optimizer = OptimizerState::for_params(live, cfg.learning_rate);
  optimizer.beta1 = cfg.beta1;
  optimizer.beta2 = cfg.beta2;
  optimizer.epsilon = cfg.adam_epsilon;
  optimizer.weight_decay = cfg.weight_decay;

  TaskStream tasks(vocab, cfg.task_kind, cfg.modulus, Rng::derive(cfg.seed, seed_ns::kTaskStream));
  Rng rollout_rng(Rng::derive(cfg.seed, seed_ns::kRollouts));

  RunResult result;
  result.eval_tasks.reserve(static_cast<std::size_t>(cfg.eval_task_count));
  for (int i = 0; i < cfg.eval_task_count; ++i) {
    result.eval_tasks.push_back(generate_task(
        vocab, Rng::derive(Rng::derive(cfg.seed, seed_ns::kEvalTasks), static_cast<std::uint64_t>(i)),
        cfg.task_kind, cfg.modulus));
  }

  const auto run_eval = [&](int round_index, int update_index) {
    Rng eval_rng(Rng::derive(Rng::derive(cfg.seed, seed_ns::kEvalSample),
                             static_cast<std::uint64_t>(round_index)));
    EvalReport report =
        evaluate(live, result.eval_tasks, cfg.eval_k, cfg.limits, vocab, eval_rng);
    report.rollout_round = round_index;
    report.update_index = update_index;
    const bool best = result.eval_reports.empty() ||
                      report.avg_at_k >
                          result.eval_reports[select_best_checkpoint(result.eval_reports)].avg_at_k;
    report.best_so_far = best;
    result.eval_reports.push_back(report);
    if (best) result.best_params = live;
  };

  int update_index = 0;
  for (int round = 0; round < cfg.schedule.total_rollout_rounds; ++round) {
    RoundResult rr = train_round(live, optimizer, cfg.schedule, cfg.clip, tasks, cfg.limits,
                                 cfg.group_size, cfg.effective_max_attempts(),
                                 cfg.correct_only, round, update_index, rollout_rng);
    for (StepMetrics& m : rr.step_metrics) result.step_metrics.push_back(m);
    update_index += static_cast<int>(rr.step_metrics.size());
    if (rr.status != RoundStatus::Completed) {
      result.status = rr.status == RoundStatus::BatchStarved ? RunStatus::BatchStarved
                                                             : RunStatus::NonFiniteGradient;
      break;
    }
    result.rounds_completed = round + 1;
    if ((round + 1) % cfg.schedule.eval_every == 0 ||
        round + 1 == cfg.schedule.total_rollout_rounds) {
      run_eval(round, update_index - 1);
    }
  }
  if (result.eval_reports.empty())
    run_eval(result.rounds_completed, update_index > 0 ? update_index - 1 : 0);
  result.best_eval_index = select_best_checkpoint(result.eval_reports);
  if (result.best_params.weights.empty()) result.best_params = live;
  result.final_params = std::move(live);
  return result;
}

/// Default gradient-weight profile configurations: every algorithm at its
/// paper clipping values.
inline std::vector<ClipConfig> default_profile_configs() {
  std::vector<ClipConfig> out;
  ClipConfig c;
  c.algorithm = Algorithm::Reinforce;
  out.push_back(c);
  c = ClipConfig{};
  c.algorithm = Algorithm::Grpo;
  c.eps_low = c.eps_high = 0.2;
  out.push_back(c);
  c = ClipConfig{};
  c.algorithm = Algorithm::Dapo;
  c.eps_low = 0.2;
  c.eps_high = 0.28;
  out.push_back(c);
  c = ClipConfig{};
  c.algorithm = Algorithm::Cispo;
  c.eps_low = 1.0;
  c.eps_high = 100.0;
  out.push_back(c);
  c = ClipConfig{};
  c.algorithm = Algorithm::Dispo;
  c.eps_plus_low = 0.2;
  c.eps_plus_high = 10.0;
  c.eps_minus_low = 1.0;
  c.eps_minus_high = 100.0;
  out.push_back(c);
  return out;
}

inline std::vector<double> default_profile_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 400; ++i) grid.push_back(i * 0.01);  // 0.01 .. 4.00
  return grid;
}

/// Writes metrics.jsonl, eval.csv, profiles.csv, config snapshot, the eval
/// task manifest, checkpoints, and the SVG plots into out_dir.
inline void emit_outputs(const RunResult& result, const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const auto path = [&](const char* name) { return (fs::path(cfg.out_dir) / name).string(); };

  write_metrics_jsonl(path("metrics.jsonl"), result.step_metrics);
  write_eval_csv(path("eval.csv"), result.eval_reports);
  const auto profile_configs = default_profile_configs();
  const auto grid = default_profile_grid();
  write_profiles_csv(path("profiles.csv"), profile_configs, grid);
  {
    std::ofstream out(path("config.txt"), std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path("config.txt"));
    out << serialize_config(cfg);
    out << "# status: " << to_string(result.status) << '\n';
    out << "# rounds_completed: " << result.rounds_completed << '\n';
  }
  write_manifest(path("tasks.manifest"), result.eval_tasks, Vocab::arithmetic());
  save_checkpoint(path("checkpoint_final.txt"), result.final_params);
  save_checkpoint(path("checkpoint_best.txt"), result.best_params);

  std::vector<double> xs, acc, ent, len;
  for (const StepMetrics& m : result.step_metrics) {
    xs.push_back(m.update_index);
    acc.push_back(m.train_accuracy);
    ent.push_back(m.mean_token_entropy);
    len.push_back(m.mean_response_length);
  }
  write_svg_line_plot(path("accuracy.svg"), "train accuracy vs update", "accuracy", xs, acc);
  write_svg_line_plot(path("entropy.svg"), "mean token entropy vs update", "entropy (nats)",
                      xs, ent);
  write_svg_line_plot(path("length.svg"), "mean response length vs update", "tokens", xs, len);
}

}  // namespace dispo
