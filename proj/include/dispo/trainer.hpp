#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dispo/metrics.hpp"
#include "dispo/objectives.hpp"
#include "dispo/sampler.hpp"

namespace dispo {

// AdamW with decoupled weight decay. Constants default to the training
// recipe's values; the objective is maximized, so steps follow the ascent
// gradient.
struct OptimizerState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double epsilon = 1e-15;
  double weight_decay = 0.1;
  double learning_rate = 0.05;

  static OptimizerState for_params(const PolicyParams& params, double lr) {
    OptimizerState s;
    s.first_moment.assign(params.weight_count(), 0.0);
    s.second_moment.assign(params.weight_count(), 0.0);
    s.learning_rate = lr;
    return s;
  }
};

/// One AdamW step along the ascent gradient, bias-corrected moments,
/// decoupled decay applied to the pre-step parameters.
inline void apply_adamw_step(OptimizerState& state, PolicyParams& params,
                             std::span<const double> ascent_gradient) {
  if (ascent_gradient.size() != params.weights.size() ||
      state.first_moment.size() != params.weights.size())
    throw std::invalid_argument("optimizer/parameter shape mismatch");
  for (double g : ascent_gradient)
    if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient");
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    const double g = ascent_gradient[i];
    state.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
    state.second_moment[i] =
        state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.first_moment[i] / bc1;
    const double v_hat = state.second_moment[i] / bc2;
    const double w = params.weights[i];
    params.weights[i] =
        w + state.learning_rate * (m_hat / (std::sqrt(v_hat) + state.epsilon)) -
        state.learning_rate * state.weight_decay * w;
    if (!std::isfinite(params.weights[i]))
      throw std::runtime_error("non-finite parameter after optimizer step");
  }
}

/// Scales g in place so its L2 norm is at most max_norm; returns the
/// pre-clip norm.
inline double clip_gradient_norm(std::span<double> gradient, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("grad clip norm must be positive");
  double sq = 0.0;
  for (double g : gradient) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : gradient) g *= scale;
  }
  return norm;
}

struct TrainSchedule {
  int mini_batch_groups = 32;
  int micro_batch_groups = 2;
  int total_rollout_rounds = 100;
  double grad_clip_norm = 1.0;
  int eval_every = 5;  // rollout rounds between evaluations

  int updates_per_rollout() const { return mini_batch_groups / micro_batch_groups; }

  void validate() const {
    if (mini_batch_groups < 1 || micro_batch_groups < 1)
      throw std::invalid_argument("batch group counts must be positive");
    if (mini_batch_groups % micro_batch_groups != 0)
      throw std::invalid_argument("micro_batch_groups must divide mini_batch_groups");
    if (total_rollout_rounds < 1)
      throw std::invalid_argument("total_rollout_rounds must be positive");
    if (!(grad_clip_norm > 0.0))
      throw std::invalid_argument("grad_clip_norm must be positive");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be positive");
  }
};

enum class RoundStatus { Completed, BatchStarved, NonFiniteGradient };

struct RoundResult {
  std::vector<StepMetrics> step_metrics;
  RoundStatus status = RoundStatus::Completed;
  int attempts = 0;
  int filtered = 0;
};

/// One off-policy round: snapshot the live policy, fill the mini-batch with
/// kept groups under that snapshot, then run mini/micro gradient updates.
/// Every importance ratio within the round uses the same snapshot; the first
/// update sees r == 1 everywhere.
inline RoundResult train_round(PolicyParams& live, OptimizerState& optimizer,
                               const TrainSchedule& schedule, const ClipConfig& cfg,
                               TaskStream& tasks, const SampleLimits& limits, int group_size,
                               int max_attempts, bool correct_only, int round_index,
                               int update_index_base, Rng& rollout_rng) {
  schedule.validate();
  cfg.validate();
  RoundResult result;
  const PolicySnapshot ref = snapshot(live);
  BatchFillResult fill =
      fill_effective_batch(tasks, ref, group_size, schedule.mini_batch_groups, max_attempts,
                           limits, rollout_rng);
  result.attempts = fill.attempts;
  result.filtered = fill.filtered;
  if (fill.starved) {
    result.status = RoundStatus::BatchStarved;
    return result;
  }
  const int updates = schedule.updates_per_rollout();
  for (int u = 0; u < updates; ++u) {
    std::span<GroupBatch> micro(fill.groups.data() +
                                    static_cast<std::size_t>(u) * schedule.micro_batch_groups,
                                static_cast<std::size_t>(schedule.micro_batch_groups));
    GradientAccumulation acc;
    try {
      acc = accumulate_gradient(micro, cfg, live, Normalization::ByAlgorithm, correct_only);
    } catch (const std::runtime_error&) {
      result.status = RoundStatus::NonFiniteGradient;
      return result;
    }
    StepMetrics m;
    m.update_index = update_index_base + u;
    m.rollout_round = round_index;
    long correct = 0, total = 0;
    for (const GroupBatch& g : micro) {
      for (const Rollout& r : g.rollouts) {
        total += 1;
        if (r.reward.base_reward > 0) correct += 1;
      }
    }
    m.train_accuracy = total > 0 ? static_cast<double>(correct) / total : 0.0;
    m.mean_token_entropy = acc.mean_token_entropy;
    m.mean_response_length = acc.mean_response_length;
    m.regime_counts = acc.regime_counts;
    m.groups_filtered = fill.filtered;
    m.grad_norm_pre_clip = clip_gradient_norm(acc.gradient, schedule.grad_clip_norm);
    double post_sq = 0.0;
    for (double g : acc.gradient) post_sq += g * g;
    m.grad_norm_post_clip = std::sqrt(post_sq);
    try {
      apply_adamw_step(optimizer, live, acc.gradient);
    } catch (const std::runtime_error&) {
      result.status = RoundStatus::NonFiniteGradient;
      result.step_metrics.push_back(m);
      return result;
    }
    result.step_metrics.push_back(m);
  }
  return result;
}

}  // namespace dispo
