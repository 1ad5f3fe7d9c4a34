#pragma once

#include <cstdint>
#include <vector>

#include "dispo/advantage.hpp"
#include "dispo/task.hpp"

namespace dispo {

// One sampled response. ref_log_probs are recorded under the snapshot that
// generated the tokens and never recomputed; live_log_probs are refreshed at
// every gradient step.
struct Rollout {
  std::uint64_t task_id = 0;
  std::vector<int> tokens;
  std::vector<double> ref_log_probs;
  std::vector<double> live_log_probs;
  RewardOutcome reward;

  int length() const { return static_cast<int>(tokens.size()); }
};

// G rollouts for one question. kept == !advantage_set.degenerate; the
// degenerate flag also covers the dynamic-sampling all-same-base-reward test.
struct GroupBatch {
  Task task;
  std::vector<Rollout> rollouts;
  AdvantageSet advantage_set;
  bool kept = false;
};

}  // namespace dispo
