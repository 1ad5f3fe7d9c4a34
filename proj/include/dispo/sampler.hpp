#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "dispo/policy.hpp"
#include "dispo/rng.hpp"
#include "dispo/rollout.hpp"
#include "dispo/task.hpp"

namespace dispo {

struct SampleLimits {
  int soft_limit = 16;
  int hard_limit = 32;
  int rep_window = 4;
  int rep_threshold = 8;

  void validate() const {
    if (!(0 < soft_limit && soft_limit < hard_limit))
      throw std::invalid_argument("require 0 < soft_limit < hard_limit");
    if (rep_window < 1 || rep_threshold < 2)
      throw std::invalid_argument("require rep_window >= 1 and rep_threshold >= 2");
  }
};

/// True iff the trailing n-gram of length window_n repeats repeat_threshold
/// times consecutively at the tail.
inline bool truncate_on_repetition(std::span<const int> tokens, int window_n,
                                   int repeat_threshold) {
  if (window_n < 1 || repeat_threshold < 2)
    throw std::invalid_argument("require window_n >= 1 and repeat_threshold >= 2");
  const std::size_t span_len =
      static_cast<std::size_t>(window_n) * static_cast<std::size_t>(repeat_threshold);
  if (tokens.size() < span_len) return false;
  const std::size_t base = tokens.size() - span_len;
  for (std::size_t i = base; i + window_n < tokens.size(); ++i)
    if (tokens[i] != tokens[i + window_n]) return false;
  return true;
}

namespace detail {

struct SampledResponse {
  std::vector<int> tokens;
  std::vector<double> log_probs;
  double entropy_sum = 0.0;
  bool truncated = false;
  bool repetition_truncated = false;
};

// Autoregressive sampling at temperature 1.0 until 'E', the hard limit, or
// the repetition detector fires. Log-probs are recorded at generation time.
inline SampledResponse sample_response(const PolicyParams& params, const Task& task,
                                       const SampleLimits& limits, const Vocab& vocab,
                                       Rng& rng) {
  SampledResponse out;
  const int eos = vocab.eos();
  std::vector<int> prefix = task.question;
  while (true) {
    const TokenDistribution dist = token_distribution(params, prefix);
    const int token = sample_from(dist, rng);
    out.tokens.push_back(token);
    out.log_probs.push_back(dist.log_probs[static_cast<std::size_t>(token)]);
    out.entropy_sum += dist.entropy;
    prefix.push_back(token);
    if (token == eos) break;
    if (static_cast<int>(out.tokens.size()) >= limits.hard_limit) {
      out.truncated = true;
      break;
    }
    if (truncate_on_repetition(out.tokens, limits.rep_window, limits.rep_threshold)) {
      out.repetition_truncated = true;
      break;
    }
  }
  return out;
}

}  // namespace detail

/// Samples G rollouts for one task under the frozen snapshot, verifies and
/// shapes rewards, computes group-relative advantages from shaped rewards,
/// and applies the dynamic-sampling filter (all base rewards identical, or a
/// zero-variance shaped group, marks the batch degenerate and kept=false).
inline GroupBatch rollout_group(const Task& task, const PolicySnapshot& snapshot,
                                int group_size, const SampleLimits& limits,
                                const Vocab& vocab, Rng& rng) {
  if (group_size < 2) throw std::invalid_argument("group size must be >= 2");
  limits.validate();
  GroupBatch batch;
  batch.task = task;
  batch.rollouts.reserve(static_cast<std::size_t>(group_size));
  std::vector<double> shaped;
  shaped.reserve(static_cast<std::size_t>(group_size));
  bool all_same_base = true;
  int first_base = 0;
  for (int i = 0; i < group_size; ++i) {
    detail::SampledResponse s =
        detail::sample_response(snapshot.params(), task, limits, vocab, rng);
    Rollout r;
    r.task_id = task.id;
    r.tokens = std::move(s.tokens);
    r.ref_log_probs = std::move(s.log_probs);
    const int base = verify(r.tokens, task, vocab);
    r.reward = shape_reward(base, r.length(), limits.soft_limit, limits.hard_limit);
    r.reward.truncated = s.truncated;
    r.reward.repetition_truncated = s.repetition_truncated;
    shaped.push_back(r.reward.shaped_reward);
    if (i == 0)
      first_base = base;
    else if (base != first_base)
      all_same_base = false;
    batch.rollouts.push_back(std::move(r));
  }
  batch.advantage_set = compute_advantages(shaped);
  if (all_same_base) {
    // dynamic sampling: all-correct or all-incorrect groups are uninformative
    batch.advantage_set.degenerate = true;
    batch.advantage_set.advantages.clear();
  }
  batch.kept = !batch.advantage_set.degenerate;
  return batch;
}

// Deterministic stream of generated tasks (one seed per task, derived from
// the stream seed).
class TaskStream {
 public:
  TaskStream(Vocab vocab, TaskKind kind, int modulus, std::uint64_t stream_seed)
      : vocab_(std::move(vocab)), kind_(kind), modulus_(modulus), seed_(stream_seed) {}

  Task next() { return generate_task(vocab_, Rng::derive(seed_, index_++), kind_, modulus_); }

  const Vocab& vocab() const { return vocab_; }

 private:
  Vocab vocab_;
  TaskKind kind_;
  int modulus_;
  std::uint64_t seed_;
  std::uint64_t index_ = 0;
};

struct BatchFillResult {
  std::vector<GroupBatch> groups;  // kept groups, in generation order
  int attempts = 0;
  int filtered = 0;
  bool starved = false;  // max_attempts exhausted before target_groups filled
};

/// Resamples fresh tasks until target_groups kept groups are collected.
/// Exhausting max_attempts returns the partial batch with starved=true.
inline BatchFillResult fill_effective_batch(TaskStream& tasks, const PolicySnapshot& snapshot,
                                            int group_size, int target_groups,
                                            int max_attempts, const SampleLimits& limits,
                                            Rng& rng) {
  if (target_groups < 1) throw std::invalid_argument("target_groups must be >= 1");
  if (max_attempts < target_groups)
    throw std::invalid_argument("max_attempts must be >= target_groups");
  BatchFillResult out;
  out.groups.reserve(static_cast<std::size_t>(target_groups));
  while (static_cast<int>(out.groups.size()) < target_groups) {
    if (out.attempts >= max_attempts) {
      out.starved = true;
      break;
    }
    out.attempts += 1;
    // one derived rng per group keeps groups independent given (snapshot, seed)
    Rng group_rng(rng.next_u64());
    GroupBatch g = rollout_group(tasks.next(), snapshot, group_size, limits,
                                 tasks.vocab(), group_rng);
    if (g.kept)
      out.groups.push_back(std::move(g));
    else
      out.filtered += 1;
  }
  return out;
}

}  // namespace dispo
