#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dispo/advantage.hpp"
#include "dispo/policy.hpp"
#include "dispo/rollout.hpp"

namespace dispo {

enum class Algorithm { Reinforce, Grpo, Dapo, Cispo, Dispo };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Reinforce: return "REINFORCE";
    case Algorithm::Grpo: return "GRPO";
    case Algorithm::Dapo: return "DAPO";
    case Algorithm::Cispo: return "CISPO";
    case Algorithm::Dispo: return "DISPO";
  }
  throw std::invalid_argument("unknown algorithm");
}

inline Algorithm algorithm_from_string(std::string_view s) {
  if (s == "REINFORCE" || s == "reinforce") return Algorithm::Reinforce;
  if (s == "GRPO" || s == "grpo") return Algorithm::Grpo;
  if (s == "DAPO" || s == "dapo") return Algorithm::Dapo;
  if (s == "CISPO" || s == "cispo") return Algorithm::Cispo;
  if (s == "DISPO" || s == "dispo") return Algorithm::Dispo;
  throw std::invalid_argument("unknown algorithm: " + std::string(s));
}

// The single switchboard for every clipping regime. GRPO/DAPO/CISPO read
// (eps_low, eps_high); DISPO reads the four decoupled fields; REINFORCE
// ignores all of them.
struct ClipConfig {
  Algorithm algorithm = Algorithm::Dispo;
  double eps_low = 0.0;
  double eps_high = 0.0;
  double eps_plus_low = 0.0;
  double eps_plus_high = 0.0;
  double eps_minus_low = 0.0;
  double eps_minus_high = 0.0;

  void validate() const {
    const auto nonneg = [](double e, const char* name) {
      if (!(e >= 0.0)) throw std::invalid_argument(std::string(name) + " must be >= 0");
    };
    nonneg(eps_low, "eps_low");
    nonneg(eps_high, "eps_high");
    nonneg(eps_plus_low, "eps_plus_low");
    nonneg(eps_plus_high, "eps_plus_high");
    nonneg(eps_minus_low, "eps_minus_low");
    nonneg(eps_minus_high, "eps_minus_high");
    // r >= 0 always, so a clip floor below zero is a configuration error
    switch (algorithm) {
      case Algorithm::Reinforce:
        break;
      case Algorithm::Grpo:
        if (eps_low != eps_high)
          throw std::invalid_argument("GRPO uses a symmetric window: eps_low == eps_high");
        [[fallthrough]];
      case Algorithm::Dapo:
      case Algorithm::Cispo:
        if (eps_low > 1.0)
          throw std::invalid_argument("eps_low > 1 makes the clip floor negative");
        break;
      case Algorithm::Dispo:
        if (eps_plus_low > 1.0 || eps_minus_low > 1.0)
          throw std::invalid_argument("decoupled eps_*_low > 1 makes the clip floor negative");
        break;
    }
  }
};

/// clip(x; a, b) = min(max(x, a), b)
inline double clip_ratio(double r, double low, double high) {
  if (low > high) throw std::invalid_argument("clip bounds out of order");
  return std::min(std::max(r, low), high);
}

/// Decoupled IS weight: the clip window depends on the advantage sign.
inline double decoupled_ratio(double r, double advantage, const ClipConfig& cfg) {
  if (cfg.algorithm != Algorithm::Dispo)
    throw std::logic_error("decoupled_ratio requires the DISPO algorithm");
  if (advantage == 0.0)
    throw std::logic_error("zero advantage: dynamic sampling must filter degenerate groups");
  return advantage > 0.0
             ? clip_ratio(r, 1.0 - cfg.eps_plus_low, 1.0 + cfg.eps_plus_high)
             : clip_ratio(r, 1.0 - cfg.eps_minus_low, 1.0 + cfg.eps_minus_high);
}

// Update regimes: (advantage sign) x (r vs 1), plus NEUTRAL at r == 1.
enum class Regime { AmpPos, SupPos, AmpNeg, SupNeg, Neutral };

inline Regime classify_regime(double r, double advantage) {
  if (advantage == 0.0)
    throw std::logic_error("zero advantage: dynamic sampling must filter degenerate groups");
  if (r == 1.0) return Regime::Neutral;
  if (advantage > 0.0) return r > 1.0 ? Regime::AmpPos : Regime::SupPos;
  return r > 1.0 ? Regime::AmpNeg : Regime::SupNeg;
}

struct MultiplierResult {
  double multiplier = 0.0;
  bool gated = false;  // min-surrogate zero-gradient branch (GRPO/DAPO only)
};

/// Scalar m such that the token's gradient contribution is
/// m * advantage * grad_log_prob (length normalization excluded).
///
/// REINFORCE: m = r. CISPO/DISPO: m = clipped r (stop-gradient soft gates).
/// GRPO/DAPO differentiate min(r*A, clip(r)*A): outside the trust region on
/// the clipped side the surrogate is constant, so the gradient is gated to
/// exactly zero; inside, m = r.
inline MultiplierResult effective_multiplier(double r, double advantage,
                                             const ClipConfig& cfg) {
  if (advantage == 0.0)
    throw std::logic_error("zero advantage: dynamic sampling must filter degenerate groups");
  if (!(r > 0.0)) throw std::invalid_argument("importance ratio must be positive");
  switch (cfg.algorithm) {
    case Algorithm::Reinforce:
      return {r, false};
    case Algorithm::Cispo:
      return {clip_ratio(r, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high), false};
    case Algorithm::Dispo:
      return {decoupled_ratio(r, advantage, cfg), false};
    case Algorithm::Grpo:
    case Algorithm::Dapo: {
      if (advantage > 0.0) {
        if (r > 1.0 + cfg.eps_high) return {0.0, true};
        return {r, false};
      }
      if (r < 1.0 - cfg.eps_low) return {0.0, true};
      return {r, false};
    }
  }
  throw std::invalid_argument("unknown algorithm");
}

// Per-token trace of one gradient accumulation.
struct TokenUpdateRecord {
  int group = 0;
  int rollout = 0;
  int token_index = 0;
  double log_prob_live = 0.0;
  double log_prob_ref = 0.0;
  double ratio = 0.0;
  double advantage = 0.0;
  Regime regime = Regime::Neutral;
  double effective_multiplier = 0.0;
  bool gradient_gated = false;
};

// Which length normalization the accumulation uses. ByAlgorithm picks the
// algorithm's defining normalizer: per-response 1/(G |o_i|) for
// GRPO/REINFORCE, shared token-level 1/sum_i |o_i| for DAPO/CISPO/DISPO.
// The explicit modes exist so surrogate equivalences can be tested with the
// normalizer swapped.
enum class Normalization { ByAlgorithm, PerResponse, TokenLevel };

struct GradientAccumulation {
  std::vector<double> gradient;  // ascent direction of J
  std::vector<TokenUpdateRecord> per_token;
  std::array<long, 4> regime_counts{};  // R1..R4, contributing tokens only
  long neutral_count = 0;
  long token_count = 0;
  double mean_token_entropy = 0.0;  // live-policy entropy over batch tokens
  double mean_response_length = 0.0;
};

/// Accumulates the ascent gradient of the selected objective over kept
/// groups. Recomputes (and stores) live log-probs for every token; gated and
/// correct-only-zeroed tokens contribute exactly zero. Reduction order is
/// fixed (group, rollout, token), so repeated runs are bit-identical.
inline GradientAccumulation accumulate_gradient(std::span<GroupBatch> batches,
                                                const ClipConfig& cfg,
                                                const PolicyParams& live,
                                                Normalization mode = Normalization::ByAlgorithm,
                                                bool correct_only = false) {
  cfg.validate();
  if (batches.empty()) throw std::invalid_argument("empty gradient batch");
  const bool per_response =
      mode == Normalization::PerResponse ||
      (mode == Normalization::ByAlgorithm && (cfg.algorithm == Algorithm::Grpo ||
                                              cfg.algorithm == Algorithm::Reinforce));
  const int V = live.vocab_size;
  GradientAccumulation acc;
  acc.gradient.assign(live.weight_count(), 0.0);
  const double batch_count = static_cast<double>(batches.size());
  double entropy_sum = 0.0;
  long response_count = 0;
  long length_sum = 0;

  for (std::size_t gi = 0; gi < batches.size(); ++gi) {
    GroupBatch& group = batches[gi];
    if (!group.kept || group.advantage_set.degenerate)
      throw std::logic_error("degenerate group reached accumulate_gradient");
    long group_tokens = 0;
    for (const Rollout& r : group.rollouts) group_tokens += r.length();
    const double group_size = static_cast<double>(group.rollouts.size());

    for (std::size_t ri = 0; ri < group.rollouts.size(); ++ri) {
      Rollout& rollout = group.rollouts[ri];
      const double advantage = group.advantage_set.advantages[ri];
      const double norm =
          per_response
              ? 1.0 / (batch_count * group_size * rollout.length())
              : 1.0 / (batch_count * static_cast<double>(group_tokens));
      const bool zeroed = correct_only && rollout.reward.base_reward < 0;
      rollout.live_log_probs.resize(rollout.tokens.size());
      response_count += 1;
      length_sum += rollout.length();

      std::vector<int> prefix = group.task.question;
      prefix.reserve(prefix.size() + rollout.tokens.size());
      for (std::size_t ti = 0; ti < rollout.tokens.size(); ++ti) {
        const int token = rollout.tokens[ti];
        const TokenDistribution dist = token_distribution(live, prefix);
        const double live_lp = dist.log_probs[static_cast<std::size_t>(token)];
        rollout.live_log_probs[ti] = live_lp;
        const double ratio = std::exp(live_lp - rollout.ref_log_probs[ti]);
        // Shaped rewards can tie the group mean exactly, leaving a response
        // with zero advantage inside a kept group; its gradient term is
        // identically zero, so it is recorded as a non-contributing token.
        const Regime regime =
            advantage == 0.0 ? Regime::Neutral : classify_regime(ratio, advantage);
        MultiplierResult m = advantage == 0.0 ? MultiplierResult{0.0, false}
                                              : effective_multiplier(ratio, advantage, cfg);
        if (zeroed) m.multiplier = 0.0;

        TokenUpdateRecord rec;
        rec.group = static_cast<int>(gi);
        rec.rollout = static_cast<int>(ri);
        rec.token_index = static_cast<int>(ti);
        rec.log_prob_live = live_lp;
        rec.log_prob_ref = rollout.ref_log_probs[ti];
        rec.ratio = ratio;
        rec.advantage = advantage;
        rec.regime = regime;
        rec.effective_multiplier = m.multiplier;
        rec.gradient_gated = m.gated;
        acc.per_token.push_back(rec);

        entropy_sum += dist.entropy;
        acc.token_count += 1;

        if (m.multiplier != 0.0) {
          if (regime != Regime::Neutral)
            acc.regime_counts[static_cast<std::size_t>(regime)] += 1;
          else
            acc.neutral_count += 1;
          const double scale = norm * m.multiplier * advantage;
          const int n = static_cast<int>(prefix.size());
          const int slots = std::min(live.context_window, n);
          for (int j = 0; j < slots; ++j) {
            const int ctx = prefix[static_cast<std::size_t>(n - 1 - j)];
            double* row =
                acc.gradient.data() + (static_cast<std::size_t>(j) * V + ctx) * V;
            for (int v = 0; v < V; ++v) {
              const double p = std::exp(dist.log_probs[static_cast<std::size_t>(v)]);
              row[v] += scale * ((v == token ? 1.0 : 0.0) - p);
            }
          }
        }
        prefix.push_back(token);
      }
    }
  }
  acc.mean_token_entropy = acc.token_count > 0 ? entropy_sum / acc.token_count : 0.0;
  acc.mean_response_length =
      response_count > 0 ? static_cast<double>(length_sum) / response_count : 0.0;
  return acc;
}

/// Gradient-weight profile: effective multiplier per grid point, for one
/// advantage sign. Grid must be positive and sorted ascending.
inline std::vector<double> profile_gradient_weight(const ClipConfig& cfg,
                                                   bool advantage_positive,
                                                   std::span<const double> r_grid) {
  cfg.validate();
  const double advantage = advantage_positive ? 1.0 : -1.0;
  std::vector<double> out;
  out.reserve(r_grid.size());
  double prev = 0.0;
  for (std::size_t i = 0; i < r_grid.size(); ++i) {
    const double r = r_grid[i];
    if (!(r > 0.0)) throw std::invalid_argument("profile grid must be strictly positive");
    if (i > 0 && r <= prev) throw std::invalid_argument("profile grid must be sorted");
    prev = r;
    out.push_back(effective_multiplier(r, advantage, cfg).multiplier);
  }
  return out;
}

}  // namespace dispo
