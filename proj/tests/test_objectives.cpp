#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dispo/objectives.hpp"
#include "dispo/policy.hpp"
#include "dispo/rng.hpp"

using namespace dispo;

namespace {

ClipConfig dispo_paper() {
  ClipConfig c;
  c.algorithm = Algorithm::Dispo;
  c.eps_plus_low = 0.2;
  c.eps_plus_high = 10.0;
  c.eps_minus_low = 1.0;
  c.eps_minus_high = 100.0;
  return c;
}

ClipConfig dapo_paper() {
  ClipConfig c;
  c.algorithm = Algorithm::Dapo;
  c.eps_low = 0.2;
  c.eps_high = 0.28;
  return c;
}

ClipConfig cispo_paper() {
  ClipConfig c;
  c.algorithm = Algorithm::Cispo;
  c.eps_low = 1.0;
  c.eps_high = 100.0;
  return c;
}

// Synthetic kept group: random tokens, ref log-probs taken from a perturbed
// copy of the live params so ratios drift away from 1.
GroupBatch synthetic_group(const PolicyParams& live, int group_size, int vocab_size,
                           double ref_perturb, Rng& rng) {
  GroupBatch g;
  g.task.question = {0, 1};
  PolicyParams ref = live;
  for (double& w : ref.weights) w += ref_perturb * (rng.uniform01() - 0.5);
  std::vector<double> shaped;
  for (int i = 0; i < group_size; ++i) {
    Rollout r;
    const int len = 2 + static_cast<int>(rng.uniform_int(4));
    std::vector<int> prefix = g.task.question;
    for (int t = 0; t < len; ++t) {
      const int tok = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(vocab_size)));
      r.tokens.push_back(tok);
      r.ref_log_probs.push_back(log_prob(ref, prefix, tok));
      prefix.push_back(tok);
    }
    r.reward.base_reward = (i % 2 == 0) ? 1 : -1;  // mixed rewards by construction
    r.reward.shaped_reward = r.reward.base_reward;
    shaped.push_back(r.reward.shaped_reward);
    g.rollouts.push_back(std::move(r));
  }
  g.advantage_set = compute_advantages(shaped);
  g.kept = !g.advantage_set.degenerate;
  return g;
}

std::vector<GroupBatch> synthetic_batches(const PolicyParams& live, int groups, int group_size,
                                          double ref_perturb, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GroupBatch> out;
  for (int i = 0; i < groups; ++i)
    out.push_back(synthetic_group(live, group_size, live.vocab_size, ref_perturb, rng));
  return out;
}

// Frozen-multiplier objective: J(theta') with every stop-gradient factor held
// at the base point. Central finite differences of this is the gradient
// oracle for all five algorithms.
double frozen_objective(const PolicyParams& params, std::span<const GroupBatch> batches,
                        std::span<const TokenUpdateRecord> records, bool per_response) {
  double j = 0.0;
  std::size_t rec = 0;
  const double B = static_cast<double>(batches.size());
  for (const GroupBatch& g : batches) {
    long group_tokens = 0;
    for (const Rollout& r : g.rollouts) group_tokens += r.length();
    for (std::size_t ri = 0; ri < g.rollouts.size(); ++ri) {
      const Rollout& r = g.rollouts[ri];
      const double adv = g.advantage_set.advantages[ri];
      const double norm = per_response
                              ? 1.0 / (B * g.rollouts.size() * r.length())
                              : 1.0 / (B * group_tokens);
      std::vector<int> prefix = g.task.question;
      for (std::size_t ti = 0; ti < r.tokens.size(); ++ti, ++rec) {
        const double m = records[rec].effective_multiplier;
        if (m != 0.0) j += norm * m * adv * log_prob(params, prefix, r.tokens[ti]);
        prefix.push_back(r.tokens[ti]);
      }
    }
  }
  REQUIRE(rec == records.size());
  return j;
}

}  // namespace

TEST_CASE("compute_advantages matches the hand oracle") {
  {
    const std::vector<double> r = {1, 1, -1, -1};
    const AdvantageSet a = compute_advantages(r);
    REQUIRE_FALSE(a.degenerate);
    REQUIRE(a.advantages == std::vector<double>{1, 1, -1, -1});
  }
  {
    // mean -0.5, population std sqrt(3)/2; advantages [sqrt 3, -1/sqrt 3 x3]
    const std::vector<double> r = {1, -1, -1, -1};
    const AdvantageSet a = compute_advantages(r);
    REQUIRE(a.mean == Catch::Approx(-0.5));
    REQUIRE(a.stddev == Catch::Approx(std::sqrt(3.0) / 2.0));
    REQUIRE(a.advantages[0] == Catch::Approx(std::sqrt(3.0)));
    for (int i = 1; i < 4; ++i)
      REQUIRE(a.advantages[i] == Catch::Approx(-1.0 / std::sqrt(3.0)));
  }
  {
    const std::vector<double> r = {1, 1, 1, 1};
    const AdvantageSet a = compute_advantages(r);
    REQUIRE(a.degenerate);
    REQUIRE(a.advantages.empty());
  }
  REQUIRE_THROWS_AS(compute_advantages(std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("non-degenerate advantages are standardized (property)") {
  Rng rng(17);
  int tested = 0;
  while (tested < 2000) {
    std::vector<double> rewards;
    bool any_pos = false, any_neg = false;
    for (int i = 0; i < 16; ++i) {
      const double r = rng.uniform01() < 0.5 ? 1.0 : -1.0;
      any_pos |= r > 0;
      any_neg |= r < 0;
      rewards.push_back(r);
    }
    if (!any_pos || !any_neg) {
      REQUIRE(compute_advantages(rewards).degenerate);
      continue;
    }
    const AdvantageSet a = compute_advantages(rewards);
    REQUIRE_FALSE(a.degenerate);
    double mean = 0.0, var = 0.0;
    for (double x : a.advantages) mean += x;
    mean /= 16.0;
    for (double x : a.advantages) var += (x - mean) * (x - mean);
    var /= 16.0;
    REQUIRE(std::fabs(mean) <= 1e-12);
    REQUIRE(std::fabs(std::sqrt(var) - 1.0) <= 1e-12);
    tested += 1;
  }
}

TEST_CASE("clip_ratio is the exact min/max composition") {
  REQUIRE(clip_ratio(1.5, 0.8, 1.28) == 1.28);
  REQUIRE(clip_ratio(1.0, 0.8, 1.28) == 1.0);
  REQUIRE(clip_ratio(0.5, 0.8, 11.0) == 0.8);  // DISPO positive window
  REQUIRE_THROWS_AS(clip_ratio(1.0, 2.0, 1.0), std::invalid_argument);
}

TEST_CASE("decoupled_ratio applies the sign-dependent window") {
  const ClipConfig cfg = dispo_paper();
  REQUIRE(decoupled_ratio(12.0, 1.0, cfg) == 11.0);  // 1 + eps_plus_high
  REQUIRE(decoupled_ratio(0.5, -1.0, cfg) == 0.5);   // inside [0, 101]
  ClipConfig collapsed = cfg;
  collapsed.eps_plus_low = collapsed.eps_plus_high = 0.0;
  for (double r : {0.1, 0.9, 1.0, 3.0}) REQUIRE(decoupled_ratio(r, 1.0, collapsed) == 1.0);
  REQUIRE_THROWS_AS(decoupled_ratio(1.0, 0.0, cfg), std::logic_error);
  ClipConfig wrong = cfg;
  wrong.algorithm = Algorithm::Cispo;
  REQUIRE_THROWS_AS(decoupled_ratio(1.0, 1.0, wrong), std::logic_error);
}

TEST_CASE("effective_multiplier per algorithm") {
  const ClipConfig dapo = dapo_paper();
  {
    const auto [m, gated] = effective_multiplier(1.5, 1.0, dapo);
    REQUIRE(m == 0.0);
    REQUIRE(gated);
  }
  {
    // min() picks the unclipped branch for negative advantage above the window
    const auto [m, gated] = effective_multiplier(1.5, -1.0, dapo);
    REQUIRE(m == 1.5);
    REQUIRE_FALSE(gated);
  }
  {
    const auto [m, gated] = effective_multiplier(0.5, 1.0, cispo_paper());
    REQUIRE(m == 0.5);
    REQUIRE_FALSE(gated);
  }
  {
    ClipConfig r;
    r.algorithm = Algorithm::Reinforce;
    const auto [m, gated] = effective_multiplier(7.25, -1.0, r);
    REQUIRE(m == 7.25);
    REQUIRE_FALSE(gated);
  }
  {
    const auto [m, gated] = effective_multiplier(12.0, 1.0, dispo_paper());
    REQUIRE(m == 11.0);
    REQUIRE_FALSE(gated);
  }
  REQUIRE_THROWS_AS(effective_multiplier(0.0, 1.0, dapo), std::invalid_argument);
  REQUIRE_THROWS_AS(effective_multiplier(1.0, 0.0, dapo), std::logic_error);
}

TEST_CASE("min-surrogate gating boundary (brute force over the grid)") {
  const ClipConfig dapo = dapo_paper();
  for (double r : {0.5, 0.79, 0.8, 0.81, 1.0, 1.27, 1.28, 1.29, 2.0}) {
    for (double adv : {1.0, -1.0}) {
      const auto [m, gated] = effective_multiplier(r, adv, dapo);
      const bool expect_gated = (adv > 0 && r > 1.28) || (adv < 0 && r < 0.8);
      REQUIRE(gated == expect_gated);
      REQUIRE(m == (expect_gated ? 0.0 : r));
    }
  }
}

TEST_CASE("classify_regime quadrants") {
  REQUIRE(classify_regime(1.3, 1.0) == Regime::AmpPos);
  REQUIRE(classify_regime(0.7, 1.0) == Regime::SupPos);
  REQUIRE(classify_regime(1.3, -1.0) == Regime::AmpNeg);
  REQUIRE(classify_regime(0.7, -1.0) == Regime::SupNeg);
  REQUIRE(classify_regime(1.0, 1.0) == Regime::Neutral);
  REQUIRE(classify_regime(1.0, -1.0) == Regime::Neutral);
  REQUIRE_THROWS_AS(classify_regime(1.0, 0.0), std::logic_error);
}

TEST_CASE("ClipConfig validation") {
  ClipConfig g;
  g.algorithm = Algorithm::Grpo;
  g.eps_low = 0.2;
  g.eps_high = 0.3;
  REQUIRE_THROWS_AS(g.validate(), std::invalid_argument);  // asymmetric GRPO
  g.eps_high = 0.2;
  REQUIRE_NOTHROW(g.validate());
  ClipConfig d;
  d.algorithm = Algorithm::Dapo;
  d.eps_low = 1.5;
  REQUIRE_THROWS_AS(d.validate(), std::invalid_argument);  // negative clip floor
  ClipConfig p = dispo_paper();
  p.eps_minus_low = 1.0001;
  REQUIRE_THROWS_AS(p.validate(), std::invalid_argument);
  p = dispo_paper();
  p.eps_plus_high = -0.1;
  REQUIRE_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("first update after a snapshot reduces to the plain policy gradient") {
  const PolicyParams live = PolicyParams::zeros(4, 2);
  auto batches = synthetic_batches(live, 2, 4, 0.0, 3);  // ref == live -> r == 1
  auto acc = accumulate_gradient(batches, dispo_paper(), live);
  for (const TokenUpdateRecord& rec : acc.per_token) {
    REQUIRE(rec.ratio == 1.0);
    REQUIRE(rec.regime == Regime::Neutral);
    REQUIRE(rec.effective_multiplier == 1.0);
  }
  // identical, bit for bit, to the r==1 baseline assembly
  std::vector<double> baseline(live.weight_count(), 0.0);
  const double B = static_cast<double>(batches.size());
  for (const GroupBatch& g : batches) {
    long group_tokens = 0;
    for (const Rollout& r : g.rollouts) group_tokens += r.length();
    for (std::size_t ri = 0; ri < g.rollouts.size(); ++ri) {
      const Rollout& r = g.rollouts[ri];
      const double norm = 1.0 / (B * group_tokens);
      std::vector<int> prefix = g.task.question;
      for (int tok : r.tokens) {
        const auto grad = grad_log_prob(live, prefix, tok);
        const double scale = norm * g.advantage_set.advantages[ri];
        for (std::size_t i = 0; i < baseline.size(); ++i) baseline[i] += scale * grad[i];
        prefix.push_back(tok);
      }
    }
  }
  REQUIRE(acc.gradient == baseline);
}

TEST_CASE("DISPO with symmetric windows is bit-identical to CISPO") {
  for (int trial = 0; trial < 20; ++trial) {
    const PolicyParams live = [&] {
      Rng rng(400 + trial);
      return PolicyParams::gaussian(5, 2, 0.6, rng);
    }();
    auto b1 = synthetic_batches(live, 3, 4, 0.4, 800 + trial);
    auto b2 = b1;
    ClipConfig dispo_sym;
    dispo_sym.algorithm = Algorithm::Dispo;
    dispo_sym.eps_plus_low = dispo_sym.eps_minus_low = 1.0;
    dispo_sym.eps_plus_high = dispo_sym.eps_minus_high = 100.0;
    const auto a = accumulate_gradient(b1, dispo_sym, live);
    const auto b = accumulate_gradient(b2, cispo_paper(), live);
    REQUIRE(a.gradient == b.gradient);
  }
}

TEST_CASE("accumulate_gradient matches the frozen finite-difference oracle") {
  const std::vector<Algorithm> algs = {Algorithm::Reinforce, Algorithm::Grpo, Algorithm::Dapo,
                                       Algorithm::Cispo, Algorithm::Dispo};
  for (int trial = 0; trial < 10; ++trial) {
    PolicyParams live = [&] {
      Rng r(600 + trial);
      return PolicyParams::gaussian(4, 2, 0.8, r);  // 32 parameters
    }();
    auto batches = synthetic_batches(live, 2, 4, 0.5, 900 + trial);
    for (Algorithm alg : algs) {
      ClipConfig cfg;
      cfg.algorithm = alg;
      switch (alg) {
        case Algorithm::Grpo: cfg.eps_low = cfg.eps_high = 0.2; break;
        case Algorithm::Dapo: cfg.eps_low = 0.2; cfg.eps_high = 0.28; break;
        case Algorithm::Cispo: cfg.eps_low = 1.0; cfg.eps_high = 100.0; break;
        case Algorithm::Dispo: cfg = dispo_paper(); break;
        default: break;
      }
      auto work = batches;
      const auto acc = accumulate_gradient(work, cfg, live);
      const bool per_response = alg == Algorithm::Grpo || alg == Algorithm::Reinforce;
      const double h = 1e-5;
      double diff = 0.0, norm = 0.0;
      for (std::size_t i = 0; i < live.weights.size(); ++i) {
        const double w0 = live.weights[i];
        live.weights[i] = w0 + h;
        const double up = frozen_objective(live, work, acc.per_token, per_response);
        live.weights[i] = w0 - h;
        const double down = frozen_objective(live, work, acc.per_token, per_response);
        live.weights[i] = w0;
        const double fd = (up - down) / (2.0 * h);
        diff += (fd - acc.gradient[i]) * (fd - acc.gradient[i]);
        norm += acc.gradient[i] * acc.gradient[i];
      }
      REQUIRE(std::sqrt(diff) <= 1e-6 * std::max(1e-3, std::sqrt(norm)));
    }
  }
}

TEST_CASE("gated tokens contribute exactly zero gradient") {
  // force every ratio far above 1: ref log-probs shifted well below live
  PolicyParams live = PolicyParams::zeros(4, 2);
  auto batches = synthetic_batches(live, 1, 4, 0.0, 12);
  for (Rollout& r : batches[0].rollouts)
    for (double& lp : r.ref_log_probs) lp -= 2.0;  // r = e^2 ~ 7.4
  const auto acc = accumulate_gradient(batches, dapo_paper(), live);
  // positive-advantage tokens are gated; negative ones keep m = r
  for (const TokenUpdateRecord& rec : acc.per_token) {
    if (rec.advantage > 0) {
      REQUIRE(rec.gradient_gated);
      REQUIRE(rec.effective_multiplier == 0.0);
    } else {
      REQUIRE_FALSE(rec.gradient_gated);
      REQUIRE(rec.effective_multiplier == Catch::Approx(std::exp(2.0)));
    }
  }
  // against brute force: accumulate only ungated tokens
  std::vector<double> expected(live.weight_count(), 0.0);
  const GroupBatch& g = batches[0];
  long group_tokens = 0;
  for (const Rollout& r : g.rollouts) group_tokens += r.length();
  std::size_t rec_i = 0;
  for (std::size_t ri = 0; ri < g.rollouts.size(); ++ri) {
    const Rollout& r = g.rollouts[ri];
    std::vector<int> prefix = g.task.question;
    for (int tok : r.tokens) {
      const auto& rec = acc.per_token[rec_i++];
      if (rec.effective_multiplier != 0.0) {
        const auto grad = grad_log_prob(live, prefix, tok);
        const double scale =
            (1.0 / group_tokens) * rec.effective_multiplier * rec.advantage;
        for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += scale * grad[i];
      }
      prefix.push_back(tok);
    }
  }
  REQUIRE(acc.gradient == expected);
}

TEST_CASE("monotone control of the decoupled windows") {
  // increasing eps_plus_high weakly increases every R1 multiplier
  for (double r : {1.01, 1.2, 2.0, 8.0, 30.0}) {
    double prev = -1.0;
    for (double eph : {0.0, 0.28, 1.0, 10.0, 100.0}) {
      ClipConfig cfg = dispo_paper();
      cfg.eps_plus_high = eph;
      const double m = effective_multiplier(r, 1.0, cfg).multiplier;
      REQUIRE(m >= prev);
      prev = m;
    }
  }
  // increasing eps_minus_low weakly decreases every R4 multiplier
  for (double r : {0.99, 0.7, 0.3, 0.05}) {
    double prev = 2.0;
    for (double eml : {0.0, 0.2, 0.5, 1.0}) {
      ClipConfig cfg = dispo_paper();
      cfg.eps_minus_low = eml;
      const double m = effective_multiplier(r, -1.0, cfg).multiplier;
      REQUIRE(m <= prev);
      prev = m;
    }
  }
}

TEST_CASE("DISPO multipliers stay inside the branch window (property)") {
  Rng rng(9);
  for (int t = 0; t < 2000; ++t) {
    ClipConfig cfg;
    cfg.algorithm = Algorithm::Dispo;
    cfg.eps_plus_low = rng.uniform01();
    cfg.eps_plus_high = rng.uniform01() * 20.0;
    cfg.eps_minus_low = rng.uniform01();
    cfg.eps_minus_high = rng.uniform01() * 20.0;
    const double r = std::exp(4.0 * (rng.uniform01() - 0.5));
    const double adv = rng.uniform01() < 0.5 ? 1.0 : -1.0;
    const double m = effective_multiplier(r, adv, cfg).multiplier;
    const double low = adv > 0 ? 1.0 - cfg.eps_plus_low : 1.0 - cfg.eps_minus_low;
    const double high = adv > 0 ? 1.0 + cfg.eps_plus_high : 1.0 + cfg.eps_minus_high;
    REQUIRE(m >= std::max(0.0, low));
    REQUIRE(m <= high);
  }
}

TEST_CASE("profile_gradient_weight reproduces the gating shapes") {
  const std::vector<double> grid = {0.5, 0.8, 1.0, 1.27, 1.29, 2.0, 3.0};
  const auto dapo = profile_gradient_weight(dapo_paper(), true, grid);
  REQUIRE(dapo[3] == 1.27);  // inside the trust region
  REQUIRE(dapo[4] == 0.0);   // hard cutoff past 1.28
  REQUIRE(dapo[5] == 0.0);
  ClipConfig cispo_narrow;
  cispo_narrow.algorithm = Algorithm::Cispo;
  cispo_narrow.eps_low = 0.2;
  cispo_narrow.eps_high = 0.28;
  const auto cispo = profile_gradient_weight(cispo_narrow, true, grid);
  REQUIRE(cispo[4] == 1.28);  // plateau at 1 + eps_high
  REQUIRE(cispo[6] == 1.28);
  const auto dispo_pos = profile_gradient_weight(dispo_paper(), true, grid);
  const auto dispo_neg = profile_gradient_weight(dispo_paper(), false, grid);
  REQUIRE(dispo_pos != dispo_neg);  // sign-dependent windows
  REQUIRE_THROWS_AS(profile_gradient_weight(dapo_paper(), true, std::vector<double>{1.0, 0.5}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(profile_gradient_weight(dapo_paper(), true, std::vector<double>{0.0, 0.5}),
                    std::invalid_argument);
}

TEST_CASE("zero-advantage responses inside kept groups contribute nothing") {
  // shaped rewards on a 1/16 grid can tie the group mean exactly
  const PolicyParams live = PolicyParams::zeros(4, 2);
  auto batches = synthetic_batches(live, 1, 4, 0.2, 8);
  GroupBatch& g = batches[0];
  std::vector<double> shaped = {1.0, 0.0, -1.0, 0.0};  // mean 0: two zero advantages
  for (int i = 0; i < 4; ++i) g.rollouts[static_cast<std::size_t>(i)].reward.shaped_reward = shaped[i];
  g.advantage_set = compute_advantages(shaped);
  REQUIRE_FALSE(g.advantage_set.degenerate);
  REQUIRE(g.advantage_set.advantages[1] == 0.0);
  const auto acc = accumulate_gradient(batches, dispo_paper(), live);
  for (const TokenUpdateRecord& rec : acc.per_token) {
    if (rec.rollout == 1 || rec.rollout == 3) {
      REQUIRE(rec.advantage == 0.0);
      REQUIRE(rec.effective_multiplier == 0.0);
      REQUIRE_FALSE(rec.gradient_gated);
    }
  }
  // the gradient equals a brute-force pass over the nonzero-advantage
  // rollouts alone (same token-level normalization)
  long group_tokens = 0;
  for (const Rollout& r : g.rollouts) group_tokens += r.length();
  std::vector<double> expected(live.weight_count(), 0.0);
  for (int ri : {0, 2}) {
    const Rollout& r = g.rollouts[static_cast<std::size_t>(ri)];
    const double adv = g.advantage_set.advantages[static_cast<std::size_t>(ri)];
    std::vector<int> prefix = g.task.question;
    std::size_t ti = 0;
    for (int tok : r.tokens) {
      const double ratio = std::exp(log_prob(live, prefix, tok) - r.ref_log_probs[ti++]);
      const double mult = effective_multiplier(ratio, adv, dispo_paper()).multiplier;
      const auto grad = grad_log_prob(live, prefix, tok);
      const double scale = (1.0 / group_tokens) * mult * adv;
      for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += scale * grad[i];
      prefix.push_back(tok);
    }
  }
  REQUIRE(acc.gradient == expected);
}

TEST_CASE("degenerate groups are rejected by accumulate_gradient") {
  const PolicyParams live = PolicyParams::zeros(4, 2);
  auto batches = synthetic_batches(live, 1, 4, 0.0, 5);
  batches[0].kept = false;
  batches[0].advantage_set.degenerate = true;
  REQUIRE_THROWS_AS(accumulate_gradient(batches, dispo_paper(), live), std::logic_error);
}
