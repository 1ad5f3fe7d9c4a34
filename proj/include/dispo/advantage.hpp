#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace dispo {

// Group-relative advantages: (r_i - mean) / population-std. A zero-variance
// group is degenerate; its advantages are undefined and the group must be
// filtered before any gradient step.
struct AdvantageSet {
  std::vector<double> rewards;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> advantages;
  bool degenerate = false;
};

inline AdvantageSet compute_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("advantage group needs G >= 2");
  AdvantageSet out;
  out.rewards.assign(rewards.begin(), rewards.end());
  const auto n = static_cast<double>(rewards.size());
  double sum = 0.0;
  for (double r : rewards) sum += r;
  out.mean = sum / n;
  double var = 0.0;
  for (double r : rewards) var += (r - out.mean) * (r - out.mean);
  var /= n;  // population variance, no Bessel correction
  out.stddev = std::sqrt(var);
  out.degenerate = (out.stddev == 0.0);
  if (!out.degenerate) {
    out.advantages.reserve(rewards.size());
    for (double r : rewards) out.advantages.push_back((r - out.mean) / out.stddev);
  }
  return out;
}

}  // namespace dispo
