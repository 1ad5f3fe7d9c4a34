#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dispo/rng.hpp"

namespace dispo {

enum class FeatureMap { OneHotConcat };

// Linear-softmax autoregressive policy over concatenated one-hot features of
// the last `context_window` tokens. Weights are laid out row-major as
// (slot * V + context_token) * V + next_token. Prefix positions beyond the
// available history contribute nothing (no padding token).
struct PolicyParams {
  int vocab_size = 0;
  int context_window = 0;
  FeatureMap feature_map = FeatureMap::OneHotConcat;
  std::vector<double> weights;

  static PolicyParams zeros(int vocab_size, int context_window) {
    if (vocab_size < 2 || context_window < 1)
      throw std::invalid_argument("need vocab_size >= 2 and context_window >= 1");
    PolicyParams p;
    p.vocab_size = vocab_size;
    p.context_window = context_window;
    p.weights.assign(static_cast<std::size_t>(context_window) * vocab_size * vocab_size, 0.0);
    return p;
  }

  static PolicyParams gaussian(int vocab_size, int context_window, double stddev, Rng& rng) {
    PolicyParams p = zeros(vocab_size, context_window);
    for (double& w : p.weights) w = rng.normal(0.0, stddev);
    return p;
  }

  std::size_t weight_count() const { return weights.size(); }

  double& weight(int slot, int context_token, int next_token) {
    return weights[(static_cast<std::size_t>(slot) * vocab_size + context_token) * vocab_size +
                   next_token];
  }
  double weight(int slot, int context_token, int next_token) const {
    return weights[(static_cast<std::size_t>(slot) * vocab_size + context_token) * vocab_size +
                   next_token];
  }
};

struct TokenDistribution {
  std::vector<double> logits;
  std::vector<double> log_probs;  // logits - logsumexp(logits)
  double entropy = 0.0;           // nats, in [0, log V]
};

/// Next-token distribution for the windowed prefix. Throws on non-finite
/// logits so numerical failures surface to the caller.
inline TokenDistribution token_distribution(const PolicyParams& params,
                                            std::span<const int> prefix) {
  const int V = params.vocab_size;
  const int k = params.context_window;
  TokenDistribution dist;
  dist.logits.assign(static_cast<std::size_t>(V), 0.0);
  const int n = static_cast<int>(prefix.size());
  const int slots = std::min(k, n);
  for (int j = 0; j < slots; ++j) {
    const int ctx = prefix[static_cast<std::size_t>(n - 1 - j)];
    if (ctx < 0 || ctx >= V) throw std::invalid_argument("prefix token out of range");
    const double* row = params.weights.data() + (static_cast<std::size_t>(j) * V + ctx) * V;
    for (int v = 0; v < V; ++v) dist.logits[static_cast<std::size_t>(v)] += row[v];
  }
  double max_logit = -std::numeric_limits<double>::infinity();
  int max_index = 0;
  for (int v = 0; v < V; ++v) {
    const double z = dist.logits[static_cast<std::size_t>(v)];
    if (!std::isfinite(z)) throw std::runtime_error("non-finite logit");
    if (z > max_logit) {
      max_logit = z;
      max_index = v;
    }
  }
  // log1p form keeps log-probs near zero accurate to absolute ~1e-17
  double rest = 0.0;
  for (int v = 0; v < V; ++v)
    if (v != max_index) rest += std::exp(dist.logits[static_cast<std::size_t>(v)] - max_logit);
  const double lse = max_logit + std::log1p(rest);
  dist.log_probs.resize(static_cast<std::size_t>(V));
  double entropy = 0.0;
  for (int v = 0; v < V; ++v) {
    const double lp = dist.logits[static_cast<std::size_t>(v)] - lse;
    dist.log_probs[static_cast<std::size_t>(v)] = lp;
    const double p = std::exp(lp);
    if (p > 0.0) entropy -= p * lp;
  }
  dist.entropy = std::max(0.0, entropy);
  return dist;
}

inline double log_prob(const PolicyParams& params, std::span<const int> prefix, int token) {
  if (token < 0 || token >= params.vocab_size)
    throw std::invalid_argument("token id out of range");
  return token_distribution(params, prefix).log_probs[static_cast<std::size_t>(token)];
}

inline double token_entropy(const PolicyParams& params, std::span<const int> prefix) {
  return token_distribution(params, prefix).entropy;
}

/// Draws a token from an already computed distribution (temperature 1.0).
inline int sample_from(const TokenDistribution& dist, Rng& rng) {
  const double u = rng.uniform01();
  double cdf = 0.0;
  int last_positive = 0;
  const int V = static_cast<int>(dist.log_probs.size());
  for (int v = 0; v < V; ++v) {
    const double p = std::exp(dist.log_probs[static_cast<std::size_t>(v)]);
    if (p > 0.0) last_positive = v;
    cdf += p;
    if (u < cdf) return v;
  }
  return last_positive;  // guards the ~1e-16 tail lost to rounding
}

inline int sample_token(const PolicyParams& params, std::span<const int> prefix, Rng& rng) {
  return sample_from(token_distribution(params, prefix), rng);
}

/// Analytic gradient of log_prob w.r.t. the weights, dense, same shape.
/// Active rows get one_hot(token) - softmax; all other rows are zero.
inline std::vector<double> grad_log_prob(const PolicyParams& params,
                                         std::span<const int> prefix, int token) {
  if (token < 0 || token >= params.vocab_size)
    throw std::invalid_argument("token id out of range");
  const int V = params.vocab_size;
  const int k = params.context_window;
  const TokenDistribution dist = token_distribution(params, prefix);
  std::vector<double> grad(params.weight_count(), 0.0);
  const int n = static_cast<int>(prefix.size());
  const int slots = std::min(k, n);
  for (int j = 0; j < slots; ++j) {
    const int ctx = prefix[static_cast<std::size_t>(n - 1 - j)];
    double* row = grad.data() + (static_cast<std::size_t>(j) * V + ctx) * V;
    for (int v = 0; v < V; ++v) {
      const double p = std::exp(dist.log_probs[static_cast<std::size_t>(v)]);
      row[v] += (v == token ? 1.0 : 0.0) - p;
    }
  }
  return grad;
}

// Frozen reference policy. Immutable by interface; queries against it are
// bit-identical across repeats.
class PolicySnapshot {
 public:
  explicit PolicySnapshot(PolicyParams params) : params_(std::move(params)) {}
  const PolicyParams& params() const { return params_; }

 private:
  PolicyParams params_;
};

inline PolicySnapshot snapshot(const PolicyParams& params) { return PolicySnapshot(params); }

// ---- checkpoint io ---------------------------------------------------------
// Text format, version tagged, weights printed with 17 significant digits so
// doubles round-trip exactly. Byte order is irrelevant by construction.

inline void save_checkpoint(const std::string& path, const PolicyParams& params) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint file: " + path);
  out << "dispo-policy-v1\n";
  out << "vocab_size " << params.vocab_size << '\n';
  out << "context_window " << params.context_window << '\n';
  out << "feature_map one_hot_concat\n";
  out << "weights " << params.weights.size() << '\n';
  char buf[40];
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", params.weights[i]);
    out << buf << ((i + 1) % 8 == 0 ? '\n' : ' ');
  }
  if (params.weights.size() % 8 != 0) out << '\n';
}

inline PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  std::string tag;
  std::getline(in, tag);
  if (tag != "dispo-policy-v1") throw std::runtime_error("unknown checkpoint format: " + tag);
  std::string key, feature;
  int vocab_size = 0, context_window = 0;
  std::size_t count = 0;
  in >> key >> vocab_size;
  if (key != "vocab_size") throw std::runtime_error("bad checkpoint field: " + key);
  in >> key >> context_window;
  if (key != "context_window") throw std::runtime_error("bad checkpoint field: " + key);
  in >> key >> feature;
  if (key != "feature_map" || feature != "one_hot_concat")
    throw std::runtime_error("bad checkpoint feature map");
  in >> key >> count;
  if (key != "weights") throw std::runtime_error("bad checkpoint field: " + key);
  PolicyParams params = PolicyParams::zeros(vocab_size, context_window);
  if (count != params.weights.size())
    throw std::runtime_error("checkpoint weight count mismatch");
  for (std::size_t i = 0; i < count; ++i) {
    if (!(in >> params.weights[i])) throw std::runtime_error("truncated checkpoint");
  }
  return params;
}

}  // namespace dispo
