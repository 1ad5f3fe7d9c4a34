#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dispo/objectives.hpp"
#include "dispo/policy.hpp"
#include "dispo/sampler.hpp"
#include "dispo/task.hpp"

namespace dispo {

// Per-update training record, one JSONL line each.
struct StepMetrics {
  int update_index = 0;
  int rollout_round = 0;
  double train_accuracy = 0.0;      // fraction of kept-group rollouts with base +1
  double mean_token_entropy = 0.0;  // nats, live policy over the update's tokens
  double mean_response_length = 0.0;
  std::array<long, 4> regime_counts{};  // R1..R4
  double grad_norm_pre_clip = 0.0;
  double grad_norm_post_clip = 0.0;
  int groups_filtered = 0;  // round-level fill statistic, replicated per update
};

inline nlohmann::ordered_json to_json(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["update_index"] = m.update_index;
  j["rollout_round"] = m.rollout_round;
  j["train_accuracy"] = m.train_accuracy;
  j["mean_token_entropy"] = m.mean_token_entropy;
  j["mean_response_length"] = m.mean_response_length;
  j["regime_counts"] = m.regime_counts;
  j["grad_norm_pre_clip"] = m.grad_norm_pre_clip;
  j["grad_norm_post_clip"] = m.grad_norm_post_clip;
  j["groups_filtered"] = m.groups_filtered;
  return j;
}

// Avg@k evaluation over a fixed task set.
struct EvalReport {
  int update_index = 0;
  int rollout_round = 0;
  int k = 16;
  std::vector<double> per_task_accuracy;
  double avg_at_k = 0.0;
  double mean_entropy = 0.0;  // over all generated tokens of all completions
  double mean_length = 0.0;
  bool best_so_far = false;
};

/// Samples k completions per task at temperature 1.0 and reports average
/// accuracy plus token-entropy and length over the same completions.
inline EvalReport evaluate(const PolicyParams& params, std::span<const Task> eval_tasks,
                           int k, const SampleLimits& limits, const Vocab& vocab, Rng& rng) {
  if (k < 1) throw std::invalid_argument("eval k must be >= 1");
  if (eval_tasks.empty()) throw std::invalid_argument("empty eval task set");
  EvalReport report;
  report.k = k;
  double entropy_sum = 0.0;
  long token_count = 0;
  for (const Task& task : eval_tasks) {
    int correct = 0;
    for (int i = 0; i < k; ++i) {
      detail::SampledResponse s = detail::sample_response(params, task, limits, vocab, rng);
      if (verify(s.tokens, task, vocab) > 0) correct += 1;
      entropy_sum += s.entropy_sum;
      token_count += static_cast<long>(s.tokens.size());
    }
    report.per_task_accuracy.push_back(static_cast<double>(correct) / k);
  }
  double acc_sum = 0.0;
  for (double a : report.per_task_accuracy) acc_sum += a;
  report.avg_at_k = acc_sum / static_cast<double>(report.per_task_accuracy.size());
  report.mean_entropy = token_count > 0 ? entropy_sum / token_count : 0.0;
  report.mean_length =
      static_cast<double>(token_count) / (static_cast<double>(eval_tasks.size()) * k);
  return report;
}

/// Argmax of avg_at_k; ties break toward the earliest report.
inline std::size_t select_best_checkpoint(std::span<const EvalReport> history) {
  if (history.empty()) throw std::invalid_argument("empty evaluation history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i].avg_at_k > history[best].avg_at_k) best = i;
  return best;
}

// ---- file emission ---------------------------------------------------------

inline void write_metrics_jsonl(const std::string& path, std::span<const StepMetrics> metrics) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const StepMetrics& m : metrics) out << to_json(m).dump() << '\n';
}

namespace detail {
inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}
}  // namespace detail

inline void write_eval_csv(const std::string& path, std::span<const EvalReport> reports) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "update_index,rollout_round,k,avg_at_k,mean_entropy,mean_length,best_so_far\n";
  for (const EvalReport& r : reports) {
    out << r.update_index << ',' << r.rollout_round << ',' << r.k << ','
        << detail::fmt_double(r.avg_at_k) << ',' << detail::fmt_double(r.mean_entropy) << ','
        << detail::fmt_double(r.mean_length) << ',' << (r.best_so_far ? 1 : 0) << '\n';
  }
}

/// Gradient-weight profiles for a set of configurations, both advantage
/// signs, one row per grid point.
inline void write_profiles_csv(const std::string& path, std::span<const ClipConfig> configs,
                               std::span<const double> r_grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "algorithm,advantage_sign,r,multiplier,gated\n";
  for (const ClipConfig& cfg : configs) {
    for (int sign : {+1, -1}) {
      for (double r : r_grid) {
        const MultiplierResult m = effective_multiplier(r, sign > 0 ? 1.0 : -1.0, cfg);
        out << to_string(cfg.algorithm) << ',' << (sign > 0 ? "pos" : "neg") << ','
            << detail::fmt_double(r) << ',' << detail::fmt_double(m.multiplier) << ','
            << (m.gated ? 1 : 0) << '\n';
      }
    }
  }
}

/// Optional per-token regime log, line-delimited.
inline void write_regime_log(const std::string& path,
                             std::span<const TokenUpdateRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const TokenUpdateRecord& r : records) {
    nlohmann::ordered_json j;
    j["group"] = r.group;
    j["rollout"] = r.rollout;
    j["token_index"] = r.token_index;
    j["ratio"] = r.ratio;
    j["advantage"] = r.advantage;
    j["regime"] = static_cast<int>(r.regime);
    j["multiplier"] = r.effective_multiplier;
    j["gated"] = r.gradient_gated;
    out << j.dump() << '\n';
  }
}

// ---- static SVG line plots --------------------------------------------------
// Regenerable offline from metrics.jsonl; the plot is a pure function of the
// series passed in.

inline void write_svg_line_plot(const std::string& path, const std::string& title,
                                const std::string& y_label, std::span<const double> xs,
                                std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("plot series length mismatch");
  const int width = 760, height = 380;
  const int ml = 64, mr = 16, mt = 36, mb = 44;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!xs.empty()) {
    xmin = xmax = xs[0];
    ymin = ymax = ys[0];
    for (std::size_t i = 0; i < xs.size(); ++i) {
      xmin = std::min(xmin, xs[i]);
      xmax = std::max(xmax, xs[i]);
      ymin = std::min(ymin, ys[i]);
      ymax = std::max(ymax, ys[i]);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const auto px = [&](double x) {
    return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr);
  };
  const auto py = [&](double y) {
    return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb);
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  // axes
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << height - mb << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
      << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << ml << "\" y=\"" << height - mb + 28
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << detail::fmt_double(xmin)
      << "</text>\n";
  out << "<text x=\"" << width - mr << "\" y=\"" << height - mb + 28
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << detail::fmt_double(xmax) << "</text>\n";
  out << "<text x=\"" << ml - 6 << "\" y=\"" << height - mb
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << detail::fmt_double(ymin) << "</text>\n";
  out << "<text x=\"" << ml - 6 << "\" y=\"" << mt + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << detail::fmt_double(ymax) << "</text>\n";
  out << "<text x=\"14\" y=\"" << height / 2
      << "\" transform=\"rotate(-90 14 " << height / 2
      << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << y_label
      << "</text>\n";
  if (!xs.empty()) {
    out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      out << px(xs[i]) << ',' << py(ys[i]);
      if (i + 1 < xs.size()) out << ' ';
    }
    out << "\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace dispo
