#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dispo/rng.hpp"
#include "dispo/vocab.hpp"

namespace dispo {

enum class TaskKind { AddMod, MulMod, Copy };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::AddMod: return "ADD_MOD";
    case TaskKind::MulMod: return "MUL_MOD";
    case TaskKind::Copy: return "COPY";
  }
  throw std::invalid_argument("unsupported task_kind");
}

inline TaskKind task_kind_from_string(std::string_view s) {
  if (s == "ADD_MOD" || s == "add_mod" || s == "add") return TaskKind::AddMod;
  if (s == "MUL_MOD" || s == "mul_mod" || s == "mul") return TaskKind::MulMod;
  if (s == "COPY" || s == "copy") return TaskKind::Copy;
  throw std::invalid_argument("unsupported task_kind: " + std::string(s));
}

// One verifiable question-answer pair over the token alphabet.
struct Task {
  TaskKind kind = TaskKind::AddMod;
  int operand_a = 0;
  int operand_b = 0;
  int modulus = 10;
  std::vector<int> question;      // e.g. "7+5="
  std::vector<int> ground_truth;  // e.g. "2"
  std::uint64_t id = 0;           // generation seed, for reproducibility
};

struct RewardOutcome {
  int base_reward = -1;            // +1 iff verifier accepts
  double length_penalty = 0.0;     // in [-1, 0]
  double shaped_reward = -1.0;     // base + penalty, clamped to [-1, 1]
  bool truncated = false;          // hit the hard length limit
  bool repetition_truncated = false;
};

namespace detail {
inline void check_modulus(TaskKind kind, int modulus) {
  if (modulus < 2) throw std::invalid_argument("modulus must be >= 2");
  // answers must render in at most two digits
  if (modulus > 100) throw std::invalid_argument("modulus must be <= 100");
  (void)kind;
}
}  // namespace detail

/// Renders the task for known operands. The question shows operands and
/// operator ("7+5=", "3*4=", "42="); the modulus rides in the record.
inline Task make_task(const Vocab& vocab, TaskKind kind, int a, int b, int modulus) {
  detail::check_modulus(kind, modulus);
  if (a < 0 || b < 0) throw std::invalid_argument("operands must be non-negative");
  Task t;
  t.kind = kind;
  t.operand_a = a;
  t.operand_b = b;
  t.modulus = modulus;
  long result = 0;
  std::string q;
  switch (kind) {
    case TaskKind::AddMod:
      result = (static_cast<long>(a) + b) % modulus;
      q = std::to_string(a) + "+" + std::to_string(b) + "=";
      break;
    case TaskKind::MulMod:
      result = (static_cast<long>(a) * b) % modulus;
      q = std::to_string(a) + "*" + std::to_string(b) + "=";
      break;
    case TaskKind::Copy:
      result = a;
      q = std::to_string(a) + "=";
      break;
    default:
      throw std::invalid_argument("unsupported task_kind");
  }
  t.question = vocab.encode(q);
  t.ground_truth = vocab.encode(std::to_string(result));
  return t;
}

/// Draws a task deterministically from the seed. ADD_MOD biases toward
/// carry-free pairs (7/8 sum-balanced, 1/8 uniform square) so the linear
/// policy has a fully learnable core while every pair stays reachable.
inline Task generate_task(const Vocab& vocab, std::uint64_t rng_seed, TaskKind kind,
                          int modulus) {
  detail::check_modulus(kind, modulus);
  Rng rng(rng_seed);
  int a = 0, b = 0;
  const auto m = static_cast<std::uint64_t>(modulus);
  switch (kind) {
    case TaskKind::AddMod:
      if (rng.uniform01() < 0.875) {
        const int s = static_cast<int>(rng.uniform_int(m));
        a = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(s) + 1));
        b = s - a;
      } else {
        a = static_cast<int>(rng.uniform_int(m));
        b = static_cast<int>(rng.uniform_int(m));
      }
      break;
    case TaskKind::MulMod:
      a = static_cast<int>(rng.uniform_int(m));
      b = static_cast<int>(rng.uniform_int(m));
      break;
    case TaskKind::Copy:
      a = static_cast<int>(rng.uniform_int(m));
      b = 0;
      break;
    default:
      throw std::invalid_argument("unsupported task_kind");
  }
  Task t = make_task(vocab, kind, a, b, modulus);
  t.id = rng_seed;
  return t;
}

/// Binary verifier: +1 iff the response's first 'E' is its last token and
/// the tokens after the last 'A' before it equal the ground truth exactly.
/// Every malformed response maps to -1.
inline int verify(std::span<const int> response, const Task& task, const Vocab& vocab) {
  const int eos = vocab.eos();
  const int delim = vocab.answer_delim();
  std::size_t e_pos = response.size();
  for (std::size_t i = 0; i < response.size(); ++i) {
    if (response[i] == eos) {
      e_pos = i;
      break;
    }
  }
  if (e_pos == response.size()) return -1;      // no terminator
  if (e_pos + 1 != response.size()) return -1;  // tokens after 'E'
  std::size_t a_pos = e_pos;
  for (std::size_t i = e_pos; i-- > 0;) {
    if (response[i] == delim) {
      a_pos = i;
      break;
    }
  }
  if (a_pos == e_pos) return -1;  // no delimiter
  const std::size_t n = e_pos - a_pos - 1;
  if (n != task.ground_truth.size()) return -1;
  for (std::size_t i = 0; i < n; ++i)
    if (response[a_pos + 1 + i] != task.ground_truth[i]) return -1;
  return 1;
}

/// Overlong penalty: zero up to soft_limit, then a linear ramp to -1 at
/// hard_limit. Shaped reward is clamped to [-1, +1].
inline RewardOutcome shape_reward(int base_reward, int response_length, int soft_limit,
                                  int hard_limit) {
  if (!(0 < soft_limit && soft_limit < hard_limit))
    throw std::invalid_argument("require 0 < soft_limit < hard_limit");
  if (response_length < 0 || response_length > hard_limit)
    throw std::logic_error("response length exceeds hard limit; sampler must truncate");
  if (base_reward != 1 && base_reward != -1)
    throw std::invalid_argument("base_reward must be -1 or +1");
  RewardOutcome out;
  out.base_reward = base_reward;
  out.length_penalty =
      response_length <= soft_limit
          ? 0.0
          : -static_cast<double>(response_length - soft_limit) / (hard_limit - soft_limit);
  out.shaped_reward = std::clamp(base_reward + out.length_penalty, -1.0, 1.0);
  return out;
}

/// Manifest record: kind, operands, modulus, question, ground truth (TSV).
inline std::string manifest_line(const Task& task, const Vocab& vocab) {
  std::ostringstream os;
  os << to_string(task.kind) << '\t' << task.operand_a << ',' << task.operand_b << '\t'
     << task.modulus << '\t' << vocab.decode(task.question) << '\t'
     << vocab.decode(task.ground_truth);
  return os.str();
}

inline void write_manifest(const std::string& path, std::span<const Task> tasks,
                           const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open manifest file: " + path);
  for (const Task& t : tasks) out << manifest_line(t, vocab) << '\n';
}

}  // namespace dispo
