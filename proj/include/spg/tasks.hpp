#pragma once

/**
 * Synthetic verifiable-reward tasks with tiered scores.
 *
 * Every prompt is sampled solvable: a maximal-reward response exists by
 * construction and solve() produces one. Rewards are pure functions of
 * (prompt, response).
 *
 *   copy / reverse   reproduce (or reverse) the prompt symbols;
 *                    reward = fraction correct + 1.0 bonus for an exact match
 *   sum-mod          single-token answer: sum of prompt digits mod V
 *   mini-countdown   prompt [a, b, target]; response is a fixed three-token
 *                    grammar (operand, operator, operand).
 *                    1.0  expression uses exactly the prompt operands and
 *                         reaches the target
 *                    0.1  operands correct but the value is wrong
 *                    0.0  anything else
 */

#include <algorithm>
#include <string>
#include <vector>

#include "spg/rng.hpp"
#include "spg/types.hpp"

namespace spg {

enum class TaskKind { Copy, Reverse, MiniCountdown, SumMod };

struct TaskSpec {
  TaskKind kind = TaskKind::Copy;
  Vocab vocab;
  int prompt_len = 0;
  int response_len = 0;
  std::vector<double> reward_tiers;  // distinct attainable tier values

  static TaskSpec copy(int n, int vocab_size) {
    TaskSpec task{TaskKind::Copy, Vocab::with_mask(vocab_size), n, n, {}};
    for (int k = 0; k <= n; ++k) task.reward_tiers.push_back(static_cast<double>(k) / n);
    task.reward_tiers.back() = 2.0;  // exact match: 1.0 fraction + 1.0 bonus
    return task;
  }

  static TaskSpec reverse(int n, int vocab_size) {
    TaskSpec task = copy(n, vocab_size);
    task.kind = TaskKind::Reverse;
    return task;
  }

  static TaskSpec sum_mod(int digits, int vocab_size) {
    TaskSpec task{TaskKind::SumMod, Vocab::with_mask(vocab_size), digits, 1, {0.0, 2.0}};
    return task;
  }

  /// Vocabulary: digits 0..13 at ids 0..13, '+' = 14, '-' = 15.
  static TaskSpec mini_countdown() {
    return {TaskKind::MiniCountdown, Vocab::with_mask(16), 3, 3, {0.0, 0.1, 1.0}};
  }

  double max_reward() const {
    return *std::max_element(reward_tiers.begin(), reward_tiers.end());
  }
};

namespace countdown {

constexpr TokenId kPlus = 14;
constexpr TokenId kMinus = 15;

inline bool is_digit(TokenId t) { return t >= 0 && t < 14; }
inline bool is_operator(TokenId t) { return t == kPlus || t == kMinus; }

}  // namespace countdown

inline std::vector<TokenId> sample_prompt(const TaskSpec& task, Rng& rng) {
  switch (task.kind) {
    case TaskKind::Copy:
    case TaskKind::Reverse:
    case TaskKind::SumMod: {
      std::vector<TokenId> prompt(task.prompt_len);
      for (TokenId& tok : prompt)
        tok = static_cast<TokenId>(rng.uniform_int(static_cast<uint64_t>(task.vocab.size)));
      return prompt;
    }
    case TaskKind::MiniCountdown: {
      TokenId a = static_cast<TokenId>(1 + rng.uniform_int(6));
      TokenId b = static_cast<TokenId>(1 + rng.uniform_int(6));
      bool plus = rng.bernoulli(0.5);
      TokenId target = plus ? a + b : (a >= b ? a - b : b - a);
      return {a, b, target};
    }
  }
  throw InvalidArgument("unknown task kind");
}

/// A maximal-reward response for the prompt; exists for every sampled prompt.
inline std::vector<TokenId> solve(const TaskSpec& task, const std::vector<TokenId>& prompt) {
  switch (task.kind) {
    case TaskKind::Copy:
      return prompt;
    case TaskKind::Reverse: {
      std::vector<TokenId> out(prompt.rbegin(), prompt.rend());
      return out;
    }
    case TaskKind::SumMod: {
      long sum = 0;
      for (TokenId tok : prompt) sum += tok;
      return {static_cast<TokenId>(sum % task.vocab.size)};
    }
    case TaskKind::MiniCountdown: {
      TokenId a = prompt[0], b = prompt[1], target = prompt[2];
      if (a + b == target) return {a, countdown::kPlus, b};
      if (a - b == target) return {a, countdown::kMinus, b};
      return {b, countdown::kMinus, a};
    }
  }
  throw InvalidArgument("unknown task kind");
}

inline double reward(const TaskSpec& task, const std::vector<TokenId>& prompt,
                     const std::vector<TokenId>& response) {
  if (static_cast<int>(response.size()) != task.response_len)
    throw InvalidArgument("response length does not match the task");
  switch (task.kind) {
    case TaskKind::Copy:
    case TaskKind::Reverse:
    case TaskKind::SumMod: {
      std::vector<TokenId> target = solve(task, prompt);
      int correct = 0;
      for (size_t i = 0; i < target.size(); ++i)
        if (response[i] == target[i]) ++correct;
      double frac = static_cast<double>(correct) / task.response_len;
      return frac + (correct == task.response_len ? 1.0 : 0.0);
    }
    case TaskKind::MiniCountdown: {
      TokenId a = prompt[0], b = prompt[1], target = prompt[2];
      TokenId x = response[0], op = response[1], y = response[2];
      if (!countdown::is_digit(x) || !countdown::is_digit(y) || !countdown::is_operator(op))
        return 0.0;
      bool operands_ok = (x == a && y == b) || (x == b && y == a);
      if (!operands_ok) return 0.0;
      long value = op == countdown::kPlus ? x + y : x - y;
      return value == target ? 1.0 : 0.1;
    }
  }
  throw InvalidArgument("unknown task kind");
}

}  // namespace spg
