#pragma once

/**
 * Noise schedules for the absorbing forward process.
 *
 * A schedule owns the retention masses alpha_t (probability a token is still
 * visible at time t) together with the loss weight w(t) and the per-step
 * transition masses of the discretized chain.
 *
 * Two kinds are supported:
 *  - continuous linear: alpha(t) = 1 - t on t in [0, 1], w(t) = 1/t;
 *  - discrete: an explicit strictly decreasing grid alpha_1 = 1 .. alpha_T = 0,
 *    indexed 1-based to match the chain z_1 (clean) .. z_T (all mask).
 */

#include <cmath>
#include <string>
#include <vector>

#include "spg/types.hpp"

namespace spg {

struct AlphaWeight {
  double alpha;
  double weight;
};

struct UnmaskStepProb {
  double conditional;  // P(z_t = x | z_{t+1} = mask)  = (a_t - a_{t+1}) / (1 - a_{t+1})
  double marginal;     // P(unmask transition at step t) = a_t - a_{t+1}
};

class NoiseSchedule {
 public:
  static NoiseSchedule continuous_linear() { return NoiseSchedule(); }

  /// Discrete grid; endpoints must be exactly 1 and 0 so the transition
  /// masses telescope to total mass one.
  static NoiseSchedule discrete(std::vector<double> alpha) {
    if (alpha.size() < 2) throw InvalidArgument("discrete schedule needs T >= 2");
    if (alpha.front() != 1.0 || alpha.back() != 0.0)
      throw InvalidArgument("discrete schedule requires alpha_1 = 1 and alpha_T = 0");
    for (size_t i = 1; i < alpha.size(); ++i)
      if (!(alpha[i] < alpha[i - 1]))
        throw InvalidArgument("alpha grid must be strictly decreasing");
    NoiseSchedule s;
    s.alpha_ = std::move(alpha);
    return s;
  }

  /// alpha_t = (T - t) / (T - 1), t = 1..T.
  static NoiseSchedule discrete_linear(int steps) {
    if (steps < 2) throw InvalidArgument("discrete schedule needs T >= 2");
    std::vector<double> alpha(steps);
    for (int t = 1; t <= steps; ++t)
      alpha[t - 1] = static_cast<double>(steps - t) / (steps - 1);
    alpha.front() = 1.0;
    alpha.back() = 0.0;
    return discrete(std::move(alpha));
  }

  bool is_discrete() const { return !alpha_.empty(); }
  int steps() const { return static_cast<int>(alpha_.size()); }

  /// Retention mass on the continuous clock, t in [0, 1].
  double alpha_continuous(double t) const {
    require_continuous();
    if (t < 0.0 || t > 1.0) throw InvalidArgument("continuous t must lie in [0, 1]");
    return 1.0 - t;
  }

  /// Retention mass at grid index t (1-based).
  double alpha_at(int t) const {
    require_discrete();
    if (t < 1 || t > steps()) throw InvalidArgument("step index out of range");
    return alpha_[t - 1];
  }

  /// (alpha_t, w(t)) on the continuous clock. w(t) = alpha'(t)/(alpha_t - 1)
  /// = 1/t for the linear schedule; undefined at t = 0.
  AlphaWeight alpha_and_weight(double t) const {
    require_continuous();
    if (t <= 0.0)
      throw NumericFailure("loss weight w(t) is undefined at t = 0");
    if (t > 1.0) throw InvalidArgument("continuous t must lie in (0, 1]");
    return {1.0 - t, 1.0 / t};
  }

  /// (alpha_t, per-step loss weight) of the discretized chain, t in 1..T-1.
  /// The step weight is the conditional unmask probability.
  AlphaWeight alpha_and_weight_step(int t) const {
    UnmaskStepProb p = unmask_step_prob(t);
    return {alpha_at(t), p.conditional};
  }

  /// Transition masses of the discretized chain at step t in 1..T-1.
  UnmaskStepProb unmask_step_prob(int t) const {
    require_discrete();
    if (t < 1 || t >= steps()) throw InvalidArgument("step index out of range");
    double a_t = alpha_.at(static_cast<size_t>(t) - 1);
    double a_next = alpha_.at(static_cast<size_t>(t));
    return {(a_t - a_next) / (1.0 - a_next), a_t - a_next};
  }

 private:
  NoiseSchedule() = default;

  void require_discrete() const {
    if (!is_discrete()) throw InvalidArgument("operation requires a discrete schedule");
  }
  void require_continuous() const {
    if (is_discrete()) throw InvalidArgument("operation requires the continuous schedule");
  }

  std::vector<double> alpha_;  // empty = continuous linear
};

}  // namespace spg
