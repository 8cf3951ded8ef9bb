#pragma once

/**
 * Structured differentiable objectives over policy outputs.
 *
 * Every likelihood surrogate used here is a combination of three shapes,
 * all referencing  pi = pi(token | state)  at masked response positions:
 *
 *   value = constant
 *         + sum_k  w_k * log pi_k                          (log-prob terms)
 *         + sum_k  w_k * pi_k^beta                         (power terms)
 *         + sum_g  outer_g * log( sum_k w_{g,k} * pi_{g,k}^beta_g )   (log groups)
 *
 * backprop() returns the exact value and accumulates the exact parameter
 * gradient by chaining scalar factors into  grad log pi  requests, one batch
 * per distinct state. Finite differences cross-check this path in the tests.
 */

#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "spg/policy.hpp"
#include "spg/types.hpp"

namespace spg {

struct TermRef {
  int state;     // index into Objective::states
  int position;  // response position (masked in that state)
  TokenId token;
};

struct WeightedTerm {
  TermRef ref;
  double weight;
};

struct LogGroup {
  double outer = 1.0;
  double beta = 1.0;
  std::vector<WeightedTerm> terms;
};

struct Objective {
  std::vector<MaskedState> states;
  std::vector<WeightedTerm> log_prob_terms;
  std::vector<WeightedTerm> power_terms;
  double power_beta = 1.0;
  std::vector<LogGroup> log_groups;
  double constant = 0.0;

  int add_state(MaskedState state) {
    states.push_back(std::move(state));
    return static_cast<int>(states.size()) - 1;
  }

  /// Multiplies the objective value by s. Inner log-group weights stay put;
  /// only the outer factors scale.
  void scale(double s) {
    for (auto& term : log_prob_terms) term.weight *= s;
    for (auto& term : power_terms) term.weight *= s;
    for (auto& group : log_groups) group.outer *= s;
    constant *= s;
  }

  /// Appends another objective (state indices are re-based).
  void append(Objective other) {
    if (!power_terms.empty() && !other.power_terms.empty() && power_beta != other.power_beta)
      throw InvalidArgument("cannot append objectives with different power-term exponents");
    int base = static_cast<int>(states.size());
    for (auto& state : other.states) states.push_back(std::move(state));
    auto rebase = [base](WeightedTerm& term) { term.ref.state += base; };
    for (auto& term : other.log_prob_terms) { rebase(term); log_prob_terms.push_back(term); }
    for (auto& term : other.power_terms) { rebase(term); power_terms.push_back(term); }
    if (!other.power_terms.empty()) power_beta = other.power_beta;
    for (auto& group : other.log_groups) {
      for (auto& term : group.terms) rebase(term);
      log_groups.push_back(std::move(group));
    }
    constant += other.constant;
  }

  bool empty() const {
    return log_prob_terms.empty() && power_terms.empty() && log_groups.empty();
  }
};

namespace detail {

/// Forward rows for each state, computed once and shared between the value
/// and gradient passes.
class RowCache {
 public:
  RowCache(const Policy& policy, std::span<const MaskedState> states) : policy_(policy) {
    rows_.resize(states.size());
    states_ = states;
  }

  double prob(const TermRef& ref) {
    auto& rows = rows_[ref.state];
    if (rows.empty()) rows = policy_.forward_rows(states_[ref.state]);
    return rows[ref.position][ref.token];
  }

 private:
  const Policy& policy_;
  std::span<const MaskedState> states_;
  std::vector<std::vector<std::vector<double>>> rows_;
};

}  // namespace detail

inline double evaluate(const Policy& policy, const Objective& objective) {
  detail::RowCache cache(policy, objective.states);
  double value = objective.constant;
  for (const auto& term : objective.log_prob_terms)
    value += term.weight * std::log(cache.prob(term.ref));
  for (const auto& term : objective.power_terms)
    value += term.weight * std::pow(cache.prob(term.ref), objective.power_beta);
  for (const auto& group : objective.log_groups) {
    double inner = 0.0;
    for (const auto& term : group.terms)
      inner += term.weight * std::pow(cache.prob(term.ref), group.beta);
    if (!(inner > 0.0))
      throw NumericFailure("log-group argument is not positive: estimator undefined");
    value += group.outer * std::log(inner);
  }
  if (!std::isfinite(value)) throw NumericFailure("objective value is not finite");
  return value;
}

/// Exact value and exact parameter gradient (accumulated into grad).
inline double backprop(const Policy& policy, const Objective& objective,
                       std::vector<double>& grad) {
  detail::RowCache cache(policy, objective.states);
  double value = objective.constant;

  // scale on grad log pi, keyed by state
  std::map<int, std::vector<LogProbTerm>> per_state;
  auto push = [&](const TermRef& ref, double scale) {
    per_state[ref.state].push_back({ref.position, ref.token, scale});
  };

  for (const auto& term : objective.log_prob_terms) {
    value += term.weight * std::log(cache.prob(term.ref));
    push(term.ref, term.weight);
  }
  for (const auto& term : objective.power_terms) {
    double powered = std::pow(cache.prob(term.ref), objective.power_beta);
    value += term.weight * powered;
    // d/dtheta pi^beta = beta * pi^beta * d/dtheta log pi
    push(term.ref, term.weight * objective.power_beta * powered);
  }
  for (const auto& group : objective.log_groups) {
    double inner = 0.0;
    std::vector<double> powered(group.terms.size());
    for (size_t k = 0; k < group.terms.size(); ++k) {
      powered[k] = std::pow(cache.prob(group.terms[k].ref), group.beta);
      inner += group.terms[k].weight * powered[k];
    }
    if (!(inner > 0.0))
      throw NumericFailure("log-group argument is not positive: estimator undefined");
    value += group.outer * std::log(inner);
    for (size_t k = 0; k < group.terms.size(); ++k)
      push(group.terms[k].ref,
           group.outer * group.terms[k].weight * group.beta * powered[k] / inner);
  }

  if (!std::isfinite(value)) throw NumericFailure("objective value is not finite");
  for (const auto& [state_index, terms] : per_state)
    policy.accumulate_grad(objective.states[state_index], terms, grad);
  for (double g : grad)
    if (!std::isfinite(g)) throw NumericFailure("gradient is not finite");
  return value;
}

}  // namespace spg
