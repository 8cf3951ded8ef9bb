#pragma once

/**
 * Independent ground truth for the estimators and the trainer:
 *
 *  - exact_log_likelihood: brute-force enumeration of every per-token unmask
 *    time assignment of the reverse chain;
 *  - sandwich_check: lower bound <= exact <= upper bound on one instance;
 *  - finite_diff_grad: central differences, the reference for backprop;
 *  - continuous-time closed forms of both bounds (the pattern weights reduce
 *    to Beta integrals), the reference for the Monte Carlo estimators;
 *  - variance_sweep: empirical per-coordinate gradient variance of the
 *    blended weighting as a function of omega, with the closed-form minimizer;
 *  - toy_landscape: the two-context closed forms and their partials;
 *  - renyi_check: the variational bound pair on exhaustively summed finite
 *    distributions.
 *
 * Everything here is deterministic given its inputs and independent of the
 * code paths it validates: enumeration only touches Policy::forward_rows.
 */

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "spg/estimators.hpp"
#include "spg/masking.hpp"
#include "spg/objective.hpp"
#include "spg/policy.hpp"
#include "spg/rng.hpp"
#include "spg/schedule.hpp"
#include "spg/types.hpp"

namespace spg::oracles {

// ============================================================================
// Exact log-likelihood by trajectory enumeration
// ============================================================================

/// log pi(x | c) summed over all per-token unmask-time assignments
/// (t_1..t_n) in {1..T-1}^n. Token j is visible in token i's context iff
/// t_j > t_i; simultaneous unmasks see each other as mask.
inline double exact_log_likelihood(const Policy& policy, const TokenSequence& x,
                                   const NoiseSchedule& schedule) {
  if (!schedule.is_discrete())
    throw InvalidArgument("exact likelihood needs a discrete schedule");
  int n = x.response_len();
  int T = schedule.steps();
  double assignments = std::pow(static_cast<double>(T - 1), n);
  if (n > 8 || assignments > 2e6)
    throw InvalidArgument("instance too large for trajectory enumeration");

  const Vocab& vocab = policy.vocab();
  std::vector<int> times(n, 1);
  double total = 0.0;
  while (true) {
    double weight = 1.0;
    for (int i = 0; i < n; ++i) weight *= schedule.unmask_step_prob(times[i]).marginal;
    double traj = weight;
    for (int i = 0; i < n && traj != 0.0; ++i) {
      MaskedState state;
      state.z = x.tokens;
      state.prompt_len = x.prompt_len;
      for (int j = 0; j < n; ++j)
        if (!(times[j] > times[i])) state.z[x.prompt_len + j] = vocab.mask_id;
      auto rows = policy.forward_rows(state);
      traj *= rows[i][x.response(i)];
    }
    total += traj;

    int digit = 0;
    while (digit < n && ++times[digit] >= T) times[digit++] = 1;
    if (digit == n) break;
  }
  return std::log(total);
}

/// Total reverse-process mass over all V^n responses for a fixed prompt;
/// equals 1 for any policy because the reverse chain is a proper generative
/// model.
inline double response_probability_total(const Policy& policy,
                                         const std::vector<TokenId>& prompt,
                                         const NoiseSchedule& schedule) {
  int n = policy.response_len();
  const Vocab& vocab = policy.vocab();
  double mass = std::pow(static_cast<double>(vocab.size), n);
  if (mass > 1e5) throw InvalidArgument("response space too large for enumeration");

  TokenSequence x;
  x.tokens = prompt;
  x.tokens.resize(prompt.size() + n, 0);
  x.prompt_len = static_cast<int>(prompt.size());
  std::vector<int> digits(n, 0);
  double total = 0.0;
  while (true) {
    for (int i = 0; i < n; ++i) x.response(i) = static_cast<TokenId>(digits[i]);
    total += std::exp(exact_log_likelihood(policy, x, schedule));
    int d = 0;
    while (d < n && ++digits[d] >= vocab.size) digits[d++] = 0;
    if (d == n) break;
  }
  return total;
}

// ============================================================================
// Sandwich check
// ============================================================================

struct SandwichReport {
  double elbo = 0.0;
  double exact_loglik = 0.0;
  double eubo = 0.0;
  double gap_lower = 0.0;  // exact - elbo
  double gap_upper = 0.0;  // eubo - exact
  bool pass = false;
};

inline SandwichReport sandwich_check(const Policy& policy, const TokenSequence& x,
                                     const NoiseSchedule& schedule, double beta,
                                     double slack = 1e-9) {
  SandwichReport report;
  report.elbo = elbo_exact(policy, x, schedule);
  report.exact_loglik = exact_log_likelihood(policy, x, schedule);
  report.eubo = eubo_exact(policy, x, schedule, beta);
  report.gap_lower = report.exact_loglik - report.elbo;
  report.gap_upper = report.eubo - report.exact_loglik;
  report.pass = report.gap_lower >= -slack && report.gap_upper >= -slack;
  return report;
}

// ============================================================================
// Finite differences
// ============================================================================

/// Central differences per coordinate; restores theta afterwards. h = 1e-5
/// balances truncation against cancellation for unit-scale losses.
template <class Loss>
std::vector<double> finite_diff_grad(Policy& policy, Loss&& loss, double h = 1e-5) {
  if (!(h > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  std::vector<double>& theta = policy.params();
  std::vector<double> grad(theta.size(), 0.0);
  for (size_t k = 0; k < theta.size(); ++k) {
    double saved = theta[k];
    theta[k] = saved + h;
    double up = loss(static_cast<const Policy&>(policy));
    theta[k] = saved - h;
    double down = loss(static_cast<const Policy&>(policy));
    theta[k] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericFailure("loss is not finite near theta");
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

// ============================================================================
// Continuous-time closed forms
// ============================================================================

namespace detail {

/// Under t ~ U(0,1] with linear retention, the weighted context distribution
/// of w(t) 1(z_i = m) reduces to Beta integrals: a pattern masking k of the
/// other n-1 tokens carries weight k! (n-1-k)! / n!. The weights sum to one.
inline double pattern_weight(int k, int n) {
  double w = 1.0;
  for (int j = 2; j <= n; ++j) w /= j;             // 1/n!
  for (int j = 2; j <= k; ++j) w *= j;             // k!
  for (int j = 2; j <= n - 1 - k; ++j) w *= j;     // (n-1-k)!
  return w;
}

template <class Fn>
void for_each_weighted_context(const Policy& policy, const TokenSequence& x, Fn&& fn) {
  int n = x.response_len();
  if (n > 12) throw InvalidArgument("instance too large for exact enumeration");
  const Vocab& vocab = policy.vocab();
  for (int i = 0; i < n; ++i) {
    int others = n - 1;
    for (uint32_t pattern = 0; pattern < (1u << others); ++pattern) {
      MaskedState state;
      state.z = x.tokens;
      state.prompt_len = x.prompt_len;
      state.z[x.prompt_len + i] = vocab.mask_id;
      int k = 0, bit = 0;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        if ((pattern >> bit) & 1u) {
          state.z[x.prompt_len + j] = vocab.mask_id;
          ++k;
        }
        ++bit;
      }
      double prob = policy.forward_rows(state)[i][x.response(i)];
      fn(i, pattern_weight(k, n), prob);
    }
  }
}

}  // namespace detail

/// E[w(t) 1 log pi] with the time integral done in closed form.
inline double elbo_continuous_exact(const Policy& policy, const TokenSequence& x) {
  double total = 0.0;
  detail::for_each_weighted_context(
      policy, x, [&](int, double weight, double prob) { total += weight * std::log(prob); });
  return total;
}

/// (1/beta) sum_i log E[w(t) 1 pi^beta], time integral in closed form.
inline double eubo_continuous_exact(const Policy& policy, const TokenSequence& x, double beta) {
  std::vector<double> inner(x.response_len(), 0.0);
  detail::for_each_weighted_context(policy, x, [&](int i, double weight, double prob) {
    inner[i] += weight * std::pow(prob, beta);
  });
  double total = 0.0;
  for (double s : inner) total += std::log(s) / beta;
  return total;
}

/// Exact per-token normalizers E[w 1 pi^beta] used by the self-normalized
/// confidence weights.
inline std::vector<double> confidence_normalizers(const Policy& policy, const TokenSequence& x,
                                                  double beta) {
  std::vector<double> inner(x.response_len(), 0.0);
  detail::for_each_weighted_context(policy, x, [&](int i, double weight, double prob) {
    inner[i] += weight * std::pow(prob, beta);
  });
  return inner;
}

// ============================================================================
// Variance sweep over the blend coefficient
// ============================================================================

struct CoordinateSweep {
  std::vector<double> variance;  // empirical variance at each grid point
  double var_lower = 0.0;        // omega = 0 endpoint
  double var_upper = 0.0;        // omega = 1 endpoint
  double nondegeneracy = 0.0;    // Var((rho - w) s_k)
  bool degenerate = true;
  double r_squared = 1.0;
  double omega_star_closed = std::numeric_limits<double>::quiet_NaN();
  double omega_star_fit = std::numeric_limits<double>::quiet_NaN();
  double var_at_star = std::numeric_limits<double>::quiet_NaN();  // Var(u) - nd * omega*^2
};

struct VarianceSweep {
  std::vector<double> omega_grid;
  std::vector<CoordinateSweep> coordinates;
  double omega_star_sum = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = true;  // no coordinate admits a unique minimizer
};

namespace detail {

struct QuadraticFit {
  double c0, c1, c2, r_squared;
};

/// Least-squares quadratic through (x_j, y_j); exact when y is quadratic.
inline QuadraticFit fit_quadratic(const std::vector<double>& xs, const std::vector<double>& ys) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, t0 = 0, t1 = 0, t2 = 0;
  for (size_t j = 0; j < xs.size(); ++j) {
    double x = xs[j], y = ys[j];
    double x2 = x * x;
    s0 += 1; s1 += x; s2 += x2; s3 += x2 * x; s4 += x2 * x2;
    t0 += y; t1 += x * y; t2 += x2 * y;
  }
  double m[3][4] = {{s0, s1, s2, t0}, {s1, s2, s3, t1}, {s2, s3, s4, t2}};
  for (int col = 0; col < 3; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
    for (int c = 0; c < 4; ++c) std::swap(m[col][c], m[pivot][c]);
    for (int r = 0; r < 3; ++r) {
      if (r == col || m[col][col] == 0.0) continue;
      double f = m[r][col] / m[col][col];
      for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
    }
  }
  QuadraticFit fit{};
  fit.c0 = m[0][3] / m[0][0];
  fit.c1 = m[1][3] / m[1][1];
  fit.c2 = m[2][3] / m[2][2];
  double mean = t0 / s0;
  double ss_tot = 0.0, ss_res = 0.0;
  for (size_t j = 0; j < xs.size(); ++j) {
    double pred = fit.c0 + fit.c1 * xs[j] + fit.c2 * xs[j] * xs[j];
    ss_res += (ys[j] - pred) * (ys[j] - pred);
    ss_tot += (ys[j] - mean) * (ys[j] - mean);
  }
  fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

}  // namespace detail

/// Draws `reps` single corruption samples (t ~ U(0,1], random masking),
/// computes the per-sample blended gradient at every omega on the grid over
/// the same draws, and reports per-coordinate variances, the fitted
/// quadratic, and the closed-form minimizer
///   omega*_k = -Cov(w s_k, (rho - w) s_k) / Var((rho - w) s_k).
/// The self-normalizer E[w pi^beta] is computed exactly by enumeration, so a
/// uniform policy yields rho == w and is flagged as having no unique
/// minimizer.
inline VarianceSweep variance_sweep(const Policy& policy, const TokenSequence& x, double beta,
                                    const std::vector<double>& omega_grid, int reps, Rng& rng) {
  if (reps < 100) throw InvalidArgument("variance sweep needs reps >= 100");
  if (omega_grid.size() < 3 || omega_grid.front() != 0.0 || omega_grid.back() != 1.0)
    throw InvalidArgument("omega grid must cover [0, 1]");
  size_t dim = policy.param_count();
  if (dim > 20000) throw InvalidArgument("instance too large for a per-coordinate sweep");

  std::vector<double> normalizer = confidence_normalizers(policy, x, beta);
  const Vocab& vocab = policy.vocab();
  NoiseSchedule continuous = NoiseSchedule::continuous_linear();
  int n = x.response_len();

  // per-sample gradients of the two endpoint weightings
  std::vector<std::vector<double>> lower(reps), upper(reps);
  for (int r = 0; r < reps; ++r) {
    Rng stream = rng.child(static_cast<uint64_t>(r));
    double t = stream.uniform_pos();
    MaskedState state = forward_mask(x, vocab, continuous, t, stream);
    auto rows = policy.forward_rows(state);
    double w = 1.0 / t;

    std::vector<LogProbTerm> w_terms, rho_terms;
    for (int i = 0; i < n; ++i) {
      if (!vocab.is_mask(state.response(i))) continue;
      double prob = rows[i][x.response(i)];
      double rho = w * std::pow(prob, beta) / normalizer[i];
      w_terms.push_back({i, x.response(i), w});
      rho_terms.push_back({i, x.response(i), rho});
    }
    lower[r].assign(dim, 0.0);
    upper[r].assign(dim, 0.0);
    if (!w_terms.empty()) {
      policy.accumulate_grad(state, w_terms, lower[r]);
      policy.accumulate_grad(state, rho_terms, upper[r]);
    }
  }

  VarianceSweep sweep;
  sweep.omega_grid = omega_grid;
  sweep.coordinates.resize(dim);
  double sum_cov = 0.0, sum_nd = 0.0;
  for (size_t k = 0; k < dim; ++k) {
    CoordinateSweep& coord = sweep.coordinates[k];
    double mean_u = 0.0, mean_v = 0.0;
    for (int r = 0; r < reps; ++r) {
      mean_u += lower[r][k];
      mean_v += upper[r][k];
    }
    mean_u /= reps;
    mean_v /= reps;
    double var_u = 0.0, var_d = 0.0, cov_ud = 0.0, var_v = 0.0;
    for (int r = 0; r < reps; ++r) {
      double du = lower[r][k] - mean_u;
      double dd = (upper[r][k] - lower[r][k]) - (mean_v - mean_u);
      double dv = upper[r][k] - mean_v;
      var_u += du * du;
      var_d += dd * dd;
      cov_ud += du * dd;
      var_v += dv * dv;
    }
    var_u /= reps;
    var_d /= reps;
    cov_ud /= reps;
    var_v /= reps;

    coord.variance.resize(omega_grid.size());
    for (size_t j = 0; j < omega_grid.size(); ++j) {
      double omega = omega_grid[j];
      // variance of (1-omega) u + omega v computed from the shared draws
      double var = 0.0;
      for (int r = 0; r < reps; ++r) {
        double g = (1.0 - omega) * lower[r][k] + omega * upper[r][k];
        double mean_g = (1.0 - omega) * mean_u + omega * mean_v;
        var += (g - mean_g) * (g - mean_g);
      }
      coord.variance[j] = var / reps;
    }
    coord.var_lower = var_u;
    coord.var_upper = var_v;
    coord.nondegeneracy = var_d;
    coord.degenerate = var_d <= 1e-18 * std::max(1.0, var_u + var_v);
    detail::QuadraticFit fit = detail::fit_quadratic(omega_grid, coord.variance);
    coord.r_squared = fit.r_squared;
    if (!coord.degenerate) {
      coord.omega_star_closed = -cov_ud / var_d;
      if (fit.c2 > 0.0) coord.omega_star_fit = -fit.c1 / (2.0 * fit.c2);
      coord.var_at_star = var_u - var_d * coord.omega_star_closed * coord.omega_star_closed;
      sum_cov += cov_ud;
      sum_nd += var_d;
      sweep.degenerate = false;
    }
  }
  if (!sweep.degenerate && sum_nd > 0.0) sweep.omega_star_sum = -sum_cov / sum_nd;
  return sweep;
}

// ============================================================================
// Two-context closed forms
// ============================================================================

struct ToyLandscape {
  double elbo;
  double eubo;
  double delbo_da;
  double delbo_db;
  double deubo_da;
  double deubo_db;
};

/// Single-token bounds when the token is predicted from two equally likely
/// contexts with probabilities a and b:
///   elbo = (log a + log b) / 2,  eubo = (1/beta) log((a^beta + b^beta) / 2).
inline ToyLandscape toy_landscape(double a, double b, double beta) {
  if (!(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0))
    throw InvalidArgument("toy landscape requires a, b strictly inside (0, 1)");
  if (beta < 1.0) throw InvalidArgument("beta must be >= 1");
  ToyLandscape out{};
  out.elbo = 0.5 * (std::log(a) + std::log(b));
  double pa = std::pow(a, beta), pb = std::pow(b, beta);
  out.eubo = std::log(0.5 * (pa + pb)) / beta;
  out.delbo_da = 0.5 / a;
  out.delbo_db = 0.5 / b;
  out.deubo_da = std::pow(a, beta - 1.0) / (pa + pb);
  out.deubo_db = std::pow(b, beta - 1.0) / (pa + pb);
  return out;
}

// ============================================================================
// Variational bound pair on finite distributions
// ============================================================================

struct RenyiGaps {
  double lower_slack;  // log p(x) - E_q[log p/q]        (>= 0 when the bound holds)
  double upper_slack;  // (1/beta) log E_q[(p/q)^beta] - log p(x)
};

/// Exhaustive summation; joint_row is p(x, z) over z for the fixed x,
/// proposal is q(z | x) with full support.
inline RenyiGaps renyi_gaps(std::span<const double> joint_row, std::span<const double> proposal,
                            double beta) {
  if (joint_row.size() != proposal.size())
    throw InvalidArgument("joint row and proposal must have equal support");
  if (beta < 1.0) throw InvalidArgument("beta must be >= 1");
  double evidence = 0.0;
  for (size_t z = 0; z < joint_row.size(); ++z) {
    if (joint_row[z] > 0.0 && !(proposal[z] > 0.0))
      throw InvalidArgument("proposal must dominate the joint (absolute continuity)");
    evidence += joint_row[z];
  }
  double log_evidence = std::log(evidence);
  double lower = 0.0, upper_arg = 0.0;
  for (size_t z = 0; z < joint_row.size(); ++z) {
    if (!(proposal[z] > 0.0)) continue;
    double ratio = joint_row[z] / proposal[z];
    if (ratio > 0.0) lower += proposal[z] * std::log(ratio);
    else lower = -std::numeric_limits<double>::infinity();
    upper_arg += proposal[z] * std::pow(ratio, beta);
  }
  double upper = std::log(upper_arg) / beta;
  return {log_evidence - lower, upper - log_evidence};
}

struct RenyiCheckReport {
  int trials = 0;
  int failures = 0;
  double min_lower_slack = std::numeric_limits<double>::infinity();
  double min_upper_slack = std::numeric_limits<double>::infinity();
  bool pass = false;
};

/// Random strictly positive joints over x_count * z_count outcomes with
/// random full-support proposals; every x row of every joint is checked.
inline RenyiCheckReport renyi_check(int trials, double beta, int x_count, int z_count, Rng& rng,
                                    double slack = 1e-12) {
  RenyiCheckReport report;
  report.trials = trials;
  for (int trial = 0; trial < trials; ++trial) {
    Rng stream = rng.child(static_cast<uint64_t>(trial));
    std::vector<double> joint(static_cast<size_t>(x_count) * z_count);
    double total = 0.0;
    for (double& cell : joint) {
      double u = stream.uniform_pos();
      cell = u * u;
      total += cell;
    }
    for (double& cell : joint) cell /= total;

    for (int xi = 0; xi < x_count; ++xi) {
      std::vector<double> proposal(z_count);
      double qsum = 0.0;
      for (double& q : proposal) {
        q = 0.05 + stream.uniform();
        qsum += q;
      }
      for (double& q : proposal) q /= qsum;

      RenyiGaps gaps = renyi_gaps(
          {joint.data() + static_cast<size_t>(xi) * z_count, static_cast<size_t>(z_count)},
          proposal, beta);
      report.min_lower_slack = std::min(report.min_lower_slack, gaps.lower_slack);
      report.min_upper_slack = std::min(report.min_upper_slack, gaps.upper_slack);
      if (gaps.lower_slack < -slack || gaps.upper_slack < -slack) ++report.failures;
    }
  }
  report.pass = report.failures == 0;
  return report;
}

}  // namespace spg::oracles
