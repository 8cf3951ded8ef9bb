#pragma once

/**
 * Likelihood surrogates for the response part of a sequence.
 *
 * Monte Carlo (continuous clock, linear schedule, w(t) = 1/t):
 *   elbo_mc   (1/m) sum_tau sum_i  w(t_tau) 1(z_i = m) log pi(x_i | z_tau)
 *   eubo_mc   (1/beta) sum_i log( (1/m) sum_tau w 1 pi^beta(x_i | z_tau) )
 *   loose     (1/beta) sum_i (1/m) sum_tau w 1 pi^beta  -  n/beta
 *   mixture   omega * eubo + (1 - omega) * elbo
 *
 * Discrete exact counterparts enumerate the mask patterns of the other
 * response tokens, so every bound can be pinned against brute force on small
 * instances. Each estimator also has an Objective builder; the value ops
 * evaluate those objectives, so backprop differentiates the exact same
 * expression it reports.
 *
 * Tokens never masked in any sample carry no information for the log-of-mean
 * upper bound; they are dropped from that estimate and reported in
 * BoundReport::coverage. An estimate with no covered token at all is
 * undefined and throws.
 */

#include <cmath>
#include <optional>
#include <vector>

#include "spg/masking.hpp"
#include "spg/objective.hpp"
#include "spg/policy.hpp"
#include "spg/rng.hpp"
#include "spg/schedule.hpp"
#include "spg/types.hpp"

namespace spg {

struct EstimatorConfig {
  double beta = 1.0;   // upper-bound sharpness, >= 1
  double omega = 0.5;  // blend coefficient, in [0, 1]
  int samples = 2;     // Monte Carlo sample count m
  MaskStrategy masking = MaskStrategy::BlockWise;
  int block_size = 4;
  double p_mask = 0.15;

  void validate() const {
    if (beta < 1.0) throw InvalidArgument("beta must be >= 1");
    if (omega < 0.0 || omega > 1.0) throw InvalidArgument("omega must lie in [0, 1]");
    if (samples < 1) throw InvalidArgument("sample count must be >= 1");
    if (block_size < 1) throw InvalidArgument("block_size must be >= 1");
    if (p_mask < 0.0 || p_mask > 1.0) throw InvalidArgument("p_mask must lie in [0, 1]");
  }
};

struct BoundReport {
  double elbo = 0.0;
  double eubo = 0.0;
  double mixture = 0.0;
  std::optional<double> loose;
  std::optional<double> c_constant;
  std::vector<double> per_token_terms;  // mixture contribution per response token
  std::vector<int> coverage;            // per-token count of samples masking it
};

// ============================================================================
// Sampling
// ============================================================================

/// m corrupted states of x under the configured strategy; each state records
/// the ratio t that produced it, so w(t) = 1/t is recoverable.
inline std::vector<MaskedState> draw_mask_samples(const TokenSequence& x, const Vocab& vocab,
                                                  const EstimatorConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<MaskedState> samples;
  samples.reserve(cfg.samples);
  NoiseSchedule continuous = NoiseSchedule::continuous_linear();
  for (int tau = 0; tau < cfg.samples; ++tau) {
    Rng stream = rng.child(static_cast<uint64_t>(tau));
    if (cfg.masking == MaskStrategy::Random) {
      double t = stream.uniform_pos();
      samples.push_back(forward_mask(x, vocab, continuous, t, stream));
    } else {
      samples.push_back(blockwise_mask(x, vocab, cfg.block_size, cfg.p_mask, stream));
    }
  }
  return samples;
}

inline double sample_weight(const MaskedState& state) { return 1.0 / state.t; }

// ============================================================================
// Monte Carlo objectives over a shared sample set
// ============================================================================

inline Objective elbo_objective(const TokenSequence& x, const Vocab& vocab,
                                std::span<const MaskedState> samples) {
  Objective obj;
  double inv_m = 1.0 / static_cast<double>(samples.size());
  for (const MaskedState& sample : samples) {
    int s = obj.add_state(sample);
    double w = sample_weight(sample);
    for (int i = 0; i < x.response_len(); ++i)
      if (vocab.is_mask(sample.response(i)))
        obj.log_prob_terms.push_back({{s, i, x.response(i)}, w * inv_m});
  }
  return obj;
}

/// Per-token log-of-mean groups; uncovered tokens are skipped and reported.
/// Throws when no token is covered unless allow_no_coverage is set (the
/// trainer treats a fully uncovered draw as a zero-information update).
inline Objective eubo_objective(const TokenSequence& x, const Vocab& vocab,
                                std::span<const MaskedState> samples, double beta,
                                std::vector<int>* coverage_out = nullptr,
                                bool allow_no_coverage = false) {
  Objective obj;
  int n = x.response_len();
  double inv_m = 1.0 / static_cast<double>(samples.size());
  std::vector<int> state_index(samples.size());
  for (size_t tau = 0; tau < samples.size(); ++tau) state_index[tau] = obj.add_state(samples[tau]);

  std::vector<int> coverage(n, 0);
  int covered_tokens = 0;
  for (int i = 0; i < n; ++i) {
    LogGroup group;
    group.outer = 1.0 / beta;
    group.beta = beta;
    for (size_t tau = 0; tau < samples.size(); ++tau) {
      if (!vocab.is_mask(samples[tau].response(i))) continue;
      ++coverage[i];
      group.terms.push_back(
          {{state_index[tau], i, x.response(i)}, sample_weight(samples[tau]) * inv_m});
    }
    if (!group.terms.empty()) {
      obj.log_groups.push_back(std::move(group));
      ++covered_tokens;
    }
  }
  if (coverage_out) *coverage_out = coverage;
  if (covered_tokens == 0 && !allow_no_coverage)
    throw NumericFailure("upper-bound estimate undefined: no token was masked in any sample");
  return obj;
}

inline Objective loose_objective(const TokenSequence& x, const Vocab& vocab,
                                 std::span<const MaskedState> samples, double beta) {
  Objective obj;
  obj.power_beta = beta;
  int n = x.response_len();
  double inv_m = 1.0 / static_cast<double>(samples.size());
  for (const MaskedState& sample : samples) {
    int s = obj.add_state(sample);
    double w = sample_weight(sample);
    for (int i = 0; i < n; ++i)
      if (vocab.is_mask(sample.response(i)))
        obj.power_terms.push_back({{s, i, x.response(i)}, w * inv_m / beta});
  }
  obj.constant = -static_cast<double>(n) / beta;
  return obj;
}

/// omega-blend of the two objectives over one shared sample set.
inline Objective mixture_objective(const TokenSequence& x, const Vocab& vocab,
                                   std::span<const MaskedState> samples, double beta,
                                   double omega, bool allow_no_coverage = false) {
  Objective elbo = elbo_objective(x, vocab, samples);
  elbo.scale(1.0 - omega);
  Objective eubo = eubo_objective(x, vocab, samples, beta, nullptr, allow_no_coverage);
  eubo.scale(omega);
  elbo.append(std::move(eubo));
  return elbo;
}

// ============================================================================
// Monte Carlo value ops
// ============================================================================

inline double elbo_mc(const Policy& policy, const TokenSequence& x, const EstimatorConfig& cfg,
                      Rng& rng) {
  auto samples = draw_mask_samples(x, policy.vocab(), cfg, rng);
  return evaluate(policy, elbo_objective(x, policy.vocab(), samples));
}

inline double eubo_mc(const Policy& policy, const TokenSequence& x, const EstimatorConfig& cfg,
                      Rng& rng, std::vector<int>* coverage_out = nullptr) {
  auto samples = draw_mask_samples(x, policy.vocab(), cfg, rng);
  return evaluate(policy, eubo_objective(x, policy.vocab(), samples, cfg.beta, coverage_out));
}

inline double loose_bound_mc(const Policy& policy, const TokenSequence& x,
                             const EstimatorConfig& cfg, Rng& rng) {
  auto samples = draw_mask_samples(x, policy.vocab(), cfg, rng);
  return evaluate(policy, loose_objective(x, policy.vocab(), samples, cfg.beta));
}

inline double mixture(double elbo, double eubo, double omega) {
  if (omega < 0.0 || omega > 1.0) throw InvalidArgument("omega must lie in [0, 1]");
  return omega * eubo + (1.0 - omega) * elbo;
}

/// Everything at once on one shared sample set.
inline BoundReport estimate_bounds(const Policy& policy, const TokenSequence& x,
                                   const EstimatorConfig& cfg, Rng& rng) {
  auto samples = draw_mask_samples(x, policy.vocab(), cfg, rng);
  const Vocab& vocab = policy.vocab();
  int n = x.response_len();
  int m = static_cast<int>(samples.size());

  // one forward pass per sample
  std::vector<std::vector<std::vector<double>>> rows(samples.size());
  for (size_t tau = 0; tau < samples.size(); ++tau)
    rows[tau] = policy.forward_rows(samples[tau]);

  BoundReport report;
  report.coverage.assign(n, 0);
  report.per_token_terms.assign(n, 0.0);
  std::vector<double> elbo_token(n, 0.0), eubo_inner(n, 0.0), loose_sum(n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (size_t tau = 0; tau < samples.size(); ++tau) {
      if (!vocab.is_mask(samples[tau].response(i))) continue;
      ++report.coverage[i];
      double w = sample_weight(samples[tau]);
      double p = rows[tau][i][x.response(i)];
      elbo_token[i] += w * std::log(p) / m;
      eubo_inner[i] += w * std::pow(p, cfg.beta) / m;
      loose_sum[i] += w * std::pow(p, cfg.beta) / m;
    }
  }

  int covered = 0;
  double loose = -static_cast<double>(n) / cfg.beta;
  std::vector<double> eubo_token(n, 0.0);
  for (int i = 0; i < n; ++i) {
    report.elbo += elbo_token[i];
    loose += loose_sum[i] / cfg.beta;
    if (report.coverage[i] > 0) {
      eubo_token[i] = std::log(eubo_inner[i]) / cfg.beta;
      report.eubo += eubo_token[i];
      ++covered;
    }
  }
  if (covered == 0)
    throw NumericFailure("upper-bound estimate undefined: no token was masked in any sample");
  report.mixture = mixture(report.elbo, report.eubo, cfg.omega);
  report.loose = loose;
  for (int i = 0; i < n; ++i)
    report.per_token_terms[i] = cfg.omega * eubo_token[i] + (1.0 - cfg.omega) * elbo_token[i];
  return report;
}

// ============================================================================
// Discrete exact forms
// ============================================================================

namespace detail {

inline void check_enumerable(int n) {
  if (n > 12) throw InvalidArgument("instance too large for exact enumeration");
}

/// Enumerates, for predicted token i at chain step t+1, the mask patterns of
/// the other response tokens with their product-Bernoulli weights.
template <class Fn>
void for_each_pattern(const TokenSequence& x, const Vocab& vocab, int token, double mask_prob,
                      Fn&& fn) {
  int n = x.response_len();
  int others = n - 1;
  for (uint32_t pattern = 0; pattern < (1u << others); ++pattern) {
    double weight = 1.0;
    MaskedState state;
    state.z = x.tokens;
    state.prompt_len = x.prompt_len;
    state.z[x.prompt_len + token] = vocab.mask_id;
    int bit = 0;
    for (int j = 0; j < n; ++j) {
      if (j == token) continue;
      bool masked = (pattern >> bit) & 1u;
      weight *= masked ? mask_prob : (1.0 - mask_prob);
      if (masked) state.z[x.prompt_len + j] = vocab.mask_id;
      ++bit;
    }
    if (weight == 0.0) continue;
    fn(std::move(state), weight);
  }
}

}  // namespace detail

/// Theta-independent constant of the discrete upper bound. Zero when
/// beta >= n; otherwise (1/beta) log prod_i sum_t (a_t - a_{t+1})^(1-n),
/// which follows from the per-token independence of unmask times.
inline double c_constant(const NoiseSchedule& schedule, int n, double beta) {
  if (!schedule.is_discrete()) throw InvalidArgument("c_constant needs a discrete schedule");
  if (beta < 1.0) throw InvalidArgument("beta must be >= 1");
  if (beta >= static_cast<double>(n)) return 0.0;
  double sum = 0.0;
  for (int t = 1; t < schedule.steps(); ++t)
    sum += std::pow(schedule.unmask_step_prob(t).marginal, 1.0 - static_cast<double>(n));
  return static_cast<double>(n) * std::log(sum) / beta;
}

inline Objective elbo_exact_objective(const TokenSequence& x, const Vocab& vocab,
                                      const NoiseSchedule& schedule) {
  if (!schedule.is_discrete()) throw InvalidArgument("exact bound needs a discrete schedule");
  int n = x.response_len();
  detail::check_enumerable(n);
  Objective obj;
  for (int i = 0; i < n; ++i) {
    for (int t = 1; t < schedule.steps(); ++t) {
      double jump = schedule.unmask_step_prob(t).marginal;
      double mask_prob = 1.0 - schedule.alpha_at(t + 1);
      detail::for_each_pattern(x, vocab, i, mask_prob, [&](MaskedState state, double weight) {
        int s = obj.add_state(std::move(state));
        obj.log_prob_terms.push_back({{s, i, x.response(i)}, jump * weight});
      });
    }
  }
  return obj;
}

inline Objective eubo_exact_objective(const TokenSequence& x, const Vocab& vocab,
                                      const NoiseSchedule& schedule, double beta) {
  if (!schedule.is_discrete()) throw InvalidArgument("exact bound needs a discrete schedule");
  if (beta < 1.0) throw InvalidArgument("beta must be >= 1");
  int n = x.response_len();
  detail::check_enumerable(n);
  Objective obj;
  for (int i = 0; i < n; ++i) {
    LogGroup group;
    group.outer = 1.0 / beta;
    group.beta = beta;
    for (int t = 1; t < schedule.steps(); ++t) {
      double jump = schedule.unmask_step_prob(t).marginal;
      double mask_prob = 1.0 - schedule.alpha_at(t + 1);
      detail::for_each_pattern(x, vocab, i, mask_prob, [&](MaskedState state, double weight) {
        int s = obj.add_state(std::move(state));
        group.terms.push_back({{s, i, x.response(i)}, jump * weight});
      });
    }
    obj.log_groups.push_back(std::move(group));
  }
  obj.constant = c_constant(schedule, n, beta);
  return obj;
}

inline double elbo_exact(const Policy& policy, const TokenSequence& x,
                         const NoiseSchedule& schedule) {
  return evaluate(policy, elbo_exact_objective(x, policy.vocab(), schedule));
}

inline double eubo_exact(const Policy& policy, const TokenSequence& x,
                         const NoiseSchedule& schedule, double beta) {
  return evaluate(policy, eubo_exact_objective(x, policy.vocab(), schedule, beta));
}

// ============================================================================
// Self-normalized confidence weights (mixture-gradient diagnostics)
// ============================================================================

struct GradientWeights {
  // [token][sample]; w is w(t) 1(z_i = mask)
  std::vector<std::vector<double>> w;
  std::vector<std::vector<double>> rho;      // w pi^beta / mean(w pi^beta)
  std::vector<std::vector<double>> blended;  // (1 - omega) w + omega rho
};

/// rho_beta per (token, sample) with the per-token normalizer taken as the
/// sample mean of w pi^beta. A token whose normalizer vanishes (never masked)
/// has no meaningful weights and raises a degenerate-weights failure.
inline GradientWeights gradient_weights(const Policy& policy, const TokenSequence& x,
                                        std::span<const MaskedState> samples, double beta,
                                        double omega) {
  if (beta < 1.0) throw InvalidArgument("beta must be >= 1");
  if (omega < 0.0 || omega > 1.0) throw InvalidArgument("omega must lie in [0, 1]");
  const Vocab& vocab = policy.vocab();
  int n = x.response_len();
  int m = static_cast<int>(samples.size());
  GradientWeights out;
  out.w.assign(n, std::vector<double>(m, 0.0));
  out.rho = out.w;
  out.blended = out.w;

  std::vector<std::vector<std::vector<double>>> rows(samples.size());
  for (size_t tau = 0; tau < samples.size(); ++tau)
    rows[tau] = policy.forward_rows(samples[tau]);

  for (int i = 0; i < n; ++i) {
    double mean = 0.0;
    std::vector<double> w_pow(m, 0.0);
    for (int tau = 0; tau < m; ++tau) {
      if (!vocab.is_mask(samples[tau].response(i))) continue;
      out.w[i][tau] = sample_weight(samples[tau]);
      w_pow[tau] = out.w[i][tau] * std::pow(rows[tau][i][x.response(i)], beta);
      mean += w_pow[tau];
    }
    mean /= m;
    if (mean <= 0.0)
      throw NumericFailure("degenerate confidence weights: zero normalizer for token " +
                           std::to_string(i));
    for (int tau = 0; tau < m; ++tau) {
      out.rho[i][tau] = w_pow[tau] / mean;
      out.blended[i][tau] = (1.0 - omega) * out.w[i][tau] + omega * out.rho[i][tau];
    }
  }
  return out;
}

}  // namespace spg
