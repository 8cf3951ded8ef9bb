#pragma once

// Shared test utilities: chi-square statistics for the distributional
// properties, and small instance builders used across suites.

#include <cmath>
#include <vector>

#include "spg/policy.hpp"
#include "spg/rng.hpp"
#include "spg/types.hpp"

namespace testutil {

// ---------------------------------------------------------------------------
// Regularized incomplete gamma, series + continued fraction
// ---------------------------------------------------------------------------

inline double gamma_p_series(double a, double x) {
  double sum = 1.0 / a, term = sum, ap = a;
  for (int i = 0; i < 500; ++i) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_cf(double a, double x) {
  double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i <= 500; ++i) {
    double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-15) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

/// Q(a, x) = P(Chi2_{2a} > 2x); survival function building block.
inline double gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) return 1.0;
  if (x == 0.0) return 1.0;
  return x < a + 1.0 ? 1.0 - gamma_p_series(a, x) : gamma_q_cf(a, x);
}

/// P(Chi2_df > x)
inline double chi2_sf(double x, int df) { return gamma_q(df / 2.0, x / 2.0); }

// ---------------------------------------------------------------------------
// Chi-square tests
// ---------------------------------------------------------------------------

/// p-value of independence for a 2x2 contingency table.
inline double chi2_independence_2x2(const long counts[2][2]) {
  double total = 0.0, row[2] = {0, 0}, col[2] = {0, 0};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      row[r] += counts[r][c];
      col[c] += counts[r][c];
      total += counts[r][c];
    }
  double stat = 0.0;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      double expected = row[r] * col[c] / total;
      if (expected > 0.0) {
        double diff = counts[r][c] - expected;
        stat += diff * diff / expected;
      }
    }
  return chi2_sf(stat, 1);
}

/// Two-sample chi-square on histograms with identical bins.
inline double chi2_two_sample(const std::vector<long>& h1, const std::vector<long>& h2) {
  double n1 = 0.0, n2 = 0.0;
  for (long c : h1) n1 += c;
  for (long c : h2) n2 += c;
  double k1 = std::sqrt(n2 / n1), k2 = std::sqrt(n1 / n2);
  double stat = 0.0;
  int df = -1;
  for (size_t b = 0; b < h1.size(); ++b) {
    if (h1[b] + h2[b] == 0) continue;
    double diff = k1 * h1[b] - k2 * h2[b];
    stat += diff * diff / (h1[b] + h2[b]);
    ++df;
  }
  return chi2_sf(stat, df > 0 ? df : 1);
}

// ---------------------------------------------------------------------------
// Instance builders
// ---------------------------------------------------------------------------

inline spg::Policy random_tabular(int vocab_size, int prompt_len, int response_len,
                                  uint64_t seed, double scale = 1.5) {
  spg::Policy policy =
      spg::Policy::tabular(spg::Vocab::with_mask(vocab_size), prompt_len, response_len);
  spg::Rng rng(seed);
  policy.as_tabular().randomize(rng, scale);
  return policy;
}

inline spg::TokenSequence random_sequence(const spg::Vocab& vocab, int prompt_len,
                                          int response_len, uint64_t seed) {
  spg::Rng rng(seed);
  std::vector<spg::TokenId> tokens;
  for (int i = 0; i < prompt_len + response_len; ++i)
    tokens.push_back(static_cast<spg::TokenId>(rng.uniform_int(vocab.size)));
  return spg::TokenSequence(std::move(tokens), prompt_len);
}

inline double rel_error(const std::vector<double>& got, const std::vector<double>& want) {
  double diff = 0.0, ref = 0.0;
  for (size_t i = 0; i < got.size(); ++i) {
    diff += (got[i] - want[i]) * (got[i] - want[i]);
    ref += want[i] * want[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

}  // namespace testutil
