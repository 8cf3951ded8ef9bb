#pragma once

/**
 * Iterative unmasking samplers used for rollouts and evaluation.
 *
 * Semi-autoregressive orders complete fixed-size blocks strictly left to
 * right; full-sequence orders treat the whole response as one block. Within
 * the active block, either the highest-confidence tokens are committed
 * (confidence = probability of the sampled token under the post-temperature
 * distribution) or positions are chosen uniformly. Temperature 0 is greedy
 * and deterministic; confidence ties break toward the lowest position index.
 */

#include <algorithm>
#include <functional>
#include <vector>

#include "spg/policy.hpp"
#include "spg/rng.hpp"
#include "spg/types.hpp"

namespace spg {

enum class DecodeOrder { SemiArConfidence, SemiArRandom, FullConfidence, FullRandom };

struct DecodeConfig {
  DecodeOrder order = DecodeOrder::SemiArConfidence;
  int block_size = 4;
  int tokens_per_step = 1;
  double temperature = 0.0;  // 0 = greedy
  int total_steps = 1 << 20;

  void validate() const {
    if (block_size < 1) throw InvalidArgument("block_size must be >= 1");
    if (tokens_per_step < 1) throw InvalidArgument("tokens_per_step must be >= 1");
    if (temperature < 0.0) throw InvalidArgument("temperature must be >= 0");
    if (total_steps < 1) throw InvalidArgument("total_steps must be >= 1");
  }

  bool semi_ar() const {
    return order == DecodeOrder::SemiArConfidence || order == DecodeOrder::SemiArRandom;
  }
  bool confidence_based() const {
    return order == DecodeOrder::SemiArConfidence || order == DecodeOrder::FullConfidence;
  }
};

/// Observer invoked after each denoising step with the current sequence.
using DecodeObserver = std::function<void(int step, const std::vector<TokenId>& z)>;

namespace detail {

/// Applies temperature to a probability row in place: p^(1/T) renormalized,
/// or a point mass on the argmax at T = 0 (lowest token id wins ties).
inline void apply_temperature(std::vector<double>& probs, double temperature) {
  if (temperature == 1.0) return;
  if (temperature == 0.0) {
    size_t best = 0;
    for (size_t v = 1; v < probs.size(); ++v)
      if (probs[v] > probs[best]) best = v;
    std::fill(probs.begin(), probs.end(), 0.0);
    probs[best] = 1.0;
    return;
  }
  double sum = 0.0;
  for (double& p : probs) {
    p = std::pow(p, 1.0 / temperature);
    sum += p;
  }
  for (double& p : probs) p /= sum;
}

inline TokenId sample_row(const std::vector<double>& probs, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (size_t v = 0; v < probs.size(); ++v) {
    acc += probs[v];
    if (u < acc) return static_cast<TokenId>(v);
  }
  return static_cast<TokenId>(probs.size() - 1);
}

}  // namespace detail

/// Number of denoising steps the configured block structure needs for a
/// response of length n.
inline int decode_steps_required(int response_len, const DecodeConfig& cfg) {
  int block = cfg.semi_ar() ? std::min(cfg.block_size, response_len) : response_len;
  int steps = 0;
  for (int start = 0; start < response_len; start += block) {
    int len = std::min(block, response_len - start);
    steps += (len + cfg.tokens_per_step - 1) / cfg.tokens_per_step;
  }
  return steps;
}

/// Starts from an all-mask response and commits cfg.tokens_per_step tokens per
/// step until the response is clean. Returns the full prompt+response.
inline TokenSequence decode(const Policy& policy, const std::vector<TokenId>& prompt,
                            const DecodeConfig& cfg, Rng& rng,
                            const DecodeObserver& observer = nullptr) {
  cfg.validate();
  if (static_cast<int>(prompt.size()) != policy.prompt_len())
    throw InvalidArgument("prompt length does not match policy shape");
  const Vocab& vocab = policy.vocab();
  int n = policy.response_len();
  if (decode_steps_required(n, cfg) > cfg.total_steps)
    throw InvalidArgument("total_steps too small for the configured block structure");

  MaskedState state;
  state.z = prompt;
  state.z.resize(prompt.size() + n, vocab.mask_id);
  state.prompt_len = static_cast<int>(prompt.size());
  state.t = 1.0;

  int block = cfg.semi_ar() ? std::min(cfg.block_size, n) : n;
  int step = 0;
  for (int start = 0; start < n; start += block) {
    int end = std::min(n, start + block);
    int remaining = end - start;
    while (remaining > 0) {
      auto rows = policy.forward_rows(state);

      // sample a candidate token for every masked position in the block
      struct Candidate {
        int position;
        TokenId token;
        double confidence;
      };
      std::vector<Candidate> candidates;
      for (int i = start; i < end; ++i) {
        if (!vocab.is_mask(state.response(i))) continue;
        std::vector<double>& row = rows[i];
        detail::apply_temperature(row, cfg.temperature);
        TokenId tok = detail::sample_row(row, rng);
        candidates.push_back({i, tok, row[tok]});
      }

      int commit = std::min<int>(cfg.tokens_per_step, static_cast<int>(candidates.size()));
      if (cfg.confidence_based()) {
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Candidate& a, const Candidate& b) {
                           return a.confidence > b.confidence;
                         });
      } else {
        // uniform choice of positions, without replacement
        for (int k = 0; k < commit; ++k) {
          size_t pick = k + rng.uniform_int(candidates.size() - k);
          std::swap(candidates[k], candidates[pick]);
        }
      }
      for (int k = 0; k < commit; ++k)
        state.z[state.prompt_len + candidates[k].position] = candidates[k].token;
      remaining -= commit;
      ++step;
      if (observer) observer(step, state.z);
    }
  }
  return TokenSequence(state.z, state.prompt_len);
}

}  // namespace spg
