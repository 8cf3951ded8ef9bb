#pragma once

/**
 * Forward corruption: absorb-to-mask samplers producing the partially masked
 * states the Monte Carlo estimators are evaluated on.
 *
 * Two strategies:
 *  - random: every response token masked independently with probability
 *    1 - alpha_t; the prompt is never touched.
 *  - block-wise: the response is split into fixed-size blocks, one block is
 *    chosen uniformly, later blocks are fully masked, the chosen block is
 *    masked at a ratio t ~ U(0,1], and earlier blocks plus the prompt are
 *    lightly perturbed with a small per-token probability p_mask. This mirrors
 *    the state distribution seen by a semi-autoregressive decoder.
 */

#include <vector>

#include "spg/rng.hpp"
#include "spg/schedule.hpp"
#include "spg/types.hpp"

namespace spg {

enum class MaskStrategy { Random, BlockWise };

struct MaskedState {
  std::vector<TokenId> z;  // prompt + response, values or mask_id
  int prompt_len = 0;
  double t = 0.0;  // mask ratio that produced the state (within the chosen block
                   // for the block-wise strategy); w(t) = 1/t is the matching weight
  MaskStrategy strategy = MaskStrategy::Random;
  int block_index = -1;  // block-wise only

  int length() const { return static_cast<int>(z.size()); }
  int response_len() const { return length() - prompt_len; }
  TokenId response(int i) const { return z[prompt_len + i]; }
};

/// Each response token is independently replaced by mask_id with probability
/// 1 - alpha_t. For a discrete schedule, t is the (1-based) grid index.
inline MaskedState forward_mask(const TokenSequence& x, const Vocab& vocab,
                                const NoiseSchedule& schedule, double t, Rng& rng) {
  double alpha = schedule.is_discrete()
                     ? schedule.alpha_at(static_cast<int>(t))
                     : schedule.alpha_continuous(t);
  MaskedState state;
  state.z = x.tokens;
  state.prompt_len = x.prompt_len;
  state.t = t;
  state.strategy = MaskStrategy::Random;
  double p = 1.0 - alpha;
  for (int i = 0; i < x.response_len(); ++i)
    if (rng.bernoulli(p)) state.z[x.prompt_len + i] = vocab.mask_id;
  return state;
}

/// Block-wise corruption with the block choice and within-block ratio fixed
/// by the caller; the public sampler below draws them. Exposed so tests can
/// pin a block/ratio combination.
inline MaskedState blockwise_mask_at(const TokenSequence& x, const Vocab& vocab,
                                     int block_size, double p_mask, int block_index,
                                     double t, Rng& rng) {
  int n = x.response_len();
  if (n < 1) throw InvalidArgument("block-wise masking requires a non-empty response");
  if (block_size < 1) throw InvalidArgument("block_size must be >= 1");
  if (p_mask < 0.0 || p_mask > 1.0) throw InvalidArgument("p_mask must lie in [0, 1]");
  int num_blocks = (n + block_size - 1) / block_size;
  if (block_index < 0 || block_index >= num_blocks)
    throw InvalidArgument("block index out of range");
  if (!(t > 0.0 && t <= 1.0)) throw InvalidArgument("mask ratio must lie in (0, 1]");

  MaskedState state;
  state.z = x.tokens;
  state.prompt_len = x.prompt_len;
  state.t = t;
  state.strategy = MaskStrategy::BlockWise;
  state.block_index = block_index;

  // prompt and earlier blocks: light perturbation
  int block_start = block_index * block_size;
  int block_end = std::min(n, block_start + block_size);
  for (int p = 0; p < x.prompt_len + block_start; ++p)
    if (rng.bernoulli(p_mask)) state.z[p] = vocab.mask_id;
  // chosen block: ratio t
  for (int i = block_start; i < block_end; ++i)
    if (rng.bernoulli(t)) state.z[x.prompt_len + i] = vocab.mask_id;
  // later blocks: fully masked
  for (int i = block_end; i < n; ++i) state.z[x.prompt_len + i] = vocab.mask_id;
  return state;
}

/// Draws the block uniformly and the within-block ratio t ~ U(0,1], then
/// delegates. t = 0 is excluded so every sample can carry weight w(t) = 1/t.
inline MaskedState blockwise_mask(const TokenSequence& x, const Vocab& vocab,
                                  int block_size, double p_mask, Rng& rng) {
  int n = x.response_len();
  if (n < 1) throw InvalidArgument("block-wise masking requires a non-empty response");
  if (block_size < 1) throw InvalidArgument("block_size must be >= 1");
  int num_blocks = (n + block_size - 1) / block_size;
  int block_index = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(num_blocks)));
  double t = rng.uniform_pos();
  return blockwise_mask_at(x, vocab, block_size, p_mask, block_index, t, rng);
}

}  // namespace spg
