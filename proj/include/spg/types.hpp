#pragma once

/**
 * Shared domain types: vocabulary with a reserved mask symbol, and token
 * sequences split into a prompt segment and a response segment.
 */

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace spg {

using TokenId = int32_t;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad configuration or out-of-domain argument.
struct InvalidArgument : Error {
  using Error::Error;
};

/// Undefined or non-finite numeric result (w(0), empty coverage, overflow,
/// degenerate self-normalization).
struct NumericFailure : Error {
  using Error::Error;
};

// ============================================================================
// Vocab
// ============================================================================

/// V ordinary tokens with ids [0, V) plus one reserved mask symbol.
struct Vocab {
  int size = 0;         // number of non-mask tokens, >= 2
  TokenId mask_id = 0;  // reserved symbol, outside [0, size)

  static Vocab with_mask(int size) { return validated({size, size}); }

  static Vocab validated(Vocab v) {
    if (v.size < 2) throw InvalidArgument("vocab size must be >= 2");
    if (v.mask_id >= 0 && v.mask_id < v.size)
      throw InvalidArgument("mask_id must lie outside [0, V)");
    return v;
  }

  bool is_mask(TokenId t) const { return t == mask_id; }
  bool is_token(TokenId t) const { return t >= 0 && t < size; }
  bool is_symbol(TokenId t) const { return is_token(t) || is_mask(t); }
};

// ============================================================================
// TokenSequence
// ============================================================================

/// Prompt tokens followed by response tokens; the response is the part whose
/// likelihood the bounds and the reward act on.
struct TokenSequence {
  std::vector<TokenId> tokens;
  int prompt_len = 0;

  TokenSequence() = default;
  TokenSequence(std::vector<TokenId> toks, int prompt)
      : tokens(std::move(toks)), prompt_len(prompt) {}

  int length() const { return static_cast<int>(tokens.size()); }
  int response_len() const { return length() - prompt_len; }

  TokenId response(int i) const { return tokens[prompt_len + i]; }
  TokenId& response(int i) { return tokens[prompt_len + i]; }

  void validate(const Vocab& vocab) const {
    if (prompt_len < 0 || prompt_len > length())
      throw InvalidArgument("prompt_len out of range");
    if (response_len() < 1) throw InvalidArgument("response must be non-empty");
    for (TokenId t : tokens)
      if (!vocab.is_symbol(t))
        throw InvalidArgument("token " + std::to_string(t) + " outside vocabulary");
  }
};

}  // namespace spg
