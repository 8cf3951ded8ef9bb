#include <doctest.h>

#include <vector>

#include "helpers.hpp"
#include "spg/decode.hpp"

using namespace spg;

TEST_CASE("greedy decoding with a unique argmax is seed-independent") {
  Policy policy = testutil::random_tabular(4, 2, 4, 301);
  DecodeConfig cfg;
  cfg.order = DecodeOrder::SemiArConfidence;
  cfg.block_size = 2;
  cfg.temperature = 0.0;
  std::vector<TokenId> prompt{1, 3};
  Rng r1(1), r2(999);
  TokenSequence a = decode(policy, prompt, cfg, r1);
  TokenSequence b = decode(policy, prompt, cfg, r2);
  CHECK(a.tokens == b.tokens);
}

TEST_CASE("full-sequence random with tokens_per_step = n unmasks in one step") {
  Vocab vocab = Vocab::with_mask(3);
  Policy policy = testutil::random_tabular(3, 0, 5, 302);
  DecodeConfig cfg;
  cfg.order = DecodeOrder::FullRandom;
  cfg.tokens_per_step = 5;
  cfg.temperature = 1.0;
  Rng rng(7);
  int steps = 0;
  TokenSequence out = decode(policy, {}, cfg, rng,
                             [&](int, const std::vector<TokenId>&) { ++steps; });
  CHECK(steps == 1);
  CHECK(out.response_len() == 5);
  for (int i = 0; i < 5; ++i) CHECK(vocab.is_token(out.response(i)));
}

TEST_CASE("semi-AR never touches a later block while the current one has masks") {
  Vocab vocab = Vocab::with_mask(3);
  Policy policy = testutil::random_tabular(3, 1, 8, 303);
  for (auto order : {DecodeOrder::SemiArConfidence, DecodeOrder::SemiArRandom}) {
    DecodeConfig cfg;
    cfg.order = order;
    cfg.block_size = 3;
    cfg.tokens_per_step = 1;
    cfg.temperature = 1.0;
    Rng rng(8);
    std::vector<TokenId> prompt{0};
    decode(policy, prompt, cfg, rng, [&](int, const std::vector<TokenId>& z) {
      // find the first block containing a mask; every later position must be masked
      int first_masked_block = 100;
      for (int i = 0; i < 8; ++i)
        if (vocab.is_mask(z[1 + i])) {
          first_masked_block = i / 3;
          break;
        }
      for (int i = 0; i < 8; ++i)
        if (i / 3 > first_masked_block) CHECK(vocab.is_mask(z[1 + i]));
    });
  }
}

TEST_CASE("block structure fixes the number of denoising steps") {
  // 256 tokens in blocks of 32, two tokens per step: 128 steps
  Vocab vocab = Vocab::with_mask(3);
  Policy policy = Policy::tiny_neural(vocab, 0, 256, 4, 4, 1, 304);
  DecodeConfig cfg;
  cfg.order = DecodeOrder::SemiArConfidence;
  cfg.block_size = 32;
  cfg.tokens_per_step = 2;
  cfg.temperature = 0.9;
  cfg.total_steps = 128;
  CHECK(decode_steps_required(256, cfg) == 128);
  Rng rng(9);
  int steps = 0;
  decode(policy, {}, cfg, rng, [&](int, const std::vector<TokenId>&) { ++steps; });
  CHECK(steps == 128);
}

TEST_CASE("uneven final block commits fewer tokens on its last step") {
  Vocab vocab = Vocab::with_mask(3);
  Policy policy = testutil::random_tabular(3, 0, 7, 305);
  DecodeConfig cfg;
  cfg.order = DecodeOrder::SemiArConfidence;
  cfg.block_size = 4;
  cfg.tokens_per_step = 2;
  cfg.temperature = 1.0;
  CHECK(decode_steps_required(7, cfg) == 4);  // 2 steps for 4 tokens, 2 for 3
  Rng rng(10);
  int steps = 0;
  TokenSequence out =
      decode(policy, {}, cfg, rng, [&](int, const std::vector<TokenId>&) { ++steps; });
  CHECK(steps == 4);
  for (int i = 0; i < 7; ++i) CHECK(vocab.is_token(out.response(i)));
}

TEST_CASE("insufficient step budget is rejected") {
  Policy policy = testutil::random_tabular(3, 0, 8, 306);
  DecodeConfig cfg;
  cfg.order = DecodeOrder::SemiArConfidence;
  cfg.block_size = 4;
  cfg.tokens_per_step = 1;
  cfg.total_steps = 7;
  Rng rng(11);
  CHECK_THROWS_AS(decode(policy, {}, cfg, rng), InvalidArgument);
}

TEST_CASE("sampling temperature reshapes the sampling distribution") {
  Vocab vocab = Vocab::with_mask(2);
  Policy policy = Policy::tabular(vocab, 0, 1);
  policy.params()[0] = 1.0;  // pi(0 | M) ~ 0.73
  DecodeConfig cfg;
  cfg.order = DecodeOrder::FullRandom;
  cfg.temperature = 0.25;
  Rng rng(12);
  int zeros_cold = 0, zeros_hot = 0;
  for (int trial = 0; trial < 4000; ++trial)
    if (decode(policy, {}, cfg, rng).response(0) == 0) ++zeros_cold;
  cfg.temperature = 4.0;
  for (int trial = 0; trial < 4000; ++trial)
    if (decode(policy, {}, cfg, rng).response(0) == 0) ++zeros_hot;
  CHECK(zeros_cold > 3800);  // sharpened
  CHECK(zeros_hot < 2700);   // flattened toward uniform
  CHECK(zeros_hot > 1900);
}
