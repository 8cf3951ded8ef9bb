#include <doctest.h>

#include "spg/tasks.hpp"

using namespace spg;

TEST_CASE("copy prompts carry the symbols to reproduce") {
  TaskSpec task = TaskSpec::copy(4, 4);
  Rng rng(801);
  std::vector<TokenId> prompt = sample_prompt(task, rng);
  REQUIRE(prompt.size() == 4);
  for (TokenId tok : prompt) CHECK(task.vocab.is_token(tok));
  CHECK(reward(task, prompt, prompt) == doctest::Approx(2.0));
}

TEST_CASE("reward tiers for copy-style tasks are fraction plus exact bonus") {
  TaskSpec task = TaskSpec::copy(4, 4);
  std::vector<TokenId> prompt{0, 1, 2, 3};
  CHECK(reward(task, prompt, {0, 1, 2, 3}) == doctest::Approx(2.0));
  CHECK(reward(task, prompt, {0, 1, 2, 0}) == doctest::Approx(0.75));
  CHECK(reward(task, prompt, {3, 2, 1, 0}) == doctest::Approx(0.0));
}

TEST_CASE("reverse rewards the mirrored prompt") {
  TaskSpec task = TaskSpec::reverse(3, 4);
  std::vector<TokenId> prompt{0, 1, 2};
  CHECK(reward(task, prompt, {2, 1, 0}) == doctest::Approx(2.0));
  CHECK(reward(task, prompt, {0, 1, 2}) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("sum-mod encodes digits whose modular sum is the answer") {
  TaskSpec task = TaskSpec::sum_mod(3, 5);
  std::vector<TokenId> prompt{4, 3, 2};  // 9 mod 5 = 4
  CHECK(reward(task, prompt, {4}) == doctest::Approx(2.0));
  CHECK(reward(task, prompt, {0}) == doctest::Approx(0.0));
  CHECK(solve(task, prompt) == std::vector<TokenId>{4});
}

TEST_CASE("mini-countdown reward tiers") {
  TaskSpec task = TaskSpec::mini_countdown();
  std::vector<TokenId> prompt{2, 3, 5};  // operands 2, 3, target 5
  CHECK(reward(task, prompt, {2, countdown::kPlus, 3}) == doctest::Approx(1.0));
  CHECK(reward(task, prompt, {3, countdown::kPlus, 2}) == doctest::Approx(1.0));
  CHECK(reward(task, prompt, {3, countdown::kMinus, 2}) == doctest::Approx(0.1));
  CHECK(reward(task, prompt, {2, countdown::kMinus, 3}) == doctest::Approx(0.1));
  CHECK(reward(task, prompt, {1, countdown::kPlus, 4}) == doctest::Approx(0.0));
  CHECK(reward(task, prompt, {2, 3, 3}) == doctest::Approx(0.0));  // malformed operator
}

TEST_CASE("every sampled prompt admits a maximal-reward response") {
  Rng rng(802);
  for (TaskSpec task : {TaskSpec::copy(4, 4), TaskSpec::reverse(3, 3),
                        TaskSpec::sum_mod(4, 4), TaskSpec::mini_countdown()}) {
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<TokenId> prompt = sample_prompt(task, rng);
      std::vector<TokenId> best = solve(task, prompt);
      CHECK(reward(task, prompt, best) == doctest::Approx(task.max_reward()));
    }
  }
}

TEST_CASE("rewards are deterministic and bounded") {
  Rng rng(803);
  TaskSpec task = TaskSpec::mini_countdown();
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<TokenId> prompt = sample_prompt(task, rng);
    std::vector<TokenId> response(3);
    for (TokenId& tok : response)
      tok = static_cast<TokenId>(rng.uniform_int(task.vocab.size));
    double r1 = reward(task, prompt, response);
    double r2 = reward(task, prompt, response);
    CHECK(r1 == r2);
    CHECK(r1 >= 0.0);
    CHECK(r1 <= task.max_reward());
  }
}

TEST_CASE("prompt sampling is deterministic under a fixed seed") {
  TaskSpec task = TaskSpec::copy(5, 3);
  Rng a(99), b(99);
  CHECK(sample_prompt(task, a) == sample_prompt(task, b));
}

TEST_CASE("response length is validated") {
  TaskSpec task = TaskSpec::copy(4, 4);
  CHECK_THROWS_AS(reward(task, {0, 1, 2, 3}, {0, 1}), InvalidArgument);
}
