#include <doctest.h>

#include "spg/rng.hpp"
#include "spg/schedule.hpp"

using namespace spg;

TEST_CASE("continuous linear alpha and weight") {
  NoiseSchedule s = NoiseSchedule::continuous_linear();
  auto mid = s.alpha_and_weight(0.5);
  CHECK(mid.alpha == doctest::Approx(0.5));
  CHECK(mid.weight == doctest::Approx(2.0));
  auto end = s.alpha_and_weight(1.0);
  CHECK(end.alpha == doctest::Approx(0.0));
  CHECK(end.weight == doctest::Approx(1.0));
}

TEST_CASE("weight is undefined at t = 0") {
  NoiseSchedule s = NoiseSchedule::continuous_linear();
  CHECK_THROWS_AS(s.alpha_and_weight(0.0), NumericFailure);
}

TEST_CASE("discrete linear grid values") {
  NoiseSchedule s = NoiseSchedule::discrete_linear(5);
  CHECK(s.alpha_at(1) == doctest::Approx(1.0));
  CHECK(s.alpha_at(2) == doctest::Approx(0.75));
  CHECK(s.alpha_at(5) == doctest::Approx(0.0));
  for (int t = 1; t <= 4; ++t)
    CHECK(s.unmask_step_prob(t).marginal == doctest::Approx(0.25));
}

TEST_CASE("single-transition schedule has conditional 1") {
  NoiseSchedule s = NoiseSchedule::discrete({1.0, 0.0});
  CHECK(s.unmask_step_prob(1).conditional == doctest::Approx(1.0));
  CHECK(s.unmask_step_prob(1).marginal == doctest::Approx(1.0));
}

TEST_CASE("marginals sum to one on random valid grids") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    int T = 3 + static_cast<int>(rng.uniform_int(6));
    std::vector<double> alpha(T);
    alpha[0] = 1.0;
    alpha[T - 1] = 0.0;
    // strictly decreasing interior points
    std::vector<double> cuts;
    for (int i = 0; i < T - 2; ++i) cuts.push_back(0.05 + 0.9 * rng.uniform());
    std::sort(cuts.rbegin(), cuts.rend());
    for (int i = 0; i < T - 2; ++i) alpha[i + 1] = cuts[i];
    NoiseSchedule s = NoiseSchedule::discrete(alpha);
    double total = 0.0;
    for (int t = 1; t < T; ++t) total += s.unmask_step_prob(t).marginal;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("grid validation") {
  CHECK_THROWS_AS(NoiseSchedule::discrete({1.0, 0.5, 0.6, 0.0}), InvalidArgument);
  CHECK_THROWS_AS(NoiseSchedule::discrete({0.9, 0.0}), InvalidArgument);
  CHECK_THROWS_AS(NoiseSchedule::discrete({1.0}), InvalidArgument);
  NoiseSchedule s = NoiseSchedule::discrete_linear(4);
  CHECK_THROWS_AS(s.unmask_step_prob(0), InvalidArgument);
  CHECK_THROWS_AS(s.unmask_step_prob(4), InvalidArgument);
  CHECK_THROWS_AS(s.alpha_and_weight(0.5), InvalidArgument);
}
