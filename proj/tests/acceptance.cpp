/**
 * Acceptance suite: one check per shipping criterion, each printing a
 * [PASS]/[FAIL] line. Everything runs against the public library surface;
 * determinism checks additionally drive the CLI binary.
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spg/decode.hpp"
#include "spg/estimators.hpp"
#include "spg/objective.hpp"
#include "spg/oracles.hpp"
#include "spg/policy.hpp"
#include "spg/rng.hpp"
#include "spg/schedule.hpp"
#include "spg/tasks.hpp"
#include "spg/trainer.hpp"

using namespace spg;
namespace fs = std::filesystem;

namespace {

void report(int criterion, const std::string& what, bool pass) {
  std::printf("criterion %2d [%s] %s\n", criterion, pass ? "PASS" : "FAIL", what.c_str());
  std::fflush(stdout);
  CHECK_MESSAGE(pass, "criterion ", criterion, ": ", what);
}

Policy random_tabular(int vocab, int prompt_len, int n, Rng& rng, double scale = 1.5) {
  Policy policy = Policy::tabular(Vocab::with_mask(vocab), prompt_len, n);
  policy.as_tabular().randomize(rng, scale);
  return policy;
}

TokenSequence random_response(int vocab, int n, Rng& rng) {
  TokenSequence x;
  for (int i = 0; i < n; ++i) x.tokens.push_back(static_cast<TokenId>(rng.uniform_int(vocab)));
  x.prompt_len = 0;
  return x;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

TEST_CASE("criterion 1: sandwich ordering on 500 random instances") {
  auto started = std::chrono::steady_clock::now();
  Rng root(20250801);
  int failures = 0;
  const int instances = 500;
  for (int i = 0; i < instances; ++i) {
    Rng meta = root.child(static_cast<uint64_t>(i));
    int n = 1 + static_cast<int>(meta.uniform_int(3));
    int V = 2 + static_cast<int>(meta.uniform_int(3));
    int T = meta.bernoulli(0.5) ? 3 : 5;
    Rng params = meta.child(uint64_t{1});
    Policy policy = random_tabular(V, 0, n, params);
    TokenSequence x = random_response(V, n, meta);
    auto result = oracles::sandwich_check(policy, x, NoiseSchedule::discrete_linear(T),
                                          static_cast<double>(n));
    if (!result.pass) ++failures;
  }
  double elapsed = seconds_since(started);
  report(1, "elbo <= exact log-likelihood <= eubo on 500 instances (slack 1e-9), " +
                std::to_string(elapsed).substr(0, 5) + "s < 60s single-threaded",
         failures == 0 && elapsed < 60.0);
}

TEST_CASE("criterion 2: equality cases pin all three values") {
  NoiseSchedule schedule = NoiseSchedule::discrete_linear(5);
  TokenSequence x({0, 2, 1}, 0);

  Policy uniform = Policy::tabular(Vocab::with_mask(3), 0, 3);
  double expected = -3.0 * std::log(3.0);
  auto u = oracles::sandwich_check(uniform, x, schedule, 3.0);
  bool uniform_ok = std::abs(u.elbo - expected) < 1e-12 &&
                    std::abs(u.exact_loglik - expected) < 1e-12 &&
                    std::abs(u.eubo - expected) < 1e-12;

  Policy point = Policy::tabular(Vocab::with_mask(3), 0, 3);
  point.as_tabular().set_point_mass(x);
  auto p = oracles::sandwich_check(point, x, schedule, 3.0);
  bool point_ok = std::abs(p.elbo) < 1e-12 && std::abs(p.exact_loglik) < 1e-12 &&
                  std::abs(p.eubo) < 1e-12;

  report(2, "uniform policy gives -n log V and point mass gives 0, all within 1e-12",
         uniform_ok && point_ok);
}

TEST_CASE("criterion 3: reverse-process probabilities sum to one") {
  NoiseSchedule schedule = NoiseSchedule::discrete_linear(5);
  Rng root(3111);
  int failures = 0;
  for (int i = 0; i < 20; ++i) {
    Rng params = root.child(static_cast<uint64_t>(i));
    Policy policy = random_tabular(3, 0, 2, params);
    double total = oracles::response_probability_total(policy, {}, schedule);
    if (std::abs(total - 1.0) > 1e-8) ++failures;
  }
  report(3, "sum over all V^n responses of exp(exact log-likelihood) = 1 +- 1e-8, 20 policies",
         failures == 0);
}

TEST_CASE("criterion 4: reverse-mode gradients match finite differences") {
  NoiseSchedule schedule = NoiseSchedule::discrete_linear(4);
  Rng root(4111);
  const int pairs = 50;
  double worst = 0.0;
  int failures = 0;

  auto rel_error = [](Policy& policy, const Objective& obj) {
    std::vector<double> grad(policy.param_count(), 0.0);
    backprop(policy, obj, grad);
    auto fd = oracles::finite_diff_grad(policy,
                                        [&](const Policy& p) { return evaluate(p, obj); });
    double diff = 0.0, ref = 0.0;
    for (size_t k = 0; k < grad.size(); ++k) {
      diff += (grad[k] - fd[k]) * (grad[k] - fd[k]);
      ref += fd[k] * fd[k];
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
  };

  for (int i = 0; i < pairs; ++i) {
    Rng meta = root.child(static_cast<uint64_t>(i));
    int n = 1 + static_cast<int>(meta.uniform_int(2));
    int V = 2 + static_cast<int>(meta.uniform_int(2));
    Vocab vocab = Vocab::with_mask(V);
    bool neural = i % 3 == 2;
    Policy policy = [&]() {
      if (neural) return Policy::tiny_neural(vocab, 1, n, 6, 6, 1, meta.next());
      Rng params = meta.child(uint64_t{1});
      return random_tabular(V, 1, n, params);
    }();
    TokenSequence x;
    x.tokens.push_back(static_cast<TokenId>(meta.uniform_int(V)));
    for (int k = 0; k < n; ++k)
      x.tokens.push_back(static_cast<TokenId>(meta.uniform_int(V)));
    x.prompt_len = 1;

    Objective elbo = elbo_exact_objective(x, vocab, schedule);
    Objective eubo = eubo_exact_objective(x, vocab, schedule, 2.0);
    Objective mixture = elbo_exact_objective(x, vocab, schedule);
    mixture.scale(0.4);
    {
      Objective upper = eubo_exact_objective(x, vocab, schedule, 2.0);
      upper.scale(0.6);
      mixture.append(std::move(upper));
    }
    RolloutGroup group;
    group.prompt = {x.tokens[0]};
    group.completions = {x, x};
    group.completions[1].response(0) = static_cast<TokenId>((x.response(0) + 1) % V);
    group.rewards = {1.0, 0.0};
    group.advantages = {0.5, -0.5};
    TrainerConfig cfg;
    cfg.estimator_mode = EstimatorMode::Exact;
    cfg.exact_schedule_steps = 4;
    cfg.beta = 2.0;
    cfg.omega = 0.5;
    Rng unused(0);
    Objective spg = build_spg_objective(vocab, group, cfg, unused);

    for (const Objective* obj : {&elbo, &eubo, &mixture, &spg}) {
      double err = rel_error(policy, *obj);
      worst = std::max(worst, err);
      if (err >= 1e-5) ++failures;
    }
  }
  std::ostringstream what;
  what << "elbo/eubo/mixture/group objectives vs central differences, " << pairs
       << " pairs per loss, max rel err " << worst << " < 1e-5";
  report(4, what.str(), failures == 0);
}

TEST_CASE("criterion 5: blended-gradient variance is an exact quadratic with an interior gain") {
  std::vector<double> grid;
  for (int j = 0; j <= 10; ++j) grid.push_back(j / 10.0);
  Rng root(5111);
  int instances_checked = 0;
  int failures = 0;
  int attempts = 0;
  while (instances_checked < 20 && attempts < 40) {
    Rng meta = root.child(static_cast<uint64_t>(attempts++));
    int V = 2 + static_cast<int>(meta.uniform_int(2));
    Rng params = meta.child(uint64_t{1});
    Policy policy = random_tabular(V, 0, 2, params);
    TokenSequence x = random_response(V, 2, meta);
    Rng draws = meta.child(uint64_t{2});
    oracles::VarianceSweep sweep =
        oracles::variance_sweep(policy, x, 2.0, grid, 2000, draws);
    if (sweep.degenerate) continue;
    ++instances_checked;
    for (const auto& coord : sweep.coordinates) {
      if (coord.degenerate) continue;
      if (!(coord.r_squared > 0.999)) ++failures;
      if (!(coord.var_at_star < std::min(coord.var_lower, coord.var_upper))) ++failures;
    }
  }

  // degenerate construction: uniform policy makes rho collapse onto w
  Policy uniform = Policy::tabular(Vocab::with_mask(3), 0, 2);
  TokenSequence x({0, 1}, 0);
  Rng draws(5999);
  oracles::VarianceSweep degenerate = oracles::variance_sweep(uniform, x, 1.0, grid, 500, draws);

  report(5,
         "20 nondegenerate instances: R^2 > 0.999, variance at the fitted minimizer below both "
         "endpoints; uniform policy flagged degenerate",
         instances_checked == 20 && failures == 0 && degenerate.degenerate);
}

TEST_CASE("criterion 6: two-context landscape orderings hold on the full grid") {
  const int grid = 50;
  const double lo = 0.02, hi = 0.98, beta = 2.0;
  int failures = 0;
  for (int i = 0; i < grid; ++i) {
    double a = lo + (hi - lo) * i / (grid - 1);
    for (int j = 0; j < grid; ++j) {
      double b = lo + (hi - lo) * j / (grid - 1);
      oracles::ToyLandscape point = oracles::toy_landscape(a, b, beta);
      if (!(point.elbo <= point.eubo + 1e-15)) ++failures;
      auto sign = [](double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); };
      // upper-bound gradient follows max(a, b); lower-bound follows min(a, b)
      if (sign(point.deubo_da - point.deubo_db) != sign(a - b)) ++failures;
      if (sign(point.delbo_da - point.delbo_db) != sign(b - a)) ++failures;
    }
  }
  report(6, "50x50 grid in (0.02, 0.98), beta 2: elbo <= eubo and gradient dominance signs",
         failures == 0);
}

TEST_CASE("criterion 7: bound orderings") {
  // loose >= log-of-mean upper bound on shared samples
  Rng root(7111);
  int loose_failures = 0;
  const int cases = 10000;
  for (int i = 0; i < cases; ++i) {
    Rng meta = root.child(static_cast<uint64_t>(i));
    int V = 2 + static_cast<int>(meta.uniform_int(2));
    int n = 1 + static_cast<int>(meta.uniform_int(3));
    Rng params = meta.child(uint64_t{1});
    Policy policy = random_tabular(V, 0, n, params);
    TokenSequence x = random_response(V, n, meta);
    EstimatorConfig cfg;
    cfg.samples = 32;
    cfg.masking = MaskStrategy::Random;
    cfg.beta = 1.0 + 0.5 * static_cast<double>(meta.uniform_int(3));
    Rng draws = meta.child(uint64_t{2});
    auto samples = draw_mask_samples(x, policy.vocab(), cfg, draws);
    double loose = evaluate(policy, loose_objective(x, policy.vocab(), samples, cfg.beta));
    double eubo = evaluate(policy, eubo_objective(x, policy.vocab(), samples, cfg.beta));
    if (!(loose >= eubo - 1e-12)) ++loose_failures;
  }

  // exact upper bound monotone in beta at and above the Holder threshold
  int monotone_failures = 0;
  NoiseSchedule schedule = NoiseSchedule::discrete_linear(5);
  for (int i = 0; i < 100; ++i) {
    Rng meta = root.child(uint64_t{1} << 32, static_cast<uint64_t>(i));
    int V = 2 + static_cast<int>(meta.uniform_int(3));
    int n = 1 + static_cast<int>(meta.uniform_int(3));
    Rng params = meta.child(uint64_t{1});
    Policy policy = random_tabular(V, 0, n, params);
    TokenSequence x = random_response(V, n, meta);
    double dn = static_cast<double>(n);
    double previous = -1e300;
    for (double beta : {dn, dn + 0.5, dn + 1.0, 2.0 * dn}) {
      double value = eubo_exact(policy, x, schedule, beta);
      if (!(value >= previous - 1e-12)) ++monotone_failures;
      previous = value;
    }
  }
  report(7,
         "loose >= log-of-mean bound on 10^4 shared sample sets; eubo_exact nondecreasing over "
         "beta in {n, n+0.5, n+1, 2n} on 100 instances",
         loose_failures == 0 && monotone_failures == 0);
}

TEST_CASE("criterion 8: variational bound pair on finite joints") {
  int failures = 0;
  double worst_eq = 0.0;
  for (double beta : {1.0, 1.5, 2.0}) {
    Rng rng(static_cast<uint64_t>(8111 + beta * 10));
    auto result = oracles::renyi_check(1000, beta, 4, 4, rng);
    if (!result.pass) ++failures;
  }
  // beta = 1: the upper bound equals the evidence exactly
  Rng rng(8222);
  for (int i = 0; i < 200; ++i) {
    Rng stream = rng.child(static_cast<uint64_t>(i));
    std::vector<double> joint(4), proposal(4);
    double qsum = 0.0;
    for (double& cell : joint) cell = 0.05 * stream.uniform_pos();
    for (double& q : proposal) {
      q = 0.05 + stream.uniform();
      qsum += q;
    }
    for (double& q : proposal) q /= qsum;
    auto gaps = oracles::renyi_gaps(joint, proposal, 1.0);
    worst_eq = std::max(worst_eq, std::abs(gaps.upper_slack));
  }
  report(8,
         "1000 random joints per beta in {1, 1.5, 2} with slack >= -1e-12; beta = 1 upper bound "
         "equals log p(x) within 1e-12",
         failures == 0 && worst_eq < 1e-12);
}

TEST_CASE("criterion 9: Monte Carlo bias of the log-of-mean bound shrinks with m") {
  Rng params(9111);
  Policy policy = random_tabular(3, 0, 2, params);
  Rng seq(9112);
  TokenSequence x = random_response(3, 2, seq);
  double exact = oracles::eubo_continuous_exact(policy, x, 2.0);

  std::vector<int> sample_counts{100, 1000, 10000, 100000};
  std::vector<double> mean_abs_error;
  for (int m : sample_counts) {
    EstimatorConfig cfg;
    cfg.samples = m;
    cfg.masking = MaskStrategy::Random;
    cfg.beta = 2.0;
    double total = 0.0;
    const int reps = 200;
    for (int r = 0; r < reps; ++r) {
      Rng rng = Rng(9200).child(static_cast<uint64_t>(m), static_cast<uint64_t>(r));
      total += std::abs(eubo_mc(policy, x, cfg, rng) - exact);
    }
    mean_abs_error.push_back(total / reps);
  }
  bool decreasing = true;
  for (size_t i = 1; i < mean_abs_error.size(); ++i)
    decreasing = decreasing && mean_abs_error[i] < mean_abs_error[i - 1];
  std::ostringstream what;
  what << "mean |estimate - closed form| over 200 reps decreases across m in {1e2..1e5}: ";
  for (double err : mean_abs_error) what << err << " ";
  report(9, what.str(), decreasing);
}

namespace {

TrainerConfig smoke_config(double omega, uint64_t seed) {
  TrainerConfig cfg;
  cfg.group_size = 6;
  cfg.inner_updates = 4;
  cfg.mc_samples = 48;
  cfg.learning_rate = 0.35;
  cfg.clip_norm = 0.2;
  cfg.beta = 1.0;
  cfg.omega = omega;
  cfg.rollout_temperature = 0.9;
  cfg.decode_order = DecodeOrder::FullRandom;
  cfg.tokens_per_step = 4;
  cfg.block_size = 4;
  cfg.p_mask = 0.0;
  cfg.total_steps = 500;
  cfg.seed = seed;
  return cfg;
}

struct SmokeRun {
  double first_window = 0.0;
  double best_window = 0.0;
  double final_window = 0.0;
};

SmokeRun run_smoke(double omega, uint64_t seed) {
  TaskSpec task = TaskSpec::copy(4, 4);
  Trainer trainer(Policy::tabular(task.vocab, 4, 4), task, smoke_config(omega, seed));
  std::vector<double> rewards;
  SmokeRun out;
  for (int step = 0; step < 500; ++step) {
    rewards.push_back(trainer.step().mean_reward);
    if (rewards.size() >= 50) {
      double window = 0.0;
      for (size_t k = rewards.size() - 50; k < rewards.size(); ++k) window += rewards[k];
      window /= 50.0;
      if (rewards.size() == 50) out.first_window = window;
      out.best_window = std::max(out.best_window, window);
      out.final_window = window;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("criterion 10: policy-gradient smoke test on the copy task") {
  auto started = std::chrono::steady_clock::now();
  SmokeRun fixed = run_smoke(0.5, 7);
  double elapsed = seconds_since(started);
  std::ostringstream what;
  what << "mixture arm, fixed seed: rolling-50 " << fixed.first_window << " -> "
       << fixed.best_window << " (needs < 0.3 -> > 0.9) in " << elapsed << "s < 300s";
  bool threshold_ok =
      fixed.first_window < 0.3 && fixed.best_window > 0.9 && elapsed < 300.0;
  report(10, what.str(), threshold_ok);

  // directional comparison: lower-bound-only arm vs the mixture arm
  int mixture_wins = 0;
  std::ostringstream arms;
  for (uint64_t seed : {7ull, 11ull, 23ull, 42ull, 99ull}) {
    SmokeRun mixture_arm = seed == 7 ? fixed : run_smoke(0.5, seed);
    SmokeRun elbo_arm = run_smoke(0.0, seed);
    bool win = elbo_arm.final_window <= mixture_arm.final_window;
    mixture_wins += win;
    arms << " seed " << seed << ": " << elbo_arm.final_window << " vs "
         << mixture_arm.final_window << (win ? " (mixture)" : " (lower-bound)");
  }
  std::ostringstream what2;
  what2 << "lower-bound-only arm final reward <= mixture arm on " << mixture_wins
        << "/5 seeds (needs >= 3):" << arms.str();
  report(10, what2.str(), mixture_wins >= 3);
}

TEST_CASE("criterion 11: byte-identical reruns") {
  auto run = [](const std::string& args) {
    std::string command = std::string(SPG_CLI_PATH) + " " + args + " 2>&1";
    std::array<char, 4096> buffer;
    std::string output;
    FILE* pipe = popen(command.c_str(), "r");
    REQUIRE(pipe != nullptr);
    size_t got;
    while ((got = fread(buffer.data(), 1, buffer.size(), pipe)) > 0)
      output.append(buffer.data(), got);
    int status = pclose(pipe);
    REQUIRE(WEXITSTATUS(status) == 0);
    return output;
  };
  auto slurp = [](const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
  };

  fs::path base = fs::temp_directory_path() / "spg-acceptance-det";
  fs::remove_all(base);
  fs::create_directories(base);
  std::string train_args =
      "train --task copy --vocab 3 --response-len 3 --prompt-len 3 --steps 10 --seed 99 "
      "--block-size 3 --mc-samples 4 --lr 0.1 --out ";
  run(train_args + (base / "a").string());
  run(train_args + (base / "b").string());
  bool metrics_equal = slurp(base / "a" / "metrics.jsonl") == slurp(base / "b" / "metrics.jsonl");
  bool checkpoints_equal =
      slurp(base / "a" / "checkpoint_final.spg") == slurp(base / "b" / "checkpoint_final.spg");

  std::string verify_args = "verify --suite sandwich --instances 25 --seed 13";
  bool verify_equal = run(verify_args) == run(verify_args);
  std::string decode_args =
      "decode --task copy --vocab 3 --response-len 3 --prompt-len 3 --count 6 --seed 3 --ckpt " +
      (base / "a" / "checkpoint_final.spg").string();
  bool decode_equal = run(decode_args) == run(decode_args);
  fs::remove_all(base);

  report(11, "train metrics + checkpoints, verify reports, and decode output identical on rerun",
         metrics_equal && checkpoints_equal && verify_equal && decode_equal);
}
