/**
 * Operator entry point.
 *
 * Subcommands:
 *   train      run the group-relative trainer on a synthetic task
 *   verify     run the enumeration/gradient/variational-bound check suites
 *   sweep      blend-coefficient variance tables and bound-gap tables (CSV)
 *   decode     sample completions from a policy to standard output
 *   landscape  two-context bound values on an (a, b) grid (CSV)
 *
 * Configuration comes from an optional `key = value` config file plus flags
 * named after the config keys; flags win. Every run with an output directory
 * writes the fully resolved configuration next to its outputs. Metrics are
 * JSON lines; tables are CSV with a header row. All randomness derives from
 * --seed, and reruns with identical configuration are byte-identical
 * (wall-clock timings go to a separate run.log, never into metrics).
 */

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "spg/config.hpp"
#include "spg/decode.hpp"
#include "spg/estimators.hpp"
#include "spg/masking.hpp"
#include "spg/objective.hpp"
#include "spg/oracles.hpp"
#include "spg/parallel.hpp"
#include "spg/policy.hpp"
#include "spg/rng.hpp"
#include "spg/schedule.hpp"
#include "spg/tasks.hpp"
#include "spg/trainer.hpp"
#include "spg/types.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace spg;

namespace {

// ============================================================================
// string <-> enum plumbing
// ============================================================================

TaskKind parse_task_kind(const std::string& name) {
  if (name == "copy") return TaskKind::Copy;
  if (name == "reverse") return TaskKind::Reverse;
  if (name == "mini-countdown") return TaskKind::MiniCountdown;
  if (name == "sum-mod") return TaskKind::SumMod;
  throw ConfigError("unknown task kind '" + name +
                    "' (expected copy|reverse|mini-countdown|sum-mod)");
}

DecodeOrder parse_decode_order(const std::string& name) {
  if (name == "semi-ar-confidence") return DecodeOrder::SemiArConfidence;
  if (name == "random") return DecodeOrder::SemiArRandom;
  if (name == "full-sequence-confidence") return DecodeOrder::FullConfidence;
  if (name == "full-sequence-random") return DecodeOrder::FullRandom;
  throw ConfigError("unknown decode order '" + name +
                    "' (expected semi-ar-confidence|random|full-sequence-confidence|"
                    "full-sequence-random)");
}

// ============================================================================
// config -> domain objects
// ============================================================================

struct RunPaths {
  std::string out;  // empty = no output directory requested
  uint64_t seed = 0;
  int threads = 1;
};

RunPaths read_run_section(Config& cfg) {
  RunPaths run;
  run.seed = cfg.get_u64("run.seed", 0);
  run.out = cfg.get_string("run.out", "");
  run.threads = static_cast<int>(cfg.get_integer("run.threads", 1));
  if (run.threads < 1) throw ConfigError("run.threads must be >= 1");
  return run;
}

TaskSpec read_task_section(Config& cfg) {
  TaskKind kind = parse_task_kind(cfg.get_string("task.kind", "copy"));
  switch (kind) {
    case TaskKind::Copy:
    case TaskKind::Reverse: {
      long n = cfg.get_integer("task.response_len", 4);
      long vocab = cfg.get_integer("task.vocab", 4);
      long prompt = cfg.get_integer("task.prompt_len", n);
      if (prompt != n)
        throw ConfigError("copy/reverse tasks require prompt_len == response_len");
      return kind == TaskKind::Copy ? TaskSpec::copy(static_cast<int>(n), static_cast<int>(vocab))
                                    : TaskSpec::reverse(static_cast<int>(n),
                                                        static_cast<int>(vocab));
    }
    case TaskKind::SumMod: {
      long digits = cfg.get_integer("task.prompt_len", 3);
      long vocab = cfg.get_integer("task.vocab", 4);
      long n = cfg.get_integer("task.response_len", 1);
      if (n != 1) throw ConfigError("sum-mod answers are a single token");
      return TaskSpec::sum_mod(static_cast<int>(digits), static_cast<int>(vocab));
    }
    case TaskKind::MiniCountdown: {
      TaskSpec task = TaskSpec::mini_countdown();
      if (cfg.get_integer("task.prompt_len", task.prompt_len) != task.prompt_len ||
          cfg.get_integer("task.response_len", task.response_len) != task.response_len ||
          cfg.get_integer("task.vocab", task.vocab.size) != task.vocab.size)
        throw ConfigError("mini-countdown has a fixed shape: prompt 3, response 3, vocab 16");
      return task;
    }
  }
  throw ConfigError("unknown task kind");
}

Policy read_policy_section(Config& cfg, const TaskSpec& task) {
  std::string kind = cfg.get_string("policy.parameterization", "tabular");
  if (kind == "tabular") return Policy::tabular(task.vocab, task.prompt_len, task.response_len);
  if (kind == "tiny-neural") {
    int dim = static_cast<int>(cfg.get_integer("policy.dim", 16));
    int hidden = static_cast<int>(cfg.get_integer("policy.hidden", 16));
    int layers = static_cast<int>(cfg.get_integer("policy.layers", 1));
    uint64_t init_seed = cfg.get_u64("policy.init_seed", 0);
    return Policy::tiny_neural(task.vocab, task.prompt_len, task.response_len, dim, hidden,
                               layers, init_seed);
  }
  throw ConfigError("unknown parameterization '" + kind + "' (expected tabular|tiny-neural)");
}

TrainerConfig read_trainer_section(Config& cfg, uint64_t seed) {
  TrainerConfig out;
  out.total_steps = static_cast<int>(cfg.get_integer("trainer.steps", 500));
  out.group_size = static_cast<int>(cfg.get_integer("trainer.group_size", 6));
  out.inner_updates = static_cast<int>(cfg.get_integer("trainer.inner_updates", 4));
  out.mc_samples = static_cast<int>(cfg.get_integer("trainer.mc_samples", 4));
  out.learning_rate = cfg.get_number("trainer.learning_rate", 1e-2);
  out.clip_norm = cfg.get_number("trainer.clip_norm", 0.2);
  out.beta = cfg.get_number("trainer.beta", 1.0);
  out.omega = cfg.get_number("trainer.omega", 0.5);
  out.rollout_temperature = cfg.get_number("trainer.rollout_temperature", 0.9);
  out.decode_order =
      parse_decode_order(cfg.get_string("trainer.decode_order", "semi-ar-confidence"));
  out.tokens_per_step = static_cast<int>(cfg.get_integer("trainer.tokens_per_step", 1));
  out.block_size = static_cast<int>(cfg.get_integer("trainer.block_size", 4));
  out.p_mask = cfg.get_number("trainer.p_mask", 0.15);
  out.checkpoint_every = static_cast<int>(cfg.get_integer("trainer.checkpoint_every", 0));
  std::string mode = cfg.get_string("trainer.estimator_mode", "mc");
  if (mode == "mc") {
    out.estimator_mode = EstimatorMode::MonteCarlo;
  } else if (mode == "exact") {
    out.estimator_mode = EstimatorMode::Exact;
    out.exact_schedule_steps =
        static_cast<int>(cfg.get_integer("trainer.exact_schedule_steps", 5));
  } else {
    throw ConfigError("unknown estimator mode '" + mode + "' (expected mc|exact)");
  }
  out.seed = seed;
  out.validate();
  return out;
}

void write_resolved_config(const Config& cfg, const std::string& out_dir) {
  if (out_dir.empty()) return;
  fs::create_directories(out_dir);
  std::ofstream file(fs::path(out_dir) / "config.resolved", std::ios::binary);
  file << cfg.resolved_text();
}

std::ofstream open_out_file(const std::string& out_dir, const std::string& name) {
  std::ofstream file(fs::path(out_dir) / name, std::ios::binary);
  if (!file) throw Error("cannot open output file '" + name + "' under '" + out_dir + "'");
  return file;
}

// ============================================================================
// train
// ============================================================================

int run_train(Config& cfg) {
  RunPaths run = read_run_section(cfg);
  if (run.out.empty()) throw ConfigError("train requires --out");
  TaskSpec task = read_task_section(cfg);
  Policy policy = read_policy_section(cfg, task);
  TrainerConfig trainer_cfg = read_trainer_section(cfg, run.seed);
  cfg.reject_unknown_keys();
  write_resolved_config(cfg, run.out);

  std::ofstream metrics = open_out_file(run.out, "metrics.jsonl");
  std::ofstream log = open_out_file(run.out, "run.log");

  Trainer trainer(std::move(policy), task, trainer_cfg);
  auto save_checkpoint = [&](const std::string& name) {
    std::ofstream ckpt(fs::path(run.out) / name, std::ios::binary);
    trainer.policy().save(ckpt);
  };

  double reward_sum = 0.0;
  for (int step = 0; step < trainer_cfg.total_steps; ++step) {
    StepMetrics m = trainer.step();
    reward_sum += m.mean_reward;
    ordered_json record;
    record["step"] = m.step;
    record["mean_reward"] = m.mean_reward;
    record["objective"] = m.objective;
    record["grad_norm"] = m.grad_norm;
    record["clip_applied"] = m.clip_applied;
    record["eff_length"] = m.eff_length;
    metrics << record.dump() << "\n";
    log << "step " << m.step << " wall_ms " << m.wall_ms << "\n";
    if (trainer_cfg.checkpoint_every > 0 && (step + 1) % trainer_cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%06d.spg", step + 1);
      save_checkpoint(name);
    }
    if ((step + 1) % 100 == 0)
      std::cout << "step " << (step + 1) << "/" << trainer_cfg.total_steps
                << " mean_reward " << m.mean_reward << "\n";
  }
  save_checkpoint("checkpoint_final.spg");
  std::cout << "done: average reward " << reward_sum / trainer_cfg.total_steps
            << "; outputs in " << run.out << "\n";
  return 0;
}

// ============================================================================
// verify
// ============================================================================

struct CheckResult {
  std::string name;
  int count = 0;
  int failures = 0;
  ordered_json details;
  bool pass() const { return failures == 0; }
};

CheckResult check_sandwich(uint64_t seed, int instances, double beta_or_n, bool beta_fixed,
                           int threads) {
  CheckResult result;
  result.name = "sandwich-bounds";
  result.count = instances;
  Rng root(seed);
  std::vector<char> ok(instances, 0);
  std::vector<double> lower_gap(instances), upper_gap(instances);
  parallel_for(instances, threads, [&](int i) {
    Rng meta = root.child(static_cast<uint64_t>(i));
    int n = 1 + static_cast<int>(meta.uniform_int(3));
    int V = 2 + static_cast<int>(meta.uniform_int(3));
    int T = meta.bernoulli(0.5) ? 3 : 5;
    Policy policy = Policy::tabular(Vocab::with_mask(V), 0, n);
    Rng param_stream = meta.child(uint64_t{1});
    policy.as_tabular().randomize(param_stream, 1.5);
    TokenSequence x;
    for (int k = 0; k < n; ++k)
      x.tokens.push_back(static_cast<TokenId>(meta.uniform_int(V)));
    x.prompt_len = 0;
    double beta = beta_fixed ? beta_or_n : static_cast<double>(n);
    auto report = oracles::sandwich_check(policy, x, NoiseSchedule::discrete_linear(T), beta);
    ok[i] = report.pass ? 1 : 0;
    lower_gap[i] = report.gap_lower;
    upper_gap[i] = report.gap_upper;
  });
  double min_lower = 1e300, min_upper = 1e300;
  for (int i = 0; i < instances; ++i) {
    if (!ok[i]) ++result.failures;
    min_lower = std::min(min_lower, lower_gap[i]);
    min_upper = std::min(min_upper, upper_gap[i]);
  }
  result.details["min_lower_gap"] = min_lower;
  result.details["min_upper_gap"] = min_upper;
  return result;
}

CheckResult check_equalities() {
  CheckResult result;
  result.name = "equality-cases";
  result.count = 2;
  NoiseSchedule schedule = NoiseSchedule::discrete_linear(5);

  Policy uniform = Policy::tabular(Vocab::with_mask(3), 0, 2);
  TokenSequence x({0, 2}, 0);
  double expected = -2.0 * std::log(3.0);
  auto report = oracles::sandwich_check(uniform, x, schedule, 2.0);
  bool uniform_ok = std::abs(report.elbo - expected) < 1e-12 &&
                    std::abs(report.exact_loglik - expected) < 1e-12 &&
                    std::abs(report.eubo - expected) < 1e-12;
  if (!uniform_ok) ++result.failures;

  Policy point = Policy::tabular(Vocab::with_mask(3), 0, 2);
  point.as_tabular().set_point_mass(x);
  report = oracles::sandwich_check(point, x, schedule, 2.0);
  bool point_ok = std::abs(report.elbo) < 1e-12 && std::abs(report.exact_loglik) < 1e-12 &&
                  std::abs(report.eubo) < 1e-12;
  if (!point_ok) ++result.failures;
  return result;
}

CheckResult check_normalization(uint64_t seed, int instances, int threads) {
  CheckResult result;
  result.name = "reverse-process-normalization";
  result.count = instances;
  NoiseSchedule schedule = NoiseSchedule::discrete_linear(5);
  Rng root(seed);
  std::vector<double> totals(instances);
  parallel_for(instances, threads, [&](int i) {
    Policy policy = Policy::tabular(Vocab::with_mask(3), 0, 2);
    Rng stream = root.child(static_cast<uint64_t>(i));
    policy.as_tabular().randomize(stream, 1.5);
    totals[i] = oracles::response_probability_total(policy, {}, schedule);
  });
  double worst = 0.0;
  for (double total : totals) {
    worst = std::max(worst, std::abs(total - 1.0));
    if (std::abs(total - 1.0) > 1e-8) ++result.failures;
  }
  result.details["max_deviation"] = worst;
  return result;
}

CheckResult check_gradients(uint64_t seed, int pairs, int threads) {
  CheckResult result;
  result.name = "gradient-vs-finite-differences";
  result.count = pairs * 4;
  NoiseSchedule schedule = NoiseSchedule::discrete_linear(4);
  Rng root(seed);
  std::vector<double> errors(static_cast<size_t>(pairs) * 4, 0.0);

  parallel_for(pairs, threads, [&](int i) {
    Rng meta = root.child(static_cast<uint64_t>(i));
    int n = 1 + static_cast<int>(meta.uniform_int(2));
    int V = 2 + static_cast<int>(meta.uniform_int(2));
    Vocab vocab = Vocab::with_mask(V);
    bool neural = meta.bernoulli(0.3);
    Policy policy = neural ? Policy::tiny_neural(vocab, 1, n, 6, 6, 1, meta.next())
                           : Policy::tabular(vocab, 1, n);
    if (!neural) {
      Rng param_stream = meta.child(uint64_t{1});
      policy.as_tabular().randomize(param_stream, 1.5);
    }
    TokenSequence x;
    x.tokens.push_back(static_cast<TokenId>(meta.uniform_int(V)));
    for (int k = 0; k < n; ++k)
      x.tokens.push_back(static_cast<TokenId>(meta.uniform_int(V)));
    x.prompt_len = 1;

    auto rel_error = [&](const Objective& obj) {
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

    errors[static_cast<size_t>(i) * 4 + 0] = rel_error(elbo_exact_objective(x, vocab, schedule));
    errors[static_cast<size_t>(i) * 4 + 1] =
        rel_error(eubo_exact_objective(x, vocab, schedule, 2.0));
    Objective mix = elbo_exact_objective(x, vocab, schedule);
    mix.scale(0.5);
    Objective upper = eubo_exact_objective(x, vocab, schedule, 2.0);
    upper.scale(0.5);
    mix.append(std::move(upper));
    errors[static_cast<size_t>(i) * 4 + 2] = rel_error(mix);

    RolloutGroup group;
    group.prompt = {x.tokens[0]};
    group.completions = {x, x};
    group.completions[1].response(0) = static_cast<TokenId>((x.response(0) + 1) % V);
    group.rewards = {1.0, 0.0};
    group.advantages = {0.5, -0.5};
    TrainerConfig tcfg;
    tcfg.estimator_mode = EstimatorMode::Exact;
    tcfg.exact_schedule_steps = 4;
    tcfg.beta = 2.0;
    tcfg.omega = 0.5;
    Rng unused(0);
    Objective spg = build_spg_objective(vocab, group, tcfg, unused);
    errors[static_cast<size_t>(i) * 4 + 3] = rel_error(spg);
  });

  double worst = 0.0;
  for (double err : errors) {
    worst = std::max(worst, err);
    if (err >= 1e-5) ++result.failures;
  }
  result.details["max_rel_error"] = worst;
  return result;
}

CheckResult check_renyi(uint64_t seed, int trials) {
  CheckResult result;
  result.name = "variational-bound-pair";
  result.count = trials * 3;
  double min_lower = 1e300, min_upper = 1e300;
  int beta_index = 0;
  for (double beta : {1.0, 1.5, 2.0}) {
    Rng rng = Rng(seed).child(static_cast<uint64_t>(beta_index++));
    auto report = oracles::renyi_check(trials, beta, 4, 4, rng);
    result.failures += report.failures;
    min_lower = std::min(min_lower, report.min_lower_slack);
    min_upper = std::min(min_upper, report.min_upper_slack);
  }
  result.details["min_lower_slack"] = min_lower;
  result.details["min_upper_slack"] = min_upper;
  return result;
}

int run_verify(Config& cfg) {
  RunPaths run = read_run_section(cfg);
  std::string suite = cfg.get_string("verify.suite", "all");
  int instances = static_cast<int>(cfg.get_integer("verify.instances", 500));
  int pairs = static_cast<int>(cfg.get_integer("verify.gradient_pairs", 50));
  int trials = static_cast<int>(cfg.get_integer("verify.renyi_trials", 1000));
  std::string beta_text = cfg.get_string("verify.beta", "n");
  cfg.reject_unknown_keys();
  write_resolved_config(cfg, run.out);

  bool beta_fixed = beta_text != "n";
  double beta = beta_fixed ? std::stod(beta_text) : 0.0;

  std::vector<CheckResult> checks;
  if (suite == "sandwich" || suite == "all") {
    checks.push_back(check_sandwich(run.seed, instances, beta, beta_fixed, run.threads));
    checks.push_back(check_equalities());
    checks.push_back(check_normalization(run.seed + 1, 20, run.threads));
  }
  if (suite == "gradient" || suite == "all")
    checks.push_back(check_gradients(run.seed + 2, pairs, run.threads));
  if (suite == "renyi" || suite == "all") checks.push_back(check_renyi(run.seed + 3, trials));
  if (checks.empty())
    throw ConfigError("unknown suite '" + suite + "' (expected sandwich|gradient|renyi|all)");

  ordered_json report;
  report["suite"] = suite;
  bool all_pass = true;
  ordered_json check_list = ordered_json::array();
  for (const CheckResult& check : checks) {
    ordered_json entry;
    entry["name"] = check.name;
    entry["count"] = check.count;
    entry["failures"] = check.failures;
    entry["pass"] = check.pass();
    for (auto& [key, value] : check.details.items()) entry[key] = value;
    check_list.push_back(entry);
    all_pass = all_pass && check.pass();
    std::cout << (check.pass() ? "[PASS] " : "[FAIL] ") << check.name << " (" << check.count
              << " checks, " << check.failures << " failures)\n";
  }
  report["checks"] = check_list;
  report["pass"] = all_pass;

  if (!run.out.empty()) {
    std::ofstream file = open_out_file(run.out, "verify_report.json");
    file << report.dump(2) << "\n";
  }
  std::cout << report.dump(2) << "\n";
  return all_pass ? 0 : 1;
}

// ============================================================================
// sweep
// ============================================================================

int run_sweep(Config& cfg) {
  RunPaths run = read_run_section(cfg);
  if (run.out.empty()) throw ConfigError("sweep requires --out");
  int instances = static_cast<int>(cfg.get_integer("sweep.instances", 20));
  int reps = static_cast<int>(cfg.get_integer("sweep.reps", 2000));
  int omega_points = static_cast<int>(cfg.get_integer("sweep.omega_points", 11));
  double rho_beta = cfg.get_number("sweep.beta", 1.0);
  std::string beta_grid_text = cfg.get_string("sweep.beta_grid", "1.0,1.5,2.0,3.0,4.0");
  int bound_instances = static_cast<int>(cfg.get_integer("sweep.bound_instances", 100));
  cfg.reject_unknown_keys();
  write_resolved_config(cfg, run.out);

  if (omega_points < 3) throw ConfigError("sweep.omega_points must be >= 3");
  std::vector<double> grid;
  for (int j = 0; j < omega_points; ++j)
    grid.push_back(static_cast<double>(j) / (omega_points - 1));

  // omega sweep: per-instance variance-sum curves and minimizers
  std::ofstream variance_csv = open_out_file(run.out, "omega_variance.csv");
  std::ofstream minimizer_csv = open_out_file(run.out, "omega_minimizers.csv");
  variance_csv << "instance,omega,variance_sum\r\n";
  minimizer_csv << "instance,degenerate,omega_star_closed,omega_star_sum,min_r_squared\r\n";
  Rng root(run.seed);
  for (int inst = 0; inst < instances; ++inst) {
    Rng meta = root.child(static_cast<uint64_t>(inst));
    Policy policy = Policy::tabular(Vocab::with_mask(3), 0, 2);
    Rng param_stream = meta.child(uint64_t{1});
    policy.as_tabular().randomize(param_stream, 1.5);
    TokenSequence x;
    x.tokens = {static_cast<TokenId>(meta.uniform_int(3)),
                static_cast<TokenId>(meta.uniform_int(3))};
    x.prompt_len = 0;
    Rng sweep_stream = meta.child(uint64_t{2});
    oracles::VarianceSweep sweep =
        oracles::variance_sweep(policy, x, rho_beta, grid, reps, sweep_stream);

    for (size_t j = 0; j < grid.size(); ++j) {
      double total = 0.0;
      for (const auto& coord : sweep.coordinates) total += coord.variance[j];
      variance_csv << inst << "," << grid[j] << "," << total << "\r\n";
    }
    double min_r2 = 1.0;
    double mean_star = 0.0;
    int nondegenerate = 0;
    for (const auto& coord : sweep.coordinates) {
      if (coord.degenerate) continue;
      min_r2 = std::min(min_r2, coord.r_squared);
      mean_star += coord.omega_star_closed;
      ++nondegenerate;
    }
    if (nondegenerate > 0) mean_star /= nondegenerate;
    minimizer_csv << inst << "," << (sweep.degenerate ? 1 : 0) << "," << mean_star << ","
                  << sweep.omega_star_sum << "," << min_r2 << "\r\n";
  }

  // beta sweep: gap between the upper bound and the exact log-likelihood
  std::ofstream beta_csv = open_out_file(run.out, "beta_bounds.csv");
  beta_csv << "beta,mean_gap,min_gap,max_gap\r\n";
  std::vector<double> betas;
  {
    std::stringstream stream(beta_grid_text);
    std::string item;
    while (std::getline(stream, item, ','))
      if (!item.empty()) betas.push_back(std::stod(item));
  }
  if (betas.empty()) throw ConfigError("sweep.beta_grid is empty");
  NoiseSchedule schedule = NoiseSchedule::discrete_linear(5);
  Rng bound_root = Rng(run.seed).child(uint64_t{7});
  std::vector<Policy> policies;
  std::vector<TokenSequence> sequences;
  for (int inst = 0; inst < bound_instances; ++inst) {
    Rng meta = bound_root.child(static_cast<uint64_t>(inst));
    Policy policy = Policy::tabular(Vocab::with_mask(3), 0, 2);
    Rng param_stream = meta.child(uint64_t{1});
    policy.as_tabular().randomize(param_stream, 1.5);
    TokenSequence x;
    x.tokens = {static_cast<TokenId>(meta.uniform_int(3)),
                static_cast<TokenId>(meta.uniform_int(3))};
    x.prompt_len = 0;
    policies.push_back(std::move(policy));
    sequences.push_back(std::move(x));
  }
  for (double beta : betas) {
    double mean_gap = 0.0, min_gap = 1e300, max_gap = -1e300;
    for (int inst = 0; inst < bound_instances; ++inst) {
      double gap = eubo_exact(policies[inst], sequences[inst], schedule, beta) -
                   oracles::exact_log_likelihood(policies[inst], sequences[inst], schedule);
      mean_gap += gap;
      min_gap = std::min(min_gap, gap);
      max_gap = std::max(max_gap, gap);
    }
    mean_gap /= bound_instances;
    beta_csv << beta << "," << mean_gap << "," << min_gap << "," << max_gap << "\r\n";
  }

  std::cout << "sweep tables written to " << run.out << "\n";
  return 0;
}

// ============================================================================
// decode
// ============================================================================

int run_decode(Config& cfg) {
  RunPaths run = read_run_section(cfg);
  TaskSpec task = read_task_section(cfg);
  std::string ckpt = cfg.get_string("decode.ckpt", "");
  Policy policy = [&]() {
    if (ckpt.empty()) return read_policy_section(cfg, task);
    std::ifstream in(ckpt, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint '" + ckpt + "'");
    return Policy::load(in);
  }();
  if (policy.prompt_len() != task.prompt_len || policy.response_len() != task.response_len ||
      policy.vocab().size != task.vocab.size)
    throw ConfigError("policy shape does not match the task");

  DecodeConfig decode_cfg;
  decode_cfg.order = parse_decode_order(cfg.get_string("decode.order", "semi-ar-confidence"));
  decode_cfg.block_size = static_cast<int>(cfg.get_integer("decode.block_size", 4));
  decode_cfg.tokens_per_step = static_cast<int>(cfg.get_integer("decode.tokens_per_step", 1));
  decode_cfg.temperature = cfg.get_number("decode.temperature", 0.0);
  decode_cfg.total_steps = static_cast<int>(cfg.get_integer(
      "decode.total_steps", decode_steps_required(task.response_len, decode_cfg)));
  int count = static_cast<int>(cfg.get_integer("decode.count", 8));
  cfg.reject_unknown_keys();
  write_resolved_config(cfg, run.out);

  Rng root(run.seed);
  for (int i = 0; i < count; ++i) {
    Rng prompt_rng = root.child(static_cast<uint64_t>(i), uint64_t{0});
    Rng decode_rng = root.child(static_cast<uint64_t>(i), uint64_t{1});
    std::vector<TokenId> prompt = sample_prompt(task, prompt_rng);
    TokenSequence out = decode(policy, prompt, decode_cfg, decode_rng);
    std::vector<TokenId> response(out.tokens.begin() + task.prompt_len, out.tokens.end());
    for (size_t p = 0; p < prompt.size(); ++p) std::cout << (p ? " " : "") << prompt[p];
    std::cout << "\t";
    for (size_t p = 0; p < response.size(); ++p) std::cout << (p ? " " : "") << response[p];
    std::cout << "\t" << reward(task, prompt, response) << "\n";
  }
  return 0;
}

// ============================================================================
// landscape
// ============================================================================

int run_landscape(Config& cfg) {
  RunPaths run = read_run_section(cfg);
  double beta = cfg.get_number("landscape.beta", 2.0);
  int grid = static_cast<int>(cfg.get_integer("landscape.grid", 50));
  double lo = cfg.get_number("landscape.lo", 0.02);
  double hi = cfg.get_number("landscape.hi", 0.98);
  cfg.reject_unknown_keys();
  write_resolved_config(cfg, run.out);
  if (grid < 2) throw ConfigError("landscape.grid must be >= 2");
  if (!(lo > 0.0 && hi < 1.0 && lo < hi))
    throw ConfigError("landscape bounds must satisfy 0 < lo < hi < 1");

  std::ostringstream csv;
  csv << "a,b,elbo,eubo\r\n";
  for (int i = 0; i < grid; ++i) {
    double a = lo + (hi - lo) * i / (grid - 1);
    for (int j = 0; j < grid; ++j) {
      double b = lo + (hi - lo) * j / (grid - 1);
      oracles::ToyLandscape point = oracles::toy_landscape(a, b, beta);
      csv << a << "," << b << "," << point.elbo << "," << point.eubo << "\r\n";
    }
  }
  if (!run.out.empty()) {
    std::ofstream file = open_out_file(run.out, "landscape.csv");
    file << csv.str();
    std::cout << "landscape written to " << run.out << "/landscape.csv\n";
  } else {
    std::cout << csv.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Masked-diffusion sequence model with sandwiched policy-gradient training,\n"
      "enumeration oracles, and synthetic verifiable-reward tasks."};
  app.require_subcommand(1);

  std::string config_path;
  std::map<std::string, std::string> overrides;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (key = value sections)");
    auto opt = [&, cmd](const std::string& flag, const std::string& key,
                        const std::string& desc) {
      cmd->add_option_function<std::string>(
          flag, [&overrides, key](const std::string& value) { overrides[key] = value; }, desc);
    };
    opt("--seed", "run.seed", "master seed");
    opt("--out", "run.out", "output directory");
    opt("--threads", "run.threads", "worker cap for parallel trial suites");
    return opt;
  };

  CLI::App* train = app.add_subcommand("train", "run the policy-gradient trainer");
  {
    auto opt = add_common(train);
    opt("--task", "task.kind", "copy|reverse|mini-countdown|sum-mod");
    opt("--vocab", "task.vocab", "vocabulary size");
    opt("--prompt-len", "task.prompt_len", "prompt length");
    opt("--response-len", "task.response_len", "response length");
    opt("--parameterization", "policy.parameterization", "tabular|tiny-neural");
    opt("--dim", "policy.dim", "embedding width (tiny-neural)");
    opt("--hidden", "policy.hidden", "MLP width (tiny-neural)");
    opt("--layers", "policy.layers", "mixing layers (tiny-neural)");
    opt("--init-seed", "policy.init_seed", "parameter init seed (tiny-neural)");
    opt("--steps", "trainer.steps", "outer training steps");
    opt("--group-size", "trainer.group_size", "completions per prompt");
    opt("--inner-updates", "trainer.inner_updates", "gradient updates per rollout");
    opt("--mc-samples", "trainer.mc_samples", "mask samples per completion per update");
    opt("--lr", "trainer.learning_rate", "learning rate");
    opt("--clip", "trainer.clip_norm", "global gradient-norm clip");
    opt("--beta", "trainer.beta", "upper-bound sharpness");
    opt("--omega", "trainer.omega", "blend coefficient for negative traces");
    opt("--temperature", "trainer.rollout_temperature", "rollout sampling temperature");
    opt("--decode-order", "trainer.decode_order", "rollout decoding order");
    opt("--tokens-per-step", "trainer.tokens_per_step", "tokens committed per decode step");
    opt("--block-size", "trainer.block_size", "block size for decoding and masking");
    opt("--p-mask", "trainer.p_mask", "perturbation rate for clean blocks and prompt");
    opt("--checkpoint-every", "trainer.checkpoint_every", "checkpoint interval (0 = end only)");
    opt("--estimator-mode", "trainer.estimator_mode", "mc|exact");
  }

  CLI::App* verify = app.add_subcommand("verify", "run the oracle check suites");
  {
    auto opt = add_common(verify);
    opt("--suite", "verify.suite", "sandwich|gradient|renyi|all");
    opt("--instances", "verify.instances", "sandwich instance count");
    opt("--gradient-pairs", "verify.gradient_pairs", "gradient check pairs per loss");
    opt("--renyi-trials", "verify.renyi_trials", "bound-pair trials per beta");
    opt("--beta", "verify.beta", "upper-bound sharpness ('n' = per-instance)");
  }

  CLI::App* sweep = app.add_subcommand("sweep", "variance and bound-gap tables");
  {
    auto opt = add_common(sweep);
    opt("--instances", "sweep.instances", "omega-sweep instances");
    opt("--reps", "sweep.reps", "Monte Carlo draws per instance");
    opt("--omega-points", "sweep.omega_points", "grid resolution on [0,1]");
    opt("--beta", "sweep.beta", "sharpness for the confidence weights");
    opt("--beta-grid", "sweep.beta_grid", "comma-separated betas for the gap table");
    opt("--bound-instances", "sweep.bound_instances", "instances for the gap table");
  }

  CLI::App* decode_cmd = app.add_subcommand("decode", "sample completions to stdout");
  {
    auto opt = add_common(decode_cmd);
    opt("--task", "task.kind", "copy|reverse|mini-countdown|sum-mod");
    opt("--vocab", "task.vocab", "vocabulary size");
    opt("--prompt-len", "task.prompt_len", "prompt length");
    opt("--response-len", "task.response_len", "response length");
    opt("--parameterization", "policy.parameterization", "tabular|tiny-neural");
    opt("--dim", "policy.dim", "embedding width (tiny-neural)");
    opt("--hidden", "policy.hidden", "MLP width (tiny-neural)");
    opt("--layers", "policy.layers", "mixing layers (tiny-neural)");
    opt("--init-seed", "policy.init_seed", "parameter init seed (tiny-neural)");
    opt("--ckpt", "decode.ckpt", "checkpoint to decode from");
    opt("--count", "decode.count", "number of sequences");
    opt("--order", "decode.order", "decoding order");
    opt("--temperature", "decode.temperature", "sampling temperature");
    opt("--tokens-per-step", "decode.tokens_per_step", "tokens committed per step");
    opt("--block-size", "decode.block_size", "semi-AR block size");
    opt("--total-steps", "decode.total_steps", "denoising step budget");
  }

  CLI::App* landscape = app.add_subcommand("landscape", "two-context bound grid as CSV");
  {
    auto opt = add_common(landscape);
    opt("--beta", "landscape.beta", "upper-bound sharpness");
    opt("--grid", "landscape.grid", "grid resolution per axis");
    opt("--lo", "landscape.lo", "lower grid bound");
    opt("--hi", "landscape.hi", "upper grid bound");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    Config cfg = config_path.empty() ? Config() : Config::parse_file(config_path);
    for (const auto& [key, value] : overrides) cfg.set(key, value);
    if (app.got_subcommand(train)) return run_train(cfg);
    if (app.got_subcommand(verify)) return run_verify(cfg);
    if (app.got_subcommand(sweep)) return run_sweep(cfg);
    if (app.got_subcommand(decode_cmd)) return run_decode(cfg);
    if (app.got_subcommand(landscape)) return run_landscape(cfg);
  } catch (const ConfigError& error) {
    std::cerr << "config error: " << error.what() << "\n";
    return 2;
  } catch (const Error& error) {
    std::cerr << "error: " << error.what() << "\n";
    return 2;
  }
  return 2;
}
