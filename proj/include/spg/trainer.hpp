#pragma once

/**
 * Group-relative policy-gradient training loop.
 *
 * One outer step: sample a prompt, roll out a group of g completions at the
 * rollout temperature, compute rewards and mean-centered advantages once,
 * then run mu inner gradient-ascent updates. Each inner update redraws the
 * Monte Carlo mask samples, maximizes
 *
 *   J = (1/g) sum_j [ A_j >= 0 : A_j * elbo(x_j)
 *                     A_j <  0 : A_j * (omega * eubo + (1-omega) * elbo)(x_j) ]
 *
 * and applies a global-norm-clipped step through a momentum + per-coordinate
 * adaptive-scaling optimizer. Completions are reused across inner updates
 * (no importance ratios anywhere); rewards are never recomputed inside the
 * inner loop. All randomness flows through named child streams of the master
 * seed, so the metrics stream is bit-reproducible for a given config.
 */

#include <chrono>
#include <cmath>
#include <vector>

#include "spg/decode.hpp"
#include "spg/estimators.hpp"
#include "spg/objective.hpp"
#include "spg/policy.hpp"
#include "spg/rng.hpp"
#include "spg/schedule.hpp"
#include "spg/tasks.hpp"
#include "spg/types.hpp"

namespace spg {

// ============================================================================
// Advantages
// ============================================================================

/// Mean baseline, no standard-deviation normalization.
inline std::vector<double> compute_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) throw InvalidArgument("a group needs at least two rewards");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  std::vector<double> advantages(rewards.size());
  for (size_t j = 0; j < rewards.size(); ++j) advantages[j] = rewards[j] - mean;
  return advantages;
}

struct RolloutGroup {
  std::vector<TokenId> prompt;
  std::vector<TokenSequence> completions;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

// ============================================================================
// Optimizer
// ============================================================================

/// Returns the pre-clip global norm; rescales grad in place when it exceeds
/// max_norm.
inline double clip_global_norm(std::vector<double>& grad, double max_norm) {
  if (!(max_norm > 0.0)) throw InvalidArgument("clip threshold must be positive");
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  double norm = std::sqrt(sq);
  if (norm > max_norm) {
    double scale = max_norm / norm;
    for (double& g : grad) g *= scale;
  }
  return norm;
}

/// Gradient ascent with first/second-moment tracking and bias correction
/// (decay rates 0.9 / 0.99).
class AdamAscent {
 public:
  AdamAscent(size_t dim, double learning_rate, double beta1 = 0.9, double beta2 = 0.99,
             double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon),
        m_(dim, 0.0), v_(dim, 0.0) {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  }

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
      throw InvalidArgument("optimizer dimension mismatch");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    double* m = m_.data();
    double* v = v_.data();
    double* p = params.data();
    const double* g = grad.data();
    size_t dim = m_.size();
    for (size_t k = 0; k < dim; ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      double m_hat = m[k] / bc1;
      double v_hat = v[k] / bc2;
      p[k] += lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  int64_t t_ = 0;
};

// ============================================================================
// Config
// ============================================================================

enum class EstimatorMode { MonteCarlo, Exact };

struct TrainerConfig {
  int group_size = 6;        // g
  int inner_updates = 4;     // mu
  int mc_samples = 4;        // m
  double learning_rate = 1e-2;
  double clip_norm = 0.2;
  double beta = 1.0;
  double omega = 0.5;
  double rollout_temperature = 0.9;
  DecodeOrder decode_order = DecodeOrder::SemiArConfidence;
  int tokens_per_step = 1;
  int block_size = 4;        // shared by rollout decoding and mask sampling
  double p_mask = 0.15;
  int total_steps = 500;
  uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 = only at the end
  EstimatorMode estimator_mode = EstimatorMode::MonteCarlo;
  int exact_schedule_steps = 5;  // discrete T for the exact estimator mode

  void validate() const {
    if (group_size < 2) throw InvalidArgument("group size must be >= 2");
    if (inner_updates < 1) throw InvalidArgument("inner updates must be >= 1");
    if (mc_samples < 1) throw InvalidArgument("Monte Carlo sample count must be >= 1");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (!(clip_norm > 0.0)) throw InvalidArgument("clip threshold must be positive");
    if (beta < 1.0) throw InvalidArgument("beta must be >= 1");
    if (omega < 0.0 || omega > 1.0) throw InvalidArgument("omega must lie in [0, 1]");
    if (rollout_temperature < 0.0) throw InvalidArgument("temperature must be >= 0");
    if (tokens_per_step < 1) throw InvalidArgument("tokens_per_step must be >= 1");
    if (block_size < 1) throw InvalidArgument("block_size must be >= 1");
    if (p_mask < 0.0 || p_mask > 1.0) throw InvalidArgument("p_mask must lie in [0, 1]");
    if (total_steps < 1) throw InvalidArgument("total steps must be >= 1");
    if (checkpoint_every < 0) throw InvalidArgument("checkpoint interval must be >= 0");
    if (exact_schedule_steps < 2) throw InvalidArgument("exact schedule needs T >= 2");
  }

  EstimatorConfig estimator_config() const {
    EstimatorConfig cfg;
    cfg.beta = beta;
    cfg.omega = omega;
    cfg.samples = mc_samples;
    cfg.masking = MaskStrategy::BlockWise;
    cfg.block_size = block_size;
    cfg.p_mask = p_mask;
    return cfg;
  }
};

// ============================================================================
// Sandwiched objective
// ============================================================================

/// Builds the group objective. Positive-advantage completions contribute
/// A_j * elbo, negative ones A_j * (omega-blend of eubo and elbo); zero
/// advantages contribute nothing. Monte Carlo mode draws fresh block-wise
/// samples per completion from `rng`; exact mode enumerates on a discrete
/// linear schedule and uses no randomness.
inline Objective build_spg_objective(const Vocab& vocab, const RolloutGroup& group,
                                     const TrainerConfig& cfg, Rng& rng) {
  Objective total;
  double inv_g = 1.0 / static_cast<double>(group.completions.size());
  EstimatorConfig est = cfg.estimator_config();
  NoiseSchedule exact_schedule = NoiseSchedule::discrete_linear(cfg.exact_schedule_steps);

  for (size_t j = 0; j < group.completions.size(); ++j) {
    double advantage = group.advantages[j];
    if (advantage == 0.0) continue;
    const TokenSequence& x = group.completions[j];

    Objective part;
    if (cfg.estimator_mode == EstimatorMode::MonteCarlo) {
      Rng stream = rng.child(static_cast<uint64_t>(j));
      auto samples = draw_mask_samples(x, vocab, est, stream);
      if (advantage > 0.0) {
        part = elbo_objective(x, vocab, samples);
      } else if (cfg.omega == 0.0) {
        part = elbo_objective(x, vocab, samples);
      } else if (cfg.omega == 1.0) {
        part = eubo_objective(x, vocab, samples, cfg.beta, nullptr,
                              /*allow_no_coverage=*/true);
      } else {
        part = mixture_objective(x, vocab, samples, cfg.beta, cfg.omega,
                                 /*allow_no_coverage=*/true);
      }
    } else {
      if (advantage > 0.0 || cfg.omega == 0.0) {
        part = elbo_exact_objective(x, vocab, exact_schedule);
      } else {
        Objective elbo = elbo_exact_objective(x, vocab, exact_schedule);
        elbo.scale(1.0 - cfg.omega);
        Objective eubo = eubo_exact_objective(x, vocab, exact_schedule, cfg.beta);
        eubo.scale(cfg.omega);
        elbo.append(std::move(eubo));
        part = std::move(elbo);
      }
    }
    part.scale(advantage * inv_g);
    total.append(std::move(part));
  }
  return total;
}

struct ObjectiveEval {
  double value = 0.0;
  std::vector<double> grad;
};

/// Value and exact gradient of the sandwiched group objective. A group with
/// no nonzero advantage yields value 0 and a zero gradient.
inline ObjectiveEval spg_objective(const Policy& policy, const RolloutGroup& group,
                                   const TrainerConfig& cfg, Rng& rng) {
  ObjectiveEval eval;
  eval.grad.assign(policy.param_count(), 0.0);
  Objective objective = build_spg_objective(policy.vocab(), group, cfg, rng);
  if (objective.empty()) return eval;
  eval.value = backprop(policy, objective, eval.grad);
  return eval;
}

// ============================================================================
// Training loop
// ============================================================================

struct StepMetrics {
  int step = 0;
  double mean_reward = 0.0;
  double objective = 0.0;   // value at the first inner update (pre-update policy)
  double grad_norm = 0.0;   // pre-clip norm at the first inner update
  bool clip_applied = false;  // true if any inner update hit the clip
  double eff_length = 0.0;
  double wall_ms = 0.0;     // timing only; not part of the deterministic record
};

class Trainer {
 public:
  Trainer(Policy policy, TaskSpec task, TrainerConfig cfg)
      : policy_(std::move(policy)),
        task_(std::move(task)),
        cfg_(cfg),
        master_(cfg.seed),
        optimizer_(policy_.param_count(), cfg.learning_rate) {
    cfg_.validate();
    if (policy_.prompt_len() != task_.prompt_len ||
        policy_.response_len() != task_.response_len)
      throw InvalidArgument("policy shape does not match the task");
  }

  const Policy& policy() const { return policy_; }
  Policy& policy() { return policy_; }
  const TrainerConfig& config() const { return cfg_; }
  int steps_done() const { return step_; }
  int64_t updates_applied() const { return optimizer_.steps_taken(); }

  RolloutGroup rollout(Rng& step_rng) {
    RolloutGroup group;
    Rng prompt_rng = step_rng.child(uint64_t{0});
    group.prompt = sample_prompt(task_, prompt_rng);

    DecodeConfig decode_cfg;
    decode_cfg.order = cfg_.decode_order;
    decode_cfg.block_size = cfg_.block_size;
    decode_cfg.tokens_per_step = cfg_.tokens_per_step;
    decode_cfg.temperature = cfg_.rollout_temperature;
    decode_cfg.total_steps = decode_steps_required(task_.response_len, decode_cfg);

    for (int j = 0; j < cfg_.group_size; ++j) {
      Rng rollout_rng = step_rng.child(uint64_t{1}, static_cast<uint64_t>(j));
      group.completions.push_back(decode(policy_, group.prompt, decode_cfg, rollout_rng));
      std::vector<TokenId> response(group.completions.back().tokens.begin() + task_.prompt_len,
                                    group.completions.back().tokens.end());
      group.rewards.push_back(reward(task_, group.prompt, response));
    }
    group.advantages = compute_advantages(group.rewards);
    return group;
  }

  StepMetrics step() {
    auto started = std::chrono::steady_clock::now();
    Rng step_rng = master_.child(static_cast<uint64_t>(step_));
    RolloutGroup group = rollout(step_rng);

    StepMetrics metrics;
    metrics.step = step_;
    for (double r : group.rewards) metrics.mean_reward += r;
    metrics.mean_reward /= static_cast<double>(group.rewards.size());
    for (const TokenSequence& x : group.completions)
      metrics.eff_length += static_cast<double>(x.response_len());
    metrics.eff_length /= static_cast<double>(group.completions.size());

    for (int k = 0; k < cfg_.inner_updates; ++k) {
      Rng update_rng = step_rng.child(uint64_t{2}, static_cast<uint64_t>(k));
      ObjectiveEval eval = spg_objective(policy_, group, cfg_, update_rng);
      double norm = clip_global_norm(eval.grad, cfg_.clip_norm);
      if (k == 0) {
        metrics.objective = eval.value;
        metrics.grad_norm = norm;
      }
      if (norm > cfg_.clip_norm) metrics.clip_applied = true;
      optimizer_.step(policy_.params(), eval.grad);
    }

    ++step_;
    metrics.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - started)
                          .count();
    return metrics;
  }

 private:
  Policy policy_;
  TaskSpec task_;
  TrainerConfig cfg_;
  Rng master_;
  AdamAscent optimizer_;
  int step_ = 0;
};

}  // namespace spg
