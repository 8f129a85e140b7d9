#pragma once

#include <string>
#include <vector>

#include "rrg/config.h"
#include "rrg/metrics.h"
#include "rrg/model.h"
#include "rrg/train.h"

namespace rrg {

/// Raised when a parameter that must stay frozen received a gradient.
class FrozenParameterError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// −RadCliQ-proxy, or BLEU-4 for the reward-swap ablation.
double compute_reward(const std::string& candidate, const std::string& reference, const TextEmbedder& embedder,
                      const RadCliqWeights& weights, RewardKind kind = RewardKind::kRadCliq);

/// 1 when reward ≥ θ, otherwise reward/θ clamped to [0, 1]. Throws
/// std::invalid_argument for θ == 0.
double adaptive_lambda(double reward, double theta);

/// Mean over positions of KL(policy ∥ reference) for row-wise probability
/// distributions (rows×V, flattened).
double kl_penalty(const std::vector<double>& policy, const std::vector<double>& reference, std::size_t vocab);

/// One sampled report together with everything PPO needs about it.
struct Rollout {
  VisualFeatures visual;      // detached extractor output
  std::vector<int> tokens;    // sampled ids, [EOS] included when emitted
  std::vector<double> old_log_probs;  // per token, temperature-scaled policy
  Tensor ref_log_probs;       // |tokens|×V, reference model at T = 1
  std::string text;
  std::string reference;
  double reward = 0.0;
  double radcliq = 0.0;
  double advantage = 0.0;
  double lambda_kl = 0.0;
};

struct PpoDiagnostics {
  double surrogate = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
};

class Optimizer;

/// One clipped-surrogate update over the batch:
///   L = −mean_tokens min(ρÂ, clip(ρ, 1−ε, 1+ε)Â) + mean_i λ_i · KL_i.
/// Only generator parameters may receive gradient.
PpoDiagnostics ppo_step(const std::vector<Rollout>& batch, ModelState& policy, const RLConfig& config,
                        Optimizer& optimizer);

/// Builds [BOS]+tokens[:-1] prefixes and gathers the temperature-scaled
/// log-probabilities of `tokens` under `policy` (no tape when none is active).
Tensor sequence_log_probs(const ModelState& policy, const MultimodalPrompt& prompt, const std::vector<int>& tokens,
                          double temperature, Tensor* logits_out = nullptr);

struct RLIterationLog {
  std::size_t iteration = 0;
  double mean_reward = 0.0;
  double mean_radcliq = 0.0;
  double mean_kl = 0.0;
  double mean_lambda_kl = 0.0;
  double policy_loss = 0.0;
};

std::string rl_log_csv(const std::vector<RLIterationLog>& log);

/// CQRL loop on `train`: the reference generator is a copy of `model` at
/// entry, the extractor is frozen, and each iteration samples
/// `config.rollouts` reports and runs `config.ppo_epochs` PPO updates.
/// When `reference_out` is given it receives the reference model as it stood
/// after the last iteration, so callers can audit that it never moved.
std::vector<RLIterationLog> rl_finetune(ModelState& model, const Dataset& train, const RadCliqWeights& weights,
                                        const RLConfig& config, ModelState* reference_out = nullptr);

}  // namespace rrg
