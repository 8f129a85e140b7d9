#include "rrg/rl.h"

#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

#include "rrg/errors.h"
#include "rrg/log.h"
#include "rrg/optimizer.h"

namespace rrg {

double compute_reward(const std::string& candidate, const std::string& reference, const TextEmbedder& embedder,
                      const RadCliqWeights& weights, RewardKind kind) {
  if (kind == RewardKind::kBleu4) return bleu4(split_words(candidate), split_words(reference));
  return -radcliq_proxy(component_vector(candidate, reference, embedder), weights);
}

double adaptive_lambda(double reward, double theta) {
  if (theta == 0.0) throw std::invalid_argument("adaptive_lambda: theta must be nonzero");
  if (reward >= theta) return 1.0;
  return std::clamp(reward / theta, 0.0, 1.0);
}

double kl_penalty(const std::vector<double>& policy, const std::vector<double>& reference, std::size_t vocab) {
  if (vocab == 0 || policy.size() != reference.size() || policy.size() % vocab)
    throw std::invalid_argument("kl_penalty: distributions have mismatched lengths");
  const std::size_t rows = policy.size() / vocab;
  if (rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double kl = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      const double p = policy[r * vocab + v], q = reference[r * vocab + v];
      if (p > 0.0) kl += p * (std::log(p) - std::log(q));
    }
    total += kl;
  }
  return total / static_cast<double>(rows);
}

Tensor sequence_log_probs(const ModelState& policy, const MultimodalPrompt& prompt, const std::vector<int>& tokens,
                          double temperature, Tensor* logits_out) {
  if (tokens.empty()) throw std::invalid_argument("sequence_log_probs: empty token sequence");
  std::vector<int> prefix{kBos};
  prefix.insert(prefix.end(), tokens.begin(), tokens.end() - 1);
  const Tensor logits = decoder_logits(prompt, prefix, policy.generator);
  if (logits_out) *logits_out = logits;
  const Tensor scaled = temperature == 1.0 ? logits : ops::scale(logits, 1.0 / temperature);
  return ops::gather_cols(ops::log_softmax(scaled), tokens);
}

PpoDiagnostics ppo_step(const std::vector<Rollout>& batch, ModelState& policy, const RLConfig& config,
                        Optimizer& optimizer) {
  if (batch.empty()) throw std::invalid_argument("ppo_step: empty batch");
  Tape tape;
  PpoDiagnostics diag;
  {
    TapeScope scope(tape);
    std::vector<Tensor> new_lps, kl_terms;
    std::vector<double> old, adv;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const auto& r : batch) {
      const MultimodalPrompt prompt = prompt_from_visual(policy, r.visual);
      Tensor logits;
      new_lps.push_back(sequence_log_probs(policy, prompt, r.tokens, config.temperature, &logits));
      old.insert(old.end(), r.old_log_probs.begin(), r.old_log_probs.end());
      adv.insert(adv.end(), r.tokens.size(), r.advantage);
      Tensor kl;
      if (config.kl_estimator == KlEstimator::kFull) {
        kl = ops::kl_divergence(logits, r.ref_log_probs);
      } else {
        std::vector<double> ref_at;
        for (std::size_t t = 0; t < r.tokens.size(); ++t) ref_at.push_back(r.ref_log_probs.at(t, r.tokens[t]));
        const Tensor lp = ops::gather_cols(ops::log_softmax(logits), r.tokens);
        kl = ops::mean(ops::sub(lp, Tensor::from(lp.shape(), ref_at)));
      }
      diag.kl += kl.item() * inv_b;
      kl_terms.push_back(ops::scale(kl, r.lambda_kl * inv_b));
    }
    const Tensor surrogate = ops::clipped_surrogate(ops::concat_rows(new_lps), old, adv, config.clip_eps);
    Tensor total = surrogate;
    for (const auto& k : kl_terms) total = ops::add(total, k);
    diag.surrogate = surrogate.item();
    diag.total = total.item();
    tape.backward(total);
  }
  for (const auto& [name, t] : policy.extractor_params())
    for (double g : t.grad())
      if (g != 0.0) throw FrozenParameterError("frozen parameter " + name + " received a gradient during PPO");
  diag.grad_norm = optimizer.step();
  return diag;
}

std::string rl_log_csv(const std::vector<RLIterationLog>& log) {
  std::ostringstream os;
  os << "iteration,mean_reward,mean_radcliq,mean_kl,mean_lambda_kl,policy_loss\n";
  for (const auto& e : log)
    os << e.iteration << ',' << format_double(e.mean_reward) << ',' << format_double(e.mean_radcliq) << ','
       << format_double(e.mean_kl) << ',' << format_double(e.mean_lambda_kl) << ',' << format_double(e.policy_loss)
       << '\n';
  return os.str();
}

std::vector<RLIterationLog> rl_finetune(ModelState& model, const Dataset& train, const RadCliqWeights& weights,
                                        const RLConfig& config, ModelState* reference_out) {
  if (train.size() == 0) throw DataError("RL corpus is empty");
  std::vector<RLIterationLog> out;
  if (config.iterations == 0) {
    if (reference_out) *reference_out = model.clone();
    return out;
  }

  const ModelState reference = model.clone();
  const TextEmbedder embedder(model.encoder, model.vocab);
  const Tensor prompt_features = encode_prompt_features(model);
  std::vector<std::optional<VisualFeatures>> visual_cache(train.size());
  auto visual_of = [&](std::size_t i) -> const VisualFeatures& {
    if (!visual_cache[i]) {
      const VisualFeatures v = extract_visual(model, train.images[i], prompt_features);
      visual_cache[i] = VisualFeatures{v.global.detach(), v.regions.detach()};
    }
    return *visual_cache[i];
  };

  Optimizer optimizer(model.generator_params(), OptimizerKind::kAdam, config.lr, 1.0);
  optimizer.zero_grad();
  std::vector<std::size_t> order(train.size());
  std::size_t cursor = order.size();
  Rng shuffle_rng(mix_seed(config.seed, 0x5eed));
  std::optional<double> baseline;

  for (std::size_t it = 1; it <= config.iterations; ++it) {
    std::vector<Rollout> batch;
    for (std::size_t r = 0; r < config.rollouts; ++r) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      Rollout ro;
      ro.visual = visual_of(idx);
      ro.reference = train.entries[idx].report;
      const MultimodalPrompt prompt = prompt_from_visual(model, ro.visual);
      DecodeOptions opt;
      opt.sample = true;
      opt.temperature = config.temperature;
      opt.seed = mix_seed(config.seed, it * 1000003ULL + r);
      const Report rep = generate_report(prompt, model.generator, model.vocab, opt);
      ro.tokens = rep.ids;
      ro.text = rep.text;
      const Tensor old = sequence_log_probs(model, prompt, ro.tokens, config.temperature);
      ro.old_log_probs.assign(old.data().begin(), old.data().end());
      std::vector<int> prefix{kBos};
      prefix.insert(prefix.end(), ro.tokens.begin(), ro.tokens.end() - 1);
      ro.ref_log_probs = ops::log_softmax(
          decoder_logits(prompt_from_visual(reference, ro.visual), prefix, reference.generator));
      ro.radcliq = radcliq_proxy(component_vector(ro.text, ro.reference, embedder), weights);
      ro.reward = config.reward == RewardKind::kRadCliq ? -ro.radcliq
                                                        : bleu4(split_words(ro.text), split_words(ro.reference));
      batch.push_back(std::move(ro));
    }

    RLIterationLog entry;
    entry.iteration = it;
    for (const auto& ro : batch) {
      entry.mean_reward += ro.reward;
      entry.mean_radcliq += ro.radcliq;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    entry.mean_reward *= inv;
    entry.mean_radcliq *= inv;
    if (!baseline) baseline = entry.mean_reward;
    for (auto& ro : batch) {
      ro.advantage = ro.reward - *baseline;
      ro.lambda_kl =
          config.lambda_mode == LambdaMode::kAdaptive ? adaptive_lambda(ro.reward, config.theta) : config.fixed_lambda;
      entry.mean_lambda_kl += ro.lambda_kl * inv;
    }
    baseline = config.baseline_momentum * *baseline + (1.0 - config.baseline_momentum) * entry.mean_reward;

    for (std::size_t e = 0; e < config.ppo_epochs; ++e) {
      const PpoDiagnostics d = ppo_step(batch, model, config, optimizer);
      if (e == 0) entry.mean_kl = d.kl;
      entry.policy_loss += d.surrogate / static_cast<double>(config.ppo_epochs);
    }
    std::ostringstream msg;
    msg << "rl iteration " << it << " reward " << entry.mean_reward << " radcliq " << entry.mean_radcliq << " kl "
        << entry.mean_kl << " lambda " << entry.mean_lambda_kl;
    log::debug(msg.str());
    out.push_back(entry);
  }
  if (reference_out) *reference_out = reference.clone();
  return out;
}

}  // namespace rrg
