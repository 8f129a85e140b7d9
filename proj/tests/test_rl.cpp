#include <doctest.h>

#include <cmath>

#include "rrg/optimizer.h"
#include "rrg/rl.h"
#include "tiny_model.h"

using namespace rrg;

TEST_CASE("adaptive KL weight") {
  CHECK(adaptive_lambda(0.5, 0.5) == 1.0);
  CHECK(adaptive_lambda(0.25, 0.5) == 0.5);
  CHECK(adaptive_lambda(0.9, 0.5) == 1.0);
  CHECK(adaptive_lambda(-0.1, 0.5) == 0.0);
  CHECK(adaptive_lambda(0.0, 0.5) == 0.0);
  // A negative threshold: everything at or above it keeps the full weight.
  CHECK(adaptive_lambda(-1.0, -2.0) == 1.0);
  CHECK(adaptive_lambda(-3.0, -2.0) == 1.0);
  CHECK_THROWS_AS(adaptive_lambda(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("KL penalty averages per-row divergences") {
  const std::vector<double> p = {0.5, 0.5, 1.0, 0.0}, q = {0.25, 0.75, 0.5, 0.5};
  const double row0 = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
  const double row1 = std::log(2.0);
  CHECK(kl_penalty(p, q, 2) == doctest::Approx(0.5 * (row0 + row1)).epsilon(1e-14));
  CHECK(kl_penalty(p, p, 2) == 0.0);
  CHECK(kl_penalty({}, {}, 3) == 0.0);
  CHECK_THROWS_AS(kl_penalty(p, {0.5, 0.5}, 2), std::invalid_argument);
  CHECK_THROWS_AS(kl_penalty({1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, 2), std::invalid_argument);
}

TEST_CASE("rewards: BLEU-4 or the negated RadCliQ proxy") {
  const auto dir = tiny::fresh_dir("rrg_reward_test");
  const auto pipe = tiny::make(dir);
  const TextEmbedder emb(pipe.model.encoder, pipe.model.vocab);
  const RadCliqWeights w{2.0, {-1.0, -1.0, -1.0, -1.0}};
  const std::string ref = "no pneumothorax. mild cardiomegaly is seen in the cardiac silhouette.";
  const std::string other = "no acute cardiopulmonary abnormality.";
  CHECK(compute_reward(ref, ref, emb, w, RewardKind::kBleu4) == doctest::Approx(1.0));
  // Identical text: every component is 1, so the proxy is 2 − 4.
  CHECK(compute_reward(ref, ref, emb, w) == doctest::Approx(2.0));
  CHECK(compute_reward(other, ref, emb, w) < compute_reward(ref, ref, emb, w));
}

TEST_CASE("RL fine-tuning keeps the extractor frozen and is reproducible") {
  const auto dir = tiny::fresh_dir("rrg_rl_test");
  auto pipe = tiny::make(dir);
  const RadCliqWeights w = fit_weights_from_pairs(pipe.model, load_fit_pairs(pipe.cfg.paths.corpus / "fit.tsv"));

  ModelState a = pipe.model.clone(), b = pipe.model.clone();
  const auto log_a = rl_finetune(a, pipe.train, w, pipe.cfg.rl);
  const auto log_b = rl_finetune(b, pipe.train, w, pipe.cfg.rl);
  CHECK(log_a.size() == pipe.cfg.rl.iterations);
  CHECK(rl_log_csv(log_a) == rl_log_csv(log_b));
  CHECK(parameters_equal(a, b));

  const auto before = pipe.model.extractor_params(), after = a.extractor_params();
  REQUIRE(before.size() == after.size());
  bool frozen = true;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto x = before[i].second.data(), y = after[i].second.data();
    frozen = frozen && std::equal(x.begin(), x.end(), y.begin(), y.end());
  }
  CHECK(frozen);
  CHECK(!parameters_equal(a, pipe.model));  // the generator did move

  // PPO never touches the disease head.
  const auto da = a.generator.disease_head.weight.data(), d0 = pipe.model.generator.disease_head.weight.data();
  CHECK(std::equal(da.begin(), da.end(), d0.begin(), d0.end()));
}

TEST_CASE("a stray extractor gradient is rejected") {
  const auto dir = tiny::fresh_dir("rrg_frozen_test");
  auto pipe = tiny::make(dir);
  ModelState& m = pipe.model;
  const Tensor prompts = encode_prompt_features(m);
  {
    Tape tape;
    TapeScope scope(tape);
    const auto loss = supervised_loss(pipe.train.images[0], pipe.train.entries[0].report, pipe.train.entries[0].labels,
                                      m, 0.5, prompts);
    tape.backward(loss.total);
  }
  Rollout r;
  r.visual = extract_visual(m, pipe.train.images[0], prompts);
  r.tokens = {kEos};
  r.old_log_probs = {std::log(0.5)};
  const MultimodalPrompt prompt = prompt_from_visual(m, r.visual);
  r.ref_log_probs = ops::log_softmax(decoder_logits(prompt, std::vector<int>{kBos}, m.generator));
  r.advantage = 1.0;
  Optimizer opt(m.generator_params(), OptimizerKind::kAdam, 1e-3, 1.0);
  CHECK_THROWS_AS(ppo_step({r}, m, pipe.cfg.rl, opt), FrozenParameterError);
}
