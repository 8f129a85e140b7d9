// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
//   rrg_acceptance [work-dir] [--known-failure N]...
//
// The work directory (default ./acceptance_work) receives the corpus,
// checkpoints and per-run metric CSVs. A criterion listed with
// --known-failure still prints its FAIL line but does not fail the exit code;
// see README for the one that needs it. Expect about 20 minutes on one core.

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "grad_suite.h"
#include "oracles.h"
#include "rrg/checkpoint.h"
#include "rrg/cli.h"
#include "rrg/rl.h"
#include "rrg/train.h"

using namespace rrg;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr std::size_t kGradInstances = 100;
constexpr double kGradRtol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kIncrementalAtol = 1e-10;
constexpr double kOracleAtol = 1e-12;  // floating-point slack only; both sides compute the same sums
constexpr std::size_t kOraclePairs = 100;
constexpr std::size_t kInverseSamples = 1000;
constexpr double kMinBleu = 0.50;
constexpr double kMinCeF1 = 0.85;
constexpr std::size_t kMaxEpochs = 30;
constexpr double kSupervisedSeconds = 30 * 60.0;
constexpr double kMinRadcliqGain = 0.05;
constexpr double kMaxBleuDrop = 0.10;
constexpr double kProbeAtol = 1e-6;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::set<int> g_failed, g_known;

void verdict(int id, const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
  if (!pass) g_failed.insert(id);
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

Tensor random_tensor(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(std::move(s));
  for (double& v : t.mutable_data()) v = rng.normal(0.0, 1.0);
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

bool bitwise_equal(const NamedTensors& a, const NamedTensors& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].first != b[i].first || !bitwise_equal(a[i].second, b[i].second)) return false;
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

// ---------------------------------------------------------------------------

void gradient_suite() {
  const auto t0 = Clock::now();
  const auto results = gradsuite::run(kGradInstances, kGradRtol);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string failing;
  for (const auto& r : results) {
    worst = std::max(worst, r.worst_rel_error);
    if (r.failures) failing += " " + r.name + "(" + std::to_string(r.failures) + ")";
  }
  verdict(1, "gradient suite", failing.empty() && secs < kGradSeconds,
          std::to_string(results.size()) + " cases x " + std::to_string(kGradInstances) +
              " instances, worst rel err " + fmt(worst, 3) + ", " + fmt(secs, 3) + " s" +
              (failing.empty() ? "" : ", failing:" + failing));
}

void equation_fidelity() {
  std::string problems;
  const std::size_t d = 64;

  // Residual identities: zeroed branches leave the input untouched.
  {
    Rng rng(1);
    auto layer = TransformerLayer::init(d, 4, rng);
    zero_residual_branches(layer);
    const Tensor x = random_tensor({7, d}, 2);
    if (!bitwise_equal(layer(x, {.heads = 2, .causal = true}), x)) problems += " transformer-identity";

    auto rep = RegionRepeat::init(d, 4, rng);
    for (Tensor* t : {&rep.cross.output.weight, &rep.cross.output.bias, &rep.self.output.weight,
                      &rep.self.output.bias, &rep.ffn.down.weight, &rep.ffn.down.bias})
      zero_tensor(*t);
    const Tensor f = random_tensor({12, d}, 3), ft = random_tensor({3, d}, 4);
    if (!bitwise_equal(region_block_forward(f, ft, rep, 1, 3), f)) problems += " region-identity";

    auto gen = GeneratorParams::init(d, 4, 1, 3, 2, 40, 10, 16, 6, 5, rng);
    for (auto& l : gen.vtrans) zero_residual_branches(l);
    const Tensor g = random_tensor({1, d}, 5), r = random_tensor({6, d}, 6);
    const auto out = vtrans_forward(g, r, gen);
    if (!bitwise_equal(out.global, g) || !bitwise_equal(out.regions, r)) problems += " vtrans-identity";
  }

  // Causal mask: later keys never reach earlier queries, and the masked
  // kernel matches an explicit-mask oracle.
  {
    const std::size_t n = 9, w = 16;
    const Tensor q = random_tensor({n, w}, 7), k = random_tensor({n, w}, 8), v = random_tensor({n, w}, 9);
    const ops::AttentionOptions opt{.causal = true, .visible_prefix = 3};
    const Tensor base = ops::attention(q, k, v, opt);
    const auto want = oracle::attention({q.data().begin(), q.data().end()}, {k.data().begin(), k.data().end()},
                                        {v.data().begin(), v.data().end()}, n, n, w, true, 3, 0);
    double err = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) err = std::max(err, std::abs(base[i] - want[i]));
    if (err > kOracleAtol) problems += " mask-oracle(" + fmt(err, 3) + ")";
    for (std::size_t j = 3; j < n; ++j) {
      Tensor k2 = k.clone(), v2 = v.clone();
      for (std::size_t c = 0; c < w; ++c) {
        k2.mutable_data()[j * w + c] += 3.0;
        v2.mutable_data()[j * w + c] -= 5.0;
      }
      const Tensor moved = ops::attention(q, k2, v2, opt);
      for (std::size_t i = 0; i < j * w; ++i)
        if (moved[i] != base[i]) {
          problems += " mask-leak(key " + std::to_string(j) + ")";
          break;
        }
    }
  }

  // Incremental decoding against the full decoder.
  double inc_err = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const auto gen = GeneratorParams::init(d, 4, 1 + seed % 2, 1, 2, 50, 20, 24, 6, 5, rng);
    const MultimodalPrompt p{random_tensor({1 + seed % 20, d}, seed), 0, 0};
    std::vector<int> prefix{kBos};
    for (std::size_t i = 1; i < 24; ++i) prefix.push_back(static_cast<int>(4 + rng.below(46)));
    const Tensor full = decoder_logits(p, prefix, gen);
    IncrementalDecoder dec(p, gen);
    for (std::size_t t = 0; t < prefix.size(); ++t) {
      const Tensor row = dec.step(prefix[t]);
      for (std::size_t c = 0; c < 50; ++c) inc_err = std::max(inc_err, std::abs(row[c] - full.at(t, c)));
    }
  }
  if (inc_err > kIncrementalAtol) problems += " incremental(" + fmt(inc_err, 3) + ")";

  // Adaptive KL weight at the three reference points, for several thresholds.
  for (double theta : {0.5, 0.2, 3.0}) {
    if (adaptive_lambda(theta, theta) != 1.0 || adaptive_lambda(theta / 2, theta) != 0.5 ||
        adaptive_lambda(theta * 1.5, theta) != 1.0)
      problems += " lambda(theta=" + fmt(theta) + ")";
  }

  verdict(2, "equation fidelity", problems.empty(),
          problems.empty() ? "identities bitwise, mask exact, incremental max err " + fmt(inc_err, 3) +
                                 ", adaptive lambda exact"
                           : "problems:" + problems);
}

void metric_oracles() {
  std::string problems;
  Rng rng(2024);
  double worst = 0.0;
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < kOraclePairs; ++i) {
    const auto r = oracle::random_words(rng, 10);
    auto c = oracle::random_words(rng, 10);
    if (i % 2) {
      c = r;
      for (auto& w : c)
        if (rng.bernoulli(0.15)) w = "lung";
    }
    const double b = bleu4(c, r), rl = rouge_l(c, r);
    nonzero += b > 0.0;
    worst = std::max({worst, std::abs(b - oracle::bleu4(c, r)), std::abs(rl - oracle::rouge_l(c, r))});
  }
  if (worst > kOracleAtol) problems += " bleu/rouge(" + fmt(worst, 3) + ")";

  double ce_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<LabelVector> pred, gold;
    for (int e = 0; e < 25; ++e) {
      LabelVector p(kGrammarLabels), g(kGrammarLabels);
      for (std::size_t i = 0; i < kGrammarLabels; ++i) {
        p[i] = rng.bernoulli(0.3);
        g[i] = rng.bernoulli(0.3);
      }
      pred.push_back(p);
      gold.push_back(g);
    }
    const PRF got = ce_prf(pred, gold);
    const auto want = oracle::ce(pred, gold);
    ce_err = std::max({ce_err, std::abs(got.precision - want.p), std::abs(got.recall - want.r),
                       std::abs(got.f1 - want.f)});
  }
  if (ce_err > kOracleAtol) problems += " ce(" + fmt(ce_err, 3) + ")";

  ModelConfig m;
  m.regions = 6;
  m.patch_size = 16;
  std::size_t inverse_failures = 0;
  for (std::uint64_t s = 0; s < kInverseSamples; ++s) {
    const Sample x = gen_sample(mix_seed(7, s), m, DataConfig{});
    inverse_failures += grammar::parse_labels(x.report) != x.labels;
  }
  if (inverse_failures) problems += " inverse(" + std::to_string(inverse_failures) + " failures)";

  verdict(3, "metric oracles", problems.empty(),
          std::to_string(kOraclePairs) + " pairs (" + std::to_string(nonzero) + " with BLEU > 0) max err " +
              fmt(worst, 3) + ", CE max err " + fmt(ce_err, 3) + ", inverse failures " +
              std::to_string(inverse_failures) + "/" + std::to_string(kInverseSamples) +
              (problems.empty() ? "" : ", problems:" + problems));
}

// ---------------------------------------------------------------------------

struct RunResult {
  MetricReport metrics;
  std::vector<RLIterationLog> log;
  ModelState model;
  ModelState reference;
};

struct Experiment {
  Config cfg;
  fs::path work;
  Dataset train, val, test;
  ModelState supervised;
  RadCliqWeights weights;
  MetricReport supervised_metrics;
};

RunResult rl_run(const Experiment& ex, const RLConfig& rl, const std::string& tag) {
  RunResult r{{}, {}, ex.supervised.clone(), {}};
  const auto t0 = Clock::now();
  r.log = rl_finetune(r.model, ex.train, ex.weights, rl, &r.reference);
  r.metrics = evaluate_split(r.model, ex.test, ex.weights);
  write_file(ex.work / ("rl_" + tag + ".csv"), rl_log_csv(r.log));
  write_file(ex.work / ("metrics_" + tag + ".csv"), r.metrics.to_csv());
  std::cout << "  rl[" << tag << "] " << fmt(seconds_since(t0), 3) << " s: BLEU-4 " << fmt(r.metrics.bleu4)
            << ", CE F1 " << fmt(r.metrics.ce.f1) << ", RadCliQ-proxy " << fmt(r.metrics.radcliq) << std::endl;
  return r;
}

// Trains the supervised model and checks the quality bar.
Experiment supervised_stage(const fs::path& work) {
  Experiment ex;
  ex.cfg = Config::load(RRG_SOURCE_DIR "/configs/desk.cfg");
  ex.cfg.paths.regions = RRG_SOURCE_DIR "/" + ex.cfg.paths.regions.string();
  ex.cfg.paths.corpus = work / "corpus";
  ex.cfg.validate();
  ex.work = work;

  const auto t0 = Clock::now();
  gen_corpus(ex.cfg.paths.corpus, ex.cfg.data.samples, ex.cfg.train.seed, ex.cfg.model, ex.cfg.data);
  auto regions = load_region_descriptions(ex.cfg.paths.regions, ex.cfg.model.regions);
  ex.train = load_split(ex.cfg.paths.corpus, "train", ex.cfg.model);
  ex.val = load_split(ex.cfg.paths.corpus, "val", ex.cfg.model);
  ex.test = load_split(ex.cfg.paths.corpus, "test", ex.cfg.model);
  ex.supervised = ModelState::init(ex.cfg.model, build_model_vocab(ex.train.entries, regions, ex.cfg.model),
                                   std::move(regions), ex.cfg.train.seed);
  const TrainResult res = train_supervised(ex.supervised, ex.cfg.train, ex.train, ex.val);
  const double secs = seconds_since(t0);
  write_file(work / "train.csv", epoch_log_csv(res.log));

  ex.weights = fit_weights_from_pairs(ex.supervised, load_fit_pairs(ex.cfg.paths.corpus / "fit.tsv"));
  ex.supervised_metrics = evaluate_split(ex.supervised, ex.test, ex.weights);
  write_file(work / "metrics_supervised.csv", ex.supervised_metrics.to_csv());
  save_checkpoint(work / "supervised.ckpt", ex.cfg, ex.supervised, ex.weights);

  const auto& m = ex.supervised_metrics;
  const std::size_t epochs = res.log.size();
  const bool pass = m.bleu4 >= kMinBleu && m.ce.f1 >= kMinCeF1 && epochs <= kMaxEpochs && secs < kSupervisedSeconds;
  verdict(4, "supervised stage", pass,
          "test BLEU-4 " + fmt(m.bleu4) + " (>= " + fmt(kMinBleu) + "), CE F1 " + fmt(m.ce.f1) + " (>= " +
              fmt(kMinCeF1) + "), " + std::to_string(epochs) + " epochs (best " + std::to_string(res.best_epoch) +
              "), val report loss " + fmt(res.log.front().val_report) + " -> " + fmt(res.log.back().val_report) +
              ", " + fmt(secs / 60.0, 3) + " min");
  return ex;
}

void rl_stages(const Experiment& ex) {
  const MetricReport& base = ex.supervised_metrics;
  const RunResult adaptive = rl_run(ex, ex.cfg.rl, "radcliq_adaptive");

  const double gain = (base.radcliq - adaptive.metrics.radcliq) / base.radcliq;
  const double drop = (base.bleu4 - adaptive.metrics.bleu4) / base.bleu4;
  const bool extractor_frozen = bitwise_equal(adaptive.model.extractor_params(), ex.supervised.extractor_params());
  const bool reference_frozen = bitwise_equal(adaptive.reference.named(), ex.supervised.named());
  verdict(5, "CQRL stage",
          gain >= kMinRadcliqGain && drop <= kMaxBleuDrop && extractor_frozen && reference_frozen,
          "RadCliQ-proxy " + fmt(base.radcliq) + " -> " + fmt(adaptive.metrics.radcliq) + " (" +
              fmt(100 * gain, 3) + "% better, need >= " + fmt(100 * kMinRadcliqGain) + "%), BLEU-4 " +
              fmt(base.bleu4) + " -> " + fmt(adaptive.metrics.bleu4) + " (" + fmt(100 * drop, 3) +
              "% drop, allow <= " + fmt(100 * kMaxBleuDrop) + "%), extractor " +
              (extractor_frozen ? "frozen" : "MOVED") + ", reference " + (reference_frozen ? "frozen" : "MOVED"));

  RLConfig bleu_cfg = ex.cfg.rl;
  bleu_cfg.reward = RewardKind::kBleu4;
  const RunResult bleu = rl_run(ex, bleu_cfg, "bleu_adaptive");
  verdict(6, "reward swap direction",
          bleu.metrics.bleu4 >= adaptive.metrics.bleu4 && bleu.metrics.radcliq > adaptive.metrics.radcliq,
          "BLEU-4 reward: BLEU-4 " + fmt(bleu.metrics.bleu4) + " vs " + fmt(adaptive.metrics.bleu4) +
              " (want >=), RadCliQ-proxy " + fmt(bleu.metrics.radcliq) + " vs " + fmt(adaptive.metrics.radcliq) +
              " (want >)");

  RLConfig fixed_cfg = ex.cfg.rl;
  fixed_cfg.lambda_mode = LambdaMode::kFixed;
  fixed_cfg.fixed_lambda = 1.0;
  const RunResult fixed = rl_run(ex, fixed_cfg, "radcliq_fixed");
  double mean_lambda = 0.0;
  for (const auto& e : adaptive.log) mean_lambda += e.mean_lambda_kl / static_cast<double>(adaptive.log.size());
  const bool same_run = rl_log_csv(adaptive.log) == rl_log_csv(fixed.log);
  verdict(7, "fixed vs adaptive KL weight", adaptive.metrics.radcliq <= fixed.metrics.radcliq,
          "adaptive RadCliQ-proxy " + fmt(adaptive.metrics.radcliq) + " vs fixed lambda=1 " +
              fmt(fixed.metrics.radcliq) + " (want <=); adaptive mean lambda " + fmt(mean_lambda) +
              (same_run ? ", runs identical: the adaptive weight saturates at 1 on this reward scale" : ""));

  // Persistence: save → load → save, then compare probe outputs.
  const fs::path ck = ex.work / "rl_radcliq_adaptive.ckpt";
  save_checkpoint(ck, ex.cfg, adaptive.model, ex.weights);
  const Checkpoint loaded = load_checkpoint(ck);
  const bool resave_same = checkpoint_bytes(loaded.config, loaded.model, loaded.weights) == slurp(ck);
  double probe_err = 0.0;
  const Tensor pf_a = encode_prompt_features(adaptive.model), pf_b = encode_prompt_features(loaded.model);
  for (std::size_t i = 0; i < 10; ++i) {
    const Image& img = ex.test.images[i];
    const auto pa = disease_probabilities(adaptive.model, img), pb = disease_probabilities(loaded.model, img);
    for (std::size_t c = 0; c < pa.size(); ++c) probe_err = std::max(probe_err, std::abs(pa[c] - pb[c]));
    const auto va = extract_visual(adaptive.model, img, pf_a), vb = extract_visual(loaded.model, img, pf_b);
    const std::vector<int> prefix{kBos};
    const Tensor la = ops::softmax(decoder_logits(prompt_from_visual(adaptive.model, va), prefix,
                                                  adaptive.model.generator));
    const Tensor lb =
        ops::softmax(decoder_logits(prompt_from_visual(loaded.model, vb), prefix, loaded.model.generator));
    for (std::size_t c = 0; c < la.size(); ++c) probe_err = std::max(probe_err, std::abs(la[c] - lb[c]));
  }

  // Determinism: a shortened copy of the whole pipeline, run twice from scratch.
  auto mini = [&](const fs::path& dir) {
    Config c = ex.cfg;
    c.data.samples = 200;
    c.data.fit_pairs = 60;
    c.train.epochs = 2;
    c.rl.iterations = 3;
    c.paths.corpus = dir / "corpus";
    fs::remove_all(dir);
    gen_corpus(c.paths.corpus, c.data.samples, c.train.seed, c.model, c.data);
    auto regions = load_region_descriptions(c.paths.regions, c.model.regions);
    const Dataset tr = load_split(c.paths.corpus, "train", c.model), va = load_split(c.paths.corpus, "val", c.model);
    ModelState m = ModelState::init(c.model, build_model_vocab(tr.entries, regions, c.model), std::move(regions),
                                    c.train.seed);
    const TrainResult res = train_supervised(m, c.train, tr, va);
    const RadCliqWeights w = fit_weights_from_pairs(m, load_fit_pairs(c.paths.corpus / "fit.tsv"));
    std::string bytes = slurp(c.paths.corpus / "train.tsv") + slurp(c.paths.corpus / "fit.tsv");
    bytes += checkpoint_bytes(c, m, w) + epoch_log_csv(res.log);
    const auto log = rl_finetune(m, tr, w, c.rl);
    return bytes + checkpoint_bytes(c, m, w) + rl_log_csv(log);
  };
  // Same directory both times: the corpus path is part of the stored config.
  const std::string first = mini(ex.work / "repeat");
  const bool deterministic = mini(ex.work / "repeat") == first;

  verdict(8, "determinism and persistence", deterministic && resave_same && probe_err <= kProbeAtol,
          std::string("repeat run ") + (deterministic ? "byte-identical" : "DIFFERS") + ", save/load/save " +
              (resave_same ? "byte-identical" : "DIFFERS") + ", probe max err " + fmt(probe_err, 3) +
              " (atol " + fmt(kProbeAtol) + ")");
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  fs::path work = "acceptance_work";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--known-failure" && i + 1 < argc) g_known.insert(std::stoi(argv[++i]));
    else work = a;
  }
  fs::create_directories(work);
  try {
    gradient_suite();
    equation_fidelity();
    metric_oracles();
    const Experiment ex = supervised_stage(work);
    rl_stages(ex);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  int unexpected = 0;
  std::string known;
  for (int id : g_failed) {
    if (g_known.count(id)) known += " " + std::to_string(id);
    else ++unexpected;
  }
  for (int id : g_known)
    if (!g_failed.count(id)) std::cout << "note: known failure " << id << " passed this time" << std::endl;
  std::cout << g_failed.size() << " of 8 criteria failed";
  if (!known.empty()) std::cout << " (known:" << known << ")";
  std::cout << std::endl;
  return unexpected ? 1 : 0;
}
