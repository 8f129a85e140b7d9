#include "rrg/cli.h"

#include <CLI11.hpp>
#include <fstream>
#include <iomanip>
#include <iostream>
#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <optional>
#include <sstream>

#include "rrg/checkpoint.h"
#include "rrg/errors.h"
#include "rrg/log.h"
#include "rrg/rl.h"
#include "rrg/train.h"

namespace rrg {

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t n = 0;
  std::string reward;
  std::string corpus;
  std::string checkpoint;
  std::string image;
  std::string split = "test";
  bool labels = false;
  bool oracle = false;
};

Config load_config(const Options& o) {
  Config cfg = o.config.empty() ? Config{} : Config::load(o.config);
  if (!o.corpus.empty()) cfg.paths.corpus = o.corpus;
  cfg.validate();
  return cfg;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

std::string model_section(const ModelConfig& m) {
  Config c;
  c.model = m;
  std::istringstream in(c.to_text());
  std::string line, out;
  while (std::getline(in, line))
    if (line.rfind("model.", 0) == 0) out += line + "\n";
  return out;
}

void require_matching_model(const Config& cfg, const Checkpoint& ck, const std::string& path) {
  if (model_section(cfg.model) != model_section(ck.model.config))
    throw ConfigError("checkpoint " + path + " was trained with a different model configuration");
}

RadCliqWeights weights_for(const Checkpoint& ck, const Config& cfg) {
  if (ck.weights) return *ck.weights;
  const auto fit = cfg.paths.corpus / "fit.tsv";
  log::info("fitting RadCliQ-proxy weights on " + fit.string());
  return fit_weights_from_pairs(ck.model, load_fit_pairs(fit));
}

int cmd_synth(const Options& o, std::ostream& out) {
  Config cfg = load_config(o);
  const std::size_t n = o.n ? o.n : cfg.data.samples;
  const std::uint64_t seed = o.seed.value_or(cfg.train.seed);
  const std::filesystem::path dir = o.out.empty() ? cfg.paths.corpus : std::filesystem::path(o.out);
  const SplitCounts c = gen_corpus(dir, n, seed, cfg.model, cfg.data);
  out << "wrote " << c.train << " train, " << c.val << " val, " << c.test << " test samples to " << dir.string()
      << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  Config cfg = load_config(o);
  if (o.seed) cfg.train.seed = *o.seed;
  const std::filesystem::path ckpt =
      o.out.empty() ? cfg.paths.checkpoints / "supervised.ckpt" : std::filesystem::path(o.out);
  const auto regions = load_region_descriptions(cfg.paths.regions, cfg.model.regions);
  const Dataset train = load_split(cfg.paths.corpus, "train", cfg.model);
  const Dataset val = load_split(cfg.paths.corpus, "val", cfg.model);
  ModelState model = ModelState::init(cfg.model, build_model_vocab(train.entries, regions, cfg.model), regions,
                                      cfg.train.seed);
  log::info("vocabulary " + std::to_string(model.vocab.size()) + " tokens, " + std::to_string(train.size()) +
            " training samples");
  const TrainResult res = train_supervised(model, cfg.train, train, val, [&](const ModelState& m, const EpochLog&) {
    save_checkpoint(ckpt, cfg, m, std::nullopt);
  });
  write_file(ckpt.string() + ".train.csv", epoch_log_csv(res.log));
  out << "best epoch " << res.best_epoch << " val loss " << format_double(res.best_val) << ", checkpoint "
      << ckpt.string() << "\n";
  return kExitOk;
}

int cmd_rl(const Options& o, std::ostream& out) {
  Config cfg = load_config(o);
  if (o.seed) cfg.rl.seed = *o.seed;
  if (!o.reward.empty()) {
    if (o.reward == "radcliq") cfg.rl.reward = RewardKind::kRadCliq;
    else if (o.reward == "bleu4") cfg.rl.reward = RewardKind::kBleu4;
    else throw ConfigError("--reward: expected radcliq or bleu4, got '" + o.reward + "'");
  }
  const std::filesystem::path in = o.checkpoint.empty() ? cfg.paths.checkpoints / "supervised.ckpt"
                                                        : std::filesystem::path(o.checkpoint);
  const std::filesystem::path dst = o.out.empty() ? cfg.paths.checkpoints / "rl.ckpt" : std::filesystem::path(o.out);
  Checkpoint ck = load_checkpoint(in);
  require_matching_model(cfg, ck, in.string());
  const RadCliqWeights weights = weights_for(ck, cfg);
  const Dataset train = load_split(cfg.paths.corpus, "train", cfg.model);
  const auto log = rl_finetune(ck.model, train, weights, cfg.rl);
  save_checkpoint(dst, cfg, ck.model, weights);
  write_file(dst.string() + ".rl.csv", rl_log_csv(log));
  out << "rl: " << log.size() << " iterations, checkpoint " << dst.string() << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  Config cfg = load_config(o);
  const std::filesystem::path in = o.checkpoint.empty() ? cfg.paths.checkpoints / "supervised.ckpt"
                                                        : std::filesystem::path(o.checkpoint);
  const Checkpoint ck = load_checkpoint(in);
  require_matching_model(cfg, ck, in.string());
  const RadCliqWeights weights = weights_for(ck, cfg);
  const Dataset data = load_split(cfg.paths.corpus, o.split, cfg.model);
  MetricReport report;
  if (o.oracle) {
    std::vector<std::string> refs;
    for (const auto& e : data.entries) refs.push_back(e.report);
    TextEmbedder embedder(ck.model.encoder, ck.model.vocab);
    report = evaluate_reports(refs, refs, embedder, weights);
  } else {
    report = evaluate_split(ck.model, data, weights);
  }
  const std::filesystem::path dst = o.out.empty() ? cfg.paths.metrics : std::filesystem::path(o.out);
  write_file(dst, report.to_csv());
  out << report.to_csv();
  return kExitOk;
}

int cmd_generate(const Options& o, std::ostream& out) {
  Config cfg = load_config(o);
  const std::filesystem::path in = o.checkpoint.empty() ? cfg.paths.checkpoints / "supervised.ckpt"
                                                        : std::filesystem::path(o.checkpoint);
  const Checkpoint ck = load_checkpoint(in);
  require_matching_model(cfg, ck, in.string());
  Image img;
  try {
    img = read_pgm(o.image);
  } catch (const IoError& e) {
    throw DataError(e.what());
  }
  if (img.width != cfg.model.image_size || img.height != cfg.model.image_size)
    throw DataError(o.image + ": image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                    ", model expects " + std::to_string(cfg.model.image_size));
  out << generate_for_image(ck.model, img) << "\n";
  if (o.labels) {
    const auto probs = disease_probabilities(ck.model, img);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const std::string name = i < grammar::findings().size() ? grammar::findings()[i].name : "label" + std::to_string(i);
      out << name << '\t' << format_double(probs[i]) << "\n";
    }
  }
  return kExitOk;
}

}  // namespace

void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Region-prompted radiology report generation with clinical-quality RL"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Configuration file (key = value)");
    sub->add_option("--seed", o.seed, "Override the seed");
    sub->add_option("--out", o.out, "Output path");
    sub->add_option("--corpus", o.corpus, "Corpus directory (overrides paths.corpus)");
  };
  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus");
  common(synth);
  synth->add_option("--n", o.n, "Number of samples (default data.samples)");
  auto* train = app.add_subcommand("train", "Supervised training");
  common(train);
  auto* rl = app.add_subcommand("rl", "Clinical-quality RL fine-tuning");
  common(rl);
  rl->add_option("--checkpoint", o.checkpoint, "Input (supervised) checkpoint");
  rl->add_option("--reward", o.reward, "radcliq or bleu4");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate");
  eval->add_option("--split", o.split, "train, val or test");
  eval->add_flag("--references", o.oracle, "Score the reference reports against themselves");
  auto* gen = app.add_subcommand("generate", "Generate a report for one PGM image");
  common(gen);
  gen->add_option("--checkpoint", o.checkpoint, "Checkpoint to use");
  gen->add_option("--image", o.image, "PGM image")->required();
  gen->add_flag("--labels", o.labels, "Also print disease probabilities");

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(o, out);
    if (*train) return cmd_train(o, out);
    if (*rl) return cmd_rl(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*gen) return cmd_generate(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DataError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace rrg
