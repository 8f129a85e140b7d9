#pragma once

#include <filesystem>
#include <string>

#include "rrg/config.h"
#include "rrg/corpus.h"
#include "rrg/model.h"
#include "rrg/train.h"

namespace tiny {

/// Small enough that a training epoch over a few dozen samples takes well
/// under a second.
inline rrg::Config config(const std::filesystem::path& dir) {
  rrg::Config c;
  c.model.dim = 16;
  c.model.heads = 2;
  c.model.image_size = 32;
  c.model.patch_size = 8;
  c.model.regions = 6;
  c.model.text_layers = 1;
  c.model.image_layers = 1;
  c.model.region_repeats = 1;
  c.model.vtrans_layers = 1;
  c.model.decoder_layers = 1;
  c.model.ffn_mult = 2;
  c.model.max_report_len = 48;
  c.model.text_max_len = 32;
  c.model.instruction = "describe the image.";
  c.train.epochs = 2;
  c.train.batch_size = 8;
  c.rl.iterations = 2;
  c.rl.rollouts = 4;
  c.rl.ppo_epochs = 1;
  c.data.samples = 40;
  c.data.fit_pairs = 30;
  c.paths.corpus = dir / "corpus";
  c.paths.regions = RRG_SOURCE_DIR "/data/regions_desk.tsv";
  c.paths.checkpoints = dir / "ck";
  c.paths.metrics = dir / "metrics.csv";
  return c;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

struct Pipeline {
  rrg::Config cfg;
  rrg::Dataset train, val;
  rrg::ModelState model;
};

/// Writes a corpus under `dir` and builds an untrained model over it.
inline Pipeline make(const std::filesystem::path& dir) {
  const rrg::Config cfg = config(dir);
  rrg::gen_corpus(cfg.paths.corpus, cfg.data.samples, 3, cfg.model, cfg.data);
  auto regions = rrg::load_region_descriptions(cfg.paths.regions, cfg.model.regions);
  rrg::Dataset train = rrg::load_split(cfg.paths.corpus, "train", cfg.model);
  rrg::Dataset val = rrg::load_split(cfg.paths.corpus, "val", cfg.model);
  auto vocab = rrg::build_model_vocab(train.entries, regions, cfg.model);
  rrg::ModelState model = rrg::ModelState::init(cfg.model, std::move(vocab), std::move(regions), 11);
  return {cfg, std::move(train), std::move(val), std::move(model)};
}

}  // namespace tiny
