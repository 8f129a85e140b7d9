#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rrg/corpus.h"
#include "rrg/metrics.h"
#include "rrg/model.h"

namespace rrg {

/// A loaded split: manifest rows plus decoded images.
struct Dataset {
  std::vector<ManifestEntry> entries;
  std::vector<Image> images;

  std::size_t size() const { return entries.size(); }
};

/// Reads `<corpus>/<split>.tsv` and its images. Throws DataError when an
/// image size or label count disagrees with the config.
Dataset load_split(const std::filesystem::path& corpus, const std::string& split, const ModelConfig& cfg);

/// Report text → decoder targets, truncated (with a warning) to M−1 tokens
/// so that [EOS] still fits.
struct TeacherForcing {
  std::vector<int> prefix;   // [BOS], t1 … tn
  std::vector<int> targets;  // t1 … tn, [EOS]
};
TeacherForcing teacher_forcing(const std::string& report, const Vocabulary& vocab, std::size_t max_len);

struct LossParts {
  Tensor total;
  double report = 0.0;
  double disease = 0.0;
};

/// L = λ·L_disease + L_report for one sample. `prompt_features` are the K×D
/// region-description features (shared across a minibatch).
LossParts supervised_loss(const Image& image, const std::string& report, const LabelVector& labels,
                          const ModelState& model, double lambda, const Tensor& prompt_features);

/// Vocabulary over training reports, region descriptions and the instruction.
Vocabulary build_model_vocab(const std::vector<ManifestEntry>& train, const std::vector<RegionDescription>& regions,
                             const ModelConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0, train_report = 0.0, train_disease = 0.0;
  double val_loss = 0.0, val_report = 0.0, val_disease = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
};

/// Minibatch training on the supervised objective. After every epoch the
/// validation loss is measured; `on_best` is called whenever it improves.
/// On return `model` holds the best-validation parameters.
TrainResult train_supervised(ModelState& model, const TrainConfig& cfg, const Dataset& train, const Dataset& val,
                             const std::function<void(const ModelState&, const EpochLog&)>& on_best = {});

/// Mean loss components over a dataset without recording a tape.
EpochLog evaluate_loss(const ModelState& model, const Dataset& data, double lambda);

std::string epoch_log_csv(const std::vector<EpochLog>& log);

/// Greedy reports for every image, in dataset order.
std::vector<std::string> generate_reports(const ModelState& model, const Dataset& data);
std::string generate_for_image(const ModelState& model, const Image& image);
/// Sigmoid of the disease-head logits.
std::vector<double> disease_probabilities(const ModelState& model, const Image& image);

/// RadCliQ weights fitted on (reference, candidate, count) pairs using the
/// model's text encoder for the embedding component.
RadCliqWeights fit_weights_from_pairs(const ModelState& model, const std::vector<FitPair>& pairs);

MetricReport evaluate_split(const ModelState& model, const Dataset& data, const RadCliqWeights& weights);

}  // namespace rrg
