#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace rrg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kDefaultInstruction =
    "Please generate a radiology report for this chest X-ray image based on the provided global "
    "visual feature and region visual features. Assistant:";

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t heads = 1;
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t regions = 29;  // K
  std::size_t labels = 5;    // C
  std::size_t text_layers = 2;
  std::size_t image_layers = 2;
  std::size_t region_repeats = 3;
  std::size_t vtrans_layers = 3;
  std::size_t decoder_layers = 2;
  std::size_t ffn_mult = 4;
  std::size_t max_report_len = 64;  // M
  std::size_t text_max_len = 128;
  std::size_t vocab_cap = 0;  // 0 = unlimited
  std::string instruction = kDefaultInstruction;

  std::size_t patches() const { return (image_size / patch_size) * (image_size / patch_size); }
};

enum class OptimizerKind { kAdam, kSgd };

struct TrainConfig {
  double lambda = 0.5;  // weight on the disease loss
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  std::uint64_t seed = 7;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double grad_clip = 1.0;  // global norm; 0 disables
};

enum class RewardKind { kRadCliq, kBleu4 };
enum class LambdaMode { kAdaptive, kFixed };
enum class KlEstimator { kFull, kSampled };

struct RLConfig {
  double theta = -1.0;  // on the −RadCliQ-proxy reward scale
  double clip_eps = 0.2;
  double temperature = 1.0;
  std::size_t iterations = 60;
  std::size_t rollouts = 16;
  std::size_t ppo_epochs = 2;
  double lr = 2e-4;
  RewardKind reward = RewardKind::kRadCliq;
  LambdaMode lambda_mode = LambdaMode::kAdaptive;
  double fixed_lambda = 1.0;
  double baseline_momentum = 0.9;
  KlEstimator kl_estimator = KlEstimator::kFull;
  std::uint64_t seed = 7;
};

struct DataConfig {
  std::size_t samples = 2000;
  double train_ratio = 0.8;
  double val_ratio = 0.1;
  double test_ratio = 0.1;
  double prevalence = 0.3;
  double negation_prob = 0.5;
  double noise = 0.05;
  std::size_t fit_pairs = 600;
};

struct PathsConfig {
  std::filesystem::path corpus = "corpus";
  std::filesystem::path regions = "data/regions.tsv";
  std::filesystem::path checkpoints = "checkpoints";
  std::filesystem::path metrics = "metrics.csv";
};

struct Config {
  ModelConfig model;
  TrainConfig train;
  RLConfig rl;
  DataConfig data;
  PathsConfig paths;

  /// Strict parse of `key = value` lines; '#' starts a comment. Unknown
  /// keys, malformed values and out-of-range values throw ConfigError.
  static Config parse(const std::string& text);
  /// Throws IoError when the file cannot be read.
  static Config load(const std::filesystem::path& path);
  /// Canonical text form (every key, fixed order); parse(to_text()) == *this.
  std::string to_text() const;
  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// Locale-independent shortest round-trip formatting.
std::string format_double(double v);

}  // namespace rrg
