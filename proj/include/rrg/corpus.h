#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rrg/config.h"
#include "rrg/encoders.h"

namespace rrg {

/// Number of disease labels the template grammar knows about.
inline constexpr std::size_t kGrammarLabels = 5;

using LabelVector = std::vector<int>;  // 0/1 per label

/// One (finding, region, polarity) entity; negated findings carry no region.
struct EntityTriple {
  std::string finding;
  std::string region;
  bool positive = false;

  auto operator<=>(const EntityTriple&) const = default;
};

/// Closed template language shared by the corpus generator and the report
/// parser.
namespace grammar {

struct Finding {
  std::string name;
  std::vector<std::size_t> regions;  // indices into region_words()
};

const std::vector<Finding>& findings();
const std::vector<std::string>& region_words();
const std::array<std::string, 3>& severity_words();
inline constexpr const char* kNormalStatement = "no acute cardiopulmonary abnormality .";

enum class Mention { kNone, kNegated, kPositive };

struct LabelState {
  Mention mention = Mention::kNone;
  std::size_t region = 0;  // index into region_words() when positive
  std::size_t severity = 0;

  bool operator==(const LabelState&) const = default;
};

/// Report content, one state per label, rendered in label order.
struct ReportSpec {
  std::array<LabelState, kGrammarLabels> labels{};

  bool operator==(const ReportSpec&) const = default;
};

std::string render(const ReportSpec& spec);
LabelVector labels_of(const ReportSpec& spec);
std::vector<EntityTriple> triples_of(const ReportSpec& spec);

/// Sentence-level parse: a label is positive iff its finding appears in a
/// sentence without "no"/"without", and any negated mention forces it
/// negative. Sentences naming no finding contribute nothing.
LabelVector parse_labels(const std::string& report);
/// Sorted, de-duplicated triples.
std::vector<EntityTriple> parse_triples(const std::string& report);

}  // namespace grammar

struct Sample {
  Image image;
  std::string report;
  LabelVector labels;
  std::size_t corruption_count = 0;
  grammar::ReportSpec spec;
};

/// Deterministic in (seed, config).
Sample gen_sample(std::uint64_t seed, const ModelConfig& model, const DataConfig& data);
/// Renders the image that belongs to `spec`.
Image render_image(const grammar::ReportSpec& spec, std::size_t size, double noise, std::uint64_t seed);

/// Applies `n_errors` edits to distinct labels (flip polarity, delete or add
/// a sentence, swap the region). Throws std::invalid_argument unless
/// 1 ≤ n_errors ≤ number of labels.
Sample corrupt_sample(const Sample& sample, std::size_t n_errors, std::uint64_t seed);

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};
SplitCounts split_counts(std::size_t n, const DataConfig& data);

/// Writes images/, train.tsv, val.tsv, test.tsv and fit.tsv under `out`.
/// A report string belongs to the first split that draws it; later draws in
/// other splits are re-sampled so no report crosses splits.
SplitCounts gen_corpus(const std::filesystem::path& out, std::size_t n, std::uint64_t seed, const ModelConfig& model,
                       const DataConfig& data);

struct ManifestEntry {
  std::filesystem::path image_path;  // resolved against the manifest directory
  std::string report;
  LabelVector labels;
  std::size_t corruption_count = 0;
};

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path, std::size_t labels);

struct FitPair {
  std::string reference;
  std::string candidate;
  std::size_t count = 0;
};
std::vector<FitPair> load_fit_pairs(const std::filesystem::path& path);

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, const Image& image);
Image read_pgm(const std::filesystem::path& path);

std::string label_bits(const LabelVector& labels);

}  // namespace rrg
