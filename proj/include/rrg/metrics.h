#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "rrg/corpus.h"
#include "rrg/encoders.h"

namespace rrg {

using Tokens = std::vector<std::string>;

/// Sentence BLEU-4 with uniform weights. Without smoothing any zero n-gram
/// precision (including a candidate shorter than 4 tokens) gives 0; with
/// smoothing, orders 2-4 use (matches+1)/(total+1).
double bleu4(const Tokens& candidate, const Tokens& reference, bool smoothing = false);
/// LCS F-measure, F = (1+β²)PR / (R + β²P).
double rouge_l(const Tokens& candidate, const Tokens& reference, double beta = 1.2);
/// Exact-match METEOR: the k-th occurrence of a word aligns with its k-th
/// occurrence in the reference; F = PR/(αP+(1−α)R) times 1−0.5·(chunks/m)³.
double meteor_simple(const Tokens& candidate, const Tokens& reference, double alpha = 0.9);

LabelVector extract_labels(const std::string& report);
/// F1 of the parsed entity-triple sets; 1 when both are empty.
double entity_f1(const std::string& candidate, const std::string& reference);

struct PRF {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};
/// Example-averaged precision/recall/F1 over positive labels. An example
/// with no positives on either side scores 1, one empty side scores 0.
PRF ce_prf(const std::vector<LabelVector>& predicted, const std::vector<LabelVector>& truth);

/// Cached mean-pooled text features from the model's text encoder.
class TextEmbedder {
 public:
  TextEmbedder(const EncoderParams& encoder, const Vocabulary& vocab) : encoder_(encoder), vocab_(vocab) {}
  /// Empty when the text has no tokens.
  std::vector<double> embed(const std::string& text) const;
  double cosine(const std::string& a, const std::string& b) const;

 private:
  const EncoderParams& encoder_;
  const Vocabulary& vocab_;
  mutable std::mutex mu_;
  mutable std::map<std::string, std::vector<double>> cache_;
};

struct RadCliqComponents {
  double bleu = 0.0;
  double embed_sim = 0.0;
  double label_sim = 0.0;
  double entity_f1 = 0.0;

  std::array<double, 4> as_array() const { return {bleu, embed_sim, label_sim, entity_f1}; }
};

RadCliqComponents component_vector(const std::string& candidate, const std::string& reference,
                                   const TextEmbedder& embedder);

/// score = intercept + Σ coef_i · component_i; lower is better.
struct RadCliqWeights {
  double intercept = 0.0;
  std::array<double, 4> coef{};

  bool operator==(const RadCliqWeights&) const = default;
};

double radcliq_proxy(const RadCliqComponents& c, const RadCliqWeights& w);

struct FitObservation {
  RadCliqComponents components;
  double error_count = 0.0;
};
/// Least squares of error_count on the components plus an intercept via the
/// normal equations; a 1e-6 ridge is added when they are singular. Throws
/// std::invalid_argument for fewer than 5 observations.
RadCliqWeights fit_radcliq_weights(const std::vector<FitObservation>& pairs);

struct MetricReport {
  double bleu4 = 0.0, rouge_l = 0.0, meteor = 0.0;
  PRF ce;
  double radcliq = 0.0;
  RadCliqComponents components;  // corpus means
  std::size_t count = 0;

  /// `metric,value` rows in a fixed order.
  std::string to_csv() const;
};

/// Corpus means over aligned candidate/reference lists.
MetricReport evaluate_reports(const std::vector<std::string>& candidates, const std::vector<std::string>& references,
                              const TextEmbedder& embedder, const RadCliqWeights& weights);

}  // namespace rrg
