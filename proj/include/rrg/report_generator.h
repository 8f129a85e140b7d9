#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrg/layers.h"
#include "rrg/rng.h"
#include "rrg/vocab.h"

namespace rrg {

/// VTrans, decoder and disease head.
struct GeneratorParams {
  std::vector<TransformerLayer> vtrans;
  Tensor token_embedding;  // V×D, also embeds the instruction
  Tensor positions;        // (1+K+L+M)×D
  std::vector<TransformerLayer> decoder;
  LayerNorm final_norm;
  Linear output;        // D×V
  Linear disease_head;  // (1+K)·D → C
  std::size_t heads = 1;
  std::size_t max_len = 0;  // M

  static GeneratorParams init(std::size_t dim, std::size_t ffn_mult, std::size_t heads, std::size_t vtrans_layers,
                              std::size_t decoder_layers, std::size_t vocab_size, std::size_t prompt_rows,
                              std::size_t max_len, std::size_t regions, std::size_t labels, Rng& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
  std::size_t prompt_capacity() const { return positions.rows() - max_len; }
};

struct VTransOutput {
  Tensor global;   // 1×D
  Tensor regions;  // K×D
};

/// The 1+K rows pass jointly through the VTrans layers and are split back.
VTransOutput vtrans_forward(const Tensor& f_global, const Tensor& f_region, const GeneratorParams& params);

/// [F_global^vtrans; F_region^vtrans; F_inst] with F_inst the instruction
/// ids looked up in the decoder embedding table.
struct MultimodalPrompt {
  Tensor features;  // (1+K+L)×D
  std::size_t regions = 0;
  std::size_t instruction_len = 0;

  std::size_t rows() const { return features.rows(); }
};

MultimodalPrompt build_multimodal_prompt(const VTransOutput& visual, std::span<const int> instruction_ids,
                                         const GeneratorParams& params);

/// Next-token logits (|prefix|×V) for every prefix position. Prompt rows
/// see each other; prefix position i sees the prompt and positions ≤ i.
/// [PAD], [BOS] and [UNK] carry a fixed −1e4 bias so they are never
/// produced. Throws ShapeError when |prefix| exceeds M or is empty.
Tensor decoder_logits(const MultimodalPrompt& prompt, std::span<const int> prefix, const GeneratorParams& params);

/// Key/value-cached decoding that reproduces decoder_logits row by row.
/// Runs without a tape.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const MultimodalPrompt& prompt, const GeneratorParams& params);
  /// Feeds one token and returns the 1×V logits for the next position.
  Tensor step(int token);
  std::size_t fed() const { return fed_; }

 private:
  const GeneratorParams& params_;
  std::size_t prompt_rows_;
  std::size_t fed_ = 0;
  std::vector<std::vector<double>> keys_, values_;  // per layer, row-major
};

struct Report {
  std::vector<int> ids;  // generated tokens, [EOS] last when emitted
  std::string text;
  std::vector<double> log_probs;  // per token, under the decoding distribution
};

struct DecodeOptions {
  bool sample = false;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t max_len = 0;  // 0 = params.max_len
};

/// Starts from [BOS]; greedy picks the argmax (lowest id on ties), sampling
/// draws from softmax(logits / temperature). Stops at [EOS] or M tokens.
Report generate_report(const MultimodalPrompt& prompt, const GeneratorParams& params, const Vocabulary& vocab,
                       const DecodeOptions& opt = {});

/// C logits from the flattened [F_global; F_region].
Tensor disease_classify(const Tensor& f_global, const Tensor& f_region, const GeneratorParams& params);

/// Additive logit mask for the reserved tokens that are never emitted.
Tensor reserved_token_bias(std::size_t vocab_size);

}  // namespace rrg
