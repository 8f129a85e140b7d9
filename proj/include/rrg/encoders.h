#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rrg/config.h"
#include "rrg/layers.h"
#include "rrg/vocab.h"

namespace rrg {

/// Grayscale image, row-major, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

/// Small text and image transformers standing in for a pretrained medical
/// CLIP pair. Both end without a final norm, so zeroed residual branches
/// reduce them to embedding + position.
struct EncoderParams {
  Tensor token_embedding;  // V×D
  Tensor text_positions;   // text_max_len×D
  std::vector<TransformerLayer> text_layers;
  Linear patch_projection;  // P²×D
  Tensor image_positions;   // N×D
  std::vector<TransformerLayer> image_layers;
  std::size_t patch_size = 0;
  std::size_t heads = 1;

  static EncoderParams init(const ModelConfig& cfg, std::size_t vocab_size, Rng& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct RegionDescription {
  std::string name;
  std::string description;
};

/// A region prompt with its encoded 1×D text feature.
struct RegionPrompt {
  std::string name;
  std::string description;
  Tensor feature;
};

/// Reads `region_name<TAB>description` lines; exactly `expected` records
/// with non-empty descriptions are required (expected == 0 accepts any
/// positive count). Throws IoError when unreadable, DataError when malformed.
std::vector<RegionDescription> load_region_descriptions(const std::filesystem::path& path,
                                                        std::size_t expected);
void save_region_descriptions(const std::filesystem::path& path, const std::vector<RegionDescription>& regions);

/// Token ids → 1×D: embedding + position, the text layers, then a mean over
/// tokens. Inputs longer than the position table are truncated.
Tensor encode_text_ids(std::span<const int> ids, const EncoderParams& params);
/// Throws std::invalid_argument when the text has no tokens.
Tensor encode_text(std::string_view text, const Vocabulary& vocab, const EncoderParams& params);

/// K×D stack of encode_text over the descriptions, in order.
Tensor encode_region_prompts(const std::vector<RegionDescription>& regions, const Vocabulary& vocab,
                             const EncoderParams& params);
std::vector<RegionPrompt> make_region_prompts(const std::vector<RegionDescription>& regions,
                                              const Vocabulary& vocab, const EncoderParams& params);

/// Row-major P×P patches flattened into an N×P² matrix.
Tensor image_to_patches(const Image& image, std::size_t patch_size);
/// N×D visual tokens. Throws std::invalid_argument when H or W is not a
/// multiple of P or N does not match the position table.
Tensor encode_image_patches(const Image& image, const EncoderParams& params);

}  // namespace rrg
