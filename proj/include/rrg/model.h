#pragma once

#include <vector>

#include "rrg/config.h"
#include "rrg/encoders.h"
#include "rrg/region_extractor.h"
#include "rrg/report_generator.h"

namespace rrg {

/// Every learnable tensor plus what is needed to rebuild the architecture.
struct ModelState {
  ModelConfig config;
  Vocabulary vocab;
  std::vector<RegionDescription> regions;
  std::vector<int> instruction_ids;
  EncoderParams encoder;
  RegionBlockParams extractor;
  GeneratorParams generator;

  static ModelState init(const ModelConfig& config, Vocabulary vocab, std::vector<RegionDescription> regions,
                         std::uint64_t seed);

  /// Encoders and region block: frozen during RL.
  NamedTensors extractor_params() const;
  /// VTrans, decoder and disease head.
  NamedTensors generator_params() const;
  NamedTensors named() const;

  /// Independent deep copy (no shared storage).
  ModelState clone() const;
  void zero_grad();
};

/// Copies values between structurally identical models.
void copy_parameters(const ModelState& from, ModelState& to);
bool parameters_equal(const ModelState& a, const ModelState& b);

struct VisualFeatures {
  Tensor global;   // F_global, 1×D
  Tensor regions;  // F_region, K×D
};

/// K×D text features of the region descriptions.
Tensor encode_prompt_features(const ModelState& model);
VisualFeatures extract_visual(const ModelState& model, const Image& image, const Tensor& prompt_features);
MultimodalPrompt prompt_from_visual(const ModelState& model, const VisualFeatures& visual);

}  // namespace rrg
