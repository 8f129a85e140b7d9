#include "rrg/model.h"

#include <algorithm>
#include <stdexcept>

namespace rrg {

ModelState ModelState::init(const ModelConfig& config, Vocabulary vocab, std::vector<RegionDescription> regions,
                            std::uint64_t seed) {
  if (regions.size() != config.regions)
    throw std::invalid_argument("model expects " + std::to_string(config.regions) + " region descriptions, got " +
                                std::to_string(regions.size()));
  ModelState m;
  m.config = config;
  m.vocab = std::move(vocab);
  m.regions = std::move(regions);
  m.instruction_ids = tokenize(config.instruction, m.vocab);
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));
  m.encoder = EncoderParams::init(config, m.vocab.size(), rng);
  m.extractor = RegionBlockParams::init(config.dim, config.ffn_mult, config.region_repeats, config.heads, rng);
  const std::size_t prompt_rows = 1 + config.regions + m.instruction_ids.size();
  m.generator = GeneratorParams::init(config.dim, config.ffn_mult, config.heads, config.vtrans_layers,
                                      config.decoder_layers, m.vocab.size(), prompt_rows, config.max_report_len,
                                      config.regions, config.labels, rng);
  return m;
}

NamedTensors ModelState::extractor_params() const {
  NamedTensors out;
  encoder.collect("encoder", out);
  extractor.collect("extractor", out);
  return out;
}

NamedTensors ModelState::generator_params() const {
  NamedTensors out;
  generator.collect("generator", out);
  return out;
}

NamedTensors ModelState::named() const {
  NamedTensors out = extractor_params();
  generator.collect("generator", out);
  return out;
}

void copy_parameters(const ModelState& from, ModelState& to) {
  const auto src = from.named();
  auto dst = to.named();
  if (src.size() != dst.size()) throw std::invalid_argument("copy_parameters: architectures differ");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].first != dst[i].first || src[i].second.shape() != dst[i].second.shape())
      throw std::invalid_argument("copy_parameters: mismatch at " + src[i].first);
    auto d = dst[i].second.mutable_data();
    std::copy(src[i].second.data().begin(), src[i].second.data().end(), d.begin());
  }
}

bool parameters_equal(const ModelState& a, const ModelState& b) {
  const auto x = a.named(), y = b.named();
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i].first != y[i].first || !std::ranges::equal(x[i].second.data(), y[i].second.data())) return false;
  return true;
}

ModelState ModelState::clone() const {
  ModelState m = init(config, vocab, regions, 0);
  copy_parameters(*this, m);
  return m;
}

void ModelState::zero_grad() {
  for (auto& [name, t] : named()) {
    Tensor h = t;
    h.zero_grad();
  }
}

Tensor encode_prompt_features(const ModelState& model) {
  return encode_region_prompts(model.regions, model.vocab, model.encoder);
}

VisualFeatures extract_visual(const ModelState& model, const Image& image, const Tensor& prompt_features) {
  const Tensor f_image = encode_image_patches(image, model.encoder);
  return {global_feature(f_image), extract_region_features(f_image, prompt_features, model.extractor)};
}

MultimodalPrompt prompt_from_visual(const ModelState& model, const VisualFeatures& visual) {
  return build_multimodal_prompt(vtrans_forward(visual.global, visual.regions, model.generator),
                                 model.instruction_ids, model.generator);
}

}  // namespace rrg
