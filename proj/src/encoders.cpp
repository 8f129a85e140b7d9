#include "rrg/encoders.h"

#include <fstream>
#include <stdexcept>

#include "rrg/errors.h"

namespace rrg {

EncoderParams EncoderParams::init(const ModelConfig& cfg, std::size_t vocab_size, Rng& rng) {
  EncoderParams p;
  const std::size_t d = cfg.dim;
  p.token_embedding = Tensor::zeros({vocab_size, d}, true);
  for (double& v : p.token_embedding.mutable_data()) v = rng.normal(0.0, 1.0);
  p.text_positions = Tensor::zeros({cfg.text_max_len, d}, true);
  for (double& v : p.text_positions.mutable_data()) v = rng.normal(0.0, 0.1);
  for (std::size_t i = 0; i < cfg.text_layers; ++i) p.text_layers.push_back(TransformerLayer::init(d, cfg.ffn_mult, rng));
  p.patch_projection = Linear::init(cfg.patch_size * cfg.patch_size, d, rng, 4.0);
  p.image_positions = Tensor::zeros({cfg.patches(), d}, true);
  for (double& v : p.image_positions.mutable_data()) v = rng.normal(0.0, 0.1);
  for (std::size_t i = 0; i < cfg.image_layers; ++i) p.image_layers.push_back(TransformerLayer::init(d, cfg.ffn_mult, rng));
  p.patch_size = cfg.patch_size;
  p.heads = cfg.heads;
  return p;
}

void EncoderParams::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".token_embedding", token_embedding);
  out.emplace_back(prefix + ".text_positions", text_positions);
  for (std::size_t i = 0; i < text_layers.size(); ++i)
    text_layers[i].collect(prefix + ".text_layers." + std::to_string(i), out);
  patch_projection.collect(prefix + ".patch_projection", out);
  out.emplace_back(prefix + ".image_positions", image_positions);
  for (std::size_t i = 0; i < image_layers.size(); ++i)
    image_layers[i].collect(prefix + ".image_layers." + std::to_string(i), out);
}

std::vector<RegionDescription> load_region_descriptions(const std::filesystem::path& path,
                                                        std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read region descriptions " + path.string());
  std::vector<RegionDescription> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": expected region_name<TAB>description");
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  if (out.empty()) throw DataError(path.string() + ": no region descriptions");
  if (expected != 0 && out.size() != expected)
    throw DataError(path.string() + ": expected " + std::to_string(expected) + " regions, found " + std::to_string(out.size()));
  return out;
}

void save_region_descriptions(const std::filesystem::path& path, const std::vector<RegionDescription>& regions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write region descriptions " + path.string());
  for (const auto& r : regions) out << r.name << '\t' << r.description << '\n';
}

Tensor encode_text_ids(std::span<const int> ids, const EncoderParams& params) {
  if (ids.empty()) throw std::invalid_argument("encode_text: no tokens to encode");
  const std::size_t n = std::min(ids.size(), params.text_positions.rows());
  const auto used = ids.first(n);
  Tensor x = ops::add(ops::embedding(params.token_embedding, used), ops::slice_rows(params.text_positions, 0, n));
  const ops::AttentionOptions full{.heads = params.heads};
  for (const auto& layer : params.text_layers) x = layer(x, full);
  return ops::mean_rows(x);
}

Tensor encode_text(std::string_view text, const Vocabulary& vocab, const EncoderParams& params) {
  const auto ids = tokenize(text, vocab);
  if (ids.empty()) throw std::invalid_argument("encode_text: text is empty after tokenization");
  return encode_text_ids(ids, params);
}

Tensor encode_region_prompts(const std::vector<RegionDescription>& regions, const Vocabulary& vocab,
                             const EncoderParams& params) {
  std::vector<Tensor> rows;
  rows.reserve(regions.size());
  for (const auto& r : regions) rows.push_back(encode_text(r.description, vocab, params));
  return ops::concat_rows(rows);
}

std::vector<RegionPrompt> make_region_prompts(const std::vector<RegionDescription>& regions,
                                              const Vocabulary& vocab, const EncoderParams& params) {
  std::vector<RegionPrompt> out;
  for (const auto& r : regions) out.push_back({r.name, r.description, encode_text(r.description, vocab, params)});
  return out;
}

Tensor image_to_patches(const Image& image, std::size_t patch_size) {
  const std::size_t p = patch_size;
  if (p == 0 || image.height % p || image.width % p || image.height == 0 || image.width == 0)
    throw std::invalid_argument("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                " is not divisible into " + std::to_string(p) + "x" + std::to_string(p) + " patches");
  if (image.pixels.size() != image.height * image.width)
    throw std::invalid_argument("image pixel buffer does not match its dimensions");
  const std::size_t gh = image.height / p, gw = image.width / p;
  std::vector<double> patches(gh * gw * p * p);
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      double* dst = patches.data() + (py * gw + px) * p * p;
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) dst[y * p + x] = image.at(py * p + y, px * p + x);
    }
  return Tensor::from({gh * gw, p * p}, std::move(patches));
}

Tensor encode_image_patches(const Image& image, const EncoderParams& params) {
  const Tensor patches = image_to_patches(image, params.patch_size);
  if (patches.rows() != params.image_positions.rows())
    throw std::invalid_argument("image yields " + std::to_string(patches.rows()) + " patches, encoder expects " +
                                std::to_string(params.image_positions.rows()));
  Tensor x = ops::add(params.patch_projection(patches), params.image_positions);
  const ops::AttentionOptions full{.heads = params.heads};
  for (const auto& layer : params.image_layers) x = layer(x, full);
  return x;
}

}  // namespace rrg
