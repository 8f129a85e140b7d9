#include "rrg/report_generator.h"

#include <cmath>

namespace rrg {

GeneratorParams GeneratorParams::init(std::size_t dim, std::size_t ffn_mult, std::size_t heads,
                                      std::size_t vtrans_layers, std::size_t decoder_layers, std::size_t vocab_size,
                                      std::size_t prompt_rows, std::size_t max_len, std::size_t regions,
                                      std::size_t labels, Rng& rng) {
  GeneratorParams p;
  p.heads = heads;
  p.max_len = max_len;
  for (std::size_t i = 0; i < vtrans_layers; ++i) p.vtrans.push_back(TransformerLayer::init(dim, ffn_mult, rng));
  p.token_embedding = Tensor::zeros({vocab_size, dim}, true);
  for (double& v : p.token_embedding.mutable_data()) v = rng.normal(0.0, 1.0);
  p.positions = Tensor::zeros({prompt_rows + max_len, dim}, true);
  for (double& v : p.positions.mutable_data()) v = rng.normal(0.0, 0.1);
  for (std::size_t i = 0; i < decoder_layers; ++i) p.decoder.push_back(TransformerLayer::init(dim, ffn_mult, rng));
  p.final_norm = LayerNorm::init(dim);
  p.output = Linear::init(dim, vocab_size, rng);
  p.disease_head = Linear::init((1 + regions) * dim, labels, rng);
  return p;
}

void GeneratorParams::collect(const std::string& prefix, NamedTensors& out) const {
  for (std::size_t i = 0; i < vtrans.size(); ++i) vtrans[i].collect(prefix + ".vtrans." + std::to_string(i), out);
  out.emplace_back(prefix + ".token_embedding", token_embedding);
  out.emplace_back(prefix + ".positions", positions);
  for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].collect(prefix + ".decoder." + std::to_string(i), out);
  final_norm.collect(prefix + ".final_norm", out);
  output.collect(prefix + ".output", out);
  disease_head.collect(prefix + ".disease_head", out);
}

VTransOutput vtrans_forward(const Tensor& f_global, const Tensor& f_region, const GeneratorParams& params) {
  if (f_global.rows() != 1 || f_global.cols() != f_region.cols())
    throw ShapeError("vtrans: F_global " + shape_str(f_global.shape()) + " vs F_region " +
                     shape_str(f_region.shape()));
  const std::size_t k = f_region.rows();
  Tensor x = ops::concat_rows({f_global, f_region});
  const ops::AttentionOptions full{.heads = params.heads};
  for (const auto& layer : params.vtrans) x = layer(x, full);
  return {ops::slice_rows(x, 0, 1), ops::slice_rows(x, 1, k)};
}

MultimodalPrompt build_multimodal_prompt(const VTransOutput& visual, std::span<const int> instruction_ids,
                                         const GeneratorParams& params) {
  std::vector<Tensor> parts{visual.global, visual.regions};
  if (!instruction_ids.empty()) parts.push_back(ops::embedding(params.token_embedding, instruction_ids));
  MultimodalPrompt p{ops::concat_rows(parts), visual.regions.rows(), instruction_ids.size()};
  if (p.rows() > params.prompt_capacity())
    throw ShapeError("prompt has " + std::to_string(p.rows()) + " rows, positional table holds " +
                     std::to_string(params.prompt_capacity()));
  return p;
}

Tensor reserved_token_bias(std::size_t vocab_size) {
  Tensor b = Tensor::zeros({vocab_size});
  auto d = b.mutable_data();
  for (int id : {kPad, kBos, kUnk})
    if (static_cast<std::size_t>(id) < vocab_size) d[id] = -1e4;
  return b;
}

Tensor decoder_logits(const MultimodalPrompt& prompt, std::span<const int> prefix, const GeneratorParams& params) {
  if (prefix.empty()) throw ShapeError("decoder_logits: empty prefix");
  if (prefix.size() > params.max_len)
    throw ShapeError("decoder_logits: prefix of " + std::to_string(prefix.size()) + " tokens exceeds M = " +
                     std::to_string(params.max_len));
  const std::size_t p = prompt.rows(), t = prefix.size();
  Tensor x = ops::concat_rows({prompt.features, ops::embedding(params.token_embedding, prefix)});
  x = ops::add(x, ops::slice_rows(params.positions, 0, p + t));
  const ops::AttentionOptions mask{.heads = params.heads, .causal = true, .visible_prefix = p};
  for (const auto& layer : params.decoder) x = layer(x, mask);
  const Tensor y = params.final_norm(ops::slice_rows(x, p, t));
  return ops::add_bias(params.output(y), reserved_token_bias(params.output.weight.cols()));
}

namespace {

void append_rows(std::vector<double>& cache, const Tensor& t) {
  cache.insert(cache.end(), t.data().begin(), t.data().end());
}

}  // namespace

IncrementalDecoder::IncrementalDecoder(const MultimodalPrompt& prompt, const GeneratorParams& params)
    : params_(params), prompt_rows_(prompt.rows()), keys_(params.decoder.size()), values_(params.decoder.size()) {
  const std::size_t p = prompt_rows_;
  Tensor x = ops::add(prompt.features.detach(), ops::slice_rows(params.positions, 0, p));
  const ops::AttentionOptions mask{.heads = params.heads, .causal = true, .visible_prefix = p};
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    const auto& layer = params.decoder[l];
    const Tensor h = layer.ln_attn(x);
    const Tensor k = layer.attn.key(h), v = layer.attn.value(h);
    append_rows(keys_[l], k);
    append_rows(values_[l], v);
    x = ops::add(x, layer.attn.output(ops::attention(layer.attn.query(h), k, v, mask)));
    x = ops::add(x, layer.ffn(layer.ln_ffn(x)));
  }
}

Tensor IncrementalDecoder::step(int token) {
  if (fed_ >= params_.max_len) throw ShapeError("incremental decoder: more than M tokens fed");
  const std::size_t d = params_.token_embedding.cols();
  const int ids[1] = {token};
  Tensor x = ops::add(ops::embedding(params_.token_embedding, ids),
                      ops::slice_rows(params_.positions, prompt_rows_ + fed_, 1));
  const ops::AttentionOptions all{.heads = params_.heads};
  for (std::size_t l = 0; l < params_.decoder.size(); ++l) {
    const auto& layer = params_.decoder[l];
    const Tensor h = layer.ln_attn(x);
    append_rows(keys_[l], layer.attn.key(h));
    append_rows(values_[l], layer.attn.value(h));
    const std::size_t n = keys_[l].size() / d;
    const Tensor k = Tensor::from({n, d}, keys_[l]), v = Tensor::from({n, d}, values_[l]);
    x = ops::add(x, layer.attn.output(ops::attention(layer.attn.query(h), k, v, all)));
    x = ops::add(x, layer.ffn(layer.ln_ffn(x)));
  }
  ++fed_;
  return ops::add_bias(params_.output(params_.final_norm(x)), reserved_token_bias(params_.output.weight.cols()));
}

Report generate_report(const MultimodalPrompt& prompt, const GeneratorParams& params, const Vocabulary& vocab,
                       const DecodeOptions& opt) {
  if (opt.sample && !(opt.temperature > 0.0)) throw std::invalid_argument("sampling temperature must be positive");
  const std::size_t m = opt.max_len == 0 ? params.max_len : std::min(opt.max_len, params.max_len);
  IncrementalDecoder dec(prompt, params);
  Rng rng(opt.seed);
  Report r;
  int token = kBos;
  std::vector<double> z;
  while (r.ids.size() < m) {
    const Tensor logits = dec.step(token);
    const auto l = logits.data();
    const double scale = opt.sample ? 1.0 / opt.temperature : 1.0;
    z.assign(l.size(), 0.0);
    double mx = -INFINITY;
    for (std::size_t i = 0; i < l.size(); ++i) mx = std::max(mx, z[i] = l[i] * scale);
    double total = 0.0;
    for (double& v : z) total += (v = std::exp(v - mx));
    int pick = 0;
    if (opt.sample) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = static_cast<int>(z.size()) - 1;
      for (std::size_t i = 0; i < z.size(); ++i) {
        acc += z[i];
        if (u < acc) {
          pick = static_cast<int>(i);
          break;
        }
      }
      while (z[pick] == 0.0 && pick > 0) --pick;
    } else {
      for (std::size_t i = 1; i < l.size(); ++i)
        if (l[i] > l[pick]) pick = static_cast<int>(i);
    }
    r.ids.push_back(pick);
    r.log_probs.push_back(std::log(z[pick] / total));
    if (pick == kEos) break;
    token = pick;
  }
  r.text = detokenize(r.ids, vocab);
  return r;
}

Tensor disease_classify(const Tensor& f_global, const Tensor& f_region, const GeneratorParams& params) {
  const std::size_t d = f_global.cols();
  if (f_global.rows() != 1 || f_region.cols() != d ||
      (1 + f_region.rows()) * d != params.disease_head.weight.rows())
    throw ShapeError("disease_classify: F_global " + shape_str(f_global.shape()) + ", F_region " +
                     shape_str(f_region.shape()) + " vs head " + shape_str(params.disease_head.weight.shape()));
  const Tensor flat = ops::reshape(ops::concat_rows({f_global, f_region}), {1, (1 + f_region.rows()) * d});
  return params.disease_head(flat);
}

}  // namespace rrg
