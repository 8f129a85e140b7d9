#include "rrg/layers.h"

#include <algorithm>
#include <cmath>

namespace rrg {

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng, double scale) {
  Linear l{Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
  const double stddev = scale / std::sqrt(static_cast<double>(in));
  for (double& w : l.weight.mutable_data()) w = rng.normal(0.0, stddev);
  return l;
}

void Linear::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

LayerNorm LayerNorm::init(std::size_t dim) {
  return LayerNorm{Tensor::filled({dim}, 1.0, true), Tensor::zeros({dim}, true)};
}

void LayerNorm::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

AttentionProj AttentionProj::init(std::size_t dim, Rng& rng) {
  AttentionProj a;
  a.query = Linear::init(dim, dim, rng);
  a.key = Linear::init(dim, dim, rng);
  a.value = Linear::init(dim, dim, rng);
  a.output = Linear::init(dim, dim, rng, 0.5);
  return a;
}

Tensor AttentionProj::operator()(const Tensor& x_q, const Tensor& x_kv, const ops::AttentionOptions& opt) const {
  return output(ops::attention(query(x_q), key(x_kv), value(x_kv), opt));
}

void AttentionProj::collect(const std::string& prefix, NamedTensors& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

FeedForward FeedForward::init(std::size_t dim, std::size_t mult, Rng& rng) {
  return FeedForward{Linear::init(dim, dim * mult, rng), Linear::init(dim * mult, dim, rng, 0.5)};
}

void FeedForward::collect(const std::string& prefix, NamedTensors& out) const {
  up.collect(prefix + ".up", out);
  down.collect(prefix + ".down", out);
}

TransformerLayer TransformerLayer::init(std::size_t dim, std::size_t ffn_mult, Rng& rng) {
  TransformerLayer t;
  t.ln_attn = LayerNorm::init(dim);
  t.ln_ffn = LayerNorm::init(dim);
  t.attn = AttentionProj::init(dim, rng);
  t.ffn = FeedForward::init(dim, ffn_mult, rng);
  return t;
}

Tensor TransformerLayer::operator()(const Tensor& x, const ops::AttentionOptions& opt) const {
  const Tensor h = ln_attn(x);
  const Tensor y = ops::add(x, attn(h, h, opt));
  return ops::add(y, ffn(ln_ffn(y)));
}

void TransformerLayer::collect(const std::string& prefix, NamedTensors& out) const {
  ln_attn.collect(prefix + ".ln_attn", out);
  attn.collect(prefix + ".attn", out);
  ln_ffn.collect(prefix + ".ln_ffn", out);
  ffn.collect(prefix + ".ffn", out);
}

void zero_tensor(Tensor& t) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), 0.0);
}

void zero_residual_branches(TransformerLayer& layer) {
  zero_tensor(layer.attn.output.weight);
  zero_tensor(layer.attn.output.bias);
  zero_tensor(layer.ffn.down.weight);
  zero_tensor(layer.ffn.down.bias);
}

}  // namespace rrg
