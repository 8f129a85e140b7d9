#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rrg/rng.h"
#include "rrg/tensor.h"

namespace rrg {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Parameter tensors are created tracked; `init` draws N(0, scale/sqrt(fan_in)).
struct Linear {
  Tensor weight;  // in×out
  Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng, double scale = 1.0);
  Tensor operator()(const Tensor& x) const { return ops::add_bias(ops::matmul(x, weight), bias); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  static LayerNorm init(std::size_t dim);
  Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gain, bias, 1e-5); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct AttentionProj {
  Linear query, key, value, output;

  static AttentionProj init(std::size_t dim, Rng& rng);
  /// output(attention(query(x_q), key(x_kv), value(x_kv))).
  Tensor operator()(const Tensor& x_q, const Tensor& x_kv, const ops::AttentionOptions& opt) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct FeedForward {
  Linear up, down;

  static FeedForward init(std::size_t dim, std::size_t mult, Rng& rng);
  Tensor operator()(const Tensor& x) const { return down(ops::gelu(up(x))); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Pre-norm residual layer: x + SA(LN(x)), then x + FFN(LN(x)).
struct TransformerLayer {
  LayerNorm ln_attn, ln_ffn;
  AttentionProj attn;
  FeedForward ffn;

  static TransformerLayer init(std::size_t dim, std::size_t ffn_mult, Rng& rng);
  Tensor operator()(const Tensor& x, const ops::AttentionOptions& opt) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Zeroes the attention output projections and FFN second layers so the
/// layer (or stack) is an exact residual identity.
void zero_residual_branches(TransformerLayer& layer);
void zero_tensor(Tensor& t);

}  // namespace rrg
