#pragma once

#include <vector>

#include "rrg/layers.h"

namespace rrg {

/// One CA→SA→FFN repeat of the region block.
struct RegionRepeat {
  LayerNorm ln_ca, ln_sa, ln_ffn;
  AttentionProj cross, self;
  FeedForward ffn;

  static RegionRepeat init(std::size_t dim, std::size_t ffn_mult, Rng& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Shared across all K regions; the region enters only through F_T^k.
struct RegionBlockParams {
  std::vector<RegionRepeat> repeats;
  std::size_t heads = 1;

  static RegionBlockParams init(std::size_t dim, std::size_t ffn_mult, std::size_t repeats, std::size_t heads,
                                Rng& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// F_CA = CA(LN(F), F_T) + F;  F_SA = SA(LN(F_CA)) + F_CA;  out = FFN(LN(F_SA)) + F_SA.
///
/// `f_in` holds `groups` stacked blocks of N rows and `f_t` one row per
/// group; block g attends only to row g of `f_t` (the cross-attention
/// therefore has a single key and its weight is exactly 1).
Tensor region_block_forward(const Tensor& f_in, const Tensor& f_t, const RegionRepeat& params,
                            std::size_t heads = 1, std::size_t groups = 1);

/// F_region (K×D): every repeat applied to F_I under each prompt row, then
/// mean-pooled over the N tokens. Rows follow the prompt order.
Tensor extract_region_features(const Tensor& f_image, const Tensor& prompt_features, const RegionBlockParams& params);

/// Mean of the N token rows (1×D).
Tensor global_feature(const Tensor& f_image);

}  // namespace rrg
