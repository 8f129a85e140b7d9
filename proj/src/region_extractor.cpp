#include "rrg/region_extractor.h"

namespace rrg {

RegionRepeat RegionRepeat::init(std::size_t dim, std::size_t ffn_mult, Rng& rng) {
  RegionRepeat r;
  r.ln_ca = LayerNorm::init(dim);
  r.ln_sa = LayerNorm::init(dim);
  r.ln_ffn = LayerNorm::init(dim);
  r.cross = AttentionProj::init(dim, rng);
  r.self = AttentionProj::init(dim, rng);
  r.ffn = FeedForward::init(dim, ffn_mult, rng);
  return r;
}

void RegionRepeat::collect(const std::string& prefix, NamedTensors& out) const {
  ln_ca.collect(prefix + ".ln_ca", out);
  cross.collect(prefix + ".cross", out);
  ln_sa.collect(prefix + ".ln_sa", out);
  self.collect(prefix + ".self", out);
  ln_ffn.collect(prefix + ".ln_ffn", out);
  ffn.collect(prefix + ".ffn", out);
}

RegionBlockParams RegionBlockParams::init(std::size_t dim, std::size_t ffn_mult, std::size_t repeats,
                                          std::size_t heads, Rng& rng) {
  if (repeats == 0) throw std::invalid_argument("region block needs at least one repeat");
  RegionBlockParams p;
  p.heads = heads;
  for (std::size_t i = 0; i < repeats; ++i) p.repeats.push_back(RegionRepeat::init(dim, ffn_mult, rng));
  return p;
}

void RegionBlockParams::collect(const std::string& prefix, NamedTensors& out) const {
  for (std::size_t i = 0; i < repeats.size(); ++i) repeats[i].collect(prefix + ".repeats." + std::to_string(i), out);
}

Tensor region_block_forward(const Tensor& f_in, const Tensor& f_t, const RegionRepeat& params, std::size_t heads,
                            std::size_t groups) {
  if (f_in.cols() != f_t.cols() || f_t.rows() != groups || groups == 0 || f_in.rows() % groups)
    throw ShapeError("region block: F " + shape_str(f_in.shape()) + " and F_T " + shape_str(f_t.shape()) +
                     " do not match " + std::to_string(groups) + " groups");
  const ops::AttentionOptions grouped{.groups = groups, .heads = heads};
  const Tensor ca = ops::add(f_in, params.cross(params.ln_ca(f_in), f_t, grouped));
  const Tensor h = params.ln_sa(ca);
  const Tensor sa = ops::add(ca, params.self(h, h, grouped));
  return ops::add(sa, params.ffn(params.ln_ffn(sa)));
}

Tensor extract_region_features(const Tensor& f_image, const Tensor& prompt_features, const RegionBlockParams& params) {
  const std::size_t k = prompt_features.rows();
  if (k == 0) throw ShapeError("extract_region_features: no region prompts");
  if (prompt_features.cols() != f_image.cols())
    throw ShapeError("extract_region_features: F_I " + shape_str(f_image.shape()) + " vs prompts " +
                     shape_str(prompt_features.shape()));
  // All K regions run as one grouped pass over K stacked copies of F_I.
  Tensor x = ops::tile_rows(f_image, k);
  for (const auto& rep : params.repeats) x = region_block_forward(x, prompt_features, rep, params.heads, k);
  return ops::mean_rows(x, k);
}

Tensor global_feature(const Tensor& f_image) { return ops::mean_rows(f_image); }

}  // namespace rrg
