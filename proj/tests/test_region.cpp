#include <doctest.h>

#include "rrg/region_extractor.h"

using namespace rrg;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(std::move(s));
  for (double& v : t.mutable_data()) v = rng.normal(0.0, 1.0);
  return t;
}

void zero_branches(RegionRepeat& r) {
  zero_tensor(r.cross.output.weight);
  zero_tensor(r.cross.output.bias);
  zero_tensor(r.self.output.weight);
  zero_tensor(r.self.output.bias);
  zero_tensor(r.ffn.down.weight);
  zero_tensor(r.ffn.down.bias);
}

// LN → single-key cross attention → output projection, written out by hand.
Tensor manual_cross(const Tensor& f, const Tensor& ft_row, const RegionRepeat& r) {
  const Tensor v = r.cross.value(ft_row);  // the only key, weight exactly 1
  const Tensor o = r.cross.output(v);
  return ops::add(f, ops::tile_rows(o, f.rows()));
}

}  // namespace

TEST_CASE("zeroed branches make the region block an exact identity") {
  Rng rng(4);
  auto rep = RegionRepeat::init(8, 2, rng);
  zero_branches(rep);
  const Tensor f = random_tensor({6, 8}, 1), ft = random_tensor({2, 8}, 2);
  const Tensor out = region_block_forward(f, ft, rep, 2, 2);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(out[i] == f[i]);
}

TEST_CASE("cross attention over one prompt row is that row's projected value") {
  Rng rng(5);
  auto rep = RegionRepeat::init(8, 2, rng);
  // Keep only the CA branch.
  zero_tensor(rep.self.output.weight);
  zero_tensor(rep.self.output.bias);
  zero_tensor(rep.ffn.down.weight);
  zero_tensor(rep.ffn.down.bias);
  const Tensor f = random_tensor({3, 8}, 3), ft = random_tensor({1, 8}, 4);
  const Tensor got = region_block_forward(f, ft, rep, 2, 1);
  const Tensor want = manual_cross(f, ft, rep);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
}

TEST_CASE("batched groups equal separate per-region passes") {
  Rng rng(6);
  const auto p = RegionBlockParams::init(8, 2, 2, 2, rng);
  const Tensor fi = random_tensor({5, 8}, 7), prompts = random_tensor({3, 8}, 8);
  const Tensor batched = extract_region_features(fi, prompts, p);
  REQUIRE(batched.shape() == Shape{3, 8});
  for (std::size_t k = 0; k < 3; ++k) {
    const Tensor single = extract_region_features(fi, ops::slice_rows(prompts, k, 1), p);
    for (std::size_t c = 0; c < 8; ++c) CHECK(batched.at(k, c) == doctest::Approx(single.at(0, c)).epsilon(1e-13));
  }
  // Different prompts give different region features.
  CHECK(batched.at(0, 0) != batched.at(1, 0));
}

TEST_CASE("global feature is the token mean") {
  const Tensor fi = Tensor::from({2, 2}, {1, 2, 3, 6});
  const Tensor g = global_feature(fi);
  CHECK(g.at(0, 0) == 2.0);
  CHECK(g.at(0, 1) == 4.0);
}

TEST_CASE("region block rejects mismatched prompt rows") {
  Rng rng(9);
  const auto rep = RegionRepeat::init(4, 2, rng);
  CHECK_THROWS(region_block_forward(random_tensor({4, 4}, 1), random_tensor({3, 4}, 2), rep, 1, 2));
}
