#include "grad_suite.h"

#include <algorithm>
#include <cmath>

#include "rrg/grad_check.h"
#include "rrg/region_extractor.h"
#include "rrg/report_generator.h"
#include "rrg/rng.h"

namespace gradsuite {
namespace {

using namespace rrg;

Tensor leaf(Shape shape, Rng& rng, double sd = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.mutable_data()) v = rng.normal(0.0, sd);
  return t;
}

Tensor constant(Shape shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.normal(0.0, 1.0);
  return t;
}

// Random projection to a scalar so every output entry reaches the loss.
Tensor project(const Tensor& y, const Tensor& r) { return ops::sum(ops::mul(y, r)); }

std::vector<Tensor> values(const NamedTensors& named) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

struct Instance {
  std::function<Tensor()> loss;
  std::vector<Tensor> params;
};

using Builder = std::function<Instance(Rng&)>;

struct Case {
  std::string name;
  Builder build;
};

Instance unary(Rng& rng, std::size_t r, std::size_t c, std::function<Tensor(const Tensor&)> op, double sd = 1.0) {
  Tensor x = leaf({r, c}, rng, sd);
  const Tensor probe = op(x.detach());
  Tensor w = constant(probe.shape(), rng);
  return {[=] { return project(op(x), w); }, {x}};
}

Instance binary(Rng& rng, Shape sa, Shape sb, std::function<Tensor(const Tensor&, const Tensor&)> op) {
  Tensor a = leaf(std::move(sa), rng), b = leaf(std::move(sb), rng);
  const Tensor probe = op(a.detach(), b.detach());
  Tensor w = constant(probe.shape(), rng);
  return {[=] { return project(op(a, b), w); }, {a, b}};
}

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

Instance attention_case(Rng& rng, bool causal, std::size_t heads, std::size_t groups) {
  const std::size_t dh = dim(rng, 1, 3), d = dh * heads;
  const std::size_t qr = dim(rng, 1, 4);
  const std::size_t kvr = causal ? qr + dim(rng, 0, 3) : dim(rng, 1, 5);
  ops::AttentionOptions opt{.groups = groups, .heads = heads, .causal = causal};
  if (causal) {
    opt.q_offset = kvr - qr;
    opt.visible_prefix = rng.below(kvr + 1);
  }
  Tensor q = leaf({groups * qr, d}, rng), k = leaf({groups * kvr, d}, rng), v = leaf({groups * kvr, d}, rng);
  Tensor w = constant({groups * qr, d}, rng);
  return {[=] { return project(ops::attention(q, k, v, opt), w); }, {q, k, v}};
}

std::vector<Case> all_cases() {
  std::vector<Case> cs;
  cs.push_back({"matmul", [](Rng& g) {
                  const auto m = dim(g, 1, 5), k = dim(g, 1, 5), n = dim(g, 1, 5);
                  return binary(g, {m, k}, {k, n}, ops::matmul);
                }});
  cs.push_back({"add", [](Rng& g) {
                  const auto r = dim(g, 1, 4), c = dim(g, 1, 4);
                  return binary(g, {r, c}, {r, c}, ops::add);
                }});
  cs.push_back({"sub", [](Rng& g) {
                  const auto r = dim(g, 1, 4), c = dim(g, 1, 4);
                  return binary(g, {r, c}, {r, c}, ops::sub);
                }});
  cs.push_back({"mul", [](Rng& g) {
                  const auto r = dim(g, 1, 4), c = dim(g, 1, 4);
                  return binary(g, {r, c}, {r, c}, ops::mul);
                }});
  cs.push_back({"scale", [](Rng& g) {
                  const double s = g.normal(0.0, 2.0);
                  return unary(g, dim(g, 1, 4), dim(g, 1, 4), [s](const Tensor& x) { return ops::scale(x, s); });
                }});
  cs.push_back({"add_bias", [](Rng& g) {
                  const auto r = dim(g, 1, 4), c = dim(g, 1, 4);
                  return binary(g, {r, c}, {c}, ops::add_bias);
                }});
  cs.push_back({"gelu", [](Rng& g) { return unary(g, dim(g, 1, 4), dim(g, 1, 4), ops::gelu, 2.0); }});
  cs.push_back({"exp", [](Rng& g) { return unary(g, dim(g, 1, 4), dim(g, 1, 4), ops::exp); }});
  cs.push_back({"softmax", [](Rng& g) { return unary(g, dim(g, 1, 4), dim(g, 1, 6), ops::softmax, 2.0); }});
  cs.push_back({"log_softmax", [](Rng& g) { return unary(g, dim(g, 1, 4), dim(g, 1, 6), ops::log_softmax, 2.0); }});
  cs.push_back({"layer_norm", [](Rng& g) {
                  const auto r = dim(g, 1, 4), c = dim(g, 2, 6);
                  Tensor x = leaf({r, c}, g), gain = leaf({c}, g), bias = leaf({c}, g);
                  Tensor w = constant({r, c}, g);
                  return Instance{[=] { return project(ops::layer_norm(x, gain, bias), w); }, {x, gain, bias}};
                }});
  cs.push_back({"attention", [](Rng& g) { return attention_case(g, false, 1, 1); }});
  cs.push_back({"attention_causal", [](Rng& g) { return attention_case(g, true, 1, 1); }});
  cs.push_back({"attention_grouped_multihead", [](Rng& g) { return attention_case(g, g.bernoulli(0.5), 2, 3); }});
  cs.push_back({"concat_rows", [](Rng& g) {
                  const auto c = dim(g, 1, 4);
                  return binary(g, {dim(g, 1, 3), c}, {dim(g, 1, 3), c},
                                [](const Tensor& a, const Tensor& b) { return ops::concat_rows({a, b, a}); });
                }});
  cs.push_back({"slice_rows", [](Rng& g) {
                  const auto r = dim(g, 2, 6);
                  const auto b = g.below(r - 1), n = 1 + g.below(r - b);
                  return unary(g, r, dim(g, 1, 4), [=](const Tensor& x) { return ops::slice_rows(x, b, n); });
                }});
  cs.push_back({"mean_rows", [](Rng& g) {
                  const auto groups = dim(g, 1, 3), per = dim(g, 1, 3);
                  return unary(g, groups * per, dim(g, 1, 4), [=](const Tensor& x) { return ops::mean_rows(x, groups); });
                }});
  cs.push_back({"repeat_rows", [](Rng& g) {
                  const auto t = dim(g, 1, 3);
                  return unary(g, dim(g, 1, 3), dim(g, 1, 4), [=](const Tensor& x) { return ops::repeat_rows(x, t); });
                }});
  cs.push_back({"tile_rows", [](Rng& g) {
                  const auto t = dim(g, 1, 3);
                  return unary(g, dim(g, 1, 3), dim(g, 1, 4), [=](const Tensor& x) { return ops::tile_rows(x, t); });
                }});
  cs.push_back({"reshape", [](Rng& g) {
                  const auto r = dim(g, 1, 4), c = dim(g, 1, 4);
                  return unary(g, r, c, [=](const Tensor& x) { return ops::reshape(x, {1, r * c}); });
                }});
  cs.push_back({"embedding", [](Rng& g) {
                  const auto v = dim(g, 2, 6);
                  std::vector<int> ids(dim(g, 1, 5));
                  for (int& id : ids) id = static_cast<int>(g.below(v));
                  return unary(g, v, dim(g, 1, 4), [=](const Tensor& t) { return ops::embedding(t, ids); });
                }});
  cs.push_back({"gather_cols", [](Rng& g) {
                  const auto r = dim(g, 1, 4), c = dim(g, 1, 5);
                  std::vector<int> idx(r);
                  for (int& i : idx) i = static_cast<int>(g.below(c));
                  return unary(g, r, c, [=](const Tensor& x) { return ops::gather_cols(x, idx); });
                }});
  cs.push_back({"sum", [](Rng& g) {
                  Tensor x = leaf({dim(g, 1, 4), dim(g, 1, 4)}, g);
                  return Instance{[=] { return ops::sum(ops::mul(x, x)); }, {x}};
                }});
  cs.push_back({"mean", [](Rng& g) {
                  Tensor x = leaf({dim(g, 1, 4), dim(g, 1, 4)}, g);
                  return Instance{[=] { return ops::mean(ops::mul(x, x)); }, {x}};
                }});
  cs.push_back({"cross_entropy", [](Rng& g) {
                  const auto r = dim(g, 1, 4), c = dim(g, 2, 6);
                  std::vector<int> t(r);
                  for (int& i : t) i = static_cast<int>(g.below(c));
                  Tensor x = leaf({r, c}, g, 2.0);
                  return Instance{[=] { return ops::cross_entropy_from_logits(x, t); }, {x}};
                }});
  cs.push_back({"bce_with_logits", [](Rng& g) {
                  const auto r = dim(g, 1, 3), c = dim(g, 1, 5);
                  std::vector<double> t(r * c);
                  for (double& v : t) v = g.bernoulli(0.5) ? 1.0 : 0.0;
                  Tensor x = leaf({r, c}, g, 3.0);
                  return Instance{[=] { return ops::bce_with_logits(x, t); }, {x}};
                }});
  cs.push_back({"kl_divergence", [](Rng& g) {
                  const auto r = dim(g, 1, 4), c = dim(g, 2, 6);
                  Tensor x = leaf({r, c}, g, 2.0);
                  Tensor ref = ops::log_softmax(constant({r, c}, g));
                  return Instance{[=] { return ops::kl_divergence(x, ref); }, {x}};
                }});
  cs.push_back({"clipped_surrogate", [](Rng& g) {
                  const auto n = dim(g, 1, 6);
                  const double eps = 0.2;
                  Tensor lp = leaf({n, 1}, g, 0.5);
                  std::vector<double> old(n), adv(n);
                  for (std::size_t i = 0; i < n; ++i) {
                    // Keep the ratio away from the clip kinks, where the
                    // one-sided derivatives differ.
                    double d;
                    do d = g.normal(0.0, 0.3);
                    while (std::abs(std::exp(d) - (1.0 - eps)) < 1e-3 || std::abs(std::exp(d) - (1.0 + eps)) < 1e-3);
                    old[i] = lp[i] - d;
                    adv[i] = g.normal(0.0, 1.0);
                  }
                  return Instance{[=] { return ops::clipped_surrogate(lp, old, adv, eps); }, {lp}};
                }});

  // Composed blocks at tiny widths.
  cs.push_back({"region_block", [](Rng& g) {
                  const std::size_t heads = dim(g, 1, 2), d = 2 * heads, n = dim(g, 1, 3), groups = dim(g, 1, 3);
                  RegionRepeat rep = RegionRepeat::init(d, 2, g);
                  Tensor f_in = leaf({groups * n, d}, g), f_t = leaf({groups, d}, g);
                  Tensor w = constant({groups * n, d}, g);
                  NamedTensors named;
                  rep.collect("rep", named);
                  auto ps = values(named);
                  ps.push_back(f_in);
                  ps.push_back(f_t);
                  return Instance{[=] { return project(region_block_forward(f_in, f_t, rep, heads, groups), w); }, ps};
                }});
  cs.push_back({"region_extractor", [](Rng& g) {
                  const std::size_t d = 4, n = dim(g, 1, 3), k = dim(g, 1, 3);
                  RegionBlockParams p = RegionBlockParams::init(d, 2, 2, 2, g);
                  Tensor f_i = leaf({n, d}, g), prompts = leaf({k, d}, g);
                  Tensor w = constant({k, d}, g);
                  NamedTensors named;
                  p.collect("ext", named);
                  auto ps = values(named);
                  ps.push_back(f_i);
                  ps.push_back(prompts);
                  return Instance{[=] { return project(extract_region_features(f_i, prompts, p), w); }, ps};
                }});
  cs.push_back({"vtrans", [](Rng& g) {
                  const std::size_t d = 4, k = dim(g, 1, 3);
                  GeneratorParams p = GeneratorParams::init(d, 2, 2, 2, 1, 8, 1 + k + 2, 3, k, 2, g);
                  Tensor fg = leaf({1, d}, g), fr = leaf({k, d}, g);
                  Tensor wg = constant({1, d}, g), wr = constant({k, d}, g);
                  NamedTensors named;
                  for (std::size_t i = 0; i < p.vtrans.size(); ++i) p.vtrans[i].collect("v" + std::to_string(i), named);
                  auto ps = values(named);
                  ps.push_back(fg);
                  ps.push_back(fr);
                  return Instance{[=] {
                                    const auto out = vtrans_forward(fg, fr, p);
                                    return ops::add(project(out.global, wg), project(out.regions, wr));
                                  },
                                  ps};
                }});
  cs.push_back({"decoder", [](Rng& g) {
                  const std::size_t d = 4, k = 2, l = 2, v = 9, m = 4;
                  GeneratorParams p = GeneratorParams::init(d, 2, 2, 1, 1, v, 1 + k + l, m, k, 2, g);
                  MultimodalPrompt prompt{leaf({1 + k + l, d}, g), k, l};
                  const std::size_t len = dim(g, 1, m);
                  std::vector<int> prefix(len), targets(len);
                  prefix[0] = kBos;
                  for (std::size_t i = 1; i < len; ++i) prefix[i] = static_cast<int>(kReservedTokens + g.below(v - kReservedTokens));
                  for (int& t : targets) {
                    const auto pick = g.below(v - kReservedTokens + 1);  // [EOS] or a word
                    t = pick == 0 ? kEos : static_cast<int>(kReservedTokens + pick - 1);
                  }
                  NamedTensors named;
                  p.decoder[0].collect("dec", named);
                  p.final_norm.collect("norm", named);
                  p.output.collect("out", named);
                  named.emplace_back("emb", p.token_embedding);
                  named.emplace_back("pos", p.positions);
                  auto ps = values(named);
                  ps.push_back(prompt.features);
                  return Instance{[=] { return ops::cross_entropy_from_logits(decoder_logits(prompt, prefix, p), targets); },
                                  ps};
                }});
  cs.push_back({"disease_head", [](Rng& g) {
                  const std::size_t d = 3, k = dim(g, 1, 3), c = dim(g, 1, 4);
                  GeneratorParams p = GeneratorParams::init(d, 2, 1, 1, 1, 6, 1 + k + 1, 2, k, c, g);
                  Tensor fg = leaf({1, d}, g), fr = leaf({k, d}, g);
                  std::vector<double> t(c);
                  for (double& x : t) x = g.bernoulli(0.5) ? 1.0 : 0.0;
                  NamedTensors named;
                  p.disease_head.collect("head", named);
                  auto ps = values(named);
                  ps.push_back(fg);
                  ps.push_back(fr);
                  return Instance{[=] { return ops::bce_with_logits(disease_classify(fg, fr, p), t); }, ps};
                }});
  return cs;
}

}  // namespace

std::vector<std::string> case_names() {
  std::vector<std::string> out;
  for (const auto& c : all_cases()) out.push_back(c.name);
  return out;
}

std::vector<CaseResult> run(std::size_t instances, double rtol) {
  std::vector<CaseResult> results;
  const auto cases = all_cases();
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    CaseResult r{cases[ci].name, instances, 0, 0.0};
    for (std::size_t s = 0; s < instances; ++s) {
      Rng rng(mix_seed(0x67726164 + ci, s));
      const Instance inst = cases[ci].build(rng);
      const auto reports = finite_difference_check_all(inst.loss, inst.params, rtol);
      bool ok = true;
      for (const auto& rep : reports) {
        ok = ok && rep.passed;
        r.worst_rel_error = std::max(r.worst_rel_error, rep.max_rel_error);
      }
      r.failures += !ok;
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace gradsuite
