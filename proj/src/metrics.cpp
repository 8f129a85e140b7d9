#include "rrg/metrics.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace rrg {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Ngram, std::size_t> c;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++c[Ngram(t.begin() + i, t.begin() + i + n)];
  return c;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double bleu4(const Tokens& candidate, const Tokens& reference, bool smoothing) {
  if (candidate.empty() || reference.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    std::size_t matches = 0, total = 0;
    for (const auto& [g, c] : cand) {
      total += c;
      const auto it = ref.find(g);
      if (it != ref.end()) matches += std::min(c, it->second);
    }
    double p;
    if (smoothing && n > 1)
      p = (static_cast<double>(matches) + 1.0) / (static_cast<double>(total) + 1.0);
    else
      p = total == 0 ? 0.0 : static_cast<double>(matches) / static_cast<double>(total);
    if (p == 0.0) return 0.0;
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(candidate.size()), r = static_cast<double>(reference.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / 4.0);
}

double rouge_l(const Tokens& candidate, const Tokens& reference, double beta) {
  if (candidate.empty() && reference.empty()) return 1.0;
  const std::size_t lcs = lcs_length(candidate, reference);
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(reference.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

double meteor_simple(const Tokens& candidate, const Tokens& reference, double alpha) {
  // align[i] = reference index of candidate token i, or -1.
  std::map<std::string, std::vector<std::size_t>> positions;
  for (std::size_t j = 0; j < reference.size(); ++j) positions[reference[j]].push_back(j);
  std::map<std::string, std::size_t> seen;
  std::vector<long> align(candidate.size(), -1);
  std::size_t m = 0;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    const auto it = positions.find(candidate[i]);
    const std::size_t k = seen[candidate[i]]++;
    if (it != positions.end() && k < it->second.size()) {
      align[i] = static_cast<long>(it->second[k]);
      ++m;
    }
  }
  if (m == 0) return 0.0;
  std::size_t chunks = 0;
  long prev = -2;
  bool in_chunk = false;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (align[i] < 0) {
      in_chunk = false;
      continue;
    }
    if (!in_chunk || align[i] != prev + 1) ++chunks;
    in_chunk = true;
    prev = align[i];
  }
  const double p = static_cast<double>(m) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(m) / static_cast<double>(reference.size());
  const double f = p * r / (alpha * p + (1.0 - alpha) * r);
  const double frag = static_cast<double>(chunks) / static_cast<double>(m);
  return f * (1.0 - 0.5 * frag * frag * frag);
}

LabelVector extract_labels(const std::string& report) { return grammar::parse_labels(report); }

double entity_f1(const std::string& candidate, const std::string& reference) {
  const auto a = grammar::parse_triples(candidate), b = grammar::parse_triples(reference);
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  std::vector<EntityTriple> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  return 2.0 * static_cast<double>(common.size()) / static_cast<double>(a.size() + b.size());
}

PRF ce_prf(const std::vector<LabelVector>& predicted, const std::vector<LabelVector>& truth) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("ce_prf: " + std::to_string(predicted.size()) + " predictions vs " +
                                std::to_string(truth.size()) + " references");
  PRF sum;
  for (std::size_t e = 0; e < predicted.size(); ++e) {
    if (predicted[e].size() != truth[e].size()) throw std::invalid_argument("ce_prf: label vector lengths differ");
    std::size_t tp = 0, np = 0, nt = 0;
    for (std::size_t i = 0; i < truth[e].size(); ++i) {
      np += predicted[e][i] != 0;
      nt += truth[e][i] != 0;
      tp += predicted[e][i] != 0 && truth[e][i] != 0;
    }
    if (np == 0 && nt == 0) {
      sum.precision += 1.0;
      sum.recall += 1.0;
      sum.f1 += 1.0;
    } else if (np != 0 && nt != 0) {
      const double p = static_cast<double>(tp) / static_cast<double>(np);
      const double r = static_cast<double>(tp) / static_cast<double>(nt);
      sum.precision += p;
      sum.recall += r;
      sum.f1 += p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    }
  }
  if (predicted.empty()) return sum;
  const double n = static_cast<double>(predicted.size());
  return {sum.precision / n, sum.recall / n, sum.f1 / n};
}

std::vector<double> TextEmbedder::embed(const std::string& text) const {
  {
    std::lock_guard lock(mu_);
    const auto it = cache_.find(text);
    if (it != cache_.end()) return it->second;
  }
  std::vector<double> v;
  const auto ids = tokenize(text, vocab_);
  if (!ids.empty()) {
    const Tensor f = encode_text_ids(ids, encoder_);
    v.assign(f.data().begin(), f.data().end());
  }
  std::lock_guard lock(mu_);
  cache_.emplace(text, v);
  return v;
}

double TextEmbedder::cosine(const std::string& a, const std::string& b) const {
  const auto x = embed(a), y = embed(b);
  if (x.empty() || y.empty()) return 0.0;
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  if (nx == 0.0 || ny == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(nx * ny), -1.0, 1.0);
}

RadCliqComponents component_vector(const std::string& candidate, const std::string& reference,
                                   const TextEmbedder& embedder) {
  RadCliqComponents c;
  c.bleu = bleu4(split_words(candidate), split_words(reference));
  c.embed_sim = candidate == reference && !split_words(candidate).empty() ? 1.0 : embedder.cosine(candidate, reference);
  const auto a = extract_labels(candidate), b = extract_labels(reference);
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
  c.label_sim = 1.0 - static_cast<double>(diff) / static_cast<double>(a.size());
  c.entity_f1 = entity_f1(candidate, reference);
  return c;
}

double radcliq_proxy(const RadCliqComponents& c, const RadCliqWeights& w) {
  const auto x = c.as_array();
  double s = w.intercept;
  for (std::size_t i = 0; i < 4; ++i) s += w.coef[i] * x[i];
  return s;
}

namespace {

// Gaussian elimination with partial pivoting; false when a pivot vanishes.
bool solve(std::array<std::array<double, 5>, 5> a, std::array<double, 5> b, std::array<double, 5>& x) {
  double scale = 0.0;
  for (const auto& row : a)
    for (double v : row) scale = std::max(scale, std::abs(v));
  for (std::size_t c = 0; c < 5; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < 5; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    if (std::abs(a[piv][c]) <= 1e-12 * std::max(scale, 1.0)) return false;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < 5; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < 5; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  for (std::size_t c = 5; c-- > 0;) {
    double s = b[c];
    for (std::size_t k = c + 1; k < 5; ++k) s -= a[c][k] * x[k];
    x[c] = s / a[c][c];
  }
  return true;
}

}  // namespace

RadCliqWeights fit_radcliq_weights(const std::vector<FitObservation>& pairs) {
  if (pairs.size() < 5)
    throw std::invalid_argument("fit_radcliq_weights: need at least 5 observations, got " +
                                std::to_string(pairs.size()));
  std::array<std::array<double, 5>, 5> xtx{};
  std::array<double, 5> xty{};
  for (const auto& p : pairs) {
    const auto c = p.components.as_array();
    const std::array<double, 5> row{1.0, c[0], c[1], c[2], c[3]};
    for (std::size_t i = 0; i < 5; ++i) {
      xty[i] += row[i] * p.error_count;
      for (std::size_t j = 0; j < 5; ++j) xtx[i][j] += row[i] * row[j];
    }
  }
  std::array<double, 5> w{};
  if (!solve(xtx, xty, w)) {
    for (std::size_t i = 0; i < 5; ++i) xtx[i][i] += 1e-6;
    if (!solve(xtx, xty, w)) throw std::invalid_argument("fit_radcliq_weights: design matrix is degenerate");
  }
  return {w[0], {w[1], w[2], w[3], w[4]}};
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  auto row = [&](const char* k, double v) { os << k << ',' << format_double(v) << '\n'; };
  os << "metric,value\n";
  row("bleu4", bleu4);
  row("rouge_l", rouge_l);
  row("meteor", meteor);
  row("ce_precision", ce.precision);
  row("ce_recall", ce.recall);
  row("ce_f1", ce.f1);
  row("radcliq", radcliq);
  row("radcliq_bleu", components.bleu);
  row("radcliq_embed_sim", components.embed_sim);
  row("radcliq_label_sim", components.label_sim);
  row("radcliq_entity_f1", components.entity_f1);
  return os.str();
}

MetricReport evaluate_reports(const std::vector<std::string>& candidates, const std::vector<std::string>& references,
                              const TextEmbedder& embedder, const RadCliqWeights& weights) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("evaluate_reports: candidate and reference counts differ");
  MetricReport m;
  m.count = candidates.size();
  if (candidates.empty()) return m;
  std::vector<LabelVector> pred, truth;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto c = split_words(candidates[i]), r = split_words(references[i]);
    m.bleu4 += bleu4(c, r);
    m.rouge_l += rouge_l(c, r);
    m.meteor += meteor_simple(c, r);
    const auto comp = component_vector(candidates[i], references[i], embedder);
    m.components.bleu += comp.bleu;
    m.components.embed_sim += comp.embed_sim;
    m.components.label_sim += comp.label_sim;
    m.components.entity_f1 += comp.entity_f1;
    m.radcliq += radcliq_proxy(comp, weights);
    pred.push_back(extract_labels(candidates[i]));
    truth.push_back(extract_labels(references[i]));
  }
  const double n = static_cast<double>(candidates.size());
  m.bleu4 /= n;
  m.rouge_l /= n;
  m.meteor /= n;
  m.radcliq /= n;
  m.components.bleu /= n;
  m.components.embed_sim /= n;
  m.components.label_sim /= n;
  m.components.entity_f1 /= n;
  m.ce = ce_prf(pred, truth);
  return m;
}

}  // namespace rrg
