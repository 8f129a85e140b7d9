#include "rrg/corpus.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "rrg/errors.h"
#include "rrg/rng.h"
#include "rrg/vocab.h"

namespace rrg {

namespace grammar {

const std::vector<Finding>& findings() {
  static const std::vector<Finding> f{
      {"pneumothorax", {0, 1}},    {"consolidation", {0, 1}},  {"cardiomegaly", {2}},
      {"pleural effusion", {3, 4}}, {"fracture", {5}},
  };
  return f;
}

const std::vector<std::string>& region_words() {
  static const std::vector<std::string> r{"right lung",          "left lung",
                                          "cardiac silhouette",  "right costophrenic angle",
                                          "left costophrenic angle", "spine"};
  return r;
}

const std::array<std::string, 3>& severity_words() {
  static const std::array<std::string, 3> s{"mild", "moderate", "severe"};
  return s;
}

std::string render(const ReportSpec& spec) {
  std::string out;
  bool any_positive = false;
  auto sentence = [&](const std::string& s) {
    if (!out.empty()) out += ' ';
    out += s;
  };
  for (std::size_t i = 0; i < kGrammarLabels; ++i) {
    const auto& st = spec.labels[i];
    const auto& name = findings()[i].name;
    if (st.mention == Mention::kPositive) {
      any_positive = true;
      sentence(severity_words()[st.severity] + " " + name + " is seen in the " + region_words()[st.region] + " .");
    } else if (st.mention == Mention::kNegated) {
      sentence("no " + name + " .");
    }
  }
  if (!any_positive) sentence(kNormalStatement);
  return normalize_text(out);
}

LabelVector labels_of(const ReportSpec& spec) {
  LabelVector v(kGrammarLabels, 0);
  for (std::size_t i = 0; i < kGrammarLabels; ++i) v[i] = spec.labels[i].mention == Mention::kPositive;
  return v;
}

std::vector<EntityTriple> triples_of(const ReportSpec& spec) {
  std::vector<EntityTriple> out;
  for (std::size_t i = 0; i < kGrammarLabels; ++i) {
    const auto& st = spec.labels[i];
    if (st.mention == Mention::kPositive)
      out.push_back({findings()[i].name, region_words()[st.region], true});
    else if (st.mention == Mention::kNegated)
      out.push_back({findings()[i].name, "", false});
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

struct Mentioned {
  std::size_t label;
  std::string region;
  bool positive;
};

std::vector<std::vector<std::string>> phrases_of(const std::vector<std::string>& names) {
  std::vector<std::vector<std::string>> out;
  for (const auto& n : names) out.push_back(split_words(n));
  return out;
}

// Longest phrase starting at word i, or npos.
std::size_t match_at(const std::vector<std::string>& words, std::size_t i,
                     const std::vector<std::vector<std::string>>& phrases) {
  std::size_t best = std::string::npos, best_len = 0;
  for (std::size_t p = 0; p < phrases.size(); ++p) {
    const auto& ph = phrases[p];
    if (ph.size() <= best_len || i + ph.size() > words.size()) continue;
    if (std::equal(ph.begin(), ph.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) {
      best = p;
      best_len = ph.size();
    }
  }
  return best;
}

std::vector<Mentioned> parse_mentions(const std::string& report) {
  static const auto finding_phrases = [] {
    std::vector<std::string> names;
    for (const auto& f : findings()) names.push_back(f.name);
    return phrases_of(names);
  }();
  static const auto region_phrases = phrases_of(region_words());

  const auto words = split_words(report);
  std::vector<Mentioned> out;
  std::size_t begin = 0;
  while (begin < words.size()) {
    std::size_t end = begin;
    while (end < words.size() && words[end] != ".") ++end;
    bool negated = false;
    std::size_t label = std::string::npos, region = std::string::npos;
    for (std::size_t i = begin; i < end; ++i) {
      if (words[i] == "no" || words[i] == "without") negated = true;
      if (label == std::string::npos) label = match_at(words, i, finding_phrases);
      if (region == std::string::npos) region = match_at(words, i, region_phrases);
    }
    if (label != std::string::npos) {
      const std::string r = negated || region == std::string::npos ? "" : region_words()[region];
      out.push_back({label, r, !negated});
    }
    begin = end + 1;
  }
  return out;
}

}  // namespace

LabelVector parse_labels(const std::string& report) {
  LabelVector v(kGrammarLabels, 0);
  std::vector<int> negated(kGrammarLabels, 0);
  for (const auto& m : parse_mentions(report)) (m.positive ? v[m.label] : negated[m.label]) = 1;
  for (std::size_t i = 0; i < kGrammarLabels; ++i)
    if (negated[i]) v[i] = 0;
  return v;
}

std::vector<EntityTriple> parse_triples(const std::string& report) {
  std::set<EntityTriple> s;
  for (const auto& m : parse_mentions(report)) s.insert({findings()[m.label].name, m.region, m.positive});
  return {s.begin(), s.end()};
}

}  // namespace grammar

using grammar::LabelState;
using grammar::Mention;
using grammar::ReportSpec;

namespace {

struct Point {
  double x, y;
};

// Motif centres on a 64×64 canvas, per label and region.
Point motif_center(std::size_t label, std::size_t region) {
  switch (label) {
    case 0: return region == 0 ? Point{16, 16} : Point{48, 16};
    case 1: return region == 0 ? Point{18, 36} : Point{46, 36};
    case 2: return {34, 46};
    case 3: return region == 3 ? Point{9, 56} : Point{55, 56};
    default: return {32, 8};
  }
}

double motif_sigma(std::size_t label, std::size_t severity) {
  static const double base[3] = {1.5, 2.5, 3.5};
  return base[severity] * (label == 2 ? 2.0 : 1.0);
}

bool inside_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
  const double dx = (x - cx) / rx, dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace

Image render_image(const ReportSpec& spec, std::size_t size, double noise, std::uint64_t seed) {
  Image img{size, size, std::vector<double>(size * size)};
  const double s = static_cast<double>(size) / 64.0;
  Rng rng(seed);
  std::vector<Point> centers(kGrammarLabels);
  for (std::size_t i = 0; i < kGrammarLabels; ++i) {
    const auto& st = spec.labels[i];
    const Point c = motif_center(i, st.region);
    centers[i] = {c.x + rng.uniform(-2.0, 2.0), c.y + rng.uniform(-2.0, 2.0)};
  }
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / s, v = (static_cast<double>(y) + 0.5) / s;
      double val = 0.35;
      if (inside_ellipse(u, v, 18, 30, 11, 20) || inside_ellipse(u, v, 46, 30, 11, 20)) val = 0.2;
      if (std::abs(u - 32) < 3) val = 0.55;
      if (inside_ellipse(u, v, 34, 46, 8, 6)) val = 0.5;
      for (std::size_t i = 0; i < kGrammarLabels; ++i) {
        const auto& st = spec.labels[i];
        if (st.mention != Mention::kPositive) continue;
        const double sg = motif_sigma(i, st.severity);
        const double dx = u - centers[i].x, dy = v - centers[i].y;
        val += 0.5 * std::exp(-(dx * dx + dy * dy) / (2 * sg * sg));
      }
      val += rng.normal(0.0, noise);
      val = std::clamp(val, 0.0, 1.0);
      img.pixels[y * size + x] = std::round(val * 255.0) / 255.0;
    }
  return img;
}

Sample gen_sample(std::uint64_t seed, const ModelConfig& model, const DataConfig& data) {
  if (model.labels != kGrammarLabels)
    throw std::invalid_argument("the report grammar defines " + std::to_string(kGrammarLabels) + " labels, config asks for " +
                                std::to_string(model.labels));
  if (model.image_size == 0) throw std::invalid_argument("image size must be positive");
  Rng rng(seed);
  Sample s;
  for (std::size_t i = 0; i < kGrammarLabels; ++i) {
    auto& st = s.spec.labels[i];
    const auto& regions = grammar::findings()[i].regions;
    if (rng.bernoulli(data.prevalence)) {
      st.mention = Mention::kPositive;
      st.region = regions[rng.below(regions.size())];
      st.severity = rng.below(3);
    } else {
      st.mention = rng.bernoulli(data.negation_prob) ? Mention::kNegated : Mention::kNone;
      st.region = regions[0];
    }
  }
  s.report = grammar::render(s.spec);
  s.labels = grammar::labels_of(s.spec);
  s.image = render_image(s.spec, model.image_size, data.noise, mix_seed(seed, 1));
  return s;
}

Sample corrupt_sample(const Sample& sample, std::size_t n_errors, std::uint64_t seed) {
  if (n_errors == 0 || n_errors > kGrammarLabels)
    throw std::invalid_argument("corrupt_sample: " + std::to_string(n_errors) + " edits requested, " +
                                std::to_string(kGrammarLabels) + " editable units available");
  Rng rng(seed);
  std::vector<std::size_t> units(kGrammarLabels);
  for (std::size_t i = 0; i < units.size(); ++i) units[i] = i;
  for (std::size_t i = units.size(); i > 1; --i) std::swap(units[i - 1], units[rng.below(i)]);

  Sample out = sample;
  const auto& regions = grammar::region_words();
  for (std::size_t e = 0; e < n_errors; ++e) {
    const std::size_t label = units[e];
    LabelState& st = out.spec.labels[label];
    const auto& own = grammar::findings()[label].regions;
    switch (st.mention) {
      case Mention::kPositive: {
        const auto edit = rng.below(3);
        if (edit == 0) {
          st.mention = Mention::kNegated;
        } else if (edit == 1) {
          st.mention = Mention::kNone;
        } else {
          const std::size_t shift = 1 + rng.below(regions.size() - 1);
          st.region = (st.region + shift) % regions.size();
        }
        break;
      }
      case Mention::kNegated:
        if (rng.below(2) == 0) {
          st.mention = Mention::kNone;
          break;
        }
        [[fallthrough]];
      case Mention::kNone:
        st.mention = Mention::kPositive;
        st.region = own[rng.below(own.size())];
        st.severity = rng.below(3);
        break;
    }
  }
  out.report = grammar::render(out.spec);
  out.labels = grammar::labels_of(out.spec);
  out.corruption_count = n_errors;
  return out;
}

SplitCounts split_counts(std::size_t n, const DataConfig& data) {
  SplitCounts c;
  c.train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * data.train_ratio));
  c.val = std::min(n - std::min(n, c.train),
                   static_cast<std::size_t>(std::llround(static_cast<double>(n) * data.val_ratio)));
  c.train = std::min(c.train, n);
  c.test = n - c.train - c.val;
  return c;
}

std::string label_bits(const LabelVector& labels) {
  std::string s;
  for (int v : labels) s += v ? '1' : '0';
  return s;
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::string bytes(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0)));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing image " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read image " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
      } else {
        t += c;
      }
    }
    return t;
  };
  if (token() != "P5") throw DataError(path.string() + ": not a binary PGM (P5) file");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PGM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw DataError(path.string() + ": unsupported PGM header");
  std::string bytes(w * h, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size())
    throw DataError(path.string() + ": truncated PGM payload");
  Image img{h, w, std::vector<double>(w * h)};
  for (std::size_t i = 0; i < bytes.size(); ++i)
    img.pixels[i] = static_cast<double>(static_cast<unsigned char>(bytes[i])) / static_cast<double>(maxval);
  return img;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

SplitCounts gen_corpus(const std::filesystem::path& out, std::size_t n, std::uint64_t seed, const ModelConfig& model,
                       const DataConfig& data) {
  if (n == 0) throw std::invalid_argument("gen_corpus: n must be positive");
  if (std::abs(data.train_ratio + data.val_ratio + data.test_ratio - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");
  const SplitCounts target = split_counts(n, data);
  std::error_code ec;
  std::filesystem::create_directories(out / "images", ec);
  if (ec) throw IoError("cannot create " + (out / "images").string() + ": " + ec.message());

  // Interleave splits so each stays proportional along the index order.
  const std::size_t want[3] = {target.train, target.val, target.test};
  std::size_t have[3] = {0, 0, 0};
  static const char* names[3] = {"train", "val", "test"};
  std::ostringstream manifests[3];
  std::map<std::string, int> owner;
  std::vector<Sample> train_samples;

  for (std::size_t i = 0; i < n; ++i) {
    int split = -1;
    double best = -1e300;
    for (int s = 0; s < 3; ++s) {
      if (have[s] >= want[s]) continue;
      const double deficit = static_cast<double>(want[s]) * static_cast<double>(i + 1) / static_cast<double>(n) -
                             static_cast<double>(have[s]);
      if (deficit > best) {
        best = deficit;
        split = s;
      }
    }
    Sample sample;
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt > 100000) throw std::runtime_error("gen_corpus: cannot draw a report unique to split " +
                                                     std::string(names[split]));
      sample = gen_sample(mix_seed(mix_seed(seed, i), attempt), model, data);
      const auto it = owner.find(sample.report);
      if (it == owner.end()) {
        owner.emplace(sample.report, split);
        break;
      }
      if (it->second == split) break;
    }
    char name[64];
    std::snprintf(name, sizeof name, "images/%s_%05zu.pgm", names[split], have[split]);
    write_pgm(out / name, sample.image);
    manifests[split] << name << '\t' << sample.report << '\t' << label_bits(sample.labels) << '\t'
                     << sample.corruption_count << '\n';
    if (split == 0) train_samples.push_back(sample);
    ++have[split];
  }
  for (int s = 0; s < 3; ++s) write_text(out / (std::string(names[s]) + ".tsv"), manifests[s].str());

  // Fitting set: corrupted copies of training reports with 0..C edits.
  std::ostringstream fit;
  const std::vector<Sample>& pool = train_samples;
  for (std::size_t i = 0; i < data.fit_pairs && !pool.empty(); ++i) {
    const Sample& ref = pool[mix_seed(seed, 0xf17 + i) % pool.size()];
    const std::size_t count = i % (kGrammarLabels + 1);
    const std::string cand = count == 0 ? ref.report : corrupt_sample(ref, count, mix_seed(seed, 0xc0 + i)).report;
    fit << ref.report << '\t' << cand << '\t' << count << '\n';
  }
  write_text(out / "fit.tsv", fit.str());
  return {have[0], have[1], have[2]};
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> f;
  std::size_t b = 0;
  for (;;) {
    const auto t = line.find('\t', b);
    f.push_back(line.substr(b, t == std::string::npos ? std::string::npos : t - b));
    if (t == std::string::npos) break;
    b = t + 1;
  }
  return f;
}

std::size_t parse_count(const std::string& s, const std::string& where) {
  std::size_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw DataError(where + ": bad count '" + s + "'");
  return v;
}

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path, std::size_t labels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto f = split_tabs(line);
    if (f.size() != 4) throw DataError(where + ": expected 4 tab-separated columns");
    ManifestEntry e;
    e.image_path = path.parent_path() / f[0];
    e.report = f[1];
    if (f[2].size() != labels)
      throw DataError(where + ": label_bits has " + std::to_string(f[2].size()) + " labels, config expects " +
                      std::to_string(labels));
    for (char c : f[2]) {
      if (c != '0' && c != '1') throw DataError(where + ": label_bits must be 0/1");
      e.labels.push_back(c == '1');
    }
    e.corruption_count = parse_count(f[3], where);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<FitPair> load_fit_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read fit set " + path.string());
  std::vector<FitPair> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto f = split_tabs(line);
    if (f.size() != 3) throw DataError(where + ": expected reference<TAB>candidate<TAB>count");
    out.push_back({f[0], f[1], parse_count(f[2], where)});
  }
  return out;
}

}  // namespace rrg
