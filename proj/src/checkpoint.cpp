#include "rrg/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rrg/errors.h"

namespace rrg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[6] = {'L', 'M', 'R', 'R', 'G', '1'};

class Writer {
 public:
  template <class T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : b_(bytes), origin_(std::move(origin)) {}
  template <class T>
  T pod(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(const char* what) {
    const auto n = pod<std::uint32_t>(what);
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n)
      fail(std::string("truncated while reading ") + what + " (need " + std::to_string(n) + " bytes, " +
           std::to_string(b_.size() - pos_) + " left)");
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw DataError(origin_ + ": offset " + std::to_string(pos_) + ": " + msg);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }
  const char* at() const { return b_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  const std::string& b_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_bytes(const Config& config, const ModelState& model,
                             const std::optional<RadCliqWeights>& weights) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.pod(kCheckpointVersion);
  Config snapshot = config;
  snapshot.model = model.config;
  w.str(snapshot.to_text());
  w.pod(static_cast<std::uint8_t>(weights.has_value()));
  const RadCliqWeights rw = weights.value_or(RadCliqWeights{});
  w.pod(rw.intercept);
  for (double c : rw.coef) w.pod(c);
  w.pod(static_cast<std::uint32_t>(model.vocab.size()));
  for (const auto& t : model.vocab.tokens()) w.str(t);
  w.pod(static_cast<std::uint32_t>(model.regions.size()));
  for (const auto& r : model.regions) {
    w.str(r.name);
    w.str(r.description);
  }
  const auto params = model.named();
  w.pod(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.str(name);
    w.pod(static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) w.pod(static_cast<std::uint64_t>(d));
    w.pod(static_cast<std::uint64_t>(t.size()));
  }
  for (const auto& [name, t] : params)
    for (double v : t.data()) w.pod(static_cast<float>(v));
  return w.take();
}

void save_checkpoint(const std::filesystem::path& path, const Config& config, const ModelState& model,
                     const std::optional<RadCliqWeights>& weights) {
  const std::string bytes = checkpoint_bytes(config, model, weights);
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  r.need(sizeof kMagic, "magic");
  if (std::memcmp(r.at(), kMagic, sizeof kMagic) != 0) r.fail("bad magic (not an LMRRG1 checkpoint)");
  r.skip(sizeof kMagic);
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));

  Checkpoint ck;
  try {
    ck.config = Config::parse(r.str("config"));
  } catch (const ConfigError& e) {
    r.fail(std::string("embedded config: ") + e.what());
  }
  const bool has_weights = r.pod<std::uint8_t>("weights flag") != 0;
  RadCliqWeights rw;
  rw.intercept = r.pod<double>("weights");
  for (double& c : rw.coef) c = r.pod<double>("weights");
  if (has_weights) ck.weights = rw;

  const auto vn = r.pod<std::uint32_t>("vocabulary size");
  std::vector<std::string> tokens;
  for (std::uint32_t i = 0; i < vn; ++i) tokens.push_back(r.str("vocabulary"));
  if (tokens.size() < kReservedTokens || tokens[kPad] != "[PAD]" || tokens[kBos] != "[BOS]" ||
      tokens[kEos] != "[EOS]" || tokens[kUnk] != "[UNK]")
    r.fail("vocabulary lacks the reserved tokens");
  Vocabulary vocab(std::vector<std::string>(tokens.begin() + kReservedTokens, tokens.end()));

  const auto kn = r.pod<std::uint32_t>("region count");
  std::vector<RegionDescription> regions;
  for (std::uint32_t i = 0; i < kn; ++i) {
    RegionDescription d;
    d.name = r.str("region name");
    d.description = r.str("region description");
    regions.push_back(std::move(d));
  }

  try {
    ck.model = ModelState::init(ck.config.model, std::move(vocab), std::move(regions), 0);
  } catch (const std::exception& e) {
    r.fail(std::string("header does not describe a valid model: ") + e.what());
  }
  auto params = ck.model.named();
  const auto tn = r.pod<std::uint32_t>("tensor count");
  if (tn != params.size())
    r.fail("manifest lists " + std::to_string(tn) + " tensors, architecture has " + std::to_string(params.size()));
  std::uint64_t total = 0;
  for (auto& [name, t] : params) {
    const std::string got = r.str("tensor name");
    if (got != name) r.fail("manifest entry '" + got + "' where '" + name + "' was expected");
    const auto nd = r.pod<std::uint32_t>("tensor rank");
    Shape shape;
    for (std::uint32_t i = 0; i < nd; ++i) shape.push_back(r.pod<std::uint64_t>("tensor dims"));
    const auto count = r.pod<std::uint64_t>("tensor count");
    if (shape != t.shape() || count != t.size())
      r.fail("tensor " + name + " has shape " + shape_str(shape) + " / count " + std::to_string(count) +
             ", expected " + shape_str(t.shape()));
    total += count;
  }
  if (r.remaining() != total * sizeof(float))
    r.fail("payload holds " + std::to_string(r.remaining()) + " bytes, manifest requires " +
           std::to_string(total * sizeof(float)));
  for (auto& [name, t] : params)
    for (double& v : t.mutable_data()) v = static_cast<double>(r.pod<float>("payload"));
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path.string());
}

}  // namespace rrg
