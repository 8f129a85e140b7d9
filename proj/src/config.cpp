#include "rrg/config.h"

#include "rrg/errors.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

namespace rrg {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

struct Field {
  std::string key;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

#define SIZE_FIELD(KEY, MEMBER)                                                              \
  Field {                                                                                    \
    KEY, [](Config& c, const std::string& v) { c.MEMBER = parse_size(KEY, v); },             \
        [](const Config& c) { return std::to_string(c.MEMBER); }                             \
  }
#define U64_FIELD(KEY, MEMBER)                                                               \
  Field {                                                                                    \
    KEY, [](Config& c, const std::string& v) { c.MEMBER = parse_u64(KEY, v); },              \
        [](const Config& c) { return std::to_string(c.MEMBER); }                             \
  }
#define DOUBLE_FIELD(KEY, MEMBER)                                                            \
  Field {                                                                                    \
    KEY, [](Config& c, const std::string& v) { c.MEMBER = parse_double(KEY, v); },           \
        [](const Config& c) { return format_double(c.MEMBER); }                              \
  }
#define PATH_FIELD(KEY, MEMBER)                                                              \
  Field {                                                                                    \
    KEY, [](Config& c, const std::string& v) { c.MEMBER = v; },                              \
        [](const Config& c) { return c.MEMBER.generic_string(); }                            \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SIZE_FIELD("model.dim", model.dim),
      SIZE_FIELD("model.heads", model.heads),
      SIZE_FIELD("model.image_size", model.image_size),
      SIZE_FIELD("model.patch_size", model.patch_size),
      SIZE_FIELD("model.regions", model.regions),
      SIZE_FIELD("model.labels", model.labels),
      SIZE_FIELD("model.text_layers", model.text_layers),
      SIZE_FIELD("model.image_layers", model.image_layers),
      SIZE_FIELD("model.region_repeats", model.region_repeats),
      SIZE_FIELD("model.vtrans_layers", model.vtrans_layers),
      SIZE_FIELD("model.decoder_layers", model.decoder_layers),
      SIZE_FIELD("model.ffn_mult", model.ffn_mult),
      SIZE_FIELD("model.max_report_len", model.max_report_len),
      SIZE_FIELD("model.text_max_len", model.text_max_len),
      SIZE_FIELD("model.vocab_cap", model.vocab_cap),
      Field{"model.instruction", [](Config& c, const std::string& v) { c.model.instruction = v; },
            [](const Config& c) { return c.model.instruction; }},
      DOUBLE_FIELD("train.lambda", train.lambda),
      DOUBLE_FIELD("train.lr", train.lr),
      SIZE_FIELD("train.batch_size", train.batch_size),
      SIZE_FIELD("train.epochs", train.epochs),
      U64_FIELD("train.seed", train.seed),
      Field{"train.optimizer",
            [](Config& c, const std::string& v) {
              if (v == "adam") c.train.optimizer = OptimizerKind::kAdam;
              else if (v == "sgd") c.train.optimizer = OptimizerKind::kSgd;
              else throw ConfigError("train.optimizer: expected adam or sgd, got '" + v + "'");
            },
            [](const Config& c) { return std::string(c.train.optimizer == OptimizerKind::kAdam ? "adam" : "sgd"); }},
      DOUBLE_FIELD("train.grad_clip", train.grad_clip),
      DOUBLE_FIELD("rl.theta", rl.theta),
      DOUBLE_FIELD("rl.clip_eps", rl.clip_eps),
      DOUBLE_FIELD("rl.temperature", rl.temperature),
      SIZE_FIELD("rl.iterations", rl.iterations),
      SIZE_FIELD("rl.rollouts", rl.rollouts),
      SIZE_FIELD("rl.ppo_epochs", rl.ppo_epochs),
      DOUBLE_FIELD("rl.lr", rl.lr),
      Field{"rl.reward",
            [](Config& c, const std::string& v) {
              if (v == "radcliq") c.rl.reward = RewardKind::kRadCliq;
              else if (v == "bleu4") c.rl.reward = RewardKind::kBleu4;
              else throw ConfigError("rl.reward: expected radcliq or bleu4, got '" + v + "'");
            },
            [](const Config& c) { return std::string(c.rl.reward == RewardKind::kRadCliq ? "radcliq" : "bleu4"); }},
      Field{"rl.lambda_mode",
            [](Config& c, const std::string& v) {
              if (v == "adaptive") c.rl.lambda_mode = LambdaMode::kAdaptive;
              else if (v == "fixed") c.rl.lambda_mode = LambdaMode::kFixed;
              else throw ConfigError("rl.lambda_mode: expected adaptive or fixed, got '" + v + "'");
            },
            [](const Config& c) {
              return std::string(c.rl.lambda_mode == LambdaMode::kAdaptive ? "adaptive" : "fixed");
            }},
      DOUBLE_FIELD("rl.fixed_lambda", rl.fixed_lambda),
      DOUBLE_FIELD("rl.baseline_momentum", rl.baseline_momentum),
      Field{"rl.kl_estimator",
            [](Config& c, const std::string& v) {
              if (v == "full") c.rl.kl_estimator = KlEstimator::kFull;
              else if (v == "sampled") c.rl.kl_estimator = KlEstimator::kSampled;
              else throw ConfigError("rl.kl_estimator: expected full or sampled, got '" + v + "'");
            },
            [](const Config& c) { return std::string(c.rl.kl_estimator == KlEstimator::kFull ? "full" : "sampled"); }},
      U64_FIELD("rl.seed", rl.seed),
      SIZE_FIELD("data.samples", data.samples),
      DOUBLE_FIELD("data.train_ratio", data.train_ratio),
      DOUBLE_FIELD("data.val_ratio", data.val_ratio),
      DOUBLE_FIELD("data.test_ratio", data.test_ratio),
      DOUBLE_FIELD("data.prevalence", data.prevalence),
      DOUBLE_FIELD("data.negation_prob", data.negation_prob),
      DOUBLE_FIELD("data.noise", data.noise),
      SIZE_FIELD("data.fit_pairs", data.fit_pairs),
      PATH_FIELD("paths.corpus", paths.corpus),
      PATH_FIELD("paths.regions", paths.regions),
      PATH_FIELD("paths.checkpoints", paths.checkpoints),
      PATH_FIELD("paths.metrics", paths.metrics),
  };
  return table;
}

#undef SIZE_FIELD
#undef U64_FIELD
#undef DOUBLE_FIELD
#undef PATH_FIELD

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    it->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

void Config::validate() const {
  const auto& m = model;
  require(m.dim > 0, "model.dim must be positive");
  require(m.heads > 0 && m.dim % m.heads == 0, "model.heads must divide model.dim");
  require(m.patch_size > 0 && m.image_size > 0 && m.image_size % m.patch_size == 0,
          "model.image_size must be a positive multiple of model.patch_size");
  require(m.regions > 0, "model.regions must be positive");
  require(m.labels > 0, "model.labels must be positive");
  require(m.text_layers > 0 && m.image_layers > 0 && m.decoder_layers > 0,
          "encoder/decoder layer counts must be positive");
  require(m.region_repeats > 0, "model.region_repeats must be positive");
  require(m.vtrans_layers > 0, "model.vtrans_layers must be positive");
  require(m.ffn_mult > 0, "model.ffn_mult must be positive");
  require(m.max_report_len > 0, "model.max_report_len must be positive");
  require(m.text_max_len > 0, "model.text_max_len must be positive");
  require(m.instruction.find('\n') == std::string::npos, "model.instruction must be a single line");
  require(train.lambda >= 0.0, "train.lambda must be >= 0");
  require(train.lr > 0.0, "train.lr must be positive");
  require(train.batch_size > 0, "train.batch_size must be positive");
  require(train.grad_clip >= 0.0, "train.grad_clip must be >= 0");
  require(std::isfinite(rl.theta) && rl.theta != 0.0, "rl.theta must be finite and nonzero");
  require(rl.clip_eps > 0.0 && rl.clip_eps < 1.0, "rl.clip_eps must lie in (0, 1)");
  require(rl.temperature > 0.0, "rl.temperature must be positive");
  require(rl.rollouts > 0, "rl.rollouts must be positive");
  require(rl.ppo_epochs > 0, "rl.ppo_epochs must be positive");
  require(rl.lr > 0.0, "rl.lr must be positive");
  require(rl.fixed_lambda >= 0.0 && rl.fixed_lambda <= 1.0, "rl.fixed_lambda must lie in [0, 1]");
  require(rl.baseline_momentum >= 0.0 && rl.baseline_momentum < 1.0, "rl.baseline_momentum must lie in [0, 1)");
  require(data.samples > 0, "data.samples must be positive");
  require(data.train_ratio >= 0 && data.val_ratio >= 0 && data.test_ratio >= 0 &&
              std::abs(data.train_ratio + data.val_ratio + data.test_ratio - 1.0) < 1e-9,
          "data split ratios must be non-negative and sum to 1");
  require(data.prevalence >= 0.0 && data.prevalence <= 1.0, "data.prevalence must lie in [0, 1]");
  require(data.negation_prob >= 0.0 && data.negation_prob <= 1.0, "data.negation_prob must lie in [0, 1]");
  require(data.noise >= 0.0, "data.noise must be >= 0");
}

}  // namespace rrg
