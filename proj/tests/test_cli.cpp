#include <doctest.h>

#include <fstream>
#include <sstream>

#include "rrg/checkpoint.h"
#include "rrg/cli.h"
#include "rrg/errors.h"
#include "tiny_model.h"

using namespace rrg;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "lmrrg");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write(const std::filesystem::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

}  // namespace

TEST_CASE("config text round trip and strict parsing") {
  Config c;
  c.model.dim = 32;
  c.rl.theta = -0.125;
  c.rl.reward = RewardKind::kBleu4;
  c.train.lr = 3e-4;
  c.paths.corpus = "/tmp/x y";
  const std::string text = c.to_text();
  CHECK(Config::parse(text).to_text() == text);
  CHECK(Config::parse("# comment\n\nmodel.dim = 16  # trailing\n").model.dim == 16);
  CHECK_THROWS_AS(Config::parse("model.nope = 1\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("model.dim = sixteen\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("model.dim\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("model.dim = 30\nmodel.heads = 4\n"), ConfigError);  // heads must divide dim
  CHECK_THROWS_AS(Config::parse("train.lr = -1\n"), ConfigError);
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1e-300) == "1e-300");
}

TEST_CASE("checkpoint round trip is exact up to f32 storage") {
  const auto dir = tiny::fresh_dir("rrg_ckpt_test");
  auto pipe = tiny::make(dir);
  const RadCliqWeights w{0.5, {-1.0, -0.25, 0.125, -2.0}};
  const std::string bytes = checkpoint_bytes(pipe.cfg, pipe.model, w);
  const Checkpoint ck = parse_checkpoint(bytes);
  CHECK(ck.config.to_text() == pipe.cfg.to_text());
  CHECK(ck.weights == w);
  CHECK(ck.model.vocab == pipe.model.vocab);
  CHECK(ck.model.instruction_ids == pipe.model.instruction_ids);
  const auto a = pipe.model.named(), b = ck.model.named();
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    for (std::size_t j = 0; j < a[i].second.size(); ++j)
      worst = std::max(worst, std::abs(a[i].second[j] - b[i].second[j]) / std::max(1.0, std::abs(a[i].second[j])));
  }
  CHECK(worst <= 6e-8);
  // Re-serializing the loaded model gives the same bytes.
  CHECK(checkpoint_bytes(ck.config, ck.model, ck.weights) == bytes);

  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, 10)), DataError);
  CHECK_THROWS_AS(parse_checkpoint("LMRRG9" + bytes.substr(6)), DataError);
  CHECK_THROWS_AS(parse_checkpoint(bytes + "x"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_CASE("exit codes map error kinds") {
  const auto dir = tiny::fresh_dir("rrg_exit_test");
  CHECK(run({}).code == kExitConfig);
  CHECK(run({"frobnicate"}).code == kExitConfig);
  CHECK(run({"--help"}).code == kExitOk);

  write(dir / "bad.cfg", "model.dim = banana\n");
  Run r = run({"synth", "--config", (dir / "bad.cfg").string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("model.dim") != std::string::npos);

  CHECK(run({"synth", "--config", (dir / "absent.cfg").string()}).code == kExitIo);
  CHECK(run({"eval", "--checkpoint", (dir / "absent.ckpt").string()}).code == kExitIo);

  write(dir / "junk.ckpt", "not a checkpoint");
  CHECK(run({"eval", "--checkpoint", (dir / "junk.ckpt").string()}).code == kExitInput);
}

TEST_CASE("end-to-end smoke: synth, train, rl, eval, generate") {
  const auto dir = tiny::fresh_dir("rrg_cli_smoke");
  const Config cfg = tiny::config(dir);
  write(dir / "tiny.cfg", cfg.to_text());
  const std::string conf = (dir / "tiny.cfg").string();

  Run r = run({"synth", "--config", conf, "--n", "30"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("24 train, 3 val, 3 test") != std::string::npos);

  r = run({"train", "--config", conf});
  REQUIRE(r.code == kExitOk);
  const auto sup = cfg.paths.checkpoints / "supervised.ckpt";
  CHECK(std::filesystem::exists(sup));
  const std::string train_csv = slurp(sup.string() + ".train.csv");
  CHECK(train_csv.rfind("epoch,", 0) == 0);

  // Same config, same bytes.
  const std::string first = slurp(sup);
  REQUIRE(run({"train", "--config", conf}).code == kExitOk);
  CHECK(slurp(sup) == first);
  CHECK(slurp(sup.string() + ".train.csv") == train_csv);

  r = run({"rl", "--config", conf, "--reward", "bleu4"});
  REQUIRE(r.code == kExitOk);
  CHECK(slurp(cfg.paths.checkpoints / "rl.ckpt.rl.csv").rfind("iteration,", 0) == 0);
  CHECK(run({"rl", "--config", conf, "--reward", "rouge"}).code == kExitConfig);

  r = run({"eval", "--config", conf, "--checkpoint", (cfg.paths.checkpoints / "rl.ckpt").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.rfind("metric,value\n", 0) == 0);
  CHECK(slurp(cfg.paths.metrics) == r.out);

  r = run({"eval", "--config", conf, "--references"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("\nbleu4,1\n") != std::string::npos);

  const auto image = cfg.paths.corpus / "images" / "test_00000.pgm";
  r = run({"generate", "--config", conf, "--image", image.string(), "--labels"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("pneumothorax\t") != std::string::npos);

  write(dir / "small.pgm", "P5\n4 4\n255\n0123456789abcdef");
  CHECK(run({"generate", "--config", conf, "--image", (dir / "small.pgm").string()}).code == kExitInput);

  // A checkpoint trained for another architecture is a configuration error.
  Config other = cfg;
  other.model.dim = 8;
  write(dir / "other.cfg", other.to_text());
  CHECK(run({"eval", "--config", (dir / "other.cfg").string()}).code == kExitConfig);
}
