#include <doctest.h>

#include <sstream>

#include "claimcast/config.hpp"
#include "cli.hpp"
#include "helpers.hpp"

using namespace claimcast;
using namespace claimcast::testing;

namespace {

struct CliResult {
  int code = 0;
  std::string out, err;
};

CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

const char* kSmallConfig =
    "n_patients = 200\n"
    "embedding_dim = 8\n"
    "hidden_dim = 4\n"
    "layers = 1\n"
    "attention_dim = 4\n"
    "attended_dim = 4\n"
    "epochs = 2\n"
    "pvdbow_epochs = 2\n"
    "shuffles = 2\n";

}  // namespace

TEST_CASE("config: file parsing, overrides and snapshot") {
  TempDir dir("config");
  write_text(dir / "c.cfg", "# comment\nseed = 7\n\nhidden_dim = 5  # trailing\nmode = single_channel\n");
  auto cfg = load_config(dir / "c.cfg");
  CHECK(cfg.seed == 7);
  CHECK(cfg.model_config.hidden_dim == 5);
  CHECK(cfg.model_config.mode == ModelMode::single_channel);
  cfg.set("fractions", "0.5,0.25,0.25");
  CHECK(cfg.split.fractions[1] == 0.25);
  cfg.propagate_seed();
  CHECK(cfg.synth.seed == 7);
  CHECK(cfg.model_config.seed == 7);
  CHECK(cfg.pvdbow.dim == cfg.model_config.embedding_dim);

  const auto snap = cfg.snapshot();
  CHECK(snap.size() == config_keys().size());
  CHECK(snap.at("hidden_dim") == "5");
  // The text form reloads to the same configuration.
  write_text(dir / "again.cfg", cfg.to_text());
  CHECK(load_config(dir / "again.cfg").snapshot() == snap);
}

TEST_CASE("config: errors name the key or line") {
  TempDir dir("config-errors");
  RunConfig cfg;
  try {
    cfg.set("no_such_key", "1");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("no_such_key") != std::string::npos);
  }
  CHECK_THROWS_AS(cfg.set("hidden_dim", "abc"), ConfigError);

  cfg.set("severity_mix", "0.1,0.1,0.1,0.1,0.1,0.5");
  cfg.validate();
  cfg.set("severity_mix", "0.1,0.1,0.1,0.1,0.1,0.3");
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("severity_mix") != std::string::npos);
  }

  RunConfig years;
  years.set("result_year", "2025");
  CHECK_THROWS_AS(years.validate(), ConfigError);

  write_text(dir / "bad.cfg", "seed = 1\nthis line has no equals\n");
  try {
    load_config(dir / "bad.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bad.cfg:2") != std::string::npos);
  }
}

TEST_CASE("cli: error contracts") {
  TempDir dir("cli-errors");
  const std::string out = (dir / "out").string();

  auto r = run({"--out-dir", out, "evaluate"});
  CHECK(r.code == 1);
  CHECK(r.err.find("missing trained model") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir / "out" / "evaluate"));

  r = run({"--out-dir", out, "--set", "bogus=1", "generate"});
  CHECK(r.code == 1);
  CHECK(r.err.find("bogus") != std::string::npos);

  r = run({"--out-dir", out, "generate", "--severity-mix", "0.1,0.1,0.1,0.1,0.1,0.3"});
  CHECK(r.code == 1);
  CHECK(r.err.find("severity_mix") != std::string::npos);

  write_text(dir / "small.cfg", kSmallConfig);
  r = run({"--config", (dir / "small.cfg").string(), "--out-dir", out, "generate"});
  REQUIRE(r.code == 0);
  r = run({"--config", (dir / "small.cfg").string(), "--out-dir", out, "train"});
  CHECK(r.code == 1);
  CHECK(r.err.find("missing embedding table") != std::string::npos);

  CHECK(run({}).code != 0);
}

TEST_CASE("cli: serial reruns produce byte-identical artifacts") {
  TempDir dir("cli-determinism");
  write_text(dir / "small.cfg", kSmallConfig);
  const auto pipeline = [&](const std::string& name) {
    const std::string out = (dir / name).string();
    for (const char* cmd : {"generate", "embed", "train", "evaluate", "stratify"}) {
      const auto r = run({"--config", (dir / "small.cfg").string(), "--out-dir", out, "--serial", cmd});
      REQUIRE_MESSAGE(r.code == 0, cmd << ": " << r.err);
    }
    return dir / name;
  };
  const auto a = pipeline("a");
  const auto b = pipeline("b");
  std::size_t compared = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a);
    // Manifests record wall time.
    if (rel.filename().string().ends_with(".manifest.json")) continue;
    CHECK_MESSAGE(read_text(entry.path()) == read_text(b / rel), rel.string());
    ++compared;
  }
  CHECK(compared >= 12);
}
