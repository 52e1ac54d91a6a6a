#include "peerlab/pipeline.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

using namespace peerlab;
namespace fs = std::filesystem;

#ifndef PEERLAB_CLI_PATH
#error "PEERLAB_CLI_PATH must point at the command-line binary"
#endif

namespace {

fs::path fresh_dir(const std::string& stem) {
  const fs::path dir = fs::temp_directory_path() / stem;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Runs the CLI, returns its exit code, captures combined output.
int run_cli(const std::string& args, std::string* output = nullptr) {
  const fs::path log = fs::temp_directory_path() / "peerlab_cli_log.txt";
  const std::string cmd =
      std::string(PEERLAB_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(log);
    std::ostringstream ss;
    ss << in.rdbuf();
    *output = ss.str();
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("configuration hash covers results, not paths") {
  PipelineConfig a;
  a.resolve_seeds();
  PipelineConfig b = a;
  b.out_dir = "/somewhere/else";
  b.cohort_path = "/tmp/other_cohort.csv";
  REQUIRE(config_hash_hex(a) == config_hash_hex(b));
  REQUIRE(config_hash_hex(a).size() == 16);
  REQUIRE(canonical_config_text(a) == canonical_config_text(b));

  PipelineConfig c = a;
  c.seed = a.seed + 1;
  REQUIRE(config_hash_hex(c) != config_hash_hex(a));
  PipelineConfig d = a;
  d.synth.beta_true = 0.75;
  REQUIRE(config_hash_hex(d) != config_hash_hex(a));
  PipelineConfig e = a;
  e.ga.phi = 2.0;
  REQUIRE(config_hash_hex(e) != config_hash_hex(a));
  PipelineConfig f = a;
  f.hyper.kappa += 0.25;
  REQUIRE(config_hash_hex(f) != config_hash_hex(a));

  const std::string text = canonical_config_text(a);
  REQUIRE(text.rfind("seed=1\n", 0) == 0);
  REQUIRE_THAT(text, Catch::Matchers::ContainsSubstring("train.epochs="));
  REQUIRE_THAT(text, Catch::Matchers::ContainsSubstring("assign.seed="));

  const ArtifactMeta meta = artifact_meta(a);
  REQUIRE(meta.config_hash == config_hash_hex(a));
  REQUIRE(meta.seed == a.seed);
}

TEST_CASE("seed resolution only fills unset stage seeds") {
  PipelineConfig cfg;
  cfg.seed = 99;
  const std::uint64_t synth_before = cfg.synth.seed;
  const std::uint64_t opt_before = cfg.opt.seed;
  REQUIRE(synth_before != 0);  // stage defaults are explicit seeds
  REQUIRE(opt_before != 0);
  REQUIRE(cfg.predict.seed == 0);
  REQUIRE(cfg.ga.seed == 0);

  cfg.resolve_seeds();
  CHECK(cfg.synth.seed == synth_before);
  CHECK(cfg.opt.seed == opt_before);
  CHECK(cfg.predict.seed == derive_seed(99, 3));
  CHECK(cfg.ga.seed == derive_seed(99, 4));
  CHECK(cfg.predict.seed != 0);
  CHECK(cfg.ga.seed != 0);
  CHECK(cfg.predict.seed != cfg.ga.seed);

  // resolving twice changes nothing
  PipelineConfig again = cfg;
  again.resolve_seeds();
  REQUIRE(again.predict.seed == cfg.predict.seed);
  REQUIRE(again.ga.seed == cfg.ga.seed);

  // an explicitly chosen stage seed survives
  PipelineConfig manual;
  manual.seed = 99;
  manual.predict.seed = 1234;
  manual.resolve_seeds();
  REQUIRE(manual.predict.seed == 1234);
}

TEST_CASE("pipeline configuration validation") {
  PipelineConfig good;
  good.resolve_seeds();
  REQUIRE_NOTHROW(good.validate());

  PipelineConfig bad = good;
  bad.predict.replicates = 0;
  REQUIRE_THROWS_AS(bad.validate(), validation_error);
  bad = good;
  bad.predict.heatmap_scale = 0;
  REQUIRE_THROWS_AS(bad.validate(), validation_error);
  bad = good;
  bad.out_dir.clear();
  REQUIRE_THROWS_AS(bad.validate(), validation_error);
  bad = good;
  bad.assign_fitness = "garbage";
  REQUIRE_THROWS_WITH(bad.validate(),
                      Catch::Matchers::ContainsSubstring("assign_fitness"));
  bad = good;
  bad.synth.num_schools = 0;
  REQUIRE_THROWS_AS(bad.validate(), validation_error);
  bad = good;
  bad.ga.mut_prob = 2.0;
  REQUIRE_THROWS_AS(bad.validate(), validation_error);
}

TEST_CASE("command line basics") {
  SECTION("help exits cleanly") {
    std::string out;
    REQUIRE(run_cli("--help", &out) == 0);
    REQUIRE_THAT(out, Catch::Matchers::ContainsSubstring("synth"));
    REQUIRE_THAT(out, Catch::Matchers::ContainsSubstring("assign"));
  }
  SECTION("unknown flags are usage errors") {
    REQUIRE(run_cli("synth --no-such-flag 3") == 2);
  }
  SECTION("invalid configuration values are usage errors") {
    const fs::path dir = fresh_dir("peerlab_cli_badcfg");
    std::string out;
    REQUIRE(run_cli("synth --out-dir " + dir.string() + " --synth.num_schools 0",
                    &out) == 2);
    REQUIRE_THAT(out, Catch::Matchers::ContainsSubstring("error"));
  }
  SECTION("missing upstream artifacts exit with the io code") {
    const fs::path dir = fresh_dir("peerlab_cli_noinput");
    std::string out;
    REQUIRE(run_cli("train --out-dir " + dir.string(), &out) == 4);
    REQUIRE_THAT(out, Catch::Matchers::ContainsSubstring("missing upstream"));
  }
}

TEST_CASE("command line stages write their artifacts") {
  const fs::path dir = fresh_dir("peerlab_cli_stages");
  std::string out;
  REQUIRE(run_cli("synth --out-dir " + dir.string() +
                      " --synth.num_schools 4 --synth.class_size_min 8"
                      " --synth.class_size_max 10",
                  &out) == 0);
  REQUIRE_THAT(out, Catch::Matchers::ContainsSubstring("8 classrooms"));
  REQUIRE(fs::exists(dir / "cohort.csv"));
  REQUIRE(fs::exists(dir / "groundtruth.json"));

  REQUIRE(run_cli("train --out-dir " + dir.string() +
                      " --synth.num_schools 4 --synth.class_size_min 8"
                      " --synth.class_size_max 10 --train.epochs 40",
                  &out) == 0);
  REQUIRE(fs::exists(dir / "params.json"));
  REQUIRE(fs::exists(dir / "loss_history.csv"));
}

TEST_CASE("command line reads config files") {
  // Stage options carry dotted names, so in a config file they must be
  // written as quoted literal keys.  A [synth] section would instead address
  // the optionless synth subcommand; that spelling is rejected outright
  // rather than silently running with defaults.
  const fs::path dir = fresh_dir("peerlab_cli_cfgfile");
  const fs::path cfg = dir / "peerlab.toml";
  {
    std::ofstream out(cfg);
    out << "\"synth.num_schools\" = 4\n"
        << "\"synth.class_size_min\" = 8\n"
        << "\"synth.class_size_max\" = 8\n";
  }
  std::string out;
  REQUIRE(run_cli("synth --config " + cfg.string() + " --out-dir " + dir.string(),
                  &out) == 0);
  REQUIRE_THAT(out, Catch::Matchers::ContainsSubstring("8 classrooms"));

  // command-line flags override file values
  REQUIRE(run_cli("synth --config " + cfg.string() + " --out-dir " + dir.string() +
                      " --synth.num_schools 3",
                  &out) == 0);
  REQUIRE_THAT(out, Catch::Matchers::ContainsSubstring("6 classrooms"));

  // top-level options use their plain names
  const fs::path plain = dir / "plain.toml";
  const fs::path odir = dir / "from_file";
  {
    std::ofstream o(plain);
    o << "out-dir = \"" << odir.string() << "\"\n"
      << "seed = 5\n";
  }
  REQUIRE(run_cli("synth --config " + plain.string(), &out) == 0);
  REQUIRE(fs::exists(odir / "cohort.csv"));

  // section spelling fails loudly
  const fs::path bad = dir / "bad.toml";
  {
    std::ofstream o(bad);
    o << "[synth]\nnum_schools = 4\n";
  }
  REQUIRE(run_cli("synth --config " + bad.string() + " --out-dir " +
                      dir.string(),
                  &out) == 2);
}
