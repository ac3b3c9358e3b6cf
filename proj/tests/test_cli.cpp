#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "test_util.hpp"

namespace zimm {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::fixture_dir;
using testing::scratch_dir;

struct RunResult {
  int code = -1;
  std::string out;
};

// Runs the CLI with stdout captured and stderr discarded.
RunResult zimm(const fs::path& cwd, const std::string& args) {
  const fs::path out = cwd / ".stdout";
  const std::string cmd = "cd '" + cwd.string() + "' && '" + std::string(ZIMM_CLI) + "' " + args + " > '" +
                          out.string() + "' 2> /dev/null";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out);
  std::ostringstream s;
  s << in.rdbuf();
  r.out = s.str();
  return r;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& p) { return json::parse(read_bytes(p)); }

std::string sample(const std::string& file) { return (fixture_dir() / "sample" / file).string(); }

// ---- exit codes -----------------------------------------------------------------------

TEST(Cli, UsageErrorsExitTwo) {
  const auto dir = scratch_dir("cli_usage");
  EXPECT_EQ(zimm(dir, "").code, 2);
  EXPECT_EQ(zimm(dir, "frobnicate").code, 2);
  EXPECT_EQ(zimm(dir, "generate").code, 2);
  EXPECT_EQ(zimm(dir, "generate --out g --patients ten").code, 2);
  EXPECT_EQ(zimm(dir, "--help").code, 0);
}

TEST(Cli, ValidationErrorsExitTwo) {
  const auto dir = scratch_dir("cli_validation");
  EXPECT_EQ(zimm(dir, "generate --patients 0 --out g").code, 2);
  EXPECT_EQ(zimm(dir, "generate --patients 10 --out /proc/zimm-not-writable").code, 2);
  EXPECT_EQ(zimm(dir, "cohort --events missing.jsonl --patients missing.jsonl --out c").code, 2);
  std::ofstream(dir / "bad.json") << R"({"training": {"epochs": -3}})";
  EXPECT_EQ(zimm(dir, "params --config bad.json").code, 2);
  EXPECT_EQ(zimm(dir, "baseline --kind svm --cohort c --out r.json").code, 2);
}

TEST(Cli, GenerateIsByteIdenticalAndMatchesSample) {
  const auto dir = scratch_dir("cli_generate");
  ASSERT_EQ(zimm(dir, "generate --patients 10 --seed 1669 --out a").code, 0);
  ASSERT_EQ(zimm(dir, "generate --patients 10 --seed 1669 --out b").code, 0);
  for (const char* f : {"events.jsonl", "patients.jsonl", "latent.jsonl"}) {
    const std::string a = read_bytes(dir / "a" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, read_bytes(dir / "b" / f)) << f;
    EXPECT_EQ(a, read_bytes(sample(f))) << f;
  }
  const json m = read_json(dir / "a" / "manifest.json");
  EXPECT_EQ(m.at("command"), "generate");
  EXPECT_EQ(m.at("seed"), 1669);
  ASSERT_EQ(zimm(dir, "generate --patients 10 --seed 1670 --out c").code, 0);
  EXPECT_NE(read_bytes(dir / "a" / "events.jsonl"), read_bytes(dir / "c" / "events.jsonl"));
}

TEST(Cli, GradcheckTiny) {
  const auto dir = scratch_dir("cli_gradcheck");
  const RunResult r = zimm(dir, "gradcheck --tiny --manifest gc.json");
  ASSERT_EQ(r.code, 0);
  const json j = json::parse(r.out);
  EXPECT_LT(j.at("max_relative_error").get<double>(), 1e-5);
  EXPECT_TRUE(j.at("pass").get<bool>());
  EXPECT_TRUE(fs::exists(dir / "gc.json"));
}

TEST(Cli, ParamsForDefaultConfig) {
  const auto dir = scratch_dir("cli_params");
  const RunResult r = zimm(dir, "params");
  ASSERT_EQ(r.code, 0);
  const long n = std::stol(r.out);
  EXPECT_GE(n, 100000);
  EXPECT_LE(n, 1000000);
  std::ofstream(dir / "small.json") << R"({"encoder": {"units": 8}, "decoder": {"units": 4}})";
  const RunResult small = zimm(dir, "params --config small.json");
  ASSERT_EQ(small.code, 0);
  EXPECT_LT(std::stol(small.out), n);
}

// ---- pipeline on the 10-patient sample -------------------------------------------------

TEST(Cli, SamplePipelineUnderOneMinute) {
  const auto dir = scratch_dir("cli_pipeline");
  const auto start = std::chrono::steady_clock::now();
  const std::string cohort = "cohort --events " + sample("events.jsonl") + " --patients " + sample("patients.jsonl") +
                             " --config " + sample("config.json");
  ASSERT_EQ(zimm(dir, cohort + " --out coh").code, 0);
  ASSERT_EQ(zimm(dir, "train --cohort coh --config " + sample("config.json") + " --epochs 3 --out ck.bin").code, 0);
  ASSERT_EQ(zimm(dir, "eval --ckpt ck.bin --cohort coh --split test --bootstrap 50 --out eval.json").code, 0);
  for (const char* kind : {"lr-sf", "lr-df", "mlp-sf"}) {
    ASSERT_EQ(zimm(dir, std::string("baseline --kind ") + kind + " --cohort coh --epochs 3 --out " + kind + ".json")
                  .code,
              0)
        << kind;
  }
  ASSERT_EQ(zimm(dir, "compare --scores eval.json.scores.jsonl --scores lr-sf.json.scores.jsonl --bootstrap 200 "
                      "--out cmp.json")
                .code,
            0);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(seconds, 60.0);

  for (const char* m : {"coh/manifest.json", "ck.bin.manifest.json", "eval.json.manifest.json",
                        "lr-sf.json.manifest.json", "cmp.json.manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / m)) << m;
  }
  const json cmp = read_json(dir / "cmp.json");
  for (const char* side : {"a", "b"}) {
    const json box = cmp.at(side).at("bootstrap").at("boxplot");
    EXPECT_LE(box.at("whisker_low").get<double>(), box.at("q1").get<double>());
    EXPECT_LE(box.at("q1").get<double>(), box.at("median").get<double>());
    EXPECT_LE(box.at("median").get<double>(), box.at("q3").get<double>());
    EXPECT_LE(box.at("q3").get<double>(), box.at("whisker_high").get<double>());
  }
  const double p = cmp.at("mann_whitney").at("p").get<double>();
  EXPECT_TRUE(p >= 0.0 && p <= 1.0);
  const json ev = read_json(dir / "eval.json");
  EXPECT_EQ(ev.at("split"), "test");
  EXPECT_EQ(ev.at("model"), "zimm-ed");
}

TEST(Cli, CommandsAreIdempotent) {
  const auto dir = scratch_dir("cli_idempotent");
  const std::string cohort = "cohort --events " + sample("events.jsonl") + " --patients " + sample("patients.jsonl") +
                             " --config " + sample("config.json");
  ASSERT_EQ(zimm(dir, cohort + " --out c1").code, 0);
  ASSERT_EQ(zimm(dir, cohort + " --out c2").code, 0);
  EXPECT_EQ(read_bytes(dir / "c1" / "cohort.bin"), read_bytes(dir / "c2" / "cohort.bin"));
  ASSERT_EQ(zimm(dir, "train --cohort c1 --epochs 2 --seed 5 --threads 1 --out a.bin").code, 0);
  ASSERT_EQ(zimm(dir, "train --cohort c1 --epochs 2 --seed 5 --threads 3 --out b.bin").code, 0);
  EXPECT_EQ(read_bytes(dir / "a.bin"), read_bytes(dir / "b.bin"));
  ASSERT_EQ(zimm(dir, "eval --ckpt a.bin --cohort c1 --split val --out ea.json").code, 0);
  ASSERT_EQ(zimm(dir, "eval --ckpt b.bin --cohort c1 --split val --out eb.json").code, 0);
  EXPECT_EQ(read_bytes(dir / "ea.json"), read_bytes(dir / "eb.json"));
  EXPECT_EQ(read_bytes(dir / "ea.json.scores.jsonl"), read_bytes(dir / "eb.json.scores.jsonl"));
}

TEST(Cli, TamperingExitsThree) {
  const auto dir = scratch_dir("cli_tamper");
  const std::string cohort = "cohort --events " + sample("events.jsonl") + " --patients " + sample("patients.jsonl") +
                             " --config " + sample("config.json");
  ASSERT_EQ(zimm(dir, cohort + " --out coh").code, 0);
  ASSERT_EQ(zimm(dir, "train --cohort coh --epochs 1 --out ck.bin").code, 0);

  // a checkpoint from another vocabulary
  ASSERT_EQ(zimm(dir, "generate --patients 40 --seed 3 --out other").code, 0);
  ASSERT_EQ(zimm(dir, "cohort --events other/events.jsonl --patients other/patients.jsonl --config " +
                          sample("config.json") + " --out coh2")
                .code,
            0);
  EXPECT_EQ(zimm(dir, "eval --ckpt ck.bin --cohort coh2 --out e.json").code, 3);

  std::string bytes = read_bytes(dir / "ck.bin");
  bytes[bytes.size() / 2] ^= 0x20;
  std::ofstream(dir / "ck.bin", std::ios::binary) << bytes;
  EXPECT_EQ(zimm(dir, "eval --ckpt ck.bin --cohort coh --out e.json").code, 3);

  bytes = read_bytes(dir / "coh" / "cohort.bin");
  bytes[bytes.size() / 2] ^= 0x20;
  std::ofstream(dir / "coh" / "cohort.bin", std::ios::binary) << bytes;
  EXPECT_EQ(zimm(dir, "train --cohort coh --epochs 1 --out ck2.bin").code, 3);
}

// ---- seed-42 synthetic cohort -------------------------------------------------------------

TEST(Cli, UntrainedModelScoresNearPrevalence) {
  const auto dir = scratch_dir("cli_untrained");
  ASSERT_EQ(zimm(dir, "generate --patients 10000 --seed 42 --out syn").code, 0);
  const json record = read_json(fixture_dir() / "synthetic_seed42.json");
  const json manifest = read_json(dir / "syn" / "manifest.json");
  for (const auto& [file, hash] : record.at("checksums").items()) {
    EXPECT_EQ(manifest.at("outputs").at("syn/" + file), hash) << file;
  }
  ASSERT_EQ(zimm(dir, "cohort --events syn/events.jsonl --patients syn/patients.jsonl --seed 42 --out coh").code, 0);
  ASSERT_EQ(zimm(dir, "train --cohort coh --epochs 0 --seed 42 --out ck0.bin").code, 0);
  ASSERT_EQ(zimm(dir, "eval --ckpt ck0.bin --cohort coh --split test --out e.json").code, 0);
  const json ev = read_json(dir / "e.json");
  EXPECT_EQ(ev.at("checkpoint_epoch"), 0);
  EXPECT_NEAR(ev.at("mean_ap").get<double>(), ev.at("prevalence_mean_ap").get<double>(), 0.05);
}

}  // namespace
}  // namespace zimm
