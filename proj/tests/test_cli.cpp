#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "poisson_posterior/cli.hpp"

using namespace poisson_posterior;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "poisson-posterior");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("pp_cli_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path_ / name) << text;
    return path_ / name;
  }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Cli, OracleDumpGammaConjugate) {
  TempDir d;
  const auto cfg = d.write("o.json", R"({"version": 1, "prior": {"kind": "gamma", "shape": 2, "rate": 1}, "y": 3})");
  const auto r = run_cli({"oracle-dump", "--config", cfg.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  const auto m = moments_from_json(j.at("moments"));
  EXPECT_NEAR(m.mu1, 0.8129705, 1e-6);
  EXPECT_NEAR(m.moment(2), 0.2213230, 1e-6);
  EXPECT_NEAR(m.moment(3), -0.0487897, 1e-6);
  EXPECT_NEAR(m.moment(4), 0.1683791, 1e-6);
  EXPECT_NEAR(j.at("marginal_log").get<double>(), std::log(0.125), 1e-6);
  EXPECT_NEAR(j.at("score").get<double>(), -0.4431472, 1e-5);
}

TEST(Cli, MissingConfigNamesPath) {
  const auto r = run_cli({"oracle-dump", "--config", "/nonexistent/cfg.json"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("/nonexistent/cfg.json"), std::string::npos) << r.err;
}

TEST(Cli, UnknownKeyReportsFieldPath) {
  TempDir d;
  const auto cfg = d.write("o.json", R"({"version": 1, "prior": {"kind": "gamma", "shap": 2}})");
  const auto r = run_cli({"oracle-dump", "--config", cfg.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("prior.shap"), std::string::npos) << r.err;
}

TEST(Cli, InvalidValueReportsFieldPath) {
  TempDir d;
  const auto cfg = d.write("o.json", R"({"version": 1, "prior": {"kind": "gamma", "shape": -2}})");
  const auto r = run_cli({"oracle-dump", "--config", cfg.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("prior"), std::string::npos) << r.err;
  const auto wrong_type = run_cli({"oracle-dump", "--set", "y=\"four\""});
  EXPECT_EQ(wrong_type.code, 1);
  EXPECT_NE(wrong_type.err.find("y"), std::string::npos);
}

TEST(Cli, MalformedJsonReportsLocation) {
  TempDir d;
  const auto cfg = d.write("bad.json", "{\n  \"version\": 1,\n  \"y\": ,\n}\n");
  const auto r = run_cli({"oracle-dump", "--config", cfg.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("3:"), std::string::npos) << r.err;
}

TEST(Cli, VersionMismatchRejected) {
  const auto r = run_cli({"oracle-dump", "--set", "version=2"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("version"), std::string::npos);
}

TEST(Cli, UnknownSubcommandAndNoSubcommand) {
  EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST(Cli, ToyPosteriorRerunsAreByteIdentical) {
  TempDir d;
  const std::vector<std::string> common{"--set", "train_networks=false", "--set", "y=4", "--seed", "7"};
  auto a = common;
  a.insert(a.begin(), {"toy-posterior", "--out", (d.path() / "a").string()});
  auto b = common;
  b.insert(b.begin(), {"toy-posterior", "--out", (d.path() / "b").string()});
  ASSERT_EQ(run_cli(a).code, 0);
  ASSERT_EQ(run_cli(b).code, 0);
  for (const char* f : {"toy_report.json", "toy_curves.csv"}) {
    const auto x = slurp(d.path() / "a" / f);
    EXPECT_FALSE(x.empty());
    EXPECT_EQ(x, slurp(d.path() / "b" / f)) << f;
  }
  const auto ma = nlohmann::json::parse(slurp(d.path() / "a" / "manifest.json"));
  const auto mb = nlohmann::json::parse(slurp(d.path() / "b" / "manifest.json"));
  EXPECT_EQ(ma.at("config_hash"), mb.at("config_hash"));
  EXPECT_EQ(ma.at("config").at("seed").get<int>(), 7);
  EXPECT_EQ(ma.at("overrides").size(), 2u);
  EXPECT_EQ(ma.at("config").at("train_networks").get<bool>(), false);
  EXPECT_EQ(ma.at("command").get<std::string>(), "toy-posterior");
}

TEST(Cli, ManifestConfigReplays) {
  TempDir d;
  ASSERT_EQ(run_cli({"toy-posterior", "--out", (d.path() / "a").string(), "--set", "train_networks=false", "--set",
                     "prior.kind=gamma"})
                .code,
            0);
  const auto manifest = nlohmann::json::parse(slurp(d.path() / "a" / "manifest.json"));
  const auto replay = d.write("replay.json", manifest.at("config").dump());
  ASSERT_EQ(run_cli({"toy-posterior", "--config", replay.string(), "--out", (d.path() / "b").string()}).code, 0);
  EXPECT_EQ(slurp(d.path() / "a" / "toy_report.json"), slurp(d.path() / "b" / "toy_report.json"));
  const auto again = nlohmann::json::parse(slurp(d.path() / "b" / "manifest.json"));
  EXPECT_EQ(again.at("config_hash"), manifest.at("config_hash"));
}

TEST(Cli, TrainThenEval) {
  TempDir d;
  const auto train_dir = d.path() / "train";
  const auto r = run_cli({"train", "--out", train_dir.string(), "--set", "arch.channels=4", "--set",
                          "train.max_steps=20", "--set", "train.validate_every=10", "--set", "train.batch_size=4",
                          "--set", "train.validation_size=4", "--set", "signal.length=64"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"model.ppdm", "history.csv", "train_summary.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(train_dir / f)) << f;
  const auto summary = nlohmann::json::parse(slurp(train_dir / "train_summary.json"));
  EXPECT_EQ(summary.at("steps_run").get<int>(), 20);

  const auto model = (train_dir / "model.ppdm").string();
  const auto e = run_cli({"eval", "--set", "model=\"" + model + "\"", "--set", "test_signals=4", "--set",
                          "signal.length=64", "--out", (d.path() / "eval").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto j = nlohmann::json::parse(e.out);
  EXPECT_TRUE(std::isfinite(j.at("psnr").get<double>()));
  EXPECT_EQ(j, nlohmann::json::parse(slurp(d.path() / "eval" / "eval.json")));

  const auto missing = run_cli({"eval", "--set", "model=\"" + (d.path() / "none.ppdm").string() + "\""});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("none.ppdm"), std::string::npos);
}

TEST(Cli, TrainRejectsMismatchedArchitecture) {
  const auto r = run_cli({"train", "--set", "task=\"toy\"", "--set", "arch.kind=\"conv1d\""});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("arch.kind"), std::string::npos) << r.err;
}

TEST(Cli, DenoiseBenchTiny) {
  TempDir d;
  const auto r = run_cli({"denoise-bench", "--out", d.path().string(), "--set", "gains=[64]", "--set", "n_seeds=1",
                          "--set", "arch.channels=4", "--set", "train.max_steps=10", "--set", "train.validate_every=5",
                          "--set", "train.batch_size=2", "--set", "train.validation_size=2", "--set",
                          "signal.length=32", "--set", "test_signals=2", "--set", "trace_examples=1"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"benchmark_table.csv", "benchmark_runs.csv", "denoise_traces.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(d.path() / f)) << f;
  EXPECT_EQ(r.out, slurp(d.path() / "benchmark_table.csv"));
}

TEST(Overrides, DottedPathsAndTypes) {
  nlohmann::json j = nlohmann::json::object();
  cli::apply_override(j, "a.b.c=3");
  cli::apply_override(j, "a.flag=true");
  cli::apply_override(j, "name=plain");
  cli::apply_override(j, "list=[1,2]");
  EXPECT_EQ(j.at("a").at("b").at("c").get<int>(), 3);
  EXPECT_EQ(j.at("a").at("flag").get<bool>(), true);
  EXPECT_EQ(j.at("name").get<std::string>(), "plain");
  EXPECT_EQ(j.at("list").size(), 2u);
  EXPECT_THROW(cli::apply_override(j, "novalue"), config_error);
}
