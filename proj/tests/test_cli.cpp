#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "odml/cli.hpp"
#include "odml/report.hpp"
#include "test_util.hpp"

using namespace odml;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "odml");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("odml_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Synthetic household file shared by the data-driven commands.
  std::string synthetic(Index n = 600) {
    write("sim.json", nlohmann::json{{"n", n}}.dump());
    const CliResult r = run({"--out", path("sim"), "--seed", "5", "simulate", "--config", path("sim.json")});
    EXPECT_EQ(r.code, kExitOk) << r.err;
    return path("sim/synthetic.csv");
  }

  void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"dml", "--data", "x.csv", "--model", "iv"}).code, kExitUsage);
  EXPECT_EQ(run({"replicate"}).code, kExitUsage);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST_F(Cli, InputErrorsExitTwo) {
  CliResult r = run({"--out", path("o"), "replicate", "--data", path("missing.csv")});
  EXPECT_EQ(r.code, kExitInput);
  EXPECT_NE(r.err.find("error_kind=IoError"), std::string::npos) << r.err;

  write("bad.csv", "mita,lon\n1,2\n");
  r = run({"--out", path("o"), "summarize", "--data", path("bad.csv")});
  EXPECT_EQ(r.code, kExitInput);
  EXPECT_NE(r.err.find("error_kind=MissingColumn"), std::string::npos);

  write("cfg.json", R"({"k_folds": 1})");
  r = run({"--out", path("o"), "dml", "--data", synthetic(), "--config", path("cfg.json")});
  EXPECT_EQ(r.code, kExitInput);
  EXPECT_NE(r.err.find("error_kind=ConfigError"), std::string::npos);
}

TEST_F(Cli, EstimationErrorsExitThree) {
  const std::string data = synthetic();
  write("cfg.json", R"({"propensity_clip": 0.49})");
  const CliResult r = run({"--out", path("o"), "dml", "--data", data, "--model", "irm-ate", "--band", "1000",
                     "--outcome-learner", "linear_ridge", "--treatment-learner", "logistic", "--config",
                     path("cfg.json")});
  EXPECT_EQ(r.code, kExitEstimation) << r.err;
  EXPECT_NE(r.err.find("error_kind=OverlapFailure"), std::string::npos) << r.err;
}

TEST_F(Cli, SimulateWritesValidData) {
  const std::string csv = synthetic(500);
  const Dataset ds = load_dataset_file(csv);
  EXPECT_EQ(ds.size(), 500);
  EXPECT_TRUE(validate(ds).empty());
  const auto truth = nlohmann::json::parse(read_file(path("sim/truth.json")));
  EXPECT_EQ(truth.at("ate"), -0.3);
  const auto manifest = run_manifest_from_json(nlohmann::json::parse(read_file(path("sim/manifest.json"))));
  EXPECT_EQ(manifest.command, "simulate");
  EXPECT_EQ(manifest.seed, 5u);
  EXPECT_EQ(manifest.version, kVersion);
  ASSERT_EQ(manifest.inputs.size(), 1u);
  EXPECT_EQ(manifest.inputs[0].sha256, sha256_file(path("sim.json")));
}

TEST_F(Cli, ReplicateTablesParseBack) {
  const std::string csv = synthetic(800);
  const CliResult r = run({"--out", path("rep"), "replicate", "--data", csv});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::istringstream tsv(read_file(path("rep/table2.tsv")));
  std::string line;
  std::getline(tsv, line);
  int rows = 0;
  const ResultGrid direct = replicate_table2(load_dataset_file(csv));
  while (std::getline(tsv, line)) {
    std::istringstream fields(line);
    std::string panel, band, coef;
    std::getline(fields, panel, '\t');
    std::getline(fields, band, '\t');
    std::getline(fields, coef, '\t');
    const std::size_t p = static_cast<std::size_t>(rows / 3), b = static_cast<std::size_t>(rows % 3);
    EXPECT_EQ(panel, panel_letter(kPanels[p]));
    EXPECT_NEAR(std::stod(coef), direct[p][b].coef, 1e-6);
    ++rows;
  }
  EXPECT_EQ(rows, 9);
  EXPECT_TRUE(fs::exists(path("rep/table2.txt")));
}

TEST_F(Cli, DmlRerunFromManifestIsByteIdentical) {
  const std::string csv = synthetic(600);
  const CliResult first = run({"--out", path("a"), "--seed", "11", "dml", "--data", csv, "--model", "irm-atte", "--band",
                         "1000", "--outcome-learner", "linear_ridge", "--treatment-learner", "logistic",
                         "--folds", "3", "--write-psi"});
  ASSERT_EQ(first.code, kExitOk) << first.err;
  const CliResult again = run({"--out", path("b"), "--from-manifest", path("a/manifest.json")});
  ASSERT_EQ(again.code, kExitOk) << again.err;
  EXPECT_EQ(read_file(path("a/estimate.json")), read_file(path("b/estimate.json")));
  const auto est = nlohmann::json::parse(read_file(path("a/estimate.json")));
  EXPECT_EQ(est.at("manifest_file"), "manifest.json");

  const CliResult other = run({"--out", path("c"), "--seed", "12", "dml", "--data", csv, "--model", "irm-atte", "--band",
                         "1000", "--outcome-learner", "linear_ridge", "--treatment-learner", "logistic",
                         "--folds", "3", "--write-psi"});
  ASSERT_EQ(other.code, kExitOk);
  EXPECT_NE(read_file(path("a/estimate.json")), read_file(path("c/estimate.json")));
}

TEST_F(Cli, DmlGridWritesTable) {
  const std::string csv = synthetic(900);
  const CliResult r = run({"--out", path("g"), "--threads", "2", "dml", "--data", csv, "--grid", "--model", "plr",
                     "--outcome-learner", "linear_ridge", "--treatment-learner", "linear_ridge", "--folds", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::istringstream tsv(read_file(path("g/table3.tsv")));
  std::string line;
  std::getline(tsv, line);
  EXPECT_EQ(line, "panel\tband_km\ttheta\tse\tstars\tn\tclusters");
  int rows = 0;
  while (std::getline(tsv, line)) ++rows;
  EXPECT_EQ(rows, 9);
}

TEST_F(Cli, GradcheckAndMonteCarlo) {
  CliResult r = run({"--out", path("gc"), "gradcheck"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::istringstream tsv(read_file(path("gc/gradcheck.tsv")));
  std::string line;
  std::getline(tsv, line);
  int rows = 0;
  while (std::getline(tsv, line)) {
    EXPECT_LT(std::stod(line.substr(line.rfind('\t') + 1)), 1e-4) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 16);

  write("mc.json", R"({"dgp": {"n": 300}, "estimator": {"dml": {"outcome_learner": {"kind": "linear_ridge"},
                        "treatment_learner": {"kind": "linear_ridge"}, "k_folds": 2}}})");
  r = run({"--out", path("mc"), "montecarlo", "--config", path("mc.json"), "--reps", "3"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto report = nlohmann::json::parse(read_file(path("mc/mc_report.json")));
  EXPECT_EQ(report.at("reps"), 3);
  EXPECT_TRUE(fs::exists(path("mc/mc_report.tsv")));
  EXPECT_EQ(run({"--out", path("mc"), "montecarlo", "--reps", "1"}).code, kExitInput);
}

TEST_F(Cli, OrthoprobeOnSuppliedData) {
  const std::string csv = synthetic(1500);
  const CliResult r = run({"--out", path("p"), "orthoprobe", "--data", csv, "--band", "1000", "--outcome-learner",
                     "linear_ridge", "--treatment-learner", "linear_ridge"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto probe = nlohmann::json::parse(read_file(path("p/probe.json")));
  EXPECT_FALSE(probe.at("rows").empty());
  EXPECT_TRUE(fs::exists(path("p/probe.tsv")));
}
