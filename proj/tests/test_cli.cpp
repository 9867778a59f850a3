#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const std::string kCli = SCGLR_CLI_PATH;
const std::string kData = std::string(SCGLR_DATA_DIR) + "/example.csv";
const std::string kRoles = std::string(SCGLR_DATA_DIR) + "/example_roles.json";

int run(const std::string& args) {
  const std::string cmd = "'" + kCli + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::vector<std::vector<std::string>> rows(const fs::path& p) {
  std::vector<std::vector<std::string>> out;
  std::stringstream ss(slurp(p));
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    out.push_back(cells);
  }
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("scglr_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string data_args() const { return "--data '" + kData + "' --roles '" + kRoles + "'"; }
  std::string at(const std::string& name) const { return "'" + (dir_ / name).string() + "'"; }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, FitWritesModelAndTables) {
  ASSERT_EQ(run("fit " + data_args() + " --K 2 --out " + at("fit")), 0);
  for (const char* f : {"model.json", "coefficients.csv", "random_effects.csv", "diagnostics.csv"})
    EXPECT_TRUE(fs::exists(dir_ / "fit" / f)) << f;
  const auto coef = rows(dir_ / "fit" / "coefficients.csv");
  ASSERT_FALSE(coef.empty());
  EXPECT_EQ(coef[0], (std::vector<std::string>{"response", "term", "standardized", "original"}));
  // Header plus (intercept, 8 X terms, t1) per response.
  EXPECT_EQ(coef.size(), 1u + 2u * 10u);
  const std::string csv = slurp(dir_ / "fit" / "coefficients.csv");
  EXPECT_EQ(csv.rfind("# scglr 1.0.0\n", 0), 0u);
  EXPECT_NE(csv.find("# config_hash: "), std::string::npos);
}

TEST_F(Cli, NullModelHasZeroXCoefficients) {
  ASSERT_EQ(run("fit " + data_args() + " --K 0 --out " + at("fit")), 0);
  for (const auto& r : rows(dir_ / "fit" / "coefficients.csv")) {
    if (r[1].size() < 2 || r[1][0] != 'x') continue;
    EXPECT_EQ(std::stod(r[2]), 0.0) << r[1];
    EXPECT_EQ(std::stod(r[3]), 0.0) << r[1];
  }
}

TEST_F(Cli, RerunsAreByteIdenticalAcrossThreadCounts) {
  ASSERT_EQ(run("fit " + data_args() + " --K 3 --threads 1 --out " + at("a")), 0);
  ASSERT_EQ(run("fit " + data_args() + " --K 3 --threads 4 --out " + at("b")), 0);
  for (const char* f : {"model.json", "coefficients.csv", "random_effects.csv", "diagnostics.csv"})
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
}

TEST_F(Cli, PredictFromSavedModel) {
  ASSERT_EQ(run("fit " + data_args() + " --K 2 --out " + at("fit")), 0);
  ASSERT_EQ(run("predict " + data_args() + " --model " + at("fit/model.json") + " --out " +
                at("pred.csv")),
            0);
  const auto p = rows(dir_ / "pred.csv");
  ASSERT_EQ(p.size(), 61u);
  EXPECT_EQ(p[0], (std::vector<std::string>{"row", "eta_y1", "eta_y2", "mu_y1", "mu_y2"}));
  for (std::size_t i = 1; i < p.size(); ++i) EXPECT_GT(std::stod(p[i][4]), 0.0);
  EXPECT_EQ(run("predict " + data_args() + " --model " + at("missing.json")), 2);
}

TEST_F(Cli, SimulateSmallStudy) {
  ASSERT_EQ(run("simulate --taus 0.5 --replicates 2 --seed 3 --out " + at("sim")), 0);
  const auto reps = rows(dir_ / "sim" / "replicates.csv");
  int lmm = 0, scglr = 0;
  for (std::size_t i = 1; i < reps.size(); ++i) {
    lmm += reps[i][2] == "LMM";
    scglr += reps[i][2] == "Mixed-SCGLR";
  }
  EXPECT_EQ(lmm, 2);
  EXPECT_EQ(scglr, 2);
  const auto summary = rows(dir_ / "sim" / "summary.csv");
  ASSERT_EQ(summary.size(), 2u);
  EXPECT_EQ(summary[0][0], "tau");
  EXPECT_EQ(summary[0][1], "LMM");
  EXPECT_EQ(summary[0][2], "Mixed-SCGLR");
}

TEST_F(Cli, CrossValidationPicksInformativeComponent) {
  // y1 is driven by the x1..x3 bundle, so one component beats none.
  ASSERT_EQ(run("cv " + data_args() + " --k-grid 0,1 --seed 1 --out " + at("cv")), 0);
  const std::string sel = slurp(dir_ / "cv" / "selection.json");
  EXPECT_NE(sel.find("\"K\": 1"), std::string::npos) << sel;
  const auto table = rows(dir_ / "cv" / "cv.csv");
  EXPECT_EQ(table.size(), 3u);
  EXPECT_TRUE(fs::exists(dir_ / "cv" / "model.json"));
}

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("cv " + data_args() + " --seed 1 --k-grid \"\""), 2);
  EXPECT_EQ(run("cv " + data_args() + " --k-grid 0,1"), 2);
  EXPECT_EQ(run("fit " + data_args() + " --K two"), 2);
  EXPECT_EQ(run("fit " + data_args() + " --bogus 1"), 2);
  EXPECT_EQ(run("nosuchcommand"), 2);
  EXPECT_EQ(run("fit --data '" + kData + "'"), 2);
}

TEST_F(Cli, OutOfRangeHyperparametersAreUsageErrors) {
  EXPECT_EQ(run("fit " + data_args() + " --K 99 --out " + at("fit")), 2);
  EXPECT_EQ(run("fit " + data_args() + " --s 2 --out " + at("fit")), 2);
  EXPECT_EQ(run("fit " + data_args() + " --l 0.5 --out " + at("fit")), 2);
  EXPECT_FALSE(fs::exists(dir_ / "fit"));
}

TEST_F(Cli, MalformedDataExitsWithOne) {
  spit(dir_ / "bad.csv", "site,x1,x2,x3,x4,x5,x6,x7,x8,t1,y1,y2\nnorth,1,2,3,4,5,6,7,oops,0,1,2\n");
  EXPECT_EQ(run("fit --data " + at("bad.csv") + " --roles '" + kRoles + "' --out " + at("fit")), 1);
}

TEST_F(Cli, PlotdataColumnsAndPlaneValidation) {
  ASSERT_EQ(run("fit " + data_args() + " --K 2 --out " + at("fit")), 0);
  ASSERT_EQ(run("plotdata " + data_args() + " --model " + at("fit/model.json") +
                " --threshold 0 --out " + at("plot.csv")),
            0);
  const auto p = rows(dir_ / "plot.csv");
  ASSERT_EQ(p.size(), 1u + 8u + 2u);
  EXPECT_EQ(p[0], (std::vector<std::string>{"name", "cor1", "cor2", "cosine", "supplementary"}));
  EXPECT_EQ(p.back()[0], "lp_y2");
  EXPECT_EQ(run("plotdata " + data_args() + " --model " + at("fit/model.json") +
                " --plane 1,1 --out " + at("bad.csv")),
            2);
}

TEST_F(Cli, ConfigFileSuppliesDefaultsAndFlagsWin) {
  spit(dir_ / "cfg.json", R"({"K": 1, "s": 0.3, "max_iterations": 50})");
  ASSERT_EQ(run("fit " + data_args() + " --config " + at("cfg.json") + " --out " + at("a")), 0);
  ASSERT_EQ(run("fit " + data_args() + " --K 1 --s 0.3 --max-iterations 50 --out " + at("b")), 0);
  EXPECT_EQ(slurp(dir_ / "a" / "coefficients.csv"), slurp(dir_ / "b" / "coefficients.csv"));

  ASSERT_EQ(run("fit " + data_args() + " --config " + at("cfg.json") + " --K 2 --out " + at("c")),
            0);
  ASSERT_EQ(run("fit " + data_args() + " --K 2 --s 0.3 --max-iterations 50 --out " + at("d")), 0);
  EXPECT_EQ(slurp(dir_ / "c" / "model.json"), slurp(dir_ / "d" / "model.json"));

  spit(dir_ / "bad.json", R"({"not_an_option": 1})");
  EXPECT_EQ(run("fit " + data_args() + " --config " + at("bad.json")), 2);
}
