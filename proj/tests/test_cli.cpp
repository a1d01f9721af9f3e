#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli_app.hpp"

namespace fs = std::filesystem;
using namespace stopline;

namespace {

const fs::path kConfigs = STOPLINE_CONFIG_DIR;

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "stopline");
  std::vector<const char*> argv;
  for (const auto& a : args)
    argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string config(const char* name) { return (kConfigs / (std::string(name) + ".json")).string(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    root = fs::temp_directory_path() / ("stopline_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  void TearDown() override { fs::remove_all(root); }
  std::string dir(const char* name) const { return (root / name).string(); }
  fs::path root;
};

} // namespace

TEST_F(Cli, CheckExitCodes) {
  EXPECT_EQ(run({"check", "-c", config("poisson_example"), "-o", dir("a")}).code, 0);
  EXPECT_EQ(run({"check", "-c", config("alpha_violation"), "-o", dir("b")}).code, 1);
  EXPECT_EQ(run({"check", "-c", config("missing_model"), "-o", dir("c")}).code, 2);
  EXPECT_EQ(run({"check", "-c", dir("nope.json"), "-o", dir("d")}).code, 2);
  EXPECT_EQ(run({"check", "-o", dir("e")}).code, 2);
  EXPECT_EQ(run({"launch", "-c", config("put")}).code, 2);
  const auto j = json::parse(slurp(root / "a" / "check.json"));
  EXPECT_TRUE(j["assumptions"]["ok"].get<bool>());
  EXPECT_FALSE(j["moment_report"]["M_bar_attained"].get<bool>());
  const auto v = json::parse(slurp(root / "b" / "check.json"));
  EXPECT_FALSE(v["assumptions"]["hard_violations"].empty());
}

TEST_F(Cli, HelpIsNotAnError) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("verify"), std::string::npos);
}

TEST_F(Cli, ContractiveConfigMeetsTheGammaCondition) {
  ASSERT_EQ(run({"check", "-c", config("bump_contractive"), "-o", dir("a")}).code, 0);
  const auto j = json::parse(slurp(root / "a" / "check.json"));
  EXPECT_TRUE(j["gamma_condition"].get<bool>());
}

TEST_F(Cli, SolveConstantObstacle) {
  ASSERT_EQ(run({"solve", "-c", config("constant_one"), "-o", dir("a")}).code, 0);
  std::istringstream csv(slurp(root / "a" / "grid.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "n,x,v,g,contact");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::istringstream row(line);
    std::string n, x, v, g, c;
    std::getline(row, n, ',');
    std::getline(row, x, ',');
    std::getline(row, v, ',');
    std::getline(row, g, ',');
    std::getline(row, c, ',');
    EXPECT_NEAR(std::stod(v), 1.0, 1e-8);
    EXPECT_EQ(c, "1");
    ++rows;
  }
  EXPECT_EQ(rows, 301u);
  const auto log = json::parse(slurp(root / "a" / "solver_log.json"));
  EXPECT_EQ(log["settings"]["n_cells"], 300);
}

TEST_F(Cli, ValueTrivialRoot) {
  const auto r = run({"value", "-c", config("bump_binary"), "-o", dir("a"), "--rule", R"({"kind":"trivial_root"})",
                      "--start", "0.3", "--set", "mc.reps=20"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(slurp(root / "a" / "value.json"));
  EXPECT_DOUBLE_EQ(j["mean"].get<double>(), 0.8 * std::exp(-0.09));
  EXPECT_EQ(j["stderr"].get<double>(), 0.0);
  EXPECT_EQ(j["reps"], 20);
  EXPECT_FALSE(fs::exists(root / "a" / "grid.csv"));
}

TEST_F(Cli, ValueWithContactRuleSolvesFirst) {
  const auto r = run({"value", "-c", config("bump_binary"), "-o", dir("a"), "--set", "mc.reps=50", "--samples"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root / "a" / "grid.csv"));
  EXPECT_TRUE(fs::exists(root / "a" / "samples.csv"));
  const auto j = json::parse(slurp(root / "a" / "value.json"));
  EXPECT_EQ(j["rule"]["kind"], "contact_set");
}

TEST_F(Cli, OverridesReachNestedFields) {
  const auto r = run({"simulate", "-c", config("bump_binary"), "-o", dir("a"), "--set", "simulate.horizon=0.5",
                      "--set", "simulate.seed=77"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(slurp(root / "a" / "simulate.json"));
  EXPECT_EQ(j["horizon"], 0.5);
  EXPECT_EQ(j["seed"], 77);
  EXPECT_TRUE(fs::exists(root / "a" / "forest.csv"));
  EXPECT_TRUE(fs::exists(root / "a" / "paths.csv"));
  EXPECT_EQ(run({"simulate", "-c", config("bump_binary"), "-o", dir("b"), "--set", "novalue"}).code, 2);
  EXPECT_EQ(run({"simulate", "-c", config("bump_binary"), "-o", dir("b"), "--set", "mc.reps=1"}).code, 2);
}

TEST_F(Cli, ApplyOverride) {
  json j{{"mc", {{"seed", 1}}}};
  apply_override(j, "mc.seed=5");
  apply_override(j, "mc.cut_policy=force_stop");
  apply_override(j, "verify.points=[1,2]");
  EXPECT_EQ(j["mc"]["seed"], 5);
  EXPECT_EQ(j["mc"]["cut_policy"], "force_stop");
  EXPECT_EQ(j["verify"]["points"].size(), 2u);
  EXPECT_THROW(apply_override(j, "mc.seed.x=1"), ConfigError);
  EXPECT_THROW(apply_override(j, "=1"), ConfigError);
}

TEST_F(Cli, NonConvergenceExitsWithThree) {
  const auto r = run({"solve", "-c", config("bump_binary"), "-o", dir("a"), "--set", "solver.max_outer=2"});
  EXPECT_EQ(r.code, 3);
  const auto meta = json::parse(slurp(root / "a" / "meta.json"));
  EXPECT_EQ(meta["exit_code"], 3);
}

TEST_F(Cli, RerunsAreByteIdenticalApartFromMeta) {
  const std::vector<std::string> extra{"--set", "mc.reps=200", "--set", "verify.points=[1.0]", "--set",
                                       "verify.dpp_points=[1.0]", "--set", "verify.branching.samples=200"};
  auto args = [&](const char* out) {
    std::vector<std::string> a{"verify", "-c", config("bump_binary"), "-o", dir(out)};
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  ASSERT_EQ(run(args("a")).code, 0);
  ASSERT_EQ(run(args("b")).code, 0);
  for (const char* f : {"grid.csv", "solver_log.json", "verify.json"})
    EXPECT_EQ(slurp(root / "a" / f), slurp(root / "b" / f)) << f;
}

TEST_F(Cli, ThreadCountDoesNotChangeResults) {
  ASSERT_EQ(run({"value", "-c", config("bump_binary"), "-o", dir("a"), "--set", "mc.reps=300", "--threads", "1"}).code, 0);
  ASSERT_EQ(run({"value", "-c", config("bump_binary"), "-o", dir("b"), "--set", "mc.reps=300", "--threads", "3"}).code, 0);
  EXPECT_EQ(slurp(root / "a" / "value.json"), slurp(root / "b" / "value.json"));
  EXPECT_EQ(json::parse(slurp(root / "b" / "meta.json"))["threads"], 3);
}

TEST_F(Cli, WritesOnlyIntoTheOutputDirectory) {
  const auto before = fs::last_write_time(kConfigs);
  ASSERT_EQ(run({"value", "-c", config("bump_binary"), "-o", dir("only"), "--set", "mc.reps=20"}).code, 0);
  for (const auto& e : fs::recursive_directory_iterator(root))
    EXPECT_EQ(*e.path().lexically_relative(root).begin(), "only") << e.path();
  EXPECT_EQ(fs::last_write_time(kConfigs), before);
  const auto meta = json::parse(slurp(root / "only" / "meta.json"));
  for (const auto& f : meta["files"])
    EXPECT_TRUE(fs::exists(root / "only" / f.get<std::string>()));
  EXPECT_TRUE(meta.contains("started_utc"));
  EXPECT_TRUE(meta.contains("host"));
}

TEST_F(Cli, VerifyPutPipeline) {
  const auto r = run({"verify", "-c", config("put"), "-o", dir("a"), "--set", "mc.reps=1000"});
  ASSERT_EQ(r.code, 0) << r.out << r.err;
  const auto j = json::parse(slurp(root / "a" / "verify.json"));
  for (const auto& p : j["points"])
    EXPECT_LE(std::abs(p["z_score"].get<double>()), 3.0);
  for (const auto& d : j["dpp"])
    EXPECT_LE(std::abs(d["z_score"].get<double>()), 3.0);
  EXPECT_TRUE(j["pass"].get<bool>());
}

TEST_F(Cli, VerifyConstantObstacleIsExact) {
  ASSERT_EQ(run({"verify", "-c", config("constant_one"), "-o", dir("a")}).code, 0);
  const auto j = json::parse(slurp(root / "a" / "verify.json"));
  for (const auto& p : j["points"]) {
    EXPECT_EQ(p["j_mc"]["mean"], 1.0);
    EXPECT_NEAR(p["v_pde"].get<double>(), 1.0, 1e-8);
  }
}

TEST_F(Cli, ThreadsFallBackToEnvironment) {
  ::setenv("STOPLINE_THREADS", "2", 1);
  const auto r = run({"value", "-c", config("bump_binary"), "-o", dir("a"), "--set", "mc.reps=20"});
  ::unsetenv("STOPLINE_THREADS");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(json::parse(slurp(root / "a" / "meta.json"))["threads"], 2);
}
