#include <cstdlib>
#include <filesystem>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "commands.hpp"
#include "test_util.hpp"

using namespace urbanflow;
using testing_util::slurp;
using testing_util::TempDir;

namespace {

const std::string kMunis = std::string(FIXTURE_DIR) + "/municipalities.csv";
const std::string kPops = std::string(FIXTURE_DIR) + "/populations.csv";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json read_json(const std::filesystem::path& p) { return nlohmann::json::parse(slurp(p)); }

SimConfig small_config() {
  SimConfig c;
  c.n = 12;
  c.box_km = 150;
  c.dt = 0.5;
  c.steps = 400;
  c.record_stride = 2;
  c.seed = 77;
  return c;
}

}  // namespace

TEST(Analyze, FixtureProducesAllOutputs) {
  TempDir dir;
  const auto res = cli::cmd_analyze(kMunis, kPops, true, {}, dir.path());
  for (const char* f : {"variance_scatter.csv", "variance_fit.json", "correlations.csv", "distance_curve.csv",
                        "lorentzian_fit.json", "rc_histogram.csv", "lag_curve.csv", "exponential_fit.json",
                        "correlation_by_population.csv", "summary.json", "manifest.json"})
    EXPECT_TRUE(std::filesystem::exists(dir.path() / f)) << f;
  EXPECT_EQ(res.retained_cities, 5u);
  EXPECT_EQ(res.pairs, 10u);
  ASSERT_TRUE(res.variance_fit && res.lorentzian_fit && res.exponential_fit);
  EXPECT_TRUE(res.variance_fit->converged);
  EXPECT_TRUE(res.lorentzian_fit->converged);
  EXPECT_TRUE(res.exponential_fit->converged);

  const auto manifest = read_json(dir.path() / "manifest.json");
  EXPECT_EQ(manifest["command"], "analyze");
  EXPECT_TRUE(manifest["seed"].is_null());
  EXPECT_EQ(manifest["inputs"].size(), 2u);
  EXPECT_EQ(manifest["inputs"][1]["sha256"], cli::file_digest(kPops));
  EXPECT_EQ(manifest["outputs"].size(), 10u);
  for (const auto& o : manifest["outputs"])
    EXPECT_EQ(o["sha256"], cli::file_digest(dir.path() / o["file"].get<std::string>())) << o["file"];
}

TEST(Analyze, Deterministic) {
  TempDir a, b;
  cli::cmd_analyze(kMunis, kPops, true, {}, a.path());
  cli::cmd_analyze(kMunis, kPops, true, {}, b.path());
  EXPECT_EQ(slurp(a.path() / "manifest.json"), slurp(b.path() / "manifest.json"));
}

TEST(Analyze, ThresholdExcludingEverythingIsAnError) {
  TempDir dir;
  cli::AnalyzeOptions opt;
  opt.min_x = 0.9;
  EXPECT_THROW(cli::cmd_analyze(kMunis, kPops, true, opt, dir.path()), ValidationError);
}

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(cli::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(cli::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Simulate, SameSeedSameDigest) {
  TempDir a, b;
  const auto ra = cli::cmd_simulate(small_config(), a.path());
  const auto rb = cli::cmd_simulate(small_config(), b.path(), false);
  EXPECT_EQ(ra.trajectory_digest, rb.trajectory_digest);
  EXPECT_EQ(cli::file_digest(a.path() / "trajectory.csv"), ra.trajectory_digest);
  EXPECT_FALSE(std::filesystem::exists(b.path() / "trajectory.csv"));
  auto other = small_config();
  other.seed = 78;
  EXPECT_NE(cli::cmd_simulate(other, "").trajectory_digest, ra.trajectory_digest);
  const auto m = read_json(a.path() / "manifest.json");
  EXPECT_EQ(m["seed"], 77u);
  EXPECT_EQ(m["parameters"]["trajectory_sha256"], ra.trajectory_digest);
  EXPECT_TRUE(std::filesystem::exists(a.path() / "sim_populations.csv"));
}

TEST(Simulate, ConfigReplays) {
  TempDir a, b;
  const auto ra = cli::cmd_simulate(small_config(), a.path(), false);
  const auto replay = sim_config_from_json(read_json(a.path() / "config.json"));
  EXPECT_EQ(cli::cmd_simulate(replay, b.path(), false).trajectory_digest, ra.trajectory_digest);
}

TEST(Modes, ExportsRequestedModes) {
  TempDir dir;
  const auto pts = sample_positions(10, 250, 3);
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("c" + std::to_string(i));
  const auto res = cli::cmd_modes(ids, pts, 74.0, 4, dir.path(), {}, nlohmann::json::array(), 3);
  for (int k = 1; k <= 4; ++k) EXPECT_TRUE(std::filesystem::exists(dir.path() / ("mode_" + std::to_string(k) + ".csv")));
  EXPECT_FALSE(std::filesystem::exists(dir.path() / "mode_5.csv"));
  const auto Q = build_Q(build_R(pts, 74.0));
  const auto& m = res.modes;
  EXPECT_LT((m.basis.transpose() * m.eigenvalues.asDiagonal() * m.basis - Q).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_THROW(cli::cmd_modes(ids, pts, 74.0, 11, dir.path(), {}, nlohmann::json::array(), 3), ValidationError);
}

TEST(Loopback, ZeroForceIsDegenerate) {
  TempDir dir;
  auto c = small_config();
  c.v_f = 0.0;
  c.dt = 1.0;
  const auto rep = cli::cmd_loopback(c, 10, 2.0, dir.path());
  EXPECT_TRUE(rep.degenerate);
  EXPECT_TRUE(read_json(dir.path() / "report.json")["degenerate"].get<bool>());
}

TEST(Loopback, ReportsRecoveredParameters) {
  TempDir dir;
  auto c = small_config();
  c.n = 30;
  c.dt = 0.5;
  c.steps = 1200;
  c.burn_in = 200;
  const auto rep = cli::cmd_loopback(c, 10, 2.0, dir.path());
  ASSERT_TRUE(rep.exponential_fit.has_value());
  const auto j = read_json(dir.path() / "report.json");
  EXPECT_TRUE(j["recovered"].contains("tau"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "analysis" / "lag_curve.csv"));
}

TEST(ExitCodes, SuccessValidationAndRuntime) {
  TempDir dir;
  const std::string out = " --out-dir " + (dir.path() / "o").string();
  EXPECT_EQ(run_cli("--planar" + out + " analyze --municipalities " + kMunis + " --populations " + kPops), 0);
  EXPECT_EQ(run_cli("--seed 1" + out + " simulate --n 5 --steps 10 --burn-in 20"), 2);
  EXPECT_EQ(run_cli("--seed 1" + out + " simulate --n 5 --steps 50 --gamma 0"), 2);
  EXPECT_EQ(run_cli("--seed 1" + out + " modes --n 5 --k 6"), 2);
  EXPECT_EQ(run_cli(out + " frobnicate"), 2);
  EXPECT_EQ(run_cli("--seed 1" + out + " simulate --n 5 --steps 50"), 0);
  const auto bad = dir.write("bad.csv", "id,year,population\nm1,1991,abc\n");
  EXPECT_EQ(run_cli("--planar" + out + " analyze --municipalities " + kMunis + " --populations " + bad), 2);
  // Large steps in a narrow domain overshoot the reflection: a runtime failure.
  EXPECT_EQ(run_cli("--seed 1" + out + " simulate --n 3 --vf 100 --dt 1 --xm 1.01 --steps 100"), 1);
}

TEST(ExitCodes, SeedIsPrintedWhenAbsent) {
  TempDir dir;
  const std::string cmd = std::string(CLI_PATH) + " --out-dir " + (dir.path() / "o").string() +
                          " simulate --n 3 --steps 20 > " + (dir.path() / "stdout.txt").string();
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  const auto text = slurp(dir.path() / "stdout.txt");
  EXPECT_EQ(text.rfind("seed: ", 0), 0u);
  EXPECT_FALSE(read_json(dir.path() / "o" / "manifest.json")["seed"].is_null());
}
