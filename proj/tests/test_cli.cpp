#include "qdetect/pipeline.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace qdetect;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string quote(const std::string& s) {
    std::string q = "'";
    for (char ch : s) q += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
    return q + "'";
}

/// Fresh scratch directory per test, removed on destruction.
struct TempDir {
    fs::path path;
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path = fs::temp_directory_path() /
               ("qdetect_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

RunResult run_cli(const TempDir& dir, const std::vector<std::string>& args) {
    std::string cmd = quote(QDETECT_CLI_PATH);
    for (const auto& a : args) cmd += " " + quote(a);
    std::string out = dir / "stdout.txt", err = dir / "stderr.txt";
    cmd += " >" + quote(out) + " 2>" + quote(err);
    int status = std::system(cmd.c_str());
    int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return {code, slurp(out), slurp(err)};
}

/// Declining log mortality with a few shocks, 1950..2000, age 45.
std::vector<double> fixture_mu() {
    std::vector<double> mu;
    double lm = std::log(0.006);
    for (int i = 0; i <= 50; ++i) {
        mu.push_back(std::exp(lm));
        double wiggle = 0.012 * std::sin(1.7 * i) + 0.008 * std::cos(0.9 * i * i);
        double shock = (i == 12 ? 0.15 : 0.0) + (i == 27 ? -0.12 : 0.0);
        lm += -0.012 + wiggle + shock;
    }
    return mu;
}

std::string write_fixture(const TempDir& dir, const std::vector<double>& mu = fixture_mu()) {
    std::string p = dir / "table.csv";
    std::ofstream(p) << life_table_csv(life_table_from_mu(1950, 45, mu));
    return p;
}

std::vector<std::string> data_args(const std::string& table) {
    return {"--data", table, "--format", "csv", "--age", "45", "--window-start", "1960", "--window-end", "1980",
            "--detect-start", "1980"};
}

template <class... T>
std::vector<std::string> concat(std::vector<std::string> a, const T&... rest) {
    (a.insert(a.end(), rest.begin(), rest.end()), ...);
    return a;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

TEST(Cli, HelpExitsZero) {
    TempDir dir;
    auto r = run_cli(dir, {"--help"});
    EXPECT_EQ(r.exit_code, 0);
    for (const char* sub : {"calibrate", "threshold", "detect", "simulate", "risk", "pipeline"})
        EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, UnknownOptionIsConfigError) {
    TempDir dir;
    auto r = run_cli(dir, {"threshold", "--no-such-flag", "1"});
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.err.find("\"error\""), std::string::npos);
}

TEST(Cli, CalibrateFourYearWindow) {
    TempDir dir;
    auto table = write_fixture(dir);
    auto r = run_cli(dir, {"calibrate", "--data", table, "--format", "csv", "--age", "45", "--window-start", "1960",
                           "--window-end", "1963", "--detect-start", "1964", "--out", dir.path.string()});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    auto j = Json::parse(slurp(dir.path / "calibration.json"));
    for (const char* k : {"a0", "a1", "sigma", "mu_inf", "w", "p1", "p2", "jump_indices", "alpha", "warnings"})
        EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_EQ(Json::parse(r.out), j);
    EXPECT_TRUE(fs::exists(dir.path / "residuals.csv"));
}

TEST(Cli, WindowOutsideDataIsConfigError) {
    TempDir dir;
    auto table = write_fixture(dir);
    auto r = run_cli(dir, {"calibrate", "--data", table, "--format", "csv", "--window-start", "1900", "--window-end",
                           "1930", "--detect-start", "1940", "--out", dir.path.string()});
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_EQ(Json::parse(r.err)["error"]["kind"], "config");
}

TEST(Cli, MissingDataFileIsDataError) {
    TempDir dir;
    auto r = run_cli(dir, concat(std::vector<std::string>{"calibrate"}, data_args(dir / "missing.csv")));
    EXPECT_EQ(r.exit_code, 3);
    EXPECT_EQ(Json::parse(r.err)["error"]["exit_code"], 3);
}

TEST(Cli, CalibrationMatchesLibrary) {
    TempDir dir;
    auto table = write_fixture(dir);
    auto r = run_cli(dir, concat(std::vector<std::string>{"calibrate"}, data_args(table),
                                 std::vector<std::string>{"--out", dir.path.string()}));
    ASSERT_EQ(r.exit_code, 0) << r.err;
    RunConfig c;
    c.data_path = table;
    c.data_format = "csv";
    c.age = 45;
    c.window_start = 1960;
    c.window_end = 1980;
    c.detection_start = 1980;
    auto cal = run_calibration(c, load_config_table(c));
    EXPECT_EQ(slurp(dir.path / "calibration.json"), io::dump(calibration_json(cal.result, c)) + "\n");
}

TEST(Cli, ThresholdWithoutJumps) {
    TempDir dir;
    auto r = run_cli(dir, {"threshold", "--sigma", "0.03", "--mu-inf", "0", "--r", "-0.09", "--out",
                           dir.path.string()});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    auto j = Json::parse(slurp(dir.path / "threshold.json"));
    double A = j["a_star"];
    EXPECT_GT(A, 0.0);
    EXPECT_LT(A, 1.0);
    EXPECT_NEAR(j["b_star"].get<double>(), A / (1 - A), 1e-12 * j["b_star"].get<double>());
    EXPECT_TRUE(fs::exists(dir.path / "solution.csv"));
}

TEST(Cli, DegenerateGammaExitsWithMathError) {
    // Choose r so that beta0 = -0.5 / w, which gives gamma = -2.
    const double sigma = 0.03, w = 0.0625, mu = 0.2, b = -0.5 / w;
    const double dM = 0.5 * w / ((1 - b * w) * (1 - b * w)) - 0.5 * w / ((1 + b * w) * (1 + b * w));
    const double r = b * sigma * sigma + mu * dM;
    TempDir dir;
    auto res = run_cli(dir, {"threshold", "--sigma", fmt(sigma), "--mu-inf", fmt(mu), "--w", fmt(w), "--p1", "0.5",
                             "--r", fmt(r), "--out", dir.path.string()});
    EXPECT_EQ(res.exit_code, 4) << res.out << res.err;
    EXPECT_EQ(Json::parse(res.err)["error"]["kind"], "degenerate_gamma");
}

TEST(Cli, ThresholdIsBitReproducible) {
    TempDir dir;
    auto table = write_fixture(dir);
    std::vector<std::string> base = concat(std::vector<std::string>{"threshold"}, data_args(table));
    auto a = run_cli(dir, concat(base, std::vector<std::string>{"--out", dir / "a"}));
    auto b = run_cli(dir, concat(base, std::vector<std::string>{"--out", dir / "b"}));
    ASSERT_EQ(a.exit_code, 0) << a.err;
    ASSERT_EQ(b.exit_code, 0) << b.err;
    EXPECT_EQ(slurp(dir.path / "a" / "threshold.json"), slurp(dir.path / "b" / "threshold.json"));
    EXPECT_EQ(slurp(dir.path / "a" / "solution.csv"), slurp(dir.path / "b" / "solution.csv"));
}

TEST(Cli, DetectWithoutAlarm) {
    // A pure drift line with tiny noise never moves the statistic towards the alternative.
    std::vector<double> mu;
    for (int i = 0; i <= 50; ++i) mu.push_back(0.006 * std::exp(-0.012 * i + 0.01 * std::sin(2.1 * i)));
    TempDir dir;
    auto table = write_fixture(dir, mu);
    auto r = run_cli(dir, concat(std::vector<std::string>{"detect"}, data_args(table),
                                 std::vector<std::string>{"--out", dir.path.string()}));
    ASSERT_EQ(r.exit_code, 0) << r.err;
    auto j = Json::parse(slurp(dir.path / "detection.json"));
    EXPECT_EQ(j["alarm"], false);
    EXPECT_TRUE(j["alarm_year"].is_null());
    EXPECT_TRUE(j["alarm_index"].is_null());
    EXPECT_EQ(j["first_year"], 1980);
    EXPECT_EQ(j["last_year"], 2000);
    EXPECT_TRUE(fs::exists(dir.path / "trajectory.csv"));
}

TEST(Cli, SimulateAndRiskAreSeedDeterministic) {
    TempDir dir;
    std::vector<std::string> model{"--sigma", "0.03", "--mu-inf", "0.2", "--w", "0.06", "--p1", "0.5",
                                   "--r",     "-0.09", "--seed", "17"};
    for (const char* sub : {"a", "b"}) {
        auto s = run_cli(dir, concat(std::vector<std::string>{"simulate"}, model,
                                     std::vector<std::string>{"--n-steps", "200", "--out", dir / sub}));
        ASSERT_EQ(s.exit_code, 0) << s.err;
        auto r = run_cli(dir, concat(std::vector<std::string>{"risk"}, model,
                                     std::vector<std::string>{"--n-paths", "400", "--horizon", "100",
                                                              "--n-thresholds", "5", "--out", dir / sub}));
        ASSERT_EQ(r.exit_code, 0) << r.err;
    }
    EXPECT_EQ(slurp(dir.path / "a" / "paths.csv"), slurp(dir.path / "b" / "paths.csv"));
    EXPECT_EQ(slurp(dir.path / "a" / "risk.csv"), slurp(dir.path / "b" / "risk.csv"));
    auto other = run_cli(dir, {"simulate", "--sigma", "0.03", "--r", "-0.09", "--seed", "18", "--n-steps", "200",
                               "--out", dir / "c"});
    ASSERT_EQ(other.exit_code, 0) << other.err;
    EXPECT_NE(slurp(dir.path / "a" / "paths.csv"), slurp(dir.path / "c" / "paths.csv"));
}

TEST(Cli, RiskNonincreasingForTinyCost) {
    TempDir dir;
    auto r = run_cli(dir, {"risk", "--sigma", "0.03", "--r", "-0.09", "--cost", "1e-9", "--n-paths", "1000",
                           "--horizon", "200", "--b-min", "0.5", "--b-max", "50", "--n-thresholds", "6", "--out",
                           dir.path.string()});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    auto j = Json::parse(slurp(dir.path / "risk.json"));
    ASSERT_TRUE(j.contains("curve"));
    double prev = INFINITY;
    for (const auto& pt : j["curve"]) {
        double v = pt["risk"];
        EXPECT_LE(v, prev + 1e-12);
        prev = v;
    }
}

TEST(Cli, KeyValueConfigWithFlagOverride) {
    TempDir dir;
    std::ofstream(dir / "run.cfg") << "# toy model\nsigma = 0.03\nr = -0.09\ncost = 0.02\nlambda = 0.05\n";
    auto r = run_cli(dir, {"threshold", "--config", dir / "run.cfg", "--cost", "0.05", "--out", dir.path.string()});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    auto j = Json::parse(slurp(dir.path / "threshold.json"));
    EXPECT_EQ(j["model"]["cost"].get<double>(), 0.05);
    EXPECT_EQ(j["model"]["sigma"].get<double>(), 0.03);
    std::ofstream(dir / "bad.cfg") << "sigma = 0.03\nunknown_key = 4\n";
    auto bad = run_cli(dir, {"threshold", "--config", dir / "bad.cfg", "--out", dir.path.string()});
    EXPECT_EQ(bad.exit_code, 2);
}

TEST(Cli, PipelineWritesEveryStage) {
    TempDir dir;
    auto table = write_fixture(dir);
    auto r = run_cli(dir, concat(std::vector<std::string>{"pipeline"}, data_args(table),
                                 std::vector<std::string>{"--n-paths", "300", "--horizon", "100", "--n-thresholds",
                                                          "3", "--out", dir.path.string()}));
    ASSERT_EQ(r.exit_code, 0) << r.err;
    for (const char* f : {"calibration.json", "threshold.json", "detection.json", "simulation.json", "risk.json",
                          "pipeline.json"})
        EXPECT_TRUE(fs::exists(dir.path / f)) << f;
}
