#include "qdetect/model.hpp"
#include "qdetect/rng.hpp"
#include "qdetect/simulate.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace qdetect;

namespace {

ModelParams jump_params() {
    ModelParams p;
    p.sigma = 0.03;
    p.r = -0.09;
    p.pre_jump = JumpLaw::symmetric(0.5, 0.06, 0.2);
    return p;
}

struct Moments {
    double mean, se;
};

template <class F>
Moments moments(std::size_t n, F draw) {
    NeumaierSum s, q;
    for (std::size_t i = 0; i < n; ++i) {
        double v = draw(i);
        s.add(v);
        q.add(v * v);
    }
    double m = s.value() / n;
    double var = std::max(0.0, q.value() / n - m * m);
    return {m, std::sqrt(var / n)};
}

}  // namespace

TEST(SampleTheta, AtomExhaustsMass) {
    auto rng = stream_rng(1, 0);
    for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_theta(1.0, 0.05, rng), 0.0);
}

TEST(SampleTheta, ExponentialMean) {
    auto rng = stream_rng(2, 0);
    auto m = moments(100000, [&](std::size_t) { return sample_theta(0.0, 0.05, rng); });
    EXPECT_LE(std::abs(m.mean - 20.0), 4.0 * m.se);
}

TEST(SampleTheta, AtomFrequency) {
    auto rng = stream_rng(3, 0);
    auto m = moments(100000, [&](std::size_t) { return sample_theta(0.05, 0.05, rng) == 0.0 ? 1.0 : 0.0; });
    EXPECT_LE(std::abs(m.mean - 0.05), 4.0 * m.se);
}

TEST(SimulatePath, DeterministicDrift) {
    ModelParams p;
    p.sigma = 0.0;
    p.r = 1.0;
    MeasureChange mc;  // no jumps, no tilt needed
    SimConfig cfg;
    cfg.n_steps = 3;
    cfg.disorder = Disorder::at(0.0);
    auto path = simulate_path(p, mc, cfg);
    ASSERT_EQ(path.increments.size(), 3u);
    for (double v : path.increments) EXPECT_DOUBLE_EQ(v, 1.0);
    EXPECT_EQ(path.theta, 0.0);
}

TEST(SimulatePath, PreChangeZeroMean) {
    ModelParams p = jump_params();
    MeasureChange mc = solve_beta0(p);
    SimConfig cfg;
    cfg.n_steps = 100000;
    cfg.seed = 11;
    cfg.disorder = Disorder::never();
    auto path = simulate_path(p, mc, cfg);
    auto m = moments(path.increments.size(), [&](std::size_t i) { return path.increments[i]; });
    EXPECT_LE(std::abs(m.mean), 4.0 * m.se);
}

TEST(SimulatePath, PostChangeMeanIsR) {
    ModelParams p = jump_params();
    MeasureChange mc = solve_beta0(p);
    SimConfig cfg;
    cfg.n_steps = 100000;
    cfg.seed = 12;
    cfg.disorder = Disorder::at(0.0);
    auto path = simulate_path(p, mc, cfg);
    auto m = moments(path.increments.size(), [&](std::size_t i) { return path.increments[i]; });
    EXPECT_LE(std::abs(m.mean - p.r), 4.0 * m.se);
}

TEST(SimulatePath, Reproducible) {
    ModelParams p = jump_params();
    MeasureChange mc = solve_beta0(p);
    SimConfig cfg;
    cfg.n_steps = 500;
    cfg.seed = 99;
    auto a = simulate_path(p, mc, cfg), b = simulate_path(p, mc, cfg);
    EXPECT_EQ(a.theta, b.theta);
    EXPECT_EQ(a.increments, b.increments);
    cfg.seed = 100;
    auto c = simulate_path(p, mc, cfg);
    EXPECT_NE(a.increments, c.increments);
}

TEST(SimulatePath, RegimeSplitMean) {
    ModelParams p = jump_params();
    MeasureChange mc = solve_beta0(p);
    auto rng = stream_rng(5, 0);
    // theta = k + 0.5: the increment over [k, k+1] carries half the post-change drift.
    auto m = moments(100000, [&](std::size_t) { return draw_increment(p, mc, 3.0, 4.0, 3.5, rng); });
    EXPECT_LE(std::abs(m.mean - 0.5 * p.r), 4.0 * m.se);
}

TEST(SimulatePath, JumpRate) {
    ModelParams p = jump_params();
    MeasureChange mc = solve_beta0(p);
    auto rng = stream_rng(6, 0);
    std::size_t count = 0;
    const std::size_t n = 100000;
    for (std::size_t i = 0; i < n; ++i) draw_increment(p, mc, 0.0, 1.0, INFINITY, rng, &count);
    double rate = double(count) / n;
    double se = std::sqrt(p.pre_jump.intensity / n);
    EXPECT_LE(std::abs(rate - p.pre_jump.intensity), 4.0 * se);
}

TEST(SimulatePath, InvalidConfig) {
    ModelParams p = jump_params();
    MeasureChange mc = solve_beta0(p);
    SimConfig cfg;
    cfg.n_steps = 0;
    EXPECT_THROW(simulate_path(p, mc, cfg), ConfigError);
    cfg.n_steps = 5;
    cfg.step = 0.0;
    EXPECT_THROW(simulate_path(p, mc, cfg), ConfigError);
}

TEST(BayesRisk, ImmediateAlarmIsFalseAlarm) {
    ModelParams p = jump_params();
    MeasureChange mc = solve_beta0(p);
    RiskOptions o;
    o.n_paths = 20000;
    o.horizon = 10;
    auto r = estimate_bayes_risk(p, mc, 1e-9, o);
    EXPECT_LE(std::abs(r.risk - (1.0 - p.prior_atom)), 4.0 * r.standard_error + 1e-12);
    EXPECT_EQ(r.n_capped, 0u);
}

TEST(BayesRisk, NoCostNoAlarmIsZero) {
    ModelParams p = jump_params();
    p.cost = 1e-300;
    MeasureChange mc = solve_beta0(p);
    RiskOptions o;
    o.n_paths = 2000;
    o.horizon = 50;
    auto r = estimate_bayes_risk(p, mc, 1e300, o);
    EXPECT_NEAR(r.risk, 0.0, 1e-200);
    EXPECT_EQ(r.n_capped, o.n_paths);
}

TEST(BayesRisk, ThreadCountInvariant) {
    ModelParams p = jump_params();
    MeasureChange mc = solve_beta0(p);
    RiskOptions o;
    o.n_paths = 3000;
    o.horizon = 100;
    o.seed = 8;
    o.threads = 1;
    auto a = estimate_risk_curve(p, mc, {2.0, 10.0, 50.0}, o);
    o.threads = 5;
    auto b = estimate_risk_curve(p, mc, {2.0, 10.0, 50.0}, o);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].risk, b[i].risk);
        EXPECT_EQ(a[i].standard_error, b[i].standard_error);
        EXPECT_EQ(a[i].n_capped, b[i].n_capped);
    }
}

TEST(BayesRisk, CurveMatchesSingleEstimates) {
    ModelParams p = jump_params();
    MeasureChange mc = solve_beta0(p);
    RiskOptions o;
    o.n_paths = 500;
    o.horizon = 100;
    auto curve = estimate_risk_curve(p, mc, {30.0, 3.0}, o);
    EXPECT_EQ(curve[0].risk, estimate_bayes_risk(p, mc, 30.0, o).risk);
    EXPECT_EQ(curve[1].risk, estimate_bayes_risk(p, mc, 3.0, o).risk);
    EXPECT_THROW(estimate_risk_curve(p, mc, {0.0}, o), ConfigError);
}

TEST(GeometricGrid, Endpoints) {
    auto g = geometric_grid(1.0, 9.0, 3);
    EXPECT_DOUBLE_EQ(g[0], 1.0);
    EXPECT_NEAR(g[1], 3.0, 1e-14);
    EXPECT_NEAR(g[2], 9.0, 1e-14);
}
