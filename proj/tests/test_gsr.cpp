#include "qdetect/gsr.hpp"
#include "qdetect/model.hpp"
#include "qdetect/rng.hpp"
#include "qdetect/simulate.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace qdetect;

namespace {

std::vector<double> gaussian_path(std::uint64_t seed, std::size_t n, double sd = 0.03) {
    auto rng = stream_rng(seed, 7);
    std::normal_distribution<double> Z(0.0, sd);
    std::vector<double> x(n);
    for (auto& v : x) v = Z(rng);
    return x;
}

}  // namespace

TEST(GsrInit, OddsOfPriorAtom) {
    EXPECT_EQ(gsr_init(0.0).phi, 0.0);
    EXPECT_DOUBLE_EQ(gsr_init(0.5).phi, 1.0);
    EXPECT_NEAR(gsr_init(0.05).phi, 1.0 / 19.0, 1e-16);
    EXPECT_EQ(gsr_init(0.05).n, 0u);
    EXPECT_THROW(gsr_init(1.0), DomainError);
    EXPECT_THROW(gsr_init(-0.1), DomainError);
}

TEST(GsrStep, Examples) {
    GsrState s = gsr_init(0.05);
    GsrState t = gsr_step(s, 0.0, 0.05, 3.0, 0.0);
    EXPECT_NEAR(t.phi, std::exp(0.05) * (1.0 / 19.0 + 0.05), 1e-15);
    EXPECT_NEAR(t.phi, 0.107894, 1e-6);
    EXPECT_EQ(t.n, 1u);
    GsrState u = gsr_step(s, 0.37, 0.0, 0.0, 0.0);
    EXPECT_DOUBLE_EQ(u.phi, s.phi);
}

TEST(GsrStep, LogMirrorTracksValue) {
    GsrState s = gsr_init(0.05);
    auto x = gaussian_path(1, 500);
    for (double v : x) {
        s = gsr_step(s, v, 0.05, -12.0, 0.2);
        EXPECT_NEAR(std::exp(s.log_phi), s.phi, 1e-9 * s.phi);
    }
}

TEST(GsrStep, LogMirrorSurvivesOverflow) {
    GsrState s = gsr_init(0.05);
    for (int i = 0; i < 2000; ++i) s = gsr_step(s, -1.0, 0.05, -10.0, 0.0);
    EXPECT_TRUE(std::isinf(s.phi));
    EXPECT_TRUE(std::isfinite(s.log_phi));
    EXPECT_GT(s.log_phi, 1e4);
}

TEST(GsrStep, Monotonicity) {
    GsrState a = gsr_init(0.05), b = gsr_init(0.2);
    EXPECT_LT(gsr_step(a, 0.01, 0.05, -5, 0.1).phi, gsr_step(b, 0.01, 0.05, -5, 0.1).phi);
    EXPECT_LT(gsr_step(a, 0.01, 0.05, -5, 0.1).phi, gsr_step(a, -0.01, 0.05, -5, 0.1).phi);
}

TEST(GsrDirect, SmallCases) {
    std::vector<double> none;
    EXPECT_NEAR(gsr_direct_form(none, 0.05, 0.05, -5, 0.1), 1.0 / 19.0, 1e-16);
    std::vector<double> one{0.02};
    GsrState s = gsr_step(gsr_init(0.05), 0.02, 0.05, -5, 0.1);
    EXPECT_NEAR(gsr_direct_form(one, 0.05, 0.05, -5, 0.1), s.phi, 1e-15 * s.phi);
}

TEST(GsrDirect, RecursionEqualsDirectForm) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto x = gaussian_path(seed, 1000);
        GsrState s = gsr_init(0.05);
        for (double v : x) s = gsr_step(s, v, 0.05, -12.0, 0.25);
        double direct = gsr_direct_log(x, 0.05, 0.05, -12.0, 0.25);
        EXPECT_NEAR(s.log_phi, direct, 1e-10 * std::max(1.0, std::abs(direct)));
        if (std::isfinite(s.phi) && s.phi > 0.0) {
            EXPECT_NEAR(s.phi, std::exp(direct), 1e-10 * s.phi * std::max(1.0, std::abs(direct)));
        }
    }
}

TEST(Posterior, Examples) {
    EXPECT_EQ(posterior(0.0), 0.0);
    EXPECT_DOUBLE_EQ(posterior(1.0), 0.5);
    EXPECT_NEAR(posterior(19.0), 0.95, 1e-15);
    for (double x = 0.0; x < 1.0; x += 0.01) EXPECT_NEAR(posterior(odds(x)), x, 1e-14);
}

TEST(GsrRun, ImmediateAndNoAlarm) {
    std::vector<double> x(50, 0.0);
    GsrParams g{0.05, -5.0, 0.1};
    auto r = gsr_run(x, 1.0 / 19.0, 0.05, g);
    ASSERT_TRUE(r.alarm_index.has_value());
    EXPECT_EQ(*r.alarm_index, 0u);
    // step factor exp(0.05 - 0.2) < 1 keeps phi bounded by 0.05 e^{-0.15}/(1 - e^{-0.15})
    GsrParams bounded{0.05, -5.0, 0.2};
    auto q = gsr_run(x, 10.0, 0.05, bounded);
    EXPECT_FALSE(q.alarm_index.has_value());
    EXPECT_EQ(q.trajectory.size(), 51u);
    EXPECT_THROW(gsr_run(x, 0.0, 0.05, g), DomainError);
}

TEST(GsrRun, AlarmIndexInvariant) {
    auto x = gaussian_path(3, 300);
    for (auto& v : x) v -= 0.02;
    GsrParams g{0.05, -10.0, 0.1};
    auto r = gsr_run(x, 50.0, 0.05, g);
    ASSERT_TRUE(r.alarm_index.has_value());
    std::size_t k = *r.alarm_index;
    EXPECT_GE(r.trajectory[k], 50.0);
    for (std::size_t i = 0; i < k; ++i) EXPECT_LT(r.trajectory[i], 50.0);
}

TEST(GsrRun, PosteriorAndOddsRulesAgree) {
    GsrParams g{0.05, -15.0, 0.3};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto x = gaussian_path(seed, 200);
        for (double A : {0.3, 0.7, 0.9}) {
            auto a = gsr_alarm_on_posterior(x, A, 0.05, g);
            auto b = gsr_run(x, A / (1.0 - A), 0.05, g).alarm_index;
            EXPECT_EQ(a, b);
        }
    }
}

TEST(SrLimit, Examples) {
    std::vector<double> one{0.3};
    EXPECT_NEAR(sr_limit(one, 2.0, 0.1), std::exp(0.6 - 0.1), 1e-15);
    std::vector<double> zeros(17, 0.0);
    EXPECT_NEAR(sr_limit(zeros, 0.0, 0.0), 17.0, 1e-13);
}

TEST(SrLimit, SmallLambdaLimit) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto x = gaussian_path(seed, 100, 0.05);
        double lam = 1e-8;
        GsrState s = gsr_init(0.0);
        for (double v : x) s = gsr_step(s, v, lam, -3.0, 0.01);
        double sr = sr_limit(x, -3.0, 0.01);
        EXPECT_NEAR(s.phi / lam, sr, 1e-4 * sr);
    }
}

TEST(GsrRun, SyntheticDisorderAlarmsAfterChange) {
    ModelParams p;
    p.sigma = 0.03;
    p.r = -5.0 * p.sigma;
    MeasureChange mc = solve_beta0(p);
    GsrParams g{p.lambda, mc.beta0, mc.psi_beta0};
    int after = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        SimConfig cfg;
        cfg.n_steps = 120;
        cfg.seed = seed;
        cfg.disorder = Disorder::at(50.0);
        auto path = simulate_path(p, mc, cfg);
        auto r = gsr_run(path.increments, 1e4, p.prior_atom, g);
        if (r.alarm_index && *r.alarm_index >= 50) ++after;
    }
    EXPECT_GE(after, 180);
}
