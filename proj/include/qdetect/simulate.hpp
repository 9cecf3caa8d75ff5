// Disorder-path simulation of the jump-diffusion observation process and the
// Monte-Carlo Bayes-risk estimator used to validate alarm thresholds.
#pragma once

#include "qdetect/errors.hpp"
#include "qdetect/gsr.hpp"
#include "qdetect/model.hpp"
#include "qdetect/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <thread>
#include <vector>

namespace qdetect {

struct Disorder {
    enum class Kind { fixed, prior };
    Kind kind = Kind::prior;
    double theta = 0.0;  // used when kind == fixed; may be +infinity

    static Disorder at(double t) { return Disorder{Kind::fixed, t}; }
    static Disorder never() { return Disorder{Kind::fixed, std::numeric_limits<double>::infinity()}; }
    static Disorder from_prior() { return Disorder{Kind::prior, 0.0}; }
};

struct SimConfig {
    std::size_t n_steps = 100;
    double step = 1.0;
    std::uint64_t seed = 1;
    Disorder disorder = Disorder::from_prior();
};

struct PathSample {
    std::vector<double> increments;
    double theta = 0.0;
    std::uint64_t seed = 0;
};

/// 0 with probability prior_atom, otherwise Exponential(lambda).
template <class Rng>
double sample_theta(double prior_atom, double lambda, Rng& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    if (U(rng) < prior_atom) return 0.0;
    std::exponential_distribution<double> E(lambda);
    return E(rng);
}

/// Sum of jumps of a compound Poisson process with law J over a window of length dt.
template <class Rng>
double compound_jumps(const JumpLaw& J, double dt, Rng& rng, std::size_t* count = nullptr) {
    if (J.intensity <= 0.0 || dt <= 0.0) return 0.0;
    std::poisson_distribution<long> N(J.intensity * dt);
    long k = N(rng);
    if (count) *count += static_cast<std::size_t>(k);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::exponential_distribution<double> E(1.0);
    double s = 0.0;
    for (long i = 0; i < k; ++i) {
        bool up = U(rng) < J.p_pos;
        double e = E(rng);
        s += up ? e * J.scale_pos : -e * J.scale_neg;
    }
    return s;
}

/// Increment of X over [t0, t1] when the disorder happens at theta.
/// The window is split at theta and the two regimes are composed.
template <class Rng>
double draw_increment(const ModelParams& p, const MeasureChange& mc, double t0, double t1, double theta, Rng& rng,
                      std::size_t* jump_count = nullptr) {
    double dt = t1 - t0;
    double pre = std::clamp(theta - t0, 0.0, dt);
    double post = dt - pre;
    std::normal_distribution<double> Z(0.0, 1.0);
    double x = p.sigma * std::sqrt(dt) * Z(rng) + p.r * post;
    const JumpLaw& Jpre = p.pre_jump;
    const JumpLaw& Jpost = mc.post_jump;
    if (Jpre.intensity > 0.0) x += compound_jumps(Jpre, pre, rng, jump_count) - Jpre.intensity * mc.m_pre * pre;
    if (Jpost.intensity > 0.0) x += compound_jumps(Jpost, post, rng, jump_count) - Jpost.intensity * mc.m_post * post;
    return x;
}

template <class Rng>
PathSample simulate_path(const ModelParams& p, const MeasureChange& mc, const SimConfig& cfg, Rng& rng) {
    if (cfg.n_steps < 1) throw ConfigError("n_steps must be >= 1");
    if (!(cfg.step > 0.0)) throw ConfigError("step must be > 0");
    PathSample out;
    out.seed = cfg.seed;
    out.theta = cfg.disorder.kind == Disorder::Kind::prior ? sample_theta(p.prior_atom, p.lambda, rng)
                                                           : cfg.disorder.theta;
    if (!(out.theta >= 0.0)) throw ConfigError("disorder time must be >= 0");
    out.increments.resize(cfg.n_steps);
    for (std::size_t i = 0; i < cfg.n_steps; ++i) {
        double t0 = cfg.step * static_cast<double>(i), t1 = cfg.step * static_cast<double>(i + 1);
        out.increments[i] = draw_increment(p, mc, t0, t1, out.theta, rng);
    }
    return out;
}

/// Path generated from the stream derived from cfg.seed.
inline PathSample simulate_path(const ModelParams& p, const MeasureChange& mc, const SimConfig& cfg) {
    auto rng = stream_rng(cfg.seed, 0);
    return simulate_path(p, mc, cfg, rng);
}

struct RiskEstimate {
    double threshold_B = 0.0;
    double risk = 0.0;
    double standard_error = 0.0;
    std::size_t n_capped = 0;  // paths without an alarm inside the horizon
};

struct RiskOptions {
    std::size_t n_paths = 10000;
    std::size_t horizon = 400;
    std::uint64_t seed = 1;
    unsigned threads = 0;  // 0 = hardware concurrency
};

/// Bayes risk P(tau < theta) + c E(tau - theta)^+ for every threshold in Bs,
/// evaluated on common paths. A path with no alarm contributes false-alarm 0
/// and delay (horizon - theta)^+ and is counted in n_capped.
inline std::vector<RiskEstimate> estimate_risk_curve(const ModelParams& p, const MeasureChange& mc,
                                                     const std::vector<double>& Bs, const RiskOptions& opt) {
    for (double B : Bs)
        if (!(B > 0.0)) throw ConfigError("thresholds must be positive");
    const std::size_t nB = Bs.size(), nP = opt.n_paths, H = opt.horizon;
    std::vector<std::size_t> order(nB);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return Bs[a] < Bs[b]; });

    std::vector<double> loss(nP * nB, 0.0);
    std::vector<unsigned char> capped(nP * nB, 0);
    GsrParams g{p.lambda, mc.beta0, mc.psi_beta0};

    auto work = [&](std::size_t first, std::size_t last) {
        std::vector<double> tau(nB);
        std::vector<unsigned char> hit(nB);
        for (std::size_t path = first; path < last; ++path) {
            auto rng = stream_rng(opt.seed, path);
            double theta = sample_theta(p.prior_atom, p.lambda, rng);
            GsrState s = gsr_init(p.prior_atom);
            std::fill(hit.begin(), hit.end(), 0);
            std::size_t j = 0;
            while (j < nB && s.phi >= Bs[order[j]]) { tau[order[j]] = 0.0; hit[order[j++]] = 1; }
            for (std::size_t n = 0; n < H && j < nB; ++n) {
                double x = draw_increment(p, mc, double(n), double(n + 1), theta, rng);
                s = gsr_step(s, x, g);
                while (j < nB && s.phi >= Bs[order[j]]) { tau[order[j]] = double(n + 1); hit[order[j++]] = 1; }
            }
            for (std::size_t k = 0; k < nB; ++k) {
                double l;
                if (!hit[k]) {
                    l = p.cost * std::max(double(H) - theta, 0.0);
                    capped[path * nB + k] = 1;
                } else {
                    l = (tau[k] < theta ? 1.0 : 0.0) + p.cost * std::max(tau[k] - theta, 0.0);
                }
                loss[path * nB + k] = l;
            }
        }
    };

    unsigned nt = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
    nt = static_cast<unsigned>(std::min<std::size_t>(nt, std::max<std::size_t>(nP, 1)));
    std::vector<std::thread> pool;
    std::size_t chunk = (nP + nt - 1) / std::max(nt, 1u);
    for (unsigned t = 0; t < nt; ++t) {
        std::size_t a = t * chunk, b = std::min(nP, a + chunk);
        if (a < b) pool.emplace_back(work, a, b);
    }
    for (auto& th : pool) th.join();

    std::vector<RiskEstimate> out(nB);
    for (std::size_t k = 0; k < nB; ++k) {
        NeumaierSum s1, s2;
        std::size_t nc = 0;
        for (std::size_t path = 0; path < nP; ++path) {
            double l = loss[path * nB + k];
            s1.add(l);
            s2.add(l * l);
            nc += capped[path * nB + k];
        }
        double n = static_cast<double>(nP);
        double mean = s1.value() / n;
        double var = nP > 1 ? std::max(0.0, (s2.value() - n * mean * mean) / (n - 1.0)) : 0.0;
        out[k] = RiskEstimate{Bs[k], mean, std::sqrt(var / n), nc};
    }
    return out;
}

inline RiskEstimate estimate_bayes_risk(const ModelParams& p, const MeasureChange& mc, double B,
                                        const RiskOptions& opt) {
    return estimate_risk_curve(p, mc, {B}, opt).front();
}

/// n points geometrically spaced over [lo, hi].
inline std::vector<double> geometric_grid(double lo, double hi, std::size_t n) {
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i)
        g[i] = n == 1 ? lo : lo * std::pow(hi / lo, double(i) / double(n - 1));
    return g;
}

}  // namespace qdetect
