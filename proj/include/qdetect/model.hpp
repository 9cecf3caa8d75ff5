// Model parameters, the Laplace exponent of the pre-change process and the
// exponential change of measure that turns the pre-change law into the
// post-change law.
#pragma once

#include "qdetect/errors.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace qdetect {

/// Double-sided exponential jump law with arrival intensity.
///
/// Positive jumps are Exp with mean `scale_pos`, negative jumps are minus an
/// Exp with mean `scale_neg`. The pre-change law is symmetric in scale; the
/// tilted post-change law is not.
struct JumpLaw {
    double p_pos = 0.5;      // probability of a positive jump
    double p_neg = 0.5;      // probability of a negative jump
    double scale_pos = 1.0;  // mean size of a positive jump
    double scale_neg = 1.0;  // mean absolute size of a negative jump
    double intensity = 0.0;  // arrivals per unit time

    static JumpLaw symmetric(double p_pos, double scale, double intensity) {
        return JumpLaw{p_pos, 1.0 - p_pos, scale, scale, intensity};
    }

    static JumpLaw none(double scale = 1.0) { return JumpLaw{0.5, 0.5, scale, scale, 0.0}; }

    bool is_symmetric() const { return scale_pos == scale_neg; }

    /// Common scale w of a symmetric law.
    double scale() const { return scale_pos; }

    void validate() const {
        auto bad = [](const std::string& m) { throw ConfigError("invalid jump law: " + m); };
        if (!(p_pos >= 0.0 && p_pos <= 1.0) || !(p_neg >= 0.0 && p_neg <= 1.0))
            bad("probabilities must lie in [0,1]");
        if (std::abs(p_pos + p_neg - 1.0) > 1e-12) bad("p_pos + p_neg must equal 1");
        if (!(scale_pos > 0.0) || !(scale_neg > 0.0) || !std::isfinite(scale_pos) ||
            !std::isfinite(scale_neg))
            bad("scales must be positive and finite");
        if (!(intensity >= 0.0) || !std::isfinite(intensity)) bad("intensity must be >= 0");
    }

    /// Density of a single jump at y (y = 0 is assigned to neither side).
    double density(double y) const {
        if (y > 0.0) return p_pos / scale_pos * std::exp(-y / scale_pos);
        if (y < 0.0) return p_neg / scale_neg * std::exp(y / scale_neg);
        return 0.0;
    }

    /// E[exp(beta Y)] for a single jump. Throws when the MGF diverges.
    double mgf(double beta) const {
        check_mgf(beta);
        return p_pos / (1.0 - beta * scale_pos) + p_neg / (1.0 + beta * scale_neg);
    }

    /// d/dbeta E[exp(beta Y)].
    double mgf_derivative(double beta) const {
        check_mgf(beta);
        double a = 1.0 - beta * scale_pos, b = 1.0 + beta * scale_neg;
        return p_pos * scale_pos / (a * a) - p_neg * scale_neg / (b * b);
    }

    void check_mgf(double beta) const {
        bool pos_bad = p_pos > 0.0 && beta * scale_pos >= 1.0;
        bool neg_bad = p_neg > 0.0 && -beta * scale_neg >= 1.0;
        if (pos_bad || neg_bad) {
            std::ostringstream os;
            os << "jump MGF diverges at beta=" << beta << " (scales " << scale_pos << ", "
               << scale_neg << ")";
            throw MgfDivergence(os.str());
        }
    }
};

/// Signed mean jump size.
inline double mean_jump(const JumpLaw& law) {
    return law.p_pos * law.scale_pos - law.p_neg * law.scale_neg;
}

/// Scalar model inputs plus the pre-change jump law.
struct ModelParams {
    double sigma = 0.0;       // Brownian volatility per sqrt(unit time)
    double r = 0.0;           // post-change drift per unit time
    double lambda = 0.05;     // prior rate of the disorder time
    double prior_atom = 0.05; // P(theta = 0)
    double cost = 0.02;       // delay penalty weight c
    JumpLaw pre_jump = JumpLaw::none();

    void validate() const {
        auto bad = [](const std::string& m) { throw ConfigError("invalid model parameters: " + m); };
        if (!(sigma > 0.0) || !std::isfinite(sigma)) bad("sigma must be > 0");
        if (!(r != 0.0) || !std::isfinite(r)) bad("r must be nonzero");
        if (!(lambda > 0.0) || !std::isfinite(lambda)) bad("lambda must be > 0");
        if (!(cost > 0.0) || !std::isfinite(cost)) bad("cost must be > 0");
        if (!(prior_atom >= 0.0 && prior_atom < 1.0)) bad("prior_atom must lie in [0,1)");
        pre_jump.validate();
    }
};

/// Result of the exponential change of measure at beta0.
struct MeasureChange {
    double beta0 = 0.0;      // tilt parameter
    double psi_beta0 = 0.0;  // Laplace exponent of the pre-change process at beta0
    JumpLaw post_jump;       // tilted jump law
    double m_pre = 0.0;      // pre-change mean jump
    double m_post = 0.0;     // post-change mean jump
    double gamma = 0.0;      // 1/(beta0 w), +-inf when beta0 = 0
    double residual = 0.0;   // fixed-point residual at beta0
};

/// Laplace exponent psi(beta) = log E[exp(beta X_1)] of the pre-change process.
inline double laplace_exponent_pre(const ModelParams& p, double beta) {
    double diffusion = 0.5 * beta * beta * p.sigma * p.sigma;
    const JumpLaw& J = p.pre_jump;
    if (J.intensity == 0.0) return diffusion;
    return diffusion - beta * J.intensity * mean_jump(J) - J.intensity * (1.0 - J.mgf(beta));
}

/// Exponentially tilted jump law: density proportional to exp(beta0 y) dF(y),
/// intensity multiplied by the MGF.
inline JumpLaw transform_jump_law(const JumpLaw& pre, double beta0) {
    double M = pre.mgf(beta0);
    double wp = pre.p_pos / (1.0 - beta0 * pre.scale_pos);
    JumpLaw post;
    post.p_pos = wp / M;
    if (pre.p_neg == 0.0) post.p_pos = 1.0;
    if (pre.p_pos == 0.0) post.p_pos = 0.0;
    post.p_neg = 1.0 - post.p_pos;
    post.scale_pos = pre.scale_pos / (1.0 - beta0 * pre.scale_pos);
    post.scale_neg = pre.scale_neg / (1.0 + beta0 * pre.scale_neg);
    post.intensity = pre.intensity * M;
    return post;
}

/// Fixed-point residual h(b) = b sigma^2 - (r + mu m - mu0(b) m0(b)).
/// mu0(b) m0(b) equals mu M'(b), which makes h strictly increasing.
inline double beta0_residual(const ModelParams& p, double beta) {
    const JumpLaw& J = p.pre_jump;
    double jump_part = 0.0;
    if (J.intensity > 0.0) jump_part = J.intensity * mean_jump(J) - J.intensity * J.mgf_derivative(beta);
    return beta * p.sigma * p.sigma - (p.r + jump_part);
}

inline MeasureChange make_measure_change(const ModelParams& p, double beta0) {
    MeasureChange mc;
    mc.beta0 = beta0;
    mc.psi_beta0 = laplace_exponent_pre(p, beta0);
    mc.post_jump = p.pre_jump.intensity > 0.0 ? transform_jump_law(p.pre_jump, beta0) : p.pre_jump;
    if (p.pre_jump.intensity == 0.0) mc.post_jump.intensity = 0.0;
    mc.m_pre = mean_jump(p.pre_jump);
    mc.m_post = mean_jump(mc.post_jump);
    mc.gamma = 1.0 / (beta0 * p.pre_jump.scale());
    mc.residual = beta0_residual(p, beta0);
    return mc;
}

/// Solve beta0 sigma^2 = r + mu m - mu0 m0 for the tilt parameter.
///
/// Without jumps the answer is r/sigma^2. With jumps a bracket scan over
/// beta*w in (-1+1e-6, 1-1e-6) is followed by bisection to machine precision.
inline MeasureChange solve_beta0(const ModelParams& p) {
    p.validate();
    const JumpLaw& J = p.pre_jump;
    if (J.intensity == 0.0) return make_measure_change(p, p.r / (p.sigma * p.sigma));

    const double eps = 1e-6;
    double lo = -(1.0 - eps) / J.scale_neg;
    double hi = (1.0 - eps) / J.scale_pos;
    const int n_scan = 2000;
    double prev_b = lo, prev_h = beta0_residual(p, lo);
    double a = 0.0, b = 0.0, ha = 0.0;
    bool found = prev_h == 0.0;
    if (found) return make_measure_change(p, lo);
    for (int i = 1; i <= n_scan && !found; ++i) {
        double bi = lo + (hi - lo) * i / n_scan;
        double hv = beta0_residual(p, bi);
        if (hv == 0.0) return make_measure_change(p, bi);
        if ((prev_h < 0.0) != (hv < 0.0)) {
            a = prev_b; b = bi; ha = prev_h; found = true;
        }
        prev_b = bi; prev_h = hv;
    }
    if (!found) {
        std::ostringstream os;
        os << "no root of the beta0 fixed-point equation for beta*w in (-1,1): h(" << lo
           << ")=" << beta0_residual(p, lo) << ", h(" << hi << ")=" << beta0_residual(p, hi)
           << " (" << n_scan << "-point scan, no sign change)";
        throw NoRoot(os.str());
    }
    for (int it = 0; it < 400; ++it) {
        double m = 0.5 * (a + b);
        if (m <= a || m >= b) break;
        double hm = beta0_residual(p, m);
        if (hm == 0.0) { a = b = m; break; }
        if ((hm < 0.0) == (ha < 0.0)) { a = m; ha = hm; } else { b = m; }
    }
    double ra = std::abs(beta0_residual(p, a)), rb = std::abs(beta0_residual(p, b));
    return make_measure_change(p, ra <= rb ? a : b);
}

}  // namespace qdetect
