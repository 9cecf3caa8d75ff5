// Generalized Shiryaev-Roberts statistic: recursion with a log-domain
// mirror, direct product form, posterior map, alarm rule and the classical
// Shiryaev-Roberts limit.
#pragma once

#include "qdetect/errors.hpp"
#include "qdetect/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace qdetect {

struct GsrParams {
    double lambda = 0.05;  // prior rate of the disorder time
    double beta0 = 0.0;    // tilt parameter
    double psi0 = 0.0;     // Laplace exponent at beta0
};

struct GsrState {
    double phi = 0.0;  // statistic value
    std::size_t n = 0; // step index
    double log_phi = -std::numeric_limits<double>::infinity();
};

struct DetectionResult {
    std::optional<std::size_t> alarm_index;  // first n with phi_n >= B
    std::vector<double> trajectory;          // phi_0 .. phi_N
    std::vector<double> log_trajectory;      // log phi_0 .. log phi_N
    double threshold_B = 0.0;
};

/// log(exp(a) + exp(b)) without overflow.
inline double logaddexp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

/// Prior odds x/(1-x).
inline double odds(double x) {
    if (!(x >= 0.0 && x < 1.0)) throw DomainError("probability must lie in [0,1), got " + std::to_string(x));
    return x / (1.0 - x);
}

/// Posterior probability phi/(1+phi).
inline double posterior(double phi) {
    if (std::isinf(phi)) return 1.0;
    return phi / (1.0 + phi);
}

inline GsrState gsr_init(double prior_atom) {
    GsrState s;
    s.phi = odds(prior_atom);
    s.log_phi = s.phi > 0.0 ? std::log(s.phi) : -std::numeric_limits<double>::infinity();
    return s;
}

/// phi_{n+1} = exp(lambda + beta0 x - psi0) (phi_n + lambda).
inline GsrState gsr_step(const GsrState& s, double increment, double lambda, double beta0, double psi0) {
    double k = lambda + beta0 * increment - psi0;
    GsrState out;
    out.n = s.n + 1;
    double log_lambda = lambda > 0.0 ? std::log(lambda) : -std::numeric_limits<double>::infinity();
    out.log_phi = k + logaddexp(s.log_phi, log_lambda);
    if (std::isfinite(s.phi)) out.phi = std::exp(k) * (s.phi + lambda);
    else out.phi = std::exp(out.log_phi);
    if (std::isinf(out.phi) && std::isfinite(out.log_phi) && out.log_phi < 700.0) out.phi = std::exp(out.log_phi);
    return out;
}

inline GsrState gsr_step(const GsrState& s, double increment, const GsrParams& g) {
    return gsr_step(s, increment, g.lambda, g.beta0, g.psi0);
}

/// Log of the direct product form
/// phi_n = exp(lambda n) L_n (phi_0 + lambda sum_{i<n} exp(-lambda i) / L_i).
inline double gsr_direct_log(std::span<const double> x, double prior_atom, double lambda, double beta0, double psi0) {
    const double ninf = -std::numeric_limits<double>::infinity();
    double phi0 = odds(prior_atom);
    std::vector<double> terms;
    terms.reserve(x.size() + 1);
    terms.push_back(phi0 > 0.0 ? std::log(phi0) : ninf);
    double log_lambda = lambda > 0.0 ? std::log(lambda) : ninf;
    NeumaierSum logL;  // log L_i
    for (std::size_t i = 0; i < x.size(); ++i) {
        terms.push_back(log_lambda - lambda * static_cast<double>(i) - logL.value());
        logL.add(beta0 * x[i] - psi0);
    }
    double m = *std::max_element(terms.begin(), terms.end());
    if (m == ninf) return ninf;
    NeumaierSum acc;
    for (double t : terms) acc.add(std::exp(t - m));
    return lambda * static_cast<double>(x.size()) + logL.value() + m + std::log(acc.value());
}

inline double gsr_direct_form(std::span<const double> x, double prior_atom, double lambda, double beta0, double psi0) {
    return std::exp(gsr_direct_log(x, prior_atom, lambda, beta0, psi0));
}

/// Run the statistic over a series and raise the alarm at the first phi_n >= B.
inline DetectionResult gsr_run(std::span<const double> x, double B, double prior_atom, const GsrParams& g) {
    if (!(B > 0.0)) throw DomainError("alarm threshold B must be positive");
    DetectionResult res;
    res.threshold_B = B;
    GsrState s = gsr_init(prior_atom);
    res.trajectory.reserve(x.size() + 1);
    res.trajectory.push_back(s.phi);
    res.log_trajectory.push_back(s.log_phi);
    if (s.phi >= B) res.alarm_index = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        s = gsr_step(s, x[i], g);
        res.trajectory.push_back(s.phi);
        res.log_trajectory.push_back(s.log_phi);
        if (!res.alarm_index && s.phi >= B) res.alarm_index = i + 1;
    }
    return res;
}

/// Alarm on the posterior: first n with pi_n >= A.
inline std::optional<std::size_t> gsr_alarm_on_posterior(std::span<const double> x, double A, double prior_atom,
                                                          const GsrParams& g) {
    GsrState s = gsr_init(prior_atom);
    if (posterior(s.phi) >= A) return 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        s = gsr_step(s, x[i], g);
        if (posterior(s.phi) >= A) return i + 1;
    }
    return std::nullopt;
}

/// Classical Shiryaev-Roberts statistic sum_{i<n} L_n / L_i.
inline double sr_limit(std::span<const double> x, double beta0, double psi0) {
    std::vector<double> logL(x.size() + 1, 0.0);
    NeumaierSum acc;
    for (std::size_t i = 0; i < x.size(); ++i) {
        acc.add(beta0 * x[i] - psi0);
        logL[i + 1] = acc.value();
    }
    double n_log = logL.back();
    NeumaierSum total;
    for (std::size_t i = 0; i < x.size(); ++i) total.add(std::exp(n_log - logL[i]));
    return total.value();
}

}  // namespace qdetect
