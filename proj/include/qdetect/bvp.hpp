// Free-boundary problem for the optimal alarm threshold.
//
// The value function V* is represented through u(x) = (1-x) V*'(x), which
// solves a third-order linear ODE with polynomial coefficients on (0,1),
// singular at both ends. Near 0 the solution is seeded from power series,
// then integrated with an implicit Radau scheme until u(x) = x - 1, which
// fixes the threshold A*. With jumps, the regular family at 0 is
// u_a + C u_h (analytic series plus the x^|gamma| mode); C is fixed by
// requiring the jump-diffusion generator to reproduce -c x.
#pragma once

#include "qdetect/errors.hpp"
#include "qdetect/model.hpp"
#include "qdetect/ode.hpp"
#include "qdetect/poly.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace qdetect {

using poly::Poly;

/// Polynomial coefficients of the third-order equation
///   sum_k (1-x)^{k+1} a_k(x) y^{(k)} = c (gamma^2 - 1) x,   y = V*'
/// and of its u-form
///   sum_k (1-x)^{k+1} b_k(x) u^{(k)} = c (gamma^2 - 1) x (1-x),   u = (1-x) y.
struct OdeCoefficients {
    double gamma = 0.0;            // gamma used in the coefficients
    bool auxiliary_gamma = false;  // true when no jumps and |beta0 w| >= 1
    std::array<Poly, 4> a;         // a_0 .. a_3
    std::array<Poly, 4> b;         // b_k = (1/k!) sum_{i>=k} i! a_i
    std::array<Poly, 4> p;         // P_k = (1-x)^{k+1} b_k
    std::array<Poly, 4> dp;        // P_k'
    double rhs_scale = 0.0;        // c (gamma^2 - 1)
    Poly rhs;                      // rhs_scale * x (1-x)
    Poly drhs;
    std::array<Poly, 4> db;        // b_k'

    /// P_k(x) evaluated in factored form; the expanded monomial form loses
    /// all accuracy to cancellation as x approaches 1.
    double P(int k, double x) const {
        double om = 1.0 - x;
        return std::pow(om, k + 1) * poly::eval(b[static_cast<std::size_t>(k)], x);
    }

    double dP(int k, double x) const {
        double om = 1.0 - x;
        auto kk = static_cast<std::size_t>(k);
        return -(k + 1) * std::pow(om, k) * poly::eval(b[kk], x) + std::pow(om, k + 1) * poly::eval(db[kk], x);
    }

    double R(double x) const { return rhs_scale * x * (1.0 - x); }
    double dR(double x) const { return rhs_scale * (1.0 - 2.0 * x); }
};

/// Parameters of the generator of the posterior process in compact form.
struct GeneratorModel {
    double lambda = 0.0;
    double mu_inf = 0.0, mu0 = 0.0;
    double p1 = 0.5, p2 = 0.5, q1 = 0.5, q2 = 0.5;
    double S = 0.0;      // sigma^2 beta0^2
    double gamma = 0.0;  // 1/(beta0 w), the true value
    double beta0 = 0.0;
    double w = 1.0;
};

inline GeneratorModel generator_model(const ModelParams& p, const MeasureChange& mc) {
    GeneratorModel g;
    g.lambda = p.lambda;
    g.mu_inf = p.pre_jump.intensity;
    g.mu0 = mc.post_jump.intensity;
    g.p1 = p.pre_jump.p_pos;
    g.p2 = p.pre_jump.p_neg;
    g.q1 = mc.post_jump.p_pos;
    g.q2 = mc.post_jump.p_neg;
    g.S = p.sigma * p.sigma * mc.beta0 * mc.beta0;
    g.gamma = mc.gamma;
    g.beta0 = mc.beta0;
    g.w = p.pre_jump.scale();
    return g;
}

namespace detail {

inline double falling(double v, int k) {
    double r = 1.0;
    for (int j = 0; j < k; ++j) r *= (v - j);
    return r;
}

inline void require_symmetric(const ModelParams& p) {
    if (!p.pre_jump.is_symmetric())
        throw ConfigError("the threshold problem requires a symmetric pre-change jump scale");
}

}  // namespace detail

/// gamma entering the ODE. Without jumps the value function does not depend
/// on gamma, and an auxiliary value is used when the true one has |gamma| <= 1.
inline double effective_gamma(const ModelParams& p, const MeasureChange& mc, bool* auxiliary = nullptr) {
    double g = mc.gamma;
    bool aux = false;
    if (p.pre_jump.intensity == 0.0 && !(std::abs(g) > 1.0)) {
        g = mc.beta0 >= 0.0 ? 2.5 : -2.5;
        aux = true;
    }
    if (auxiliary) *auxiliary = aux;
    return g;
}

inline OdeCoefficients make_coefficients(const ModelParams& p, const MeasureChange& mc) {
    detail::require_symmetric(p);
    OdeCoefficients co;
    GeneratorModel m = generator_model(p, mc);
    double g = effective_gamma(p, mc, &co.auxiliary_gamma);
    if (p.pre_jump.intensity > 0.0 && !(g * g > 1.0)) {
        std::ostringstream os;
        os << "gamma^2 = " << g * g << " <= 1: the jump MGF condition |beta0 w| < 1 fails";
        throw MgfDivergence(os.str());
    }
    co.gamma = g;
    const double lam = m.lambda, mi = m.mu_inf, mu0 = m.mu0, p2 = m.p2, q2 = m.q2, S = m.S;
    const double g2 = g * g;
    co.a[0] = {-lam * g2, mu0 * (g2 - 1.0) + mi * (2.0 * g * p2 - g2 - g),
               mu0 * (2.0 * g * q2 - g + 1.0) + mi * (g - 2.0 * g * p2)};
    co.a[1] = {0.0, lam, -2.0 * lam - 3.0 * mu0 + 2.0 * mi - 0.5 * S * (g2 - 4.0),
               3.0 * mu0 - 3.0 * mi - 7.5 * S, 6.0 * S};
    co.a[2] = {0.0, 0.0, lam, -(mu0 - mi - 2.5 * S), -4.0 * S};
    co.a[3] = {0.0, 0.0, 0.0, 0.0, 0.5 * S};
    const double fact[4] = {1.0, 1.0, 2.0, 6.0};
    const Poly one_minus_x{1.0, -1.0};
    for (int k = 0; k < 4; ++k) {
        Poly acc;
        for (int i = k; i < 4; ++i) acc = poly::add(acc, poly::scale(co.a[i], fact[i]));
        co.b[k] = poly::scale(acc, 1.0 / fact[k]);
        co.p[k] = poly::mul(poly::pow(one_minus_x, static_cast<unsigned>(k + 1)), co.b[k]);
        co.dp[k] = poly::derivative(co.p[k]);
        co.db[k] = poly::derivative(co.b[k]);
    }
    co.rhs_scale = p.cost * (g2 - 1.0);
    co.rhs = {0.0, co.rhs_scale, -co.rhs_scale};
    co.drhs = poly::derivative(co.rhs);
    return co;
}

/// Value of the positivity expression of the threshold problem.
inline double assumption_expression(const ModelParams& p, const MeasureChange& mc) {
    GeneratorModel m = generator_model(p, mc);
    double g = effective_gamma(p, mc);
    double b0 = mc.beta0, s2 = p.sigma * p.sigma, g2 = g * g;
    return b0 * b0 * g2 * s2 - b0 * b0 * s2 + 2.0 * g2 * m.lambda + 2.0 * g2 * m.mu_inf - 2.0 * g2 * m.mu0 +
           2.0 * g * m.mu0 - 2.0 * m.lambda - 2.0 * m.mu_inf + 4.0 * m.mu0 - 4.0 * g * m.mu0 * m.q2;
}

/// Blow-up constant b = 2 c (gamma^2 - 1) / expression; u(x) -> -b as x -> 1
/// for the particular Frobenius branch at 1. Throws when the expression is <= 0.
inline double check_assumption(const ModelParams& p, const MeasureChange& mc) {
    double e = assumption_expression(p, mc);
    if (!(e > 0.0)) {
        std::ostringstream os;
        os << "positivity assumption violated: expression = " << e;
        throw AssumptionViolated(os.str(), e);
    }
    double g = effective_gamma(p, mc);
    return 2.0 * p.cost * (g * g - 1.0) / e;
}

struct InitialConditions {
    double u0 = 0.0, u1 = 0.0, u2 = 0.0;
};

/// Closed form of y''(0) for y = V*' = u/(1-x).
inline double y_second_derivative_at_zero(const ModelParams& p, const MeasureChange& mc) {
    GeneratorModel m = generator_model(p, mc);
    double g = effective_gamma(p, mc), g2 = g * g, S = m.S, lam = m.lambda, mi = m.mu_inf, mu0 = m.mu0;
    if (std::abs(g2 - 4.0) < 1e-12) throw DegenerateGamma("gamma^2 = 4 makes u''(0) undefined");
    double num = -S * g2 + 4.0 * S + 2.0 * g2 * lam - 2.0 * g2 * mi + 2.0 * g2 * mu0 - 2.0 * g * mi - 8.0 * lam +
                 4.0 * mi - 8.0 * mu0 + 4.0 * g * mi * m.p2;
    return -p.cost * num / ((g2 - 4.0) * lam * lam);
}

/// (u(0), u'(0), u''(0)). Since u = (1-x) y, u''(0) = y''(0) - 2 y'(0) = y''(0) + 2c/lambda.
inline InitialConditions initial_conditions(const ModelParams& p, const MeasureChange& mc) {
    InitialConditions ic;
    ic.u0 = 0.0;
    ic.u1 = -p.cost / p.lambda;
    ic.u2 = y_second_derivative_at_zero(p, mc) + 2.0 * p.cost / p.lambda;
    return ic;
}

/// Power-series coefficients alpha_n of u = sum alpha_n x^{n+rho}.
/// rho = 0 gives the analytic solution of the inhomogeneous equation;
/// rho = |gamma| with alpha_0 = 1 gives the homogeneous Frobenius mode.
inline std::vector<double> series_coefficients(const OdeCoefficients& co, double rho, int N, bool with_rhs) {
    if (N < 3) throw ConfigError("series order must be >= 3");
    if (std::abs(co.gamma * co.gamma - 4.0) < 1e-12) throw DegenerateGamma("gamma^2 = 4 in the series recurrence");
    std::vector<double> al(static_cast<std::size_t>(N) + 1, 0.0);
    double scale = 0.0;
    for (const auto& pk : co.p)
        for (double v : pk) scale = std::max(scale, std::abs(v));
    for (int n = 0; n <= N; ++n) {
        double e = n + rho;
        double s = with_rhs ? poly::coef(co.rhs, static_cast<std::size_t>(n)) : 0.0;
        double diag = 0.0;
        for (int k = 0; k < 4; ++k) {
            const Poly& pk = co.p[k];
            for (std::size_t j = static_cast<std::size_t>(k); j < pk.size(); ++j) {
                int d = static_cast<int>(j) - k;
                int mm = n - d;
                if (mm < 0) continue;
                if (d == 0) diag += pk[j] * detail::falling(e, k);
                else s -= pk[j] * detail::falling(mm + rho, k) * al[static_cast<std::size_t>(mm)];
            }
        }
        if (rho > 0.0 && n == 0) { al[0] = 1.0; continue; }
        if (std::abs(diag) <= 1e-12 * scale) {
            std::ostringstream os;
            os << "series recurrence breaks down at order " << n << " (gamma = " << co.gamma << ")";
            throw RecurrenceBreakdown(os.str());
        }
        al[static_cast<std::size_t>(n)] = s / diag;
    }
    return al;
}

/// Derivatives 0..kmax of sum alpha_n x^{n+rho}.
inline std::array<double, 5> series_eval(const std::vector<double>& al, double rho, double x, int kmax = 4) {
    std::array<double, 5> out{};
    for (std::size_t n = 0; n < al.size(); ++n) {
        if (al[n] == 0.0) continue;
        double e = static_cast<double>(n) + rho;
        for (int k = 0; k <= kmax; ++k) {
            double ff = detail::falling(e, k);
            if (ff == 0.0) continue;
            out[static_cast<std::size_t>(k)] += al[n] * ff * std::pow(x, e - k);
        }
    }
    return out;
}

/// Residual sum_k P_k u^{(k)} - rhs for a derivative stack (u, u', u'', u''').
inline double ode_residual(const OdeCoefficients& co, double x, const std::array<double, 4>& d) {
    double r = -co.R(x);
    for (int k = 0; k < 4; ++k) r += co.P(k, x) * d[static_cast<std::size_t>(k)];
    return r;
}

/// u''' and u'''' from (u, u', u'') using the ODE and its derivative.
inline std::array<double, 5> derivative_stack(const OdeCoefficients& co, double x, double u, double u1, double u2) {
    double P0 = co.P(0, x), P1 = co.P(1, x), P2 = co.P(2, x), P3 = co.P(3, x);
    double N = co.R(x) - P0 * u - P1 * u1 - P2 * u2;
    double u3 = N / P3;
    double dN = co.dR(x) - co.dP(0, x) * u - P0 * u1 - co.dP(1, x) * u1 - P1 * u2 - co.dP(2, x) * u2 - P2 * u3;
    double u4 = (dN - co.dP(3, x) * u3) / P3;
    return {u, u1, u2, u3, u4};
}

/// Series data near 0 shared by all shooting trials.
struct SeriesSeed {
    double x0 = 1e-2;
    double rho = 0.0;
    std::vector<double> alpha_a;  // analytic branch
    std::vector<double> alpha_h;  // homogeneous x^rho branch (empty without jumps)
};

/// Pick the handoff point: start at x0_start and halve until the last kept
/// series term at 3 x0 is below 1e-14 of the series value there.
inline SeriesSeed make_seed(const OdeCoefficients& co, bool with_homogeneous, int N, double x0_start) {
    SeriesSeed s;
    s.rho = std::abs(co.gamma);
    s.alpha_a = series_coefficients(co, 0.0, N, true);
    if (with_homogeneous) s.alpha_h = series_coefficients(co, s.rho, N, false);
    double x0 = x0_start;
    auto ok = [&](const std::vector<double>& al, double rho, double x) {
        if (al.empty()) return true;
        double last = std::abs(al.back()) * std::pow(x, static_cast<double>(N) + rho);
        double val = std::abs(series_eval(al, rho, x, 0)[0]);
        return std::isfinite(last) && last <= 1e-14 * val;
    };
    for (int i = 0; i < 60 && !(ok(s.alpha_a, 0.0, 3.0 * x0) && ok(s.alpha_h, s.rho, 3.0 * x0)); ++i) x0 *= 0.5;
    s.x0 = x0;
    return s;
}

/// One solution of the ODE: series on (0, x0], quintic Hermite on nodes beyond.
struct Trajectory {
    SeriesSeed seed;
    double C = 0.0;
    std::vector<double> xs;
    std::vector<std::array<double, 5>> d;  // u .. u'''' at each node
    std::optional<double> crossing;        // first root of u(x) = x - 1

    /// (u, u', u'', u''') at x.
    std::array<double, 4> eval(double x) const {
        if (x <= seed.x0 || xs.empty()) return eval_series(x);
        return eval_nodes(x);
    }

    std::array<double, 4> eval_series(double x) const {
        {
            auto a = series_eval(seed.alpha_a, 0.0, x, 3);
            if (!seed.alpha_h.empty() && C != 0.0) {
                auto h = series_eval(seed.alpha_h, seed.rho, x, 3);
                for (int k = 0; k < 4; ++k) a[k] += C * h[k];
            }
            return {a[0], a[1], a[2], a[3]};
        }
    }

    /// Hermite interpolation on the integrator nodes only.
    std::array<double, 4> eval_nodes(double x) const {
        std::size_t i = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin());
        if (i >= xs.size()) i = xs.size() - 1;
        if (i == 0) i = 1;
        const auto& L = d[i - 1];
        const auto& R = d[i];
        double xa = xs[i - 1], xb = xs[i];
        ode::Quintic q0(xa, xb, L[0], L[1], L[2], R[0], R[1], R[2]);
        ode::Quintic q1(xa, xb, L[1], L[2], L[3], R[1], R[2], R[3]);
        ode::Quintic q2(xa, xb, L[2], L[3], L[4], R[2], R[3], R[4]);
        return {q0.value(x), q1.value(x), q2.value(x), q2.derivative(x)};
    }

    double u(double x) const { return eval(x)[0]; }
};

/// Integrate u = u_a + C u_h from the handoff point. With stop_at_crossing,
/// the integration ends at the first root of u(x) - (x - 1).
inline Trajectory integrate_u(const OdeCoefficients& co, const SeriesSeed& seed, double C, double x_end,
                              bool stop_at_crossing, const ode::Options& opt) {
    Trajectory t;
    t.seed = seed;
    t.C = C;
    auto s = series_eval(seed.alpha_a, 0.0, seed.x0, 2);
    if (!seed.alpha_h.empty() && C != 0.0) {
        auto h = series_eval(seed.alpha_h, seed.rho, seed.x0, 2);
        for (int k = 0; k < 3; ++k) s[k] += C * h[k];
    }
    ode::LinearRhs<3> f = [&co](double x, ode::Mat<3>& A, ode::Vec<3>& g) {
        double P3 = co.P(3, x);
        A = {{{0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}, {-co.P(0, x) / P3, -co.P(1, x) / P3, -co.P(2, x) / P3}}};
        g = {0.0, 0.0, co.R(x) / P3};
    };
    t.xs.push_back(seed.x0);
    t.d.push_back(derivative_stack(co, seed.x0, s[0], s[1], s[2]));
    ode::Observer<3> obs = [&](const ode::Node<3>& prev, const ode::Node<3>& next) {
        t.xs.push_back(next.x);
        t.d.push_back(derivative_stack(co, next.x, next.y[0], next.y[1], next.y[2]));
        if (!stop_at_crossing) return false;
        auto gfun = [&](double x) { return t.u(x) - (x - 1.0); };
        // Sample inside the step so that a shallow dip below x - 1 is not missed.
        const int n_sub = 8;
        double xa = prev.x, ga = gfun(xa);
        for (int j = 1; j <= n_sub; ++j) {
            double xb = prev.x + (next.x - prev.x) * j / n_sub;
            double gb = gfun(xb);
            if (gb <= 0.0) {
                double lo = xa, hi = xb;
                for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
                    double mid = 0.5 * (lo + hi);
                    if (mid <= lo || mid >= hi) break;
                    if (gfun(mid) > 0.0) lo = mid; else hi = mid;
                }
                double glo = gfun(lo), ghi = gfun(hi);
                t.crossing = (ghi == glo) ? hi : lo - glo * (hi - lo) / (ghi - glo);
                return true;
            }
            xa = xb; ga = gb;
        }
        (void)ga;
        return false;
    };
    ode::integrate<3>(f, seed.x0, {s[0], s[1], s[2]}, x_end, opt, obs);
    return t;
}

namespace detail {

/// Tanh-sinh quadrature of f(z, 1-z) over [a, b]. The abscissa complement
/// supplied by the rule is used to place nodes next to the endpoints without
/// rounding onto them, and to form 1-z accurately near z = 1.
template <class F>
double tanh_sinh_interval(const F& f, double a, double b, double tol, double* err, double* L1) {
    thread_local boost::math::quadrature::tanh_sinh<double> ts(15);
    const double half = 0.5 * (b - a);
    auto g = [&](double t, double tc) {
        double z, omz;
        if (tc < 0.0) {  // -tc is the distance from t to -1
            z = a + half * (-tc);
            omz = (1.0 - a) - half * (-tc);
        } else {         // tc is the distance from t to +1
            z = b - half * tc;
            omz = (1.0 - b) + half * tc;
        }
        if (t == 0.0) { z = a + half; omz = 1.0 - z; }
        return f(z, omz);
    };
    return half * ts.integrate(g, tol, err, L1);
}

}  // namespace detail

/// Jump part of the generator in the z-substituted form.
/// fprime(z) must be defined on (0,1).
inline double jump_generator(const GeneratorModel& m, const std::function<double(double)>& fprime, double x,
                             double A_split, double tol = 1e-10) {
    if (m.mu_inf == 0.0 && m.mu0 == 0.0) return 0.0;
    const double g = m.gamma;
    // K1 uses ((1-z)/z), K2 uses (z/(1-z)).
    auto K1 = [&](double z, double omz) {
        double r = std::log(omz) - std::log(z);
        return m.mu_inf * m.p1 * std::exp(g * r) + m.mu0 * m.q1 * std::exp((g - 1.0) * r);
    };
    auto K2 = [&](double z, double omz) {
        double r = std::log(z) - std::log(omz);
        return m.mu_inf * m.p2 * std::exp(g * r) + m.mu0 * m.q2 * std::exp((g + 1.0) * r);
    };
    auto integrate = [&](auto&& kernel, double a, double b) {
        if (!(b > a)) return 0.0;
        std::vector<double> cuts{a};
        if (A_split > a && A_split < b) cuts.push_back(A_split);
        cuts.push_back(b);
        double total = 0.0;
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
            double err = 0.0, L1 = 0.0;
            auto h = [&](double z, double omz) {
                double k = kernel(z, omz);
                return k == 0.0 ? 0.0 : fprime(z) * k;
            };
            double v = detail::tanh_sinh_interval(h, cuts[i], cuts[i + 1], tol, &err, &L1);
            if (!std::isfinite(v) || err > 1e-7 * std::max(1.0, L1)) {
                std::ostringstream os;
                os << "jump-kernel quadrature failed on [" << cuts[i] << ", " << cuts[i + 1] << "], error " << err;
                throw QuadratureFailure(os.str());
            }
            total += v;
        }
        return total;
    };
    double I1, I2;
    if (m.beta0 > 0.0) {
        I1 = integrate(K1, x, 1.0);
        I2 = integrate(K2, 0.0, x);
    } else {
        I1 = -integrate(K1, 0.0, x);
        I2 = -integrate(K2, x, 1.0);
    }
    double lx = std::log(x), l1x = std::log1p(-x);
    double P = std::exp(g * lx - (g - 1.0) * l1x);
    double Q = std::exp((g + 1.0) * l1x - g * lx);
    return P * I1 - Q * I2;
}

/// Full generator applied to f at x given f'(x), f''(x) and f' on (0,1).
inline double generator(const GeneratorModel& m, const std::function<double(double)>& fprime, double fp, double fpp,
                        double x, double A_split = -1.0) {
    double local = fp * (m.lambda * (1.0 - x) + x * (1.0 - x) * (m.mu_inf - m.mu0)) +
                   fpp * 0.5 * m.S * x * x * (1.0 - x) * (1.0 - x);
    return local + jump_generator(m, fprime, x, A_split);
}

struct SolveOptions {
    int series_order = 25;
    double x0_start = 1e-2;
    double x0_scale = 1.0;  // multiplies the chosen handoff point (convergence studies)
    double rtol = 1e-12;
    double atol = 1e-14;
    double eps_end = 1e-6;
    double shoot_tol = 1e-13;  // relative tolerance on the shooting constant
};

struct SolveDiagnostics {
    double ode_residual_max = 0.0;       // max |residual| / |c (gamma^2 - 1)| at step midpoints
    double handoff_mismatch = 0.0;       // max |u_series - u_ode| on [x0, 3 x0]
    double continuous_fit = 0.0;         // |V(A*) - (1 - A*)|
    double smooth_fit = 0.0;             // |V'(A*-) + 1|
    double normal_entrance = 0.0;        // |V'(0+)|
    double shooting_residual = 0.0;      // scaled generator residual at A*/2
    double max_u_on_grid = 0.0;          // should be < 0
    double concavity_violation = 0.0;    // max positive normalised second difference of V
    double monotonicity_violation = 0.0; // max positive first difference of V
    double bound_violation = 0.0;        // max (V - (1 - x))^+
    int shooting_iterations = 0;
    std::size_t n_steps = 0;
};

/// Solution of the threshold problem.
struct ThresholdSolution {
    double a_star = 0.0;
    double b_star = 0.0;
    double blowup_b = 0.0;
    double gamma = 0.0;
    bool auxiliary_gamma = false;
    double shooting_constant = 0.0;
    double x0 = 0.0;
    InitialConditions ic;
    std::vector<double> series_coeffs;    // alpha_n of the analytic branch
    std::vector<double> homogeneous_coeffs;
    std::vector<double> grid;             // increasing nodes in (0, A*]
    std::vector<double> u_values, u1_values, u2_values, v_values;
    SolveDiagnostics diagnostics;
    OdeCoefficients coeffs;
    GeneratorModel gen;
    Trajectory traj;

    std::array<double, 4> u_at(double x) const { return traj.eval(x); }

    /// V*'(z): u/(1-z) in the continuation region, -1 in the stopping region.
    double v_prime(double z) const {
        if (z >= a_star) return -1.0;
        return u_at(z)[0] / (1.0 - z);
    }

    /// V*(x) = 1 - A* - int_x^{A*} u(z)/(1-z) dz (and 1 - x beyond A*).
    double value(double x) const {
        if (x >= a_star) return 1.0 - x;
        // cumulative table from the right
        std::size_t i = static_cast<std::size_t>(std::upper_bound(grid.begin(), grid.end(), x) - grid.begin());
        double right = i < grid.size() ? grid[i] : a_star;
        double tail = i < grid.size() ? v_values[i] : 1.0 - a_star;
        return tail - integrate_vprime(x, right);
    }

    double integrate_vprime(double a, double b) const {
        if (!(b > a)) return 0.0;
        auto f = [this](double z) { return u_at(z)[0] / (1.0 - z); };
        return boost::math::quadrature::gauss<double, 10>::integrate(f, a, b);
    }
};

namespace detail {

inline double shooting_scale(double x, double rho) {
    return std::exp(rho * std::log(x) + (1.0 - rho) * std::log1p(-x));
}

}  // namespace detail

/// Generator residual A V*(x) + c x with the z-kernel quadrature.
inline double generator_residual(const ThresholdSolution& sol, const ModelParams& p, double x) {
    if (!(x > 0.0 && x < sol.a_star)) throw DomainError("generator residual requires x in (0, A*)");
    auto d = sol.u_at(x);
    double fp = d[0] / (1.0 - x);
    double fpp = d[1] / (1.0 - x) + d[0] / ((1.0 - x) * (1.0 - x));
    std::function<double(double)> fprime = [&sol](double z) { return sol.v_prime(z); };
    return generator(sol.gen, fprime, fp, fpp, x, sol.a_star) + p.cost * x;
}

namespace detail {

/// Generator residual of a trajectory with threshold A at x, scaled by the
/// x^|gamma| (1-x)^(1-|gamma|) mode it measures.
inline double shooting_function(const Trajectory& t, const GeneratorModel& m, double cost, double A, double x) {
    auto d = t.eval(x);
    double fp = d[0] / (1.0 - x);
    double fpp = d[1] / (1.0 - x) + d[0] / ((1.0 - x) * (1.0 - x));
    std::function<double(double)> fprime = [&](double z) { return z >= A ? -1.0 : t.u(z) / (1.0 - z); };
    double E = generator(m, fprime, fp, fpp, x, A) + cost * x;
    return E / shooting_scale(x, std::abs(m.gamma));
}

}  // namespace detail

/// Solve the free-boundary problem: series seed, shooting on the homogeneous
/// component when jumps are present, threshold location and V* on the grid.
inline ThresholdSolution solve_threshold(const ModelParams& p, const MeasureChange& mc, const SolveOptions& o = {}) {
    p.validate();
    ThresholdSolution sol;
    sol.coeffs = make_coefficients(p, mc);
    sol.gamma = sol.coeffs.gamma;
    sol.auxiliary_gamma = sol.coeffs.auxiliary_gamma;
    sol.gen = generator_model(p, mc);
    sol.blowup_b = check_assumption(p, mc);
    sol.ic = initial_conditions(p, mc);
    const bool jumps = p.pre_jump.intensity > 0.0;
    const OdeCoefficients& co = sol.coeffs;

    SeriesSeed seed = make_seed(co, jumps, o.series_order, o.x0_start);
    seed.x0 *= o.x0_scale;
    sol.x0 = seed.x0;
    sol.series_coeffs = seed.alpha_a;
    sol.homogeneous_coeffs = seed.alpha_h;

    ode::Options opt;
    opt.rtol = o.rtol;
    opt.atol = o.atol;
    const double x_end = 1.0 - o.eps_end;

    struct Trial {
        Trajectory t;
        double R = 0.0;
        bool crossed = false;
    };
    auto trial = [&](double C) {
        Trial tr;
        tr.t = integrate_u(co, seed, C, x_end, true, opt);
        tr.crossed = tr.t.crossing.has_value();
        if (!tr.crossed) {
            tr.R = std::numeric_limits<double>::infinity();
        } else if (jumps) {
            double A = *tr.t.crossing;
            tr.R = detail::shooting_function(tr.t, sol.gen, p.cost, A, 0.5 * A);
        }
        return tr;
    };

    Trial best = trial(0.0);
    int iters = 1;
    if (jumps && best.R != 0.0) {
        // R increases with C; "no crossing" counts as the high side.
        Trial lo, hi;
        if (best.R < 0.0) {
            lo = best;
            double step = 1.0;
            double C = 0.0;
            while (true) {
                C += step;
                Trial t = trial(C);
                ++iters;
                if (t.R >= 0.0) { hi = t; break; }
                lo = t;
                step *= 2.0;
                if (step > 1e8) throw MathError("shooting bracket not found for the homogeneous component");
            }
        } else {
            hi = best;
            double step = 1.0;
            double C = 0.0;
            while (true) {
                C -= step;
                Trial t = trial(C);
                ++iters;
                if (t.crossed && t.R <= 0.0) { lo = t; break; }
                hi = t;
                step *= 2.0;
                if (step > 1e8) throw MathError("shooting bracket not found for the homogeneous component");
            }
        }
        for (int it = 0; it < 200; ++it) {
            double a = lo.t.C, b = hi.t.C;
            if (b - a <= o.shoot_tol * std::max(1.0, std::abs(a))) break;
            double mid = 0.5 * (a + b);
            if (mid <= a || mid >= b) break;
            Trial t = trial(mid);
            ++iters;
            if (t.R == 0.0) { lo = hi = t; break; }
            if (t.R < 0.0) lo = t; else hi = t;
        }
        best = (hi.crossed && std::abs(hi.R) < std::abs(lo.R)) ? hi : lo;
    }
    sol.diagnostics.shooting_iterations = iters;
    if (!best.crossed) {
        std::ostringstream os;
        os << "u(x) does not reach x - 1 before x = " << x_end;
        throw NoCrossing(os.str());
    }
    sol.traj = best.t;
    sol.shooting_constant = best.t.C;
    sol.diagnostics.shooting_residual = best.R;
    sol.a_star = *best.t.crossing;
    if (!(sol.a_star > 0.0 && sol.a_star < 1.0)) throw MathError("threshold A* outside (0,1)");
    sol.b_star = sol.a_star / (1.0 - sol.a_star);
    sol.diagnostics.n_steps = sol.traj.xs.size();

    // Grid: a few series points below x0, then integrator nodes up to A*.
    std::vector<double> grid;
    for (int k = 8; k >= 1; --k) grid.push_back(sol.x0 * std::pow(0.5, k));
    for (double x : sol.traj.xs)
        if (x < sol.a_star) grid.push_back(x);
    grid.push_back(sol.a_star);
    sol.grid = grid;
    const std::size_t n = grid.size();
    sol.u_values.resize(n);
    sol.u1_values.resize(n);
    sol.u2_values.resize(n);
    sol.v_values.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto d = sol.u_at(grid[i]);
        sol.u_values[i] = d[0];
        sol.u1_values[i] = d[1];
        sol.u2_values[i] = d[2];
    }
    sol.v_values[n - 1] = 1.0 - sol.a_star;
    for (std::size_t i = n - 1; i-- > 0;)
        sol.v_values[i] = sol.v_values[i + 1] - sol.integrate_vprime(grid[i], grid[i + 1]);

    // Diagnostics.
    auto& dg = sol.diagnostics;
    double scale = std::abs(co.rhs_scale);
    for (std::size_t i = 0; i + 1 < sol.traj.xs.size(); ++i) {
        double xm = 0.5 * (sol.traj.xs[i] + sol.traj.xs[i + 1]);
        if (xm >= sol.a_star) break;
        dg.ode_residual_max = std::max(dg.ode_residual_max, std::abs(ode_residual(co, xm, sol.u_at(xm))) / scale);
    }
    for (int k = 0; k <= 20; ++k) {
        double x = sol.x0 * (1.0 + 2.0 * k / 20.0);
        if (x >= sol.a_star) break;
        auto s = series_eval(seed.alpha_a, 0.0, x, 0);
        double us = s[0];
        if (!seed.alpha_h.empty()) us += sol.shooting_constant * series_eval(seed.alpha_h, seed.rho, x, 0)[0];
        dg.handoff_mismatch = std::max(dg.handoff_mismatch, std::abs(us - sol.traj.eval_nodes(x)[0]));
    }
    dg.continuous_fit = std::abs(sol.value(sol.a_star - 0.0) - (1.0 - sol.a_star));
    dg.smooth_fit = std::abs(sol.u_at(sol.a_star)[0] / (1.0 - sol.a_star) + 1.0);
    dg.normal_entrance = std::abs(sol.u_at(0.0)[0]);
    dg.max_u_on_grid = *std::max_element(sol.u_values.begin(), sol.u_values.end());
    for (std::size_t i = 0; i + 1 < n; ++i) {
        dg.monotonicity_violation = std::max(dg.monotonicity_violation, sol.v_values[i + 1] - sol.v_values[i]);
        dg.bound_violation = std::max(dg.bound_violation, sol.v_values[i] - (1.0 - grid[i]));
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
        double h1 = grid[i] - grid[i - 1], h2 = grid[i + 1] - grid[i];
        double s1 = (sol.v_values[i] - sol.v_values[i - 1]) / h1;
        double s2 = (sol.v_values[i + 1] - sol.v_values[i]) / h2;
        // slope increase normalised by the slope scale of the problem
        dg.concavity_violation = std::max(dg.concavity_violation, (s2 - s1) / std::max(1.0, std::abs(s1)));
    }
    return sol;
}

/// Continue the solution past A* to x_end (diagnostic only). Returns u(x_end)
/// and the number of additional crossings of u = x - 1 found on (A*, x_end].
struct ContinuationReport {
    double x_end = 0.0;
    double u_end = 0.0;
    int extra_crossings = 0;
};

inline ContinuationReport continue_past_threshold(const ThresholdSolution& sol, double x_end,
                                                  const SolveOptions& o = {}) {
    ode::Options opt;
    opt.rtol = o.rtol;
    opt.atol = o.atol;
    Trajectory t = integrate_u(sol.coeffs, sol.traj.seed, sol.shooting_constant, x_end, false, opt);
    ContinuationReport rep;
    rep.x_end = x_end;
    rep.u_end = t.u(x_end);
    double prev = t.u(sol.a_star + 1e-9) - (sol.a_star + 1e-9 - 1.0);
    for (std::size_t i = 0; i < t.xs.size(); ++i) {
        if (t.xs[i] <= sol.a_star + 1e-9) continue;
        double g = t.d[i][0] - (t.xs[i] - 1.0);
        if ((g > 0.0) != (prev > 0.0)) ++rep.extra_crossings;
        prev = g;
    }
    return rep;
}

}  // namespace qdetect
