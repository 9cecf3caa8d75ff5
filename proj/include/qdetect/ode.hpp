// Three-stage Radau IIA (order 5, L-stable) for linear systems
// Y' = A(x) Y + g(x), with step-doubling error control and quintic Hermite
// dense output. Linear stage equations are solved exactly, so no Newton
// iteration is needed; this keeps the integrator robust on the stiff layer
// of the singular problems it serves.
#pragma once

#include "qdetect/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <utility>
#include <vector>

namespace qdetect::ode {

/// Solve M z = b in place by Gaussian elimination with partial pivoting.
template <std::size_t K>
bool solve_dense(std::array<std::array<double, K>, K>& M, std::array<double, K>& b) {
    for (std::size_t col = 0; col < K; ++col) {
        std::size_t piv = col;
        double best = std::abs(M[col][col]);
        for (std::size_t r = col + 1; r < K; ++r)
            if (std::abs(M[r][col]) > best) { best = std::abs(M[r][col]); piv = r; }
        if (best == 0.0 || !std::isfinite(best)) return false;
        if (piv != col) { std::swap(M[piv], M[col]); std::swap(b[piv], b[col]); }
        for (std::size_t r = col + 1; r < K; ++r) {
            double f = M[r][col] / M[col][col];
            if (f == 0.0) continue;
            for (std::size_t c = col; c < K; ++c) M[r][c] -= f * M[col][c];
            b[r] -= f * b[col];
        }
    }
    for (std::size_t i = K; i-- > 0;) {
        double s = b[i];
        for (std::size_t c = i + 1; c < K; ++c) s -= M[i][c] * b[c];
        b[i] = s / M[i][i];
    }
    return true;
}

template <std::size_t N>
using Vec = std::array<double, N>;
template <std::size_t N>
using Mat = std::array<std::array<double, N>, N>;

/// Linear system description: fills A(x) and g(x).
template <std::size_t N>
using LinearRhs = std::function<void(double x, Mat<N>& A, Vec<N>& g)>;

struct RadauTableau {
    static constexpr double s6 = 2.449489742783178098197284;
    static constexpr std::array<double, 3> c{(4.0 - s6) / 10.0, (4.0 + s6) / 10.0, 1.0};
    static constexpr std::array<std::array<double, 3>, 3> a{{
        {(88.0 - 7.0 * s6) / 360.0, (296.0 - 169.0 * s6) / 1800.0, (-2.0 + 3.0 * s6) / 225.0},
        {(296.0 + 169.0 * s6) / 1800.0, (88.0 + 7.0 * s6) / 360.0, (-2.0 - 3.0 * s6) / 225.0},
        {(16.0 - s6) / 36.0, (16.0 + s6) / 36.0, 1.0 / 9.0},
    }};
};

/// One Radau IIA step of size h. Returns false if the stage system is singular.
template <std::size_t N>
bool radau_step(const LinearRhs<N>& f, double x, const Vec<N>& y, double h, Vec<N>& out) {
    constexpr std::size_t K = 3 * N;
    std::array<Mat<N>, 3> A;
    std::array<Vec<N>, 3> g;
    for (std::size_t j = 0; j < 3; ++j) f(x + RadauTableau::c[j] * h, A[j], g[j]);
    std::array<std::array<double, K>, K> M{};
    std::array<double, K> b{};
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t r = 0; r < N; ++r) {
            double rhs = y[r];
            for (std::size_t j = 0; j < 3; ++j) {
                double ha = h * RadauTableau::a[i][j];
                rhs += ha * g[j][r];
                for (std::size_t s = 0; s < N; ++s) M[i * N + r][j * N + s] = -ha * A[j][r][s];
            }
            M[i * N + r][i * N + r] += 1.0;
            b[i * N + r] = rhs;
        }
    }
    // Similarity scaling by the current component magnitudes keeps the
    // elimination accurate when components differ by many orders.
    std::array<double, N> sc;
    for (std::size_t r = 0; r < N; ++r) sc[r] = std::abs(y[r]) > 1e-300 ? std::abs(y[r]) : 1.0;
    for (std::size_t R = 0; R < K; ++R) {
        for (std::size_t Cc = 0; Cc < K; ++Cc) M[R][Cc] *= sc[Cc % N] / sc[R % N];
        b[R] /= sc[R % N];
    }
    if (!solve_dense<K>(M, b)) return false;
    for (std::size_t r = 0; r < N; ++r) out[r] = b[2 * N + r] * sc[r];
    for (double v : out)
        if (!std::isfinite(v)) return false;
    return true;
}

struct Options {
    double rtol = 1e-10;
    double atol = 1e-12;
    double h_init = 0.0;   // 0 = derived from the starting point
    double h_max = 0.05;
    double h_min_rel = 1e-14;
    std::size_t max_steps = 200000;
};

template <std::size_t N>
struct Node {
    double x;
    Vec<N> y;
};

/// Step observer: called after each accepted step with the previous and new
/// node. Returning true stops the integration.
template <std::size_t N>
using Observer = std::function<bool(const Node<N>& prev, const Node<N>& next)>;

/// Adaptive integration from (x0, y0) towards x_end. Returns accepted nodes,
/// the first of which is the starting point.
template <std::size_t N>
std::vector<Node<N>> integrate(const LinearRhs<N>& f, double x0, const Vec<N>& y0, double x_end,
                               const Options& opt, const Observer<N>& observe = {}) {
    std::vector<Node<N>> nodes{{x0, y0}};
    double x = x0;
    Vec<N> y = y0;
    double h = opt.h_init > 0.0 ? opt.h_init : 0.05 * std::max(x0, 1e-8);
    h = std::min(h, opt.h_max);
    for (std::size_t step = 0; step < opt.max_steps; ++step) {
        if (x >= x_end) return nodes;
        bool last = false;
        if (x + h >= x_end) { h = x_end - x; last = true; }
        Vec<N> big, half, small;
        bool ok = radau_step<N>(f, x, y, h, big) && radau_step<N>(f, x, y, 0.5 * h, half) &&
                  radau_step<N>(f, x + 0.5 * h, half, 0.5 * h, small);
        double err = std::numeric_limits<double>::infinity();
        if (ok) {
            err = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                double sc = opt.atol + opt.rtol * std::max(std::abs(y[i]), std::abs(small[i]));
                err = std::max(err, std::abs(small[i] - big[i]) / 31.0 / sc);
            }
        }
        if (err <= 1.0) {
            double xn = last ? x_end : x + h;
            Node<N> prev{x, y};
            x = xn;
            y = small;
            nodes.push_back({x, y});
            if (observe && observe(prev, nodes.back())) return nodes;
            double fac = err > 0.0 ? 0.9 * std::pow(err, -1.0 / 6.0) : 4.0;
            h = std::min(h * std::clamp(fac, 0.2, 4.0), opt.h_max);
        } else {
            double fac = std::isfinite(err) ? 0.9 * std::pow(err, -1.0 / 6.0) : 0.1;
            h *= std::clamp(fac, 0.1, 0.5);
        }
        if (h < opt.h_min_rel * std::max(std::abs(x), 1e-300)) {
            std::ostringstream os;
            os << "step size underflow at x=" << x << " (h=" << h << ")";
            throw StepUnderflow(os.str());
        }
    }
    throw StepUnderflow("maximum number of integration steps exceeded");
}

/// Quintic Hermite interpolant from value, first and second derivative at
/// both ends of [xa, xb]. Returns the value and first derivative at x.
struct Quintic {
    double xa = 0.0, h = 1.0;
    std::array<double, 6> c{};  // coefficients in t = (x - xa)/h

    Quintic() = default;
    Quintic(double xa_, double xb, double f0, double d0, double s0, double f1, double d1, double s1)
        : xa(xa_), h(xb - xa_) {
        c[0] = f0;
        c[1] = h * d0;
        c[2] = 0.5 * h * h * s0;
        double A = f1 - (c[0] + c[1] + c[2]);
        double B = h * d1 - (c[1] + 2.0 * c[2]);
        double C = h * h * s1 - 2.0 * c[2];
        c[3] = 10.0 * A - 4.0 * B + 0.5 * C;
        c[4] = -15.0 * A + 7.0 * B - C;
        c[5] = 6.0 * A - 3.0 * B + 0.5 * C;
    }

    double value(double x) const {
        double t = (x - xa) / h;
        double s = 0.0;
        for (std::size_t i = 6; i-- > 0;) s = s * t + c[i];
        return s;
    }

    double derivative(double x) const {
        double t = (x - xa) / h;
        double s = 0.0;
        for (std::size_t i = 6; i-- > 1;) s = s * t + static_cast<double>(i) * c[i];
        return s / h;
    }
};

}  // namespace qdetect::ode
