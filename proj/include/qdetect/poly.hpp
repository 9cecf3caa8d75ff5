// Dense polynomials with ascending coefficient storage.
#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace qdetect::poly {

using Poly = std::vector<double>;  // c[0] + c[1] x + c[2] x^2 + ...

inline Poly add(const Poly& a, const Poly& b) {
    Poly r(std::max(a.size(), b.size()), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) r[i] += a[i];
    for (std::size_t i = 0; i < b.size(); ++i) r[i] += b[i];
    return r;
}

inline Poly scale(const Poly& a, double s) {
    Poly r(a);
    for (double& v : r) v *= s;
    return r;
}

inline Poly mul(const Poly& a, const Poly& b) {
    if (a.empty() || b.empty()) return {};
    Poly r(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
    return r;
}

inline Poly pow(const Poly& a, unsigned n) {
    Poly r{1.0};
    for (unsigned i = 0; i < n; ++i) r = mul(r, a);
    return r;
}

inline Poly derivative(const Poly& a) {
    if (a.size() <= 1) return {0.0};
    Poly r(a.size() - 1);
    for (std::size_t i = 1; i < a.size(); ++i) r[i - 1] = static_cast<double>(i) * a[i];
    return r;
}

/// Horner evaluation.
inline double eval(const Poly& a, double x) {
    double s = 0.0;
    for (std::size_t i = a.size(); i-- > 0;) s = s * x + a[i];
    return s;
}

/// Coefficient of x^i, zero beyond the stored degree.
inline double coef(const Poly& a, std::size_t i) { return i < a.size() ? a[i] : 0.0; }

}  // namespace qdetect::poly
