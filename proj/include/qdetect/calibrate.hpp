// Life-table ingestion, force-of-mortality series, drift removal and the
// outlier-splitting estimator of the perturbation parameters.
#pragma once

#include "qdetect/errors.hpp"
#include "qdetect/model.hpp"
#include "qdetect/rng.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace qdetect {

enum class TableFormat { hmd_txt, csv };

/// Survivor counts l keyed by (year, age).
struct LifeTable {
    std::map<std::pair<int, int>, double> lx;

    bool has(int year, int age) const { return lx.count({year, age}) != 0; }

    double at(int year, int age) const {
        auto it = lx.find({year, age});
        if (it == lx.end()) {
            std::ostringstream os;
            os << "life table has no entry for year " << year << ", age " << age;
            throw DataError(os.str());
        }
        return it->second;
    }

    int first_year() const { return lx.empty() ? 0 : lx.begin()->first.first; }
    int last_year() const { return lx.empty() ? 0 : lx.rbegin()->first.first; }

    /// Positivity of l and monotonicity in age within each year.
    void validate() const {
        if (lx.empty()) throw DataError("life table is empty");
        const std::pair<int, int>* prev_key = nullptr;
        double prev = 0.0;
        for (const auto& [key, l] : lx) {
            if (!(l >= 0.0) || !std::isfinite(l)) {
                std::ostringstream os;
                os << "negative or invalid lx at year " << key.first << ", age " << key.second;
                throw DataError(os.str());
            }
            if (prev_key && prev_key->first == key.first && l > prev) {
                std::ostringstream os;
                os << "lx increases with age in year " << key.first << " (age " << prev_key->second << " -> "
                   << key.second << ")";
                throw DataError(os.str());
            }
            prev_key = &key;
            prev = l;
        }
    }
};

namespace detail {

inline std::string lower(std::string s) {
    for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

inline std::string trim(const std::string& s) {
    auto a = s.find_first_not_of(" \t\r\n\"");
    if (a == std::string::npos) return {};
    auto b = s.find_last_not_of(" \t\r\n\"");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream is(line);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

[[noreturn]] inline void parse_fail(const std::string& source, std::size_t line, const std::string& what) {
    std::ostringstream os;
    os << source << ":" << line << ": " << what;
    throw DataError(os.str());
}

inline int parse_int(const std::string& tok, const std::string& source, std::size_t line, bool allow_plus) {
    std::string t = tok;
    if (allow_plus && !t.empty() && t.back() == '+') t.pop_back();
    try {
        std::size_t pos = 0;
        int v = std::stoi(t, &pos);
        if (pos != t.size()) throw std::invalid_argument(t);
        return v;
    } catch (const std::exception&) {
        parse_fail(source, line, "expected an integer, got '" + tok + "'");
    }
}

inline double parse_double(const std::string& tok, const std::string& source, std::size_t line) {
    try {
        std::size_t pos = 0;
        double v = std::stod(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        parse_fail(source, line, "expected a number, got '" + tok + "'");
    }
}

inline void insert_row(LifeTable& t, int year, int age, double l, const std::string& source, std::size_t line) {
    if (!t.lx.emplace(std::make_pair(year, age), l).second) parse_fail(source, line, "duplicate (year, age) row");
}

}  // namespace detail

/// Parse a life table. HMD 1x1 period tables: preamble lines are skipped
/// until a header naming Year, Age and lx; "110+" maps to 110. CSV: a header
/// row with columns year, age, lx (any order, case-insensitive).
inline LifeTable parse_life_table(std::istream& in, TableFormat format, const std::string& source = "<input>") {
    LifeTable t;
    std::string line;
    std::size_t lineno = 0;
    int c_year = -1, c_age = -1, c_lx = -1;
    std::size_t n_cols = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        auto cells = format == TableFormat::csv ? detail::split_csv(line) : detail::split_ws(line);
        if (c_year < 0) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                std::string h = detail::lower(cells[i]);
                if (h == "year") c_year = static_cast<int>(i);
                else if (h == "age") c_age = static_cast<int>(i);
                // HMD tables carry both lx and Lx, so an exact match wins.
                else if (cells[i] == "lx" || (h == "lx" && c_lx < 0)) c_lx = static_cast<int>(i);
            }
            if (c_year >= 0 && c_age >= 0 && c_lx >= 0) {
                n_cols = cells.size();
                continue;
            }
            if (format == TableFormat::csv) detail::parse_fail(source, lineno, "CSV header must name year, age and lx");
            c_year = c_age = c_lx = -1;
            continue;  // HMD preamble
        }
        if (cells.size() < n_cols)
            detail::parse_fail(source, lineno, "expected " + std::to_string(n_cols) + " columns");
        int year = detail::parse_int(cells[c_year], source, lineno, false);
        int age = detail::parse_int(cells[c_age], source, lineno, true);
        double l = detail::parse_double(cells[c_lx], source, lineno);
        detail::insert_row(t, year, age, l, source, lineno);
    }
    if (c_year < 0) throw DataError(source + ": no header with year, age and lx found");
    t.validate();
    return t;
}

inline TableFormat table_format_from_string(const std::string& s) {
    std::string v = detail::lower(s);
    if (v == "hmd" || v == "hmd_txt" || v == "txt") return TableFormat::hmd_txt;
    if (v == "csv") return TableFormat::csv;
    throw ConfigError("unknown data format '" + s + "' (expected hmd_txt or csv)");
}

inline LifeTable load_life_table(const std::string& path, TableFormat format) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open life table '" + path + "'");
    return parse_life_table(in, format, path);
}

/// Force of mortality at one age over a range of years.
struct MortalitySeries {
    std::vector<int> years;
    std::vector<double> mu;
    std::vector<double> log_mu;
};

/// mu_i = log(l_age / l_{age+1}) for every year in [year_from, year_to].
inline MortalitySeries force_of_mortality(const LifeTable& t, int age, int year_from, int year_to) {
    if (year_to < year_from) throw ConfigError("year range is empty");
    MortalitySeries s;
    for (int y = year_from; y <= year_to; ++y) {
        double l0 = t.at(y, age), l1 = t.at(y, age + 1);
        if (!(l0 > 0.0) || !(l1 > 0.0)) {
            std::ostringstream os;
            os << "lx is zero at year " << y << " near age " << age << "; force of mortality undefined";
            throw DataError(os.str());
        }
        double mu = std::log(l0 / l1);
        if (!(mu > 0.0)) {
            std::ostringstream os;
            os << "force of mortality is not positive at year " << y << ", age " << age << " (log undefined)";
            throw DataError(os.str());
        }
        s.years.push_back(y);
        s.mu.push_back(mu);
        s.log_mu.push_back(std::log(mu));
    }
    return s;
}

/// Every year available in the table.
inline MortalitySeries force_of_mortality(const LifeTable& t, int age) {
    return force_of_mortality(t, age, t.first_year(), t.last_year());
}

struct Drift {
    double intercept = 0.0;  // a0 = log mu_0
    double slope = 0.0;      // a1 per year
};

/// a1 = mean of log increments, a0 = first log value.
inline Drift estimate_drift(const std::vector<double>& log_mu) {
    if (log_mu.size() < 2) throw DataError("drift estimation needs at least two observations");
    NeumaierSum s;
    for (std::size_t i = 1; i < log_mu.size(); ++i) s.add(log_mu[i] - log_mu[i - 1]);
    return Drift{log_mu.front(), s.value() / static_cast<double>(log_mu.size() - 1)};
}

inline Drift estimate_drift(const MortalitySeries& s) { return estimate_drift(s.log_mu); }

/// x_i = (log mu_i - log mu_{i-1}) - a1.
inline std::vector<double> residual_increments(const std::vector<double>& log_mu, double slope) {
    std::vector<double> x;
    for (std::size_t i = 1; i < log_mu.size(); ++i) x.push_back((log_mu[i] - log_mu[i - 1]) - slope);
    return x;
}

inline std::vector<double> residual_increments(const MortalitySeries& s, const Drift& d) {
    return residual_increments(s.log_mu, d.slope);
}

struct CalibrationResult {
    double intercept = 0.0;
    double drift = 0.0;
    double sigma = 0.0;
    JumpLaw jump_law = JumpLaw::none();
    std::vector<std::size_t> jump_indices;
    double alpha = 0.1;
    double z_alpha = 0.0;
    double sigma_first_pass = 0.0;
    std::vector<std::string> warnings;
};

/// Two-sided standard-Gaussian critical value Phi^{-1}(1 - alpha/2).
inline double z_quantile(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0,1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), 1.0 - 0.5 * alpha);
}

namespace detail {

inline double sample_sd(const std::vector<double>& x) {
    NeumaierSum s;
    for (double v : x) s.add(v);
    double mean = s.value() / static_cast<double>(x.size());
    NeumaierSum q;
    for (double v : x) q.add((v - mean) * (v - mean));
    return std::sqrt(q.value() / static_cast<double>(x.size() - 1));
}

}  // namespace detail

/// Split the perturbations into a Gaussian part and jumps:
/// (1) sigma from all points, (2) flag |x_i| > z sigma, (3) sigma once more on
/// the unflagged points, (4) jump size, direction and rate from the flagged ones.
inline CalibrationResult calibrate_perturbation(const std::vector<double>& x, double alpha = 0.1) {
    if (x.size() < 3) throw DataError("calibration needs at least three increments");
    for (double v : x)
        if (!std::isfinite(v)) throw DataError("non-finite increment in calibration input");
    CalibrationResult res;
    res.alpha = alpha;
    res.z_alpha = z_quantile(alpha);
    double s1 = detail::sample_sd(x);
    if (!(s1 > 0.0)) throw DataError("degenerate input: increments are constant (sigma = 0)");
    res.sigma_first_pass = s1;

    std::vector<double> rest, jumps;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::abs(x[i]) > res.z_alpha * s1) {
            res.jump_indices.push_back(i);
            jumps.push_back(x[i]);
        } else {
            rest.push_back(x[i]);
        }
    }
    if (rest.size() >= 2) {
        res.sigma = detail::sample_sd(rest);
        if (!(res.sigma > 0.0)) throw DataError("degenerate input: unflagged increments are constant (sigma = 0)");
    } else {
        res.sigma = s1;
        res.warnings.push_back("fewer than two unflagged increments; sigma kept from the first pass");
    }

    const std::size_t k = jumps.size();
    if (k == 0) {
        res.jump_law = JumpLaw::symmetric(0.5, res.z_alpha * res.sigma, 0.0);
        res.warnings.push_back("no increment exceeded the critical value; jump intensity set to 0");
        return res;
    }
    NeumaierSum abs_sum;
    std::size_t positive = 0;
    for (double j : jumps) {
        abs_sum.add(std::abs(j));
        if (j > 0.0) ++positive;
    }
    double w = abs_sum.value() / static_cast<double>(k);
    double p1 = static_cast<double>(positive) / static_cast<double>(k);
    double rate;
    if (k == 1) {
        rate = 1.0 / static_cast<double>(x.size());
        res.warnings.push_back("only one jump flagged; intensity set to one per sample length");
    } else {
        double span = static_cast<double>(res.jump_indices.back() - res.jump_indices.front());
        rate = static_cast<double>(k - 1) / span;  // inverse of the mean index gap
    }
    res.jump_law = JumpLaw::symmetric(p1, w, rate);
    return res;
}

}  // namespace qdetect
