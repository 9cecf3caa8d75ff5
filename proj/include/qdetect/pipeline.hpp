// Command implementations behind the qdetect tool: configuration, the
// calibrate -> threshold -> detect chain, simulation and risk curves, and
// their JSON/CSV artifacts. Kept in the library so tests can compare command
// output with direct API calls.
#pragma once

#include "qdetect/bvp.hpp"
#include "qdetect/calibrate.hpp"
#include "qdetect/errors.hpp"
#include "qdetect/gsr.hpp"
#include "qdetect/io.hpp"
#include "qdetect/model.hpp"
#include "qdetect/simulate.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace qdetect {

using io::Json;

/// All run settings. Defaults follow the life-table experiment: lambda 0.05,
/// prior atom 0.05, cost 0.02, r = -3 sigma, alpha 0.1, calibration window
/// 1960-1980 and detection from 1980.
struct RunConfig {
    std::string data_path;
    std::string data_format = "hmd_txt";
    int age = 45;
    int window_start = 1960;
    int window_end = 1980;
    int detection_start = 1980;
    std::optional<int> detection_end;
    double lambda = 0.05;
    double prior_atom = 0.05;
    double cost = 0.02;
    double r_multiplier = -3.0;
    std::optional<double> r_absolute;
    double alpha = 0.1;
    std::uint64_t seed = 1;
    std::string output_dir = ".";

    // Model parameters used when no data or calibration file is given.
    std::optional<double> sigma, mu_inf, w, p1;
    std::string calibration_path;  // calibration JSON produced by `calibrate`
    std::string threshold_path;    // threshold JSON produced by `threshold`

    // Simulation and risk settings.
    std::size_t n_steps = 100;
    std::optional<double> theta;
    std::size_t n_paths = 10000;
    std::size_t horizon = 400;
    std::size_t n_thresholds = 11;
    std::optional<double> b_min, b_max;
    unsigned threads = 0;

    void validate() const {
        if (window_end <= window_start) throw ConfigError("calibration window must span at least two years");
        if (detection_start < window_end) throw ConfigError("calibration window must precede the detection start");
        if (detection_end && *detection_end <= detection_start)
            throw ConfigError("detection end must follow the detection start");
        if (!(lambda > 0.0)) throw ConfigError("lambda must be > 0");
        if (!(prior_atom >= 0.0 && prior_atom < 1.0)) throw ConfigError("prior_atom must lie in [0,1)");
        if (!(cost > 0.0)) throw ConfigError("cost must be > 0");
        if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0,1)");
        if (r_absolute && *r_absolute == 0.0) throw ConfigError("r must be nonzero");
        if (!r_absolute && r_multiplier == 0.0) throw ConfigError("r multiplier must be nonzero");
        if (age < 0) throw ConfigError("age must be >= 0");
        if (n_steps < 1 || n_paths < 1 || horizon < 1) throw ConfigError("n_steps, n_paths and horizon must be >= 1");
        if (n_thresholds < 1) throw ConfigError("n_thresholds must be >= 1");
        if (b_min && !(*b_min > 0.0)) throw ConfigError("b_min must be > 0");
        if (b_min && b_max && !(*b_max > *b_min)) throw ConfigError("b_max must exceed b_min");
        table_format_from_string(data_format);
    }
};

namespace detail {

template <class T>
T json_get(const Json& j, const std::string& key) {
    try {
        return j.at(key).get<T>();
    } catch (const std::exception& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
    }
}

/// Parse "key = value" lines (# comments allowed) into a JSON object.
inline Json parse_key_value(std::istream& in, const std::string& source) {
    Json j = Json::object();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
        Json parsed = Json::parse(val, nullptr, false);
        j[key] = parsed.is_discarded() ? Json(val) : parsed;
    }
    return j;
}

}  // namespace detail

/// Apply the keys of a JSON object to the config. Unknown keys are an error.
inline void apply_config(RunConfig& c, const Json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    using detail::json_get;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "data_path") c.data_path = json_get<std::string>(j, k);
        else if (k == "data_format") c.data_format = json_get<std::string>(j, k);
        else if (k == "age") c.age = json_get<int>(j, k);
        else if (k == "calibration_window") {
            auto w = json_get<std::vector<int>>(j, k);
            if (w.size() != 2) throw ConfigError("calibration_window must be [start, end]");
            c.window_start = w[0];
            c.window_end = w[1];
        } else if (k == "window_start") c.window_start = json_get<int>(j, k);
        else if (k == "window_end") c.window_end = json_get<int>(j, k);
        else if (k == "detection_start_year" || k == "detection_start") c.detection_start = json_get<int>(j, k);
        else if (k == "detection_end_year" || k == "detection_end") c.detection_end = json_get<int>(j, k);
        else if (k == "lambda") c.lambda = json_get<double>(j, k);
        else if (k == "prior_atom") c.prior_atom = json_get<double>(j, k);
        else if (k == "cost") c.cost = json_get<double>(j, k);
        else if (k == "r_multiplier") c.r_multiplier = json_get<double>(j, k);
        else if (k == "r") c.r_absolute = json_get<double>(j, k);
        else if (k == "alpha") c.alpha = json_get<double>(j, k);
        else if (k == "seed") c.seed = json_get<std::uint64_t>(j, k);
        else if (k == "output_dir") c.output_dir = json_get<std::string>(j, k);
        else if (k == "sigma") c.sigma = json_get<double>(j, k);
        else if (k == "mu_inf") c.mu_inf = json_get<double>(j, k);
        else if (k == "w") c.w = json_get<double>(j, k);
        else if (k == "p1") c.p1 = json_get<double>(j, k);
        else if (k == "calibration") c.calibration_path = json_get<std::string>(j, k);
        else if (k == "threshold") c.threshold_path = json_get<std::string>(j, k);
        else if (k == "n_steps") c.n_steps = json_get<std::size_t>(j, k);
        else if (k == "theta") c.theta = json_get<double>(j, k);
        else if (k == "n_paths") c.n_paths = json_get<std::size_t>(j, k);
        else if (k == "horizon") c.horizon = json_get<std::size_t>(j, k);
        else if (k == "n_thresholds") c.n_thresholds = json_get<std::size_t>(j, k);
        else if (k == "b_min") c.b_min = json_get<double>(j, k);
        else if (k == "b_max") c.b_max = json_get<double>(j, k);
        else if (k == "threads") c.threads = json_get<unsigned>(j, k);
        else throw ConfigError("unknown config key '" + k + "'");
    }
}

/// Read a config file: JSON object, or key = value lines.
inline Json read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        Json j = Json::parse(text, nullptr, false);
        if (j.is_discarded()) throw ConfigError("config file '" + path + "' is not valid JSON");
        return j;
    }
    std::istringstream is(text);
    return detail::parse_key_value(is, path);
}

inline Json read_json_file(const std::string& path, const std::string& what) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + what + " file '" + path + "'");
    Json j = Json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DataError(what + " file '" + path + "' is not a JSON object");
    return j;
}

// ---------------------------------------------------------------- calibrate

struct CalibrationRun {
    MortalitySeries series;  // calibration window
    Drift drift;
    std::vector<double> increments;
    CalibrationResult result;
};

inline LifeTable load_config_table(const RunConfig& c) {
    if (c.data_path.empty()) throw ConfigError("data_path is required for this command");
    return load_life_table(c.data_path, table_format_from_string(c.data_format));
}

inline void require_years(const LifeTable& t, int from, int to, const std::string& what) {
    if (from < t.first_year() || to > t.last_year()) {
        std::ostringstream os;
        os << what << " [" << from << ", " << to << "] lies outside the data range [" << t.first_year() << ", "
           << t.last_year() << "]";
        throw ConfigError(os.str());
    }
}

inline CalibrationRun run_calibration(const RunConfig& c, const LifeTable& t) {
    require_years(t, c.window_start, c.window_end, "calibration window");
    CalibrationRun run;
    run.series = force_of_mortality(t, c.age, c.window_start, c.window_end);
    run.drift = estimate_drift(run.series);
    run.increments = residual_increments(run.series, run.drift);
    run.result = calibrate_perturbation(run.increments, c.alpha);
    run.result.intercept = run.drift.intercept;
    run.result.drift = run.drift.slope;
    return run;
}

inline Json calibration_json(const CalibrationResult& r, const RunConfig& c) {
    Json j;
    j["a0"] = r.intercept;
    j["a1"] = r.drift;
    j["sigma"] = r.sigma;
    j["mu_inf"] = r.jump_law.intensity;
    j["w"] = r.jump_law.scale();
    j["p1"] = r.jump_law.p_pos;
    j["p2"] = r.jump_law.p_neg;
    j["jump_indices"] = r.jump_indices;
    std::vector<int> years;
    for (auto i : r.jump_indices) years.push_back(c.window_start + 1 + static_cast<int>(i));
    j["jump_years"] = years;
    j["alpha"] = r.alpha;
    j["z_alpha"] = r.z_alpha;
    j["sigma_first_pass"] = r.sigma_first_pass;
    j["age"] = c.age;
    j["calibration_window"] = {c.window_start, c.window_end};
    j["warnings"] = r.warnings;
    return j;
}

inline CalibrationResult calibration_from_json(const Json& j) {
    CalibrationResult r;
    try {
        r.intercept = j.value("a0", 0.0);
        r.drift = j.value("a1", 0.0);
        r.sigma = j.at("sigma").get<double>();
        double mi = j.at("mu_inf").get<double>(), w = j.at("w").get<double>(), p1 = j.at("p1").get<double>();
        r.jump_law = JumpLaw::symmetric(p1, w, mi);
        if (j.contains("jump_indices")) r.jump_indices = j["jump_indices"].get<std::vector<std::size_t>>();
        r.alpha = j.value("alpha", 0.1);
        r.z_alpha = j.value("z_alpha", 0.0);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError(std::string("calibration JSON: ") + e.what());
    }
    return r;
}

inline std::string residuals_csv(const CalibrationRun& run) {
    io::CsvWriter csv({"index", "year", "log_mu", "increment", "is_jump"});
    std::size_t k = 0;
    const auto& ji = run.result.jump_indices;
    for (std::size_t i = 0; i < run.increments.size(); ++i) {
        bool jump = k < ji.size() && ji[k] == i;
        if (jump) ++k;
        csv.row({i, run.series.years[i + 1], run.series.log_mu[i + 1], run.increments[i], jump ? 1 : 0});
    }
    return csv.str();
}

// ---------------------------------------------------------------- model

/// Model parameters from a calibration and the run settings.
inline ModelParams model_from(const RunConfig& c, const CalibrationResult& r) {
    ModelParams p;
    p.sigma = r.sigma;
    p.r = c.r_absolute ? *c.r_absolute : c.r_multiplier * r.sigma;
    p.lambda = c.lambda;
    p.prior_atom = c.prior_atom;
    p.cost = c.cost;
    p.pre_jump = r.jump_law.intensity > 0.0 ? r.jump_law : JumpLaw::none(r.jump_law.scale());
    p.validate();
    return p;
}

/// Perturbation parameters from, in order: a calibration file, explicit
/// sigma/mu_inf/w/p1 settings, or a calibration run on the data.
inline CalibrationResult resolve_calibration(const RunConfig& c) {
    if (!c.calibration_path.empty()) return calibration_from_json(read_json_file(c.calibration_path, "calibration"));
    if (c.sigma) {
        CalibrationResult r;
        r.sigma = *c.sigma;
        double mi = c.mu_inf.value_or(0.0);
        r.jump_law = JumpLaw::symmetric(c.p1.value_or(0.5), c.w.value_or(1.0), mi);
        if (mi > 0.0 && !c.w) throw ConfigError("w is required when mu_inf > 0");
        r.alpha = c.alpha;
        return r;
    }
    if (!c.data_path.empty()) return run_calibration(c, load_config_table(c)).result;
    throw ConfigError("model parameters missing: give a calibration file, sigma (and jump settings) or data_path");
}

// ---------------------------------------------------------------- threshold

struct ThresholdRun {
    ModelParams params;
    MeasureChange mc;
    ThresholdSolution sol;
};

inline ThresholdRun run_threshold(const ModelParams& p) {
    ThresholdRun t;
    t.params = p;
    t.mc = solve_beta0(p);
    t.sol = solve_threshold(p, t.mc);
    return t;
}

inline Json model_json(const ModelParams& p) {
    Json j;
    j["sigma"] = p.sigma;
    j["r"] = p.r;
    j["lambda"] = p.lambda;
    j["prior_atom"] = p.prior_atom;
    j["cost"] = p.cost;
    j["mu_inf"] = p.pre_jump.intensity;
    j["w"] = p.pre_jump.scale();
    j["p1"] = p.pre_jump.p_pos;
    return j;
}

inline Json threshold_json(const ThresholdRun& t) {
    const auto& s = t.sol;
    const auto& d = s.diagnostics;
    Json j;
    j["beta0"] = t.mc.beta0;
    j["psi0"] = t.mc.psi_beta0;
    j["gamma"] = t.mc.gamma;
    j["auxiliary_gamma"] = s.auxiliary_gamma;
    j["a_star"] = s.a_star;
    j["b_star"] = s.b_star;
    j["blowup_b"] = s.blowup_b;
    j["assumption_expression"] = assumption_expression(t.params, t.mc);
    j["shooting_constant"] = s.shooting_constant;
    j["post_change_jump_law"] = {{"mu0", t.mc.post_jump.intensity},
                                 {"q1", t.mc.post_jump.p_pos},
                                 {"q2", t.mc.post_jump.p_neg},
                                 {"scale_pos", t.mc.post_jump.scale_pos},
                                 {"scale_neg", t.mc.post_jump.scale_neg}};
    j["residual_norms"] = {{"ode_residual", d.ode_residual_max},
                           {"handoff", d.handoff_mismatch},
                           {"continuous_fit", d.continuous_fit},
                           {"smooth_fit", d.smooth_fit},
                           {"normal_entrance", d.normal_entrance},
                           {"shooting", d.shooting_residual},
                           {"concavity", d.concavity_violation},
                           {"monotonicity", d.monotonicity_violation},
                           {"bound", d.bound_violation}};
    j["model"] = model_json(t.params);
    return j;
}

inline std::string solution_csv(const ThresholdSolution& s) {
    io::CsvWriter csv({"x", "u", "V"});
    for (std::size_t i = 0; i < s.grid.size(); ++i) csv.row({s.grid[i], s.u_values[i], s.v_values[i]});
    return csv.str();
}

/// B* from a threshold file or from a fresh solve.
inline double resolve_threshold_B(const RunConfig& c, const ModelParams& p, std::optional<ThresholdRun>* run = nullptr) {
    if (!c.threshold_path.empty()) {
        Json j = read_json_file(c.threshold_path, "threshold");
        if (!j.contains("b_star") || !j["b_star"].is_number()) throw DataError("threshold JSON lacks b_star");
        return j["b_star"].get<double>();
    }
    ThresholdRun t = run_threshold(p);
    double B = t.sol.b_star;
    if (run) *run = std::move(t);
    return B;
}

// ---------------------------------------------------------------- detect

struct DetectionRun {
    std::vector<int> years;         // detection_start .. end
    std::vector<double> log_mu;
    std::vector<double> drift_line;
    std::vector<double> increments; // one per year after detection_start
    DetectionResult gsr;
    std::optional<int> alarm_year;
};

/// Drift-removed increments from the detection start, GSR at threshold B.
inline DetectionRun run_detection(const RunConfig& c, const LifeTable& t, const CalibrationResult& cal,
                                  const MeasureChange& mc, double B) {
    int end = c.detection_end.value_or(t.last_year());
    require_years(t, c.detection_start, end, "detection range");
    if (end <= c.detection_start) throw ConfigError("detection range needs at least two years");
    MortalitySeries s = force_of_mortality(t, c.age, c.detection_start, end);
    DetectionRun d;
    d.years = s.years;
    d.log_mu = s.log_mu;
    for (int y : s.years) d.drift_line.push_back(cal.intercept + cal.drift * (y - c.window_start));
    d.increments = residual_increments(s.log_mu, cal.drift);
    GsrParams g{c.lambda, mc.beta0, mc.psi_beta0};
    d.gsr = gsr_run(d.increments, B, c.prior_atom, g);
    if (d.gsr.alarm_index) d.alarm_year = c.detection_start + static_cast<int>(*d.gsr.alarm_index);
    return d;
}

inline Json detection_json(const DetectionRun& d, double B, double A) {
    Json j;
    j["alarm"] = d.alarm_year.has_value();
    j["alarm_year"] = d.alarm_year ? Json(*d.alarm_year) : Json(nullptr);
    j["alarm_index"] = d.gsr.alarm_index ? Json(*d.gsr.alarm_index) : Json(nullptr);
    j["threshold_B"] = B;
    j["threshold_A"] = A;
    j["first_year"] = d.years.front();
    j["last_year"] = d.years.back();
    j["final_phi"] = d.gsr.trajectory.back();
    j["final_posterior"] = posterior(d.gsr.trajectory.back());
    j["message"] = d.alarm_year ? "drift change detected" : "drift change not detected within the sample";
    return j;
}

inline std::string trajectory_csv(const DetectionRun& d) {
    io::CsvWriter csv({"year", "log_mu", "drift_line", "phi", "posterior", "alarm_flag"});
    for (std::size_t n = 0; n < d.years.size(); ++n) {
        bool alarm = d.gsr.alarm_index && n >= *d.gsr.alarm_index;
        double phi = d.gsr.trajectory[n];
        csv.row({d.years[n], d.log_mu[n], d.drift_line[n], phi, posterior(phi), alarm ? 1 : 0});
    }
    return csv.str();
}

// ---------------------------------------------------------------- simulate / risk

inline PathSample run_simulation(const RunConfig& c, const ModelParams& p, const MeasureChange& mc) {
    SimConfig sc;
    sc.n_steps = c.n_steps;
    sc.seed = c.seed;
    sc.disorder = c.theta ? Disorder::at(*c.theta) : Disorder::from_prior();
    return simulate_path(p, mc, sc);
}

/// Columns step, increment, cum_sum, theta_flag; the flag is 1 once the
/// step's window ends after the disorder time.
inline std::string paths_csv(const PathSample& s) {
    io::CsvWriter csv({"step", "increment", "cum_sum", "theta_flag"});
    NeumaierSum cum;
    for (std::size_t i = 0; i < s.increments.size(); ++i) {
        cum.add(s.increments[i]);
        csv.row({i + 1, s.increments[i], cum.value(), static_cast<double>(i + 1) > s.theta ? 1 : 0});
    }
    return csv.str();
}

inline std::vector<double> risk_grid(const RunConfig& c, double b_star) {
    double lo = c.b_min.value_or(b_star / 3.0), hi = c.b_max.value_or(3.0 * b_star);
    if (!(hi > lo)) throw ConfigError("risk grid needs b_max > b_min");
    std::vector<double> g = geometric_grid(lo, hi, c.n_thresholds);
    if (!c.b_min && !c.b_max && c.n_thresholds % 2 == 1) g[c.n_thresholds / 2] = b_star;  // exact centre
    return g;
}

inline std::string risk_csv(const std::vector<RiskEstimate>& r) {
    io::CsvWriter csv({"B", "risk", "se", "n_capped"});
    for (const auto& e : r) csv.row({e.threshold_B, e.risk, e.standard_error, e.n_capped});
    return csv.str();
}

inline Json risk_json(const std::vector<RiskEstimate>& r, double b_star, const RunConfig& c) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < r.size(); ++i)
        if (r[i].risk < r[best].risk) best = i;
    Json j;
    j["b_star"] = b_star;
    j["argmin_B"] = r[best].threshold_B;
    j["min_risk"] = r[best].risk;
    j["min_risk_se"] = r[best].standard_error;
    j["n_paths"] = c.n_paths;
    j["horizon"] = c.horizon;
    j["seed"] = c.seed;
    Json pts = Json::array();
    for (const auto& e : r)
        pts.push_back({{"B", e.threshold_B}, {"risk", e.risk}, {"se", e.standard_error}, {"n_capped", e.n_capped}});
    j["curve"] = pts;
    return j;
}

/// Error report printed by the tool on failure.
inline Json error_json(const Error& e) {
    Json j;
    j["error"] = {{"kind", e.kind()}, {"exit_code", static_cast<int>(e.code())}, {"message", e.what()}};
    if (auto* a = dynamic_cast<const AssumptionViolated*>(&e)) j["error"]["expression_value"] = a->value();
    return j;
}

/// Life table with lx = 100000 at `age` and 100000 exp(-mu) at age + 1, one
/// row pair per year. Useful for fixtures and synthetic experiments.
inline LifeTable life_table_from_mu(int first_year, int age, const std::vector<double>& mu) {
    LifeTable t;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        int y = first_year + static_cast<int>(i);
        t.lx[{y, age}] = 100000.0;
        t.lx[{y, age + 1}] = 100000.0 * std::exp(-mu[i]);
    }
    t.validate();
    return t;
}

inline std::string life_table_csv(const LifeTable& t) {
    io::CsvWriter csv({"year", "age", "lx"});
    for (const auto& [k, l] : t.lx) csv.row({k.first, k.second, l});
    return csv.str();
}

}  // namespace qdetect
