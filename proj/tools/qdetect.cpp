// qdetect: calibrate, solve the alarm threshold, run detection, simulate and
// estimate Bayes-risk curves from the command line.
#include "qdetect/pipeline.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

namespace {

using qdetect::Json;
using qdetect::RunConfig;

/// String-valued options mapped to config keys. Values are decoded as JSON
/// literals when possible, so numeric options type-check in apply_config.
struct OptionTable {
    struct Entry {
        std::string key;
        std::string value;
        CLI::Option* opt = nullptr;
        bool literal = true;  // false: always treat as text
    };
    std::vector<Entry> entries;
    std::string config_path;

    void attach(CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON or key = value config file");
        add(sub, "--data", "data_path", "life table path", false);
        add(sub, "--format", "data_format", "hmd_txt or csv", false);
        add(sub, "--age", "age", "age omega");
        add(sub, "--window-start", "window_start", "first calibration year");
        add(sub, "--window-end", "window_end", "last calibration year");
        add(sub, "--detect-start", "detection_start", "detection start year");
        add(sub, "--detect-end", "detection_end", "last detection year (default: last year in data)");
        add(sub, "--lambda", "lambda", "prior rate of the disorder time");
        add(sub, "--prior-atom", "prior_atom", "prior probability that the change has already happened");
        add(sub, "--cost", "cost", "delay cost c");
        add(sub, "--r-mult", "r_multiplier", "post-change drift as a multiple of sigma");
        add(sub, "--r", "r", "absolute post-change drift (overrides --r-mult)");
        add(sub, "--alpha", "alpha", "significance level of the jump test");
        add(sub, "--seed", "seed", "random seed");
        add(sub, "--out", "output_dir", "output directory", false);
        add(sub, "--sigma", "sigma", "diffusion volatility (instead of a calibration)");
        add(sub, "--mu-inf", "mu_inf", "pre-change jump intensity");
        add(sub, "--w", "w", "mean absolute jump size");
        add(sub, "--p1", "p1", "probability of an upward jump");
        add(sub, "--calibration", "calibration", "calibration JSON from `calibrate`", false);
        add(sub, "--threshold", "threshold", "threshold JSON from `threshold`", false);
        add(sub, "--n-steps", "n_steps", "simulated path length");
        add(sub, "--theta", "theta", "fixed disorder time for `simulate` (default: drawn from the prior)");
        add(sub, "--n-paths", "n_paths", "Monte-Carlo paths for `risk`");
        add(sub, "--horizon", "horizon", "Monte-Carlo horizon for `risk`");
        add(sub, "--n-thresholds", "n_thresholds", "risk grid size");
        add(sub, "--b-min", "b_min", "smallest grid threshold (default B*/3)");
        add(sub, "--b-max", "b_max", "largest grid threshold (default 3 B*)");
        add(sub, "--threads", "threads", "worker threads (0 = all cores)");
    }

    void add(CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help,
             bool literal = true) {
        entries.push_back({key, "", nullptr, literal});
        // Stable storage: reserve happens in the constructor.
        entries.back().opt = sub->add_option(flag, entries.back().value, help);
    }

    RunConfig build() const {
        RunConfig c;
        if (!config_path.empty()) qdetect::apply_config(c, qdetect::read_config_file(config_path));
        Json over = Json::object();
        for (const auto& e : entries) {
            if (!e.opt || e.opt->count() == 0) continue;
            Json v = e.literal ? Json::parse(e.value, nullptr, false) : Json(e.value);
            over[e.key] = v.is_discarded() ? Json(e.value) : v;
        }
        qdetect::apply_config(c, over);
        c.validate();
        return c;
    }
};

void emit(const RunConfig& c, const std::string& name, const Json& j) {
    qdetect::io::write_json(qdetect::io::join_path(c.output_dir, name), j);
}

void save(const RunConfig& c, const std::string& name, const std::string& text) {
    qdetect::io::write_text(qdetect::io::join_path(c.output_dir, name), text);
}

Json cmd_calibrate(const RunConfig& c) {
    auto table = qdetect::load_config_table(c);
    auto run = qdetect::run_calibration(c, table);
    Json j = qdetect::calibration_json(run.result, c);
    emit(c, "calibration.json", j);
    save(c, "residuals.csv", qdetect::residuals_csv(run));
    return j;
}

Json cmd_threshold(const RunConfig& c) {
    auto p = qdetect::model_from(c, qdetect::resolve_calibration(c));
    auto t = qdetect::run_threshold(p);
    Json j = qdetect::threshold_json(t);
    emit(c, "threshold.json", j);
    save(c, "solution.csv", qdetect::solution_csv(t.sol));
    return j;
}

Json cmd_detect(const RunConfig& c) {
    auto table = qdetect::load_config_table(c);
    qdetect::CalibrationResult cal = c.calibration_path.empty() ? qdetect::run_calibration(c, table).result
                                                                : qdetect::resolve_calibration(c);
    auto p = qdetect::model_from(c, cal);
    auto mc = qdetect::solve_beta0(p);
    double B = qdetect::resolve_threshold_B(c, p);
    auto d = qdetect::run_detection(c, table, cal, mc, B);
    Json j = qdetect::detection_json(d, B, B / (1.0 + B));
    emit(c, "detection.json", j);
    save(c, "trajectory.csv", qdetect::trajectory_csv(d));
    return j;
}

Json cmd_simulate(const RunConfig& c) {
    auto p = qdetect::model_from(c, qdetect::resolve_calibration(c));
    auto mc = qdetect::solve_beta0(p);
    auto path = qdetect::run_simulation(c, p, mc);
    Json j;
    j["theta"] = path.theta;
    j["n_steps"] = c.n_steps;
    j["seed"] = c.seed;
    j["beta0"] = mc.beta0;
    j["model"] = qdetect::model_json(p);
    emit(c, "simulation.json", j);
    save(c, "paths.csv", qdetect::paths_csv(path));
    return j;
}

Json cmd_risk(const RunConfig& c) {
    auto p = qdetect::model_from(c, qdetect::resolve_calibration(c));
    auto mc = qdetect::solve_beta0(p);
    // An explicit grid needs no threshold solve; b_star is then reported as null.
    bool explicit_grid = c.b_min && c.b_max && c.threshold_path.empty();
    double B = explicit_grid ? std::nan("") : qdetect::resolve_threshold_B(c, p);
    qdetect::RiskOptions ro;
    ro.n_paths = c.n_paths;
    ro.horizon = c.horizon;
    ro.seed = c.seed;
    ro.threads = c.threads;
    auto curve = qdetect::estimate_risk_curve(p, mc, qdetect::risk_grid(c, B), ro);
    Json j = qdetect::risk_json(curve, B, c);
    emit(c, "risk.json", j);
    save(c, "risk.csv", qdetect::risk_csv(curve));
    return j;
}

Json cmd_pipeline(RunConfig c) {
    Json out;
    out["calibration"] = cmd_calibrate(c);
    c.calibration_path = qdetect::io::join_path(c.output_dir, "calibration.json");
    out["threshold"] = cmd_threshold(c);
    c.threshold_path = qdetect::io::join_path(c.output_dir, "threshold.json");
    out["detection"] = cmd_detect(c);
    out["simulation"] = cmd_simulate(c);
    out["risk"] = cmd_risk(c);
    emit(c, "pipeline.json", out);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian quickest drift-change detection for jump-diffusion observations"};
    app.require_subcommand(1);
    struct Sub {
        const char* name;
        const char* help;
        Json (*run)(const RunConfig&);
    };
    const std::vector<Sub> subs{
        {"calibrate", "estimate drift and perturbation parameters from a life table", cmd_calibrate},
        {"threshold", "solve the free-boundary problem for the optimal alarm threshold", cmd_threshold},
        {"detect", "run the detection statistic on the data after the detection start", cmd_detect},
        {"simulate", "simulate one observation path with a disorder", cmd_simulate},
        {"risk", "Monte-Carlo Bayes risk over a grid of thresholds", cmd_risk},
        {"pipeline", "calibrate, threshold, detect, simulate and risk in sequence",
         [](const RunConfig& c) { return cmd_pipeline(c); }},
    };
    std::vector<OptionTable> tables(subs.size());
    std::vector<CLI::App*> apps;
    for (std::size_t i = 0; i < subs.size(); ++i) {
        tables[i].entries.reserve(64);
        CLI::App* sub = app.add_subcommand(subs[i].name, subs[i].help);
        tables[i].attach(sub);
        apps.push_back(sub);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        Json j;
        j["error"] = {{"kind", "usage"}, {"exit_code", 2}, {"message", e.what()}};
        std::cerr << qdetect::io::dump(j) << "\n";
        return static_cast<int>(qdetect::ExitCode::config);
    }
    try {
        for (std::size_t i = 0; i < subs.size(); ++i) {
            if (!apps[i]->parsed()) continue;
            RunConfig c = tables[i].build();
            qdetect::io::ensure_dir(c.output_dir);
            Json j = subs[i].run(c);
            std::cout << qdetect::io::dump(j) << "\n";
        }
    } catch (const qdetect::Error& e) {
        std::cerr << qdetect::io::dump(qdetect::error_json(e)) << "\n";
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        Json j;
        j["error"] = {{"kind", "internal"}, {"exit_code", 1}, {"message", e.what()}};
        std::cerr << qdetect::io::dump(j) << "\n";
        return 1;
    }
    return 0;
}
