#include "ksestab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include <json.hpp>

#include "ksestab/log.hpp"

namespace ksestab {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        std::size_t pos = 0;
        const double v = std::stod(item, &pos);
        if (pos != item.size()) throw ConfigError("malformed number '" + item + "'");
        out.push_back(v);
    }
    return out;
}

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
        rows.push_back(row);
    }
    return rows;
}

json classification_json(const LambdaClass& cls) {
    json j;
    switch (cls.kind) {
        case LambdaKind::Generic: j["kind"] = "generic"; break;
        case LambdaKind::Lambda1Only: j["kind"] = "lambda1"; break;
        case LambdaKind::Lambda2: j["kind"] = "lambda2"; break;
    }
    if (cls.dirichlet_zero_index)
        j["dirichlet_zero_index"] = *cls.dirichlet_zero_index;
    else
        j["dirichlet_zero_index"] = nullptr;
    json pairs = json::array();
    for (const auto& p : cls.resonant_pairs) pairs.push_back({p.n, p.m});
    j["resonant_pairs"] = pairs;
    j["warnings"] = cls.warnings;
    return j;
}

json margins_json(const ConstraintMargins& m) {
    return json{{"theta1_max_eig", m.theta1_max_eig}, {"theta2", m.theta2}, {"theta3", m.theta3}};
}

} // namespace

void RunConfig::validate() const {
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (!std::isfinite(mu)) throw ConfigError("mu must be finite");
    if (!(delta > 0.0)) throw ConfigError("delta must be positive");
    if (scheme != "auto" && !scheme_from_name(scheme))
        throw ConfigError("scheme must be auto, dirichlet, secondderiv or mimo");
    if (xi && scheme != "mimo") throw ConfigError("xi is only valid with the mimo scheme");
    if (xi && !(*xi >= 0.0 && *xi < 1.0)) throw ConfigError("xi must lie in [0,1)");
    if (N && *N < 2) throw ConfigError("N must be at least 2");
    if (n_max < 2) throw ConfigError("N_max must be at least 2");
    if (N && *N > n_max) throw ConfigError("N exceeds N_max");
    if (!(sim.horizon > 0.0)) throw ConfigError("T must be positive");
    if (!(sim.dt > 0.0)) throw ConfigError("dt must be positive");
    if (sim.modes < 2) throw ConfigError("modes must be at least 2");
    if (!(z0_scale >= 0.0)) throw ConfigError("z0_scale must be nonnegative");
    if (jobs < 1) throw ConfigError("jobs must be at least 1");
    for (double p : poles)
        if (!(p < -delta)) throw ConfigError("pole targets must lie left of -delta");
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::map<std::string, std::string> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
        entries[key] = value;
    }
    return entries;
}

void apply_config_entries(RunConfig& cfg, const std::map<std::string, std::string>& entries) {
    auto as_double = [](const std::string& v, const std::string& key) {
        try {
            std::size_t pos = 0;
            const double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ConfigError("malformed numeric value for '" + key + "'");
        }
    };
    auto as_int = [&](const std::string& v, const std::string& key) {
        const double d = as_double(v, key);
        if (d != std::floor(d)) throw ConfigError("expected integer for '" + key + "'");
        return static_cast<int>(d);
    };
    auto as_bool = [](const std::string& v, const std::string& key) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("expected boolean for '" + key + "'");
    };
    for (const auto& [key, value] : entries) {
        if (key == "lambda") cfg.lambda = as_double(value, key);
        else if (key == "mu") cfg.mu = as_double(value, key);
        else if (key == "delta") cfg.delta = as_double(value, key);
        else if (key == "scheme") cfg.scheme = value;
        else if (key == "xi") cfg.xi = as_double(value, key);
        else if (key == "N") cfg.N = as_int(value, key);
        else if (key == "N_max") cfg.n_max = as_int(value, key);
        else if (key == "modes") cfg.sim.modes = as_int(value, key);
        else if (key == "T") cfg.sim.horizon = as_double(value, key);
        else if (key == "dt") cfg.sim.dt = as_double(value, key);
        else if (key == "dealias") cfg.sim.dealias = as_bool(value, key);
        else if (key == "grid") cfg.sim.grid = as_int(value, key);
        else if (key == "z0_scale") cfg.z0_scale = as_double(value, key);
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(as_int(value, key));
        else if (key == "out") cfg.out_dir = value;
        else if (key == "jobs") cfg.jobs = as_int(value, key);
        else if (key == "poles") {
            try {
                cfg.poles = parse_double_list(value);
            } catch (const std::exception&) {
                throw ConfigError("malformed pole list");
            }
        } else if (key == "simulate") cfg.run_simulation = as_bool(value, key);
        else if (key == "certify") cfg.run_certification = as_bool(value, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
}

PipelineResult run_pipeline(const RunConfig& config) {
    PipelineResult result;
    json summary;
    summary["config"] = {{"lambda", config.lambda},   {"mu", config.mu},
                         {"delta", config.delta},     {"scheme", config.scheme},
                         {"modes", config.sim.modes}, {"T", config.sim.horizon},
                         {"dt", config.sim.dt},       {"z0_scale", config.z0_scale},
                         {"seed", config.seed},       {"N_max", config.n_max}};
    if (config.N) summary["config"]["N"] = *config.N;

    auto finish = [&](int code) {
        result.exit_code = code;
        summary["exit_code"] = code;
        fs::create_directories(config.out_dir);
        result.summary_path = (fs::path(config.out_dir) / "summary.json").string();
        result.summary_json = summary.dump(2) + "\n";
        std::ofstream os(result.summary_path);
        os << result.summary_json;
        return result;
    };

    try {
        config.validate();
    } catch (const ConfigError& e) {
        summary["error"] = e.what();
        return finish(kExitConfig);
    }

    // classification and scheme selection
    const LambdaClass cls = classify_lambda(config.lambda, config.classify_tol);
    summary["classification"] = classification_json(cls);
    Scheme scheme;
    if (config.scheme == "auto") {
        const SchemeChoice choice = select_scheme(cls);
        scheme = choice.scheme;
        summary["scheme"] = {{"name", scheme_name(scheme)}, {"rationale", choice.rationale}};
    } else {
        scheme = *scheme_from_name(config.scheme);
        summary["scheme"] = {{"name", scheme_name(scheme)}, {"rationale", "forced by configuration"}};
    }

    PlantParams params;
    params.lambda = config.lambda;
    params.mu = config.mu;
    params.scheme = scheme;
    if (scheme == Scheme::TwoInputTwoOutput) {
        if (config.xi) {
            params.xi = *config.xi;
            summary["xi"] = {{"value", *config.xi}, {"source", "configured"}};
        } else if (cls.kind == LambdaKind::Lambda2) {
            const XiSelection sel = select_xi(cls, 4096);
            params.xi = sel.xi;
            summary["xi"] = {{"value", sel.xi}, {"margin", sel.margin}, {"source", "grid maximin"}};
        } else {
            params.xi = 0.0;
            summary["xi"] = {{"value", 0.0}, {"source", "default (no resonant pairs)"}};
        }
    }

    SpectralPlant plant;
    GainSet gains;
    try {
        plant = make_spectral_plant(params, config.delta);
        summary["plant"] = {{"n0", plant.n0}, {"inputs", plant.inputs()}, {"outputs", plant.outputs()}};
        std::vector<std::complex<double>> targets;
        for (double p : config.poles) targets.emplace_back(p, 0.0);
        gains = synthesize_gains(plant, targets, config.seed);
        json targets_json = json::array();
        for (const auto& t : gains.target_poles) targets_json.push_back(t.real());
        summary["synthesis"] = {{"K", matrix_json(gains.K)},
                                {"L", matrix_json(gains.L)},
                                {"targets", targets_json}};
    } catch (const NotControllableError& e) {
        summary["synthesis"] = {{"error", e.what()}};
        return finish(kExitInfeasible);
    } catch (const IllConditionedPlacementError& e) {
        summary["synthesis"] = {{"error", e.what()}};
        return finish(kExitInfeasible);
    } catch (const std::invalid_argument& e) {
        summary["error"] = e.what();
        return finish(kExitConfig);
    }

    std::optional<Certificate> certificate;
    if (config.run_certification) {
        SearchConfig search = config.search;
        search.seed = config.seed;
        try {
            if (config.N) {
                const CertifyResult res = certify(plant, gains, config.delta, *config.N, search);
                if (std::holds_alternative<Certificate>(res)) {
                    certificate = std::get<Certificate>(res);
                } else {
                    const auto& rep = std::get<InfeasibleReport>(res);
                    summary["certification"] = {{"feasible", false},
                                                {"N", rep.N},
                                                {"best_margins", margins_json(rep.best_margins)},
                                                {"note", rep.note}};
                }
            } else {
                bool found = false;
                for (int n = plant.n0 + 1; n <= config.n_max && !found; ++n) {
                    const CertifyResult res = certify(plant, gains, config.delta, n, search);
                    if (std::holds_alternative<Certificate>(res)) {
                        certificate = std::get<Certificate>(res);
                        found = true;
                    }
                }
                if (!found)
                    summary["certification"] = {{"feasible", false},
                                                {"note", "no feasible N up to N_max"},
                                                {"N_max", config.n_max}};
            }
        } catch (const OrderTooSmallError& e) {
            summary["error"] = e.what();
            return finish(kExitConfig);
        }
        if (certificate) {
            summary["certification"] = {{"feasible", true},
                                        {"N", certificate->N},
                                        {"theorem", certificate->theorem},
                                        {"alpha", certificate->alpha},
                                        {"gamma", certificate->gamma},
                                        {"margins", margins_json(certificate->margins)}};
            json betas = json::array();
            for (int i = 0; i < certificate->betas.size(); ++i)
                betas.push_back(certificate->betas(i));
            summary["certification"]["betas"] = betas;
            fs::create_directories(config.out_dir);
            result.certificate_path = (fs::path(config.out_dir) / "certificate.json").string();
            save_certificate(*certificate, result.certificate_path);
            result.certificate = certificate;
        } else {
            return finish(kExitInfeasible);
        }
    }

    if (config.run_simulation) {
        SimConfig sim = config.sim;
        if (sim.observer_order == 0) {
            if (certificate)
                sim.observer_order = certificate->N;
            else if (config.N)
                sim.observer_order = *config.N;
            else {
                summary["error"] = "simulation needs an observer order (certify first or set N)";
                return finish(kExitConfig);
            }
        }
        if (sim.modes < 2 * sim.observer_order) sim.modes = 2 * sim.observer_order;
        Eigen::VectorXd z0 = Eigen::VectorXd::Zero(sim.modes);
        z0(0) = config.z0_scale;
        Trajectory traj;
        try {
            traj = simulate(plant, gains, certificate ? &*certificate : nullptr, z0, sim);
        } catch (const std::invalid_argument& e) {
            summary["error"] = e.what();
            return finish(kExitConfig);
        }
        result.simulated = true;
        fs::create_directories(config.out_dir);
        result.trajectory_path = (fs::path(config.out_dir) / "trajectory.csv").string();
        write_trajectory_csv(traj, result.trajectory_path);
        json simj;
        simj["blowup"] = traj.blew_up;
        simj["steps"] = static_cast<int>(traj.times.size());
        simj["final_time"] = traj.times(traj.times.size() - 1);
        simj["final_h2"] = traj.h2(traj.h2.size() - 1);
        if (traj.blew_up) simj["blowup_time"] = traj.blowup_time;
        try {
            const double rate = decay_rate_fit(traj.times, traj.h2);
            simj["fitted_h2_rate"] = rate;
            result.fitted_h2_rate = rate;
        } catch (const std::exception& e) {
            simj["fitted_h2_rate"] = nullptr;
            simj["fit_note"] = e.what();
        }
        summary["simulation"] = simj;
        if (traj.blew_up) {
            result.blew_up = true;
            return finish(kExitBlowUp);
        }
    }

    return finish(kExitOk);
}

std::optional<SweepAxis> sweep_axis_from_name(const std::string& name) {
    if (name == "N") return SweepAxis::N;
    if (name == "z0_scale") return SweepAxis::Z0Scale;
    if (name == "lambda") return SweepAxis::Lambda;
    if (name == "delta") return SweepAxis::Delta;
    return std::nullopt;
}

SweepTable sweep(const RunConfig& config, SweepAxis axis, const std::vector<double>& values) {
    SweepTable table;
    table.axis = axis;
    table.rows.resize(values.size());

    auto run_cell = [&](std::size_t idx) {
        RunConfig cell = config;
        cell.out_dir = (fs::path(config.out_dir) / ("cell_" + std::to_string(idx))).string();
        const double v = values[idx];
        switch (axis) {
            case SweepAxis::N: cell.N = static_cast<int>(std::llround(v)); break;
            case SweepAxis::Z0Scale: cell.z0_scale = v; break;
            case SweepAxis::Lambda: cell.lambda = v; break;
            case SweepAxis::Delta: cell.delta = v; break;
        }
        SweepRow row;
        row.value = v;
        try {
            const PipelineResult res = run_pipeline(cell);
            row.exit_code = res.exit_code;
            row.feasible = res.certificate.has_value();
            if (res.certificate) row.margins = res.certificate->margins;
            row.fitted_h2_rate = res.fitted_h2_rate;
            row.survived = res.simulated && !res.blew_up;
        } catch (const std::exception& e) {
            klog(LogLevel::Warn, "sweep cell %zu failed: %s", idx, e.what());
            row.exit_code = -1;
        }
        return row;
    };

    const int jobs = std::max(1, config.jobs);
    std::size_t next = 0;
    while (next < values.size()) {
        const std::size_t batch = std::min<std::size_t>(jobs, values.size() - next);
        std::vector<std::future<SweepRow>> futs;
        for (std::size_t i = 0; i < batch; ++i)
            futs.push_back(std::async(std::launch::async, run_cell, next + i));
        for (std::size_t i = 0; i < batch; ++i) table.rows[next + i] = futs[i].get();
        next += batch;
    }

    fs::create_directories(config.out_dir);
    table.csv_path = (fs::path(config.out_dir) / "sweep.csv").string();
    std::ofstream os(table.csv_path);
    os << sweep_to_csv(table);
    return table;
}

std::string sweep_to_csv(const SweepTable& table) {
    std::ostringstream os;
    os << "value,exit_code,feasible,theta1_max_eig,theta2,theta3,fitted_h2_rate,survived\n";
    char buf[32];
    auto emit = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf;
    };
    for (const auto& row : table.rows) {
        emit(row.value);
        os << "," << row.exit_code << "," << (row.feasible ? 1 : 0) << ",";
        emit(row.margins.theta1_max_eig);
        os << ",";
        emit(row.margins.theta2);
        os << ",";
        emit(row.margins.theta3);
        os << ",";
        emit(row.fitted_h2_rate);
        os << "," << (row.survived ? 1 : 0) << "\n";
    }
    return os.str();
}

} // namespace ksestab
