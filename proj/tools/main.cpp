#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "ksestab/log.hpp"
#include "ksestab/pipeline.hpp"

namespace {

using namespace ksestab;

struct CliOptions {
    std::string config_file;
    std::optional<double> lambda, mu, delta, xi, horizon, dt, z0_scale;
    std::optional<int> n, n_max, modes, jobs;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> scheme, out, poles;
    std::string sweep_axis = "N";
    std::string sweep_values;
    std::string cert_path;
};

void add_common_flags(CLI::App* cmd, CliOptions& opt) {
    cmd->add_option("--config", opt.config_file, "key = value config file");
    cmd->add_option("--lambda", opt.lambda, "anti-diffusion coefficient");
    cmd->add_option("--mu", opt.mu, "nonlinearity strength");
    cmd->add_option("--delta", opt.delta, "target decay rate");
    cmd->add_option("--scheme", opt.scheme, "auto|dirichlet|secondderiv|mimo");
    cmd->add_option("--xi", opt.xi, "second sensor location (mimo)");
    cmd->add_option("--N", opt.n, "observer order");
    cmd->add_option("--N-max", opt.n_max, "largest observer order to scan");
    cmd->add_option("--modes,-M", opt.modes, "plant truncation order");
    cmd->add_option("--T", opt.horizon, "simulation horizon");
    cmd->add_option("--dt", opt.dt, "base time step");
    cmd->add_option("--z0-scale", opt.z0_scale, "initial-condition scale on mode 1");
    cmd->add_option("--poles", opt.poles, "comma-separated pole targets");
    cmd->add_option("--seed", opt.seed, "random seed");
    cmd->add_option("--out", opt.out, "output directory");
    cmd->add_option("--jobs", opt.jobs, "concurrent sweep cells");
}

RunConfig build_config(const CliOptions& opt) {
    RunConfig cfg;
    if (!opt.config_file.empty())
        apply_config_entries(cfg, parse_config_file(opt.config_file));
    if (opt.lambda) cfg.lambda = *opt.lambda;
    if (opt.mu) cfg.mu = *opt.mu;
    if (opt.delta) cfg.delta = *opt.delta;
    if (opt.scheme) cfg.scheme = *opt.scheme;
    if (opt.xi) cfg.xi = *opt.xi;
    if (opt.n) cfg.N = *opt.n;
    if (opt.n_max) cfg.n_max = *opt.n_max;
    if (opt.modes) cfg.sim.modes = *opt.modes;
    if (opt.horizon) cfg.sim.horizon = *opt.horizon;
    if (opt.dt) cfg.sim.dt = *opt.dt;
    if (opt.z0_scale) cfg.z0_scale = *opt.z0_scale;
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.out) cfg.out_dir = *opt.out;
    if (opt.jobs) cfg.jobs = *opt.jobs;
    if (opt.poles) {
        cfg.poles.clear();
        std::stringstream ss(*opt.poles);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.empty()) continue;
            try {
                cfg.poles.push_back(std::stod(item));
            } catch (const std::exception&) {
                throw ConfigError("malformed pole list");
            }
        }
    }
    return cfg;
}

int run_and_report(RunConfig cfg) {
    const PipelineResult res = run_pipeline(cfg);
    std::printf("%s", res.summary_json.c_str());
    return res.exit_code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"finite-dimensional output-feedback stabilization toolkit for the "
                 "Kuramoto-Sivashinsky equation"};
    app.require_subcommand(1);
    CliOptions opt;

    CLI::App* classify = app.add_subcommand("classify", "classify lambda against the resonance sets");
    CLI::App* synthesize = app.add_subcommand("synthesize", "classify and compute gains");
    CLI::App* certify = app.add_subcommand("certify", "synthesize gains and search a certificate");
    CLI::App* simulate = app.add_subcommand("simulate", "full pipeline including the nonlinear simulation");
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "run the pipeline across a parameter axis");
    CLI::App* report = app.add_subcommand("report", "re-verify a stored certificate");
    for (CLI::App* cmd : {classify, synthesize, certify, simulate, sweep_cmd})
        add_common_flags(cmd, opt);
    sweep_cmd->add_option("--axis", opt.sweep_axis, "N|z0_scale|lambda|delta")->required();
    sweep_cmd->add_option("--values", opt.sweep_values, "comma-separated axis values")->required();
    report->add_option("--cert", opt.cert_path, "certificate JSON path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (report->parsed()) {
            const Certificate cert = load_certificate(opt.cert_path);
            ConstraintMargins margins;
            const bool ok = verify_certificate(cert, &margins);
            std::printf("certificate: theorem %d, N = %d, delta = %.17g\n", cert.theorem, cert.N,
                        cert.delta);
            std::printf("re-verified margins: theta1_max_eig = %.17g, theta2 = %.17g, theta3 = %.17g\n",
                        margins.theta1_max_eig, margins.theta2, margins.theta3);
            std::printf("verification %s\n", ok ? "PASSED" : "FAILED");
            return ok ? kExitOk : kExitInfeasible;
        }

        RunConfig cfg = build_config(opt);
        if (classify->parsed() || synthesize->parsed()) {
            cfg.run_certification = false;
            cfg.run_simulation = false;
        } else if (certify->parsed()) {
            cfg.run_simulation = false;
        }
        if (classify->parsed()) {
            // classification only: report the class and the recommended scheme
            cfg.validate();
            const LambdaClass cls = classify_lambda(cfg.lambda, 1e-9);
            const SchemeChoice choice = select_scheme(cls);
            const char* kind = cls.kind == LambdaKind::Generic
                                   ? "generic"
                                   : (cls.kind == LambdaKind::Lambda1Only ? "lambda1" : "lambda2");
            std::printf("lambda = %.17g: %s\n", cfg.lambda, kind);
            if (cls.dirichlet_zero_index)
                std::printf("  lambda = n^2 pi^2 at n = %d\n", *cls.dirichlet_zero_index);
            for (const auto& p : cls.resonant_pairs)
                std::printf("  resonant pair (%d,%d)\n", p.n, p.m);
            for (const auto& w : cls.warnings) std::printf("  warning: %s\n", w.c_str());
            std::printf("recommended scheme: %s (%s)\n", scheme_name(choice.scheme),
                        choice.rationale.c_str());
            return kExitOk;
        }
        if (sweep_cmd->parsed()) {
            const auto axis = sweep_axis_from_name(opt.sweep_axis);
            if (!axis) throw ConfigError("unknown sweep axis '" + opt.sweep_axis + "'");
            std::vector<double> values;
            std::stringstream ss(opt.sweep_values);
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (item.empty()) continue;
                try {
                    values.push_back(std::stod(item));
                } catch (const std::exception&) {
                    throw ConfigError("malformed sweep values");
                }
            }
            const SweepTable table = sweep(cfg, *axis, values);
            std::printf("%s", sweep_to_csv(table).c_str());
            return kExitOk;
        }
        return run_and_report(cfg);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
