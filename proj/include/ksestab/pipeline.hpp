#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ksestab/certifier.hpp"
#include "ksestab/simulator.hpp"
#include "ksestab/spectral_plant.hpp"
#include "ksestab/synthesis.hpp"

namespace ksestab {

// Exit codes of the batch pipeline.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitInfeasible = 3;
inline constexpr int kExitBlowUp = 4;

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct RunConfig {
    double lambda = 25.0;
    double mu = 1.0;
    double delta = 0.5;
    std::string scheme = "auto";         // auto|dirichlet|secondderiv|mimo
    std::optional<double> xi;            // sensor location override (mimo)
    std::optional<int> N;                // observer order; absent = scan to n_max
    int n_max = 20;
    std::vector<double> poles;           // optional pole targets (real parts)
    SimConfig sim;
    double z0_scale = 0.01;
    bool run_simulation = true;
    bool run_certification = true;
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    int jobs = 1;
    double classify_tol = 1e-9;
    SearchConfig search;

    void validate() const;  // throws ConfigError
};

// key = value file, # comments; keys mirror the CLI flags.
std::map<std::string, std::string> parse_config_file(const std::string& path);
void apply_config_entries(RunConfig& cfg, const std::map<std::string, std::string>& entries);

struct PipelineResult {
    int exit_code = kExitOk;
    std::string summary_json;
    std::string summary_path;
    std::string certificate_path;  // empty when not written
    std::string trajectory_path;   // empty when not written
    std::optional<Certificate> certificate;
    double fitted_h2_rate = 0.0;
    bool simulated = false;
    bool blew_up = false;
};

// classify → select scheme → synthesize gains → certify → simulate, writing
// certificate JSON, trajectory CSV and a summary report into out_dir.
PipelineResult run_pipeline(const RunConfig& config);

enum class SweepAxis { N, Z0Scale, Lambda, Delta };
std::optional<SweepAxis> sweep_axis_from_name(const std::string& name);

struct SweepRow {
    double value = 0.0;
    int exit_code = 0;
    bool feasible = false;
    ConstraintMargins margins;
    double fitted_h2_rate = 0.0;
    bool survived = false;
};

struct SweepTable {
    SweepAxis axis = SweepAxis::N;
    std::vector<SweepRow> rows;
    std::string csv_path;
};

// One pipeline run per value; failures are recorded per cell and the sweep
// continues. Cells run concurrently up to config.jobs.
SweepTable sweep(const RunConfig& config, SweepAxis axis, const std::vector<double>& values);

std::string sweep_to_csv(const SweepTable& table);

} // namespace ksestab
