#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ksestab/certifier.hpp"
#include "ksestab/spectral_plant.hpp"
#include "ksestab/synthesis.hpp"

namespace ksestab {

struct BlowUpError : std::runtime_error {
    explicit BlowUpError(double t)
        : std::runtime_error("trajectory left the guarded region at t = " + std::to_string(t)),
          time(t) {}
    double time = 0.0;
};

struct NonPositiveValuesError : std::invalid_argument {
    explicit NonPositiveValuesError(const std::string& what) : std::invalid_argument(what) {}
};

struct SimConfig {
    int modes = 32;              // plant truncation order M
    double horizon = 3.0;        // simulated time T
    double dt = 1e-4;            // base step
    bool dealias = true;         // 3/2 zero-padding of the pseudospectral product
    int grid = 0;                // quadrature grid size (0 = 2*modes)
    int observer_order = 0;      // controller dimension N (0 = take from certificate)
    std::uint64_t seed = 0;
    double blowup_guard = 1e12;
    double step_error_tol = 1e-7;
    int max_halvings = 20;
};

struct Trajectory {
    Eigen::VectorXd times;
    Eigen::MatrixXd z_modes;           // M × steps
    Eigen::MatrixXd controller_state;  // N × steps
    Eigen::MatrixXd u;                 // inputs × steps
    Eigen::MatrixXd y;                 // outputs × steps
    Eigen::VectorXd l2, h1, h2;        // ‖z‖ in L², H¹, H²
    Eigen::VectorXd wellposed;         // Σ_{n≤M} n⁴ w_n² (well-posedness monitor)
    Eigen::VectorXd V;                 // Lyapunov value, empty without a certificate
    bool blew_up = false;
    double blowup_time = 0.0;
};

// Modal projection of the convective term: r_n = ⟨-μ z z_x, φ_n⟩ for n ≤ M.
// The band-limited part of z goes through sine synthesis on the quadrature
// grid, pointwise squaring and spectral differentiation of z²/2; the
// boundary-lifting part is polynomial and its cross/quadratic contributions
// are added from exact trigonometric moments.
class NonlinearTerm {
public:
    NonlinearTerm(const PlantParams& params, int modes, bool dealias, int grid);

    Eigen::VectorXd operator()(const Eigen::VectorXd& z_modes, const Eigen::VectorXd& u) const;

    int grid_points() const { return grid_; }

private:
    double mu_;
    int modes_;
    int grid_;
    int inputs_;
    Eigen::MatrixXd lift_coeff_;             // M × inputs, b_{c,n}
    Eigen::MatrixXd sin_synth_;              // (grid-1) × M
    Eigen::MatrixXd cos_analysis_;           // M × (grid-1), includes 2/grid and nπ/√2 factors
    std::vector<Eigen::MatrixXd> cross_;     // per channel, M × M
    std::vector<Eigen::VectorXd> quad_;      // per channel pair (c ≤ c'), M
    std::vector<std::pair<int, int>> quad_pairs_;
};

Eigen::VectorXd nonlinear_term(const Eigen::VectorXd& z_modes, const Eigen::VectorXd& u,
                               const PlantParams& params, const SimConfig& config);

struct NormTriple {
    double l2 = 0.0;
    double h1 = 0.0;
    double h2 = 0.0;
};

// L²/H¹/H² norms of z = (modal part of w) - Σ_c b_c u_c, assembled from the
// modal sums plus exact polynomial-lifting cross terms.
NormTriple h2_norm(const Eigen::VectorXd& z_modes, const Eigen::VectorXd& u,
                   const PlantParams& params);

// Joint plant/controller integrator: exponential treatment of the diagonal
// σ_n part, explicit coupling and nonlinearity (ETDRK2), adaptive halving on
// the step-error estimate.
class ClosedLoopStepper {
public:
    ClosedLoopStepper(const SpectralPlant& plant, const GainSet& gains, int observer_order,
                      const SimConfig& config);

    void set_state(const Eigen::VectorXd& z, const Eigen::VectorXd& zhat, double t = 0.0);

    // Advance one base step of dt (internally halved when the error estimate
    // exceeds the tolerance). Throws BlowUpError past the overflow guard.
    void step(double dt);

    const Eigen::VectorXd& z() const { return z_; }
    const Eigen::VectorXd& zhat() const { return zhat_; }
    double time() const { return t_; }

    Eigen::VectorXd control_input() const;       // u = K ẑ_{1..N0}
    Eigen::VectorXd homogeneous_output() const;  // ỹ = Σ_{n≤M} c_n w_n
    Eigen::VectorXd measurement() const;         // y = ỹ - D u
    double wellposed_monitor() const;            // Σ_{n≤M} n⁴ w_n²
    Eigen::VectorXd w_modes() const;

    int modes() const { return modes_; }
    int observer_order() const { return order_; }

private:
    struct PhiTable {
        double dt = -1.0;
        Eigen::ArrayXd exp_z, phi1dt_z, phi2dt_z;
        Eigen::ArrayXd exp_h, phi1dt_h, phi2dt_h;
    };

    void rhs(const Eigen::VectorXd& z, const Eigen::VectorXd& zhat, Eigen::VectorXd& fz,
             Eigen::VectorXd& fh) const;
    const PhiTable& table_for(double dt);
    void advance(double dt, int depth);
    void check_guard() const;

    PlantParams params_;
    int modes_, order_, n0_, inputs_, outputs_;
    Eigen::VectorXd sigma_z_, sigma_h_;
    Eigen::MatrixXd beta_z_, beta_h_;    // M × m, N × m
    Eigen::MatrixXd lift_z_, lift_h_;    // b coefficients, M × m and N × m
    Eigen::MatrixXd c_z_, c_h_;          // p × M, p × N
    Eigen::MatrixXd K_, L_;
    Eigen::MatrixXd out_correction_;     // p × m, y = ỹ - D u
    NonlinearTerm nl_;
    double guard_, tol_;
    int max_halvings_;
    std::vector<PhiTable> tables_;

    Eigen::VectorXd z_, zhat_;
    double t_ = 0.0;
};

// Closed-loop trajectory from z(0) given by z0_modes and ẑ(0) = 0. When a
// certificate is supplied its (P, γ) define the recorded Lyapunov value.
Trajectory simulate(const SpectralPlant& plant, const GainSet& gains, const Certificate* cert,
                    const Eigen::VectorXd& z0_modes, const SimConfig& config);

// Least-squares decay rate of a positive series: values ~ e^{-rate t}.
// The default window drops the first 10% of the horizon.
double decay_rate_fit(const Eigen::VectorXd& times, const Eigen::VectorXd& values);
double decay_rate_fit(const Eigen::VectorXd& times, const Eigen::VectorXd& values, double t_min,
                      double t_max);

// Smooth random initial condition: coefficients n^{-5}-weighted Gaussian,
// rescaled to the requested H² norm.
Eigen::VectorXd sample_initial_modes(int modes, double h2_target, std::uint64_t seed);

void write_trajectory_csv(const Trajectory& traj, const std::string& path);
void write_modal_csv(const Trajectory& traj, const std::string& path);

} // namespace ksestab
