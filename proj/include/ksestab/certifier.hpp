#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ksestab/spectral_plant.hpp"
#include "ksestab/synthesis.hpp"

namespace ksestab {

struct NotHurwitzError : std::runtime_error {
    explicit NotHurwitzError(const std::string& what) : std::runtime_error(what) {}
};
struct OrderTooSmallError : std::invalid_argument {
    explicit OrderTooSmallError(const std::string& what) : std::invalid_argument(what) {}
};
struct DimensionMismatchError : std::invalid_argument {
    explicit DimensionMismatchError(const std::string& what) : std::invalid_argument(what) {}
};

// Reduced-order closed-loop model on X = col(Ẑ, E, Z̃, Ẽ) ∈ R^{2N}, with the
// modes past N0 carried in scaled coordinates z̃_n = ẑ_n/n⁴, ẽ_n = n² e_n.
struct ReducedModel {
    int N = 0;
    int N0 = 0;
    int inputs = 1;
    int outputs = 1;
    Scheme scheme = Scheme::DirichletActuation;
    double lambda = 0.0;
    double sigma_next = 0.0;    // σ_{N+1}

    Eigen::MatrixXd F;          // 2N × 2N
    Eigen::MatrixXd G;          // 2N × N
    Eigen::MatrixXd Lcal;       // 2N × outputs, col(L, -L, 0, 0)
    Eigen::MatrixXd E;          // inputs × (2N + outputs), derivative-of-input map
    Eigen::MatrixXd Ktilde;     // inputs × 2N, u = K̃ X

    Eigen::MatrixXd K, L;       // gains
    Eigen::MatrixXd B0, C0;     // unstable input/output blocks
    Eigen::MatrixXd Btilde1;    // (N-N0) × inputs, rows β_n/n⁴
    Eigen::MatrixXd Ctilde1;    // outputs × (N-N0), cols c_n/n²
    Eigen::VectorXd A1;         // diag(σ_{N0+1}, …, σ_N)
};

ReducedModel assemble_reduced_model(const SpectralPlant& plant, const GainSet& gains, int N);

// Dense Bartels–Stewart solve of AᵀP + PA = -Q via the complex Schur form.
Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& a, const Eigen::MatrixXd& q);

// Unique P ≻ 0 with FᵀP + PF + 2δP = -I; throws NotHurwitz when some
// eigenvalue of F has real part ≥ -δ.
Eigen::MatrixXd lyapunov_candidate(const Eigen::MatrixXd& f, double delta);

struct ConstraintMargins {
    double theta1_max_eig = 0.0;  // must be < 0
    double theta2 = 0.0;          // must be < 0
    double theta3 = 0.0;          // must be ≥ 0
};

int theorem_for_scheme(Scheme s);
double alpha_lower_bound(int theorem);  // 1/π⁴, 3/(2π⁴), 2/π⁴

// Assemble and evaluate the Θ-constraints of the selected theorem. betas has
// one entry per output channel (two for theorem 3).
ConstraintMargins evaluate_constraints(int theorem, const ReducedModel& model,
                                       const TailNorms& tails, const Eigen::MatrixXd& P,
                                       double alpha, const Eigen::VectorXd& betas, double gamma,
                                       double delta);

// The full Θ1 matrix (symmetric, (2N+outputs) square); exposed for tests.
Eigen::MatrixXd theta1_matrix(int theorem, const ReducedModel& model, const TailNorms& tails,
                              const Eigen::MatrixXd& P, double alpha, const Eigen::VectorXd& betas,
                              double gamma, double delta);

struct SearchConfig {
    int alpha_points = 24;
    double alpha_max = 1e4;
    std::vector<double> scale_grid = {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
    std::vector<double> rate_boost = {0.0, 0.5, 0.8, 0.95};  // fraction of (abscissa - δ)
    double eps1 = 1e-9;   // strictness margin for Θ1
    double eps2 = 1e-9;   // strictness margin for Θ2
    bool use_refiner = true;
    int refiner_max_iters = 80000;
    double refiner_target = 1e-6;
    std::uint64_t seed = 1;
};

struct Certificate {
    int theorem = 1;
    int N = 0;
    int N0 = 0;
    double delta = 0.0;
    double alpha = 0.0;
    Eigen::VectorXd betas;
    double gamma = 0.0;
    Eigen::MatrixXd P;
    ConstraintMargins margins;
    // context needed for stand-alone re-verification
    PlantParams plant;
    Eigen::MatrixXd K, L;
};

struct InfeasibleReport {
    int N = 0;
    ConstraintMargins best_margins;
    double alpha = 0.0;
    Eigen::VectorXd betas;
    double gamma = 0.0;
    std::string note;
};

using CertifyResult = std::variant<Certificate, InfeasibleReport>;

// Search for (P, α, β, γ) satisfying the theorem constraints at order N.
// First pass follows the proof's construction (Lyapunov P, β = √N, γ = 1/N
// seeds, scalar grids); if that misses, a convex max-violation descent over
// (P, β, γ) refines the best candidate. The returned certificate carries
// exactly re-verifiable margins.
CertifyResult certify(const SpectralPlant& plant, const GainSet& gains, double delta, int N,
                      const SearchConfig& search = {});

// Smallest N in [N0+1, n_max] for which certify succeeds.
std::optional<int> min_feasible_N(const SpectralPlant& plant, const GainSet& gains, double delta,
                                  int n_max, const SearchConfig& search = {});

// Independent re-verification of a certificate (rebuilds the model from the
// stored plant and gains). Populates margins when requested.
bool verify_certificate(const Certificate& cert, ConstraintMargins* out = nullptr,
                        double eps1 = 1e-9, double eps2 = 1e-9);

std::string certificate_to_json(const Certificate& cert);
Certificate certificate_from_json(const std::string& text);
void save_certificate(const Certificate& cert, const std::string& path);
Certificate load_certificate(const std::string& path);

} // namespace ksestab
