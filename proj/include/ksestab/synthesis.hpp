#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ksestab/spectral_plant.hpp"

namespace ksestab {

struct NotControllableError : std::runtime_error {
    explicit NotControllableError(const std::string& what) : std::runtime_error(what) {}
};
struct IllConditionedPlacementError : std::runtime_error {
    explicit IllConditionedPlacementError(const std::string& what) : std::runtime_error(what) {}
};

enum class LambdaKind { Generic, Lambda1Only, Lambda2 };

struct ResonantPair {
    int n = 0;
    int m = 0;  // n < m, λ = (n² + m²)π²
};

struct LambdaClass {
    LambdaKind kind = LambdaKind::Generic;
    std::optional<int> dirichlet_zero_index;   // n0 with λ = n0²π² (Λ1 membership)
    std::vector<ResonantPair> resonant_pairs;  // Λ2 membership
    double tolerance = 0.0;
    std::vector<std::string> warnings;         // near-resonance notes
    bool near_lambda1 = false;
    bool near_lambda2 = false;
};

// Decide membership of λ in the resonance sets Λ1 = {n²π²} and
// Λ2 = {(n²+m²)π², n < m} with relative tolerance tol; candidates within
// 100·tol raise a near-resonance warning.
LambdaClass classify_lambda(double lambda, double tol);

struct SchemeChoice {
    Scheme scheme;
    std::string rationale;
};
SchemeChoice select_scheme(const LambdaClass& cls);

// (-1)^n cos(mπξ) - (-1)^m cos(nπξ); the MIMO output block is singular at a
// resonant pair iff this gap vanishes.
double xi_pair_gap(const ResonantPair& pair, double xi);

struct XiSelection {
    double xi = 0.0;
    double margin = 0.0;  // min over resonant pairs of |gap|
};

// Grid maximin choice of the second sensor location over ξ ∈ [0,1).
XiSelection select_xi(const LambdaClass& cls, int grid_size);

enum class KalmanSide { Controllability, Observability };

struct KalmanReport {
    bool satisfied = false;
    int rank = 0;
    int required = 0;
    double min_singular_value = 0.0;
    double threshold = 0.0;
    std::string note;
};

KalmanReport check_kalman(const Eigen::VectorXd& a0_diag, const Eigen::MatrixXd& b_or_c,
                          KalmanSide side);

// Gain K with eig(A0 + B0 K) = targets. SISO goes through Ackermann; the
// multi-input path solves A0 X - X Λd = -B0 G for a seeded random G and
// returns K = G X^{-1}, re-randomizing G when X is ill conditioned.
Eigen::MatrixXd place_state_feedback(const Eigen::VectorXd& a0_diag, const Eigen::MatrixXd& b0,
                                     const std::vector<std::complex<double>>& targets,
                                     std::uint64_t seed = 1);

// Gain L with eig(A0 - L C0) = targets, via transposition of the state
// feedback problem for the pair (A0ᵀ, -C0ᵀ).
Eigen::MatrixXd place_observer(const Eigen::VectorXd& a0_diag, const Eigen::MatrixXd& c0,
                               const std::vector<std::complex<double>>& targets,
                               std::uint64_t seed = 1);

struct GainSet {
    Eigen::MatrixXd K;  // inputs × N0
    Eigen::MatrixXd L;  // N0 × outputs
    std::vector<std::complex<double>> target_poles;
    Scheme scheme = Scheme::DirichletActuation;
};

// Real targets equally spaced in [-δ-1, -δ-N0].
std::vector<std::complex<double>> default_pole_targets(int n0, double delta);

GainSet synthesize_gains(const SpectralPlant& plant,
                         std::vector<std::complex<double>> targets = {},
                         std::uint64_t seed = 1);

} // namespace ksestab
