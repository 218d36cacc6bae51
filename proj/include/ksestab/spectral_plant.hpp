#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <vector>

#include "ksestab/polynomial.hpp"

namespace ksestab {

// Actuation/sensing scheme of the plant:
//   DirichletActuation   z(t,0) = u,           measurement z_x(t,1)
//   SecondDerivActuation z_xx(t,0) = u,        measurement z_x(t,1)
//   TwoInputTwoOutput    z(t,0) = u1, z_xx(t,0) = u2,
//                        measurements z_x(t,1) and z_x(t,ξ)
enum class Scheme { DirichletActuation, SecondDerivActuation, TwoInputTwoOutput };

const char* scheme_name(Scheme s);
std::optional<Scheme> scheme_from_name(const std::string& name);
int input_count(Scheme s);
int output_count(Scheme s);

struct PlantParams {
    double lambda = 0.0;             // anti-diffusion coefficient, > 0
    double mu = 0.0;                 // convective nonlinearity strength
    Scheme scheme = Scheme::DirichletActuation;
    std::optional<double> xi;        // second sensor location, TwoInputTwoOutput only

    void validate() const;           // throws std::invalid_argument
};

// σ_n = -n⁴π⁴ + λ n²π²
double eigenvalue(int n, double lambda);

// φ_n (derivative_order 0) or φ_n' (derivative_order 1) at x ∈ [0,1]
double mode_eval(int n, double x, int derivative_order);

// Minimal N0 ≥ 1 such that σ_n < -δ for every n ≥ N0 + 1.
int n0_for_decay(double lambda, double delta);

// Lifting profiles b_c with w = z + Σ_c b_c u_c (homogenizes the boundary
// conditions), one polynomial per input channel.
std::vector<Polynomial> lifting_polynomials(const PlantParams& params);

// Induced in-domain forcing a_c = b_c'''' + λ b_c'' (identically zero for
// the Dirichlet lifting).
std::vector<Polynomial> forcing_polynomials(const PlantParams& params);

// Sensor locations of the measurement operator, one per output channel.
std::vector<double> sensor_locations(const PlantParams& params);

struct InputCoefficients {
    Eigen::VectorXd b;     // ⟨b_c, φ_n⟩ per channel
    Eigen::VectorXd beta;  // a_n + σ_n b_n per channel
    Eigen::VectorXd a;     // ⟨a_c, φ_n⟩ per channel
};
InputCoefficients input_coefficients(const PlantParams& params, int n);

// c_n = φ_n' evaluated at the sensor locations, one entry per output.
Eigen::VectorXd output_coefficients(const PlantParams& params, int n);

struct TailNorms {
    int N = 0;
    Eigen::VectorXd r_b;   // ‖R_N b_c‖²_{L²} per input channel
    Eigen::VectorXd r_a;   // ‖R_N a_c‖²_{L²} per input channel
    double m_phi = 0.0;    // 2π² Σ_{n ≥ N+1} 1/n²
};

// Tail residual norms past truncation order N. The full L² norms come from
// exact polynomial integrals, never from truncating the modal series.
TailNorms tail_norms(const PlantParams& params, int N);

struct SpectralPlant {
    PlantParams params;
    double delta = 0.0;    // target decay rate
    int n0 = 0;            // unstable-mode count for delta

    double sigma(int n) const { return eigenvalue(n, params.lambda); }
    InputCoefficients coefficients(int n) const { return input_coefficients(params, n); }
    Eigen::VectorXd c(int n) const { return output_coefficients(params, n); }
    int inputs() const { return input_count(params.scheme); }
    int outputs() const { return output_count(params.scheme); }

    Eigen::VectorXd a0_diag() const;   // (σ_1, …, σ_{N0})
    Eigen::MatrixXd b0() const;        // N0 × inputs, row n is β_n
    Eigen::MatrixXd c0() const;        // outputs × N0, column n is c_n
};

SpectralPlant make_spectral_plant(const PlantParams& params, double delta);

} // namespace ksestab
