#include "ksestab/spectral_plant.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace ksestab {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSqrt2 = std::numbers::sqrt2;

// b(x) = -(1-x)
Polynomial dirichlet_lifting() { return Polynomial({-1.0, 1.0}); }

// b(x) = x(1-x)³/6
Polynomial quartic_lifting() {
    return Polynomial({0.0, 1.0 / 6.0, -0.5, 0.5, -1.0 / 6.0});
}

Polynomial forcing_of(const Polynomial& b, double lambda) {
    const Polynomial b2 = b.derivative().derivative();
    const Polynomial b4 = b2.derivative().derivative();
    return b4 + b2.scaled(lambda);
}

} // namespace

const char* scheme_name(Scheme s) {
    switch (s) {
        case Scheme::DirichletActuation: return "dirichlet";
        case Scheme::SecondDerivActuation: return "secondderiv";
        case Scheme::TwoInputTwoOutput: return "mimo";
    }
    return "?";
}

std::optional<Scheme> scheme_from_name(const std::string& name) {
    if (name == "dirichlet") return Scheme::DirichletActuation;
    if (name == "secondderiv") return Scheme::SecondDerivActuation;
    if (name == "mimo") return Scheme::TwoInputTwoOutput;
    return std::nullopt;
}

int input_count(Scheme s) { return s == Scheme::TwoInputTwoOutput ? 2 : 1; }
int output_count(Scheme s) { return s == Scheme::TwoInputTwoOutput ? 2 : 1; }

void PlantParams::validate() const {
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    if (!std::isfinite(mu)) throw std::invalid_argument("mu must be finite");
    if (scheme == Scheme::TwoInputTwoOutput) {
        if (!xi.has_value())
            throw std::invalid_argument("xi is required for the two-input/two-output scheme");
        if (!(*xi >= 0.0 && *xi < 1.0))
            throw std::invalid_argument("xi must lie in [0,1)");
    } else if (xi.has_value()) {
        throw std::invalid_argument("xi is only meaningful for the two-input/two-output scheme");
    }
}

double eigenvalue(int n, double lambda) {
    const double n2p2 = static_cast<double>(n) * n * kPi * kPi;
    return n2p2 * (lambda - n2p2);
}

double mode_eval(int n, double x, int derivative_order) {
    if (derivative_order == 0) return kSqrt2 * std::sin(n * kPi * x);
    if (derivative_order == 1) return kSqrt2 * n * kPi * std::cos(n * kPi * x);
    throw std::invalid_argument("derivative_order must be 0 or 1");
}

int n0_for_decay(double lambda, double delta) {
    if (!(delta > 0.0)) throw std::invalid_argument("delta must be positive");
    // σ_n ≥ -δ forces n² ≤ (λ + sqrt(λ² + 4δ))/(2π²); scan one past that.
    const double n2max = (lambda + std::sqrt(lambda * lambda + 4.0 * delta)) / (2.0 * kPi * kPi);
    const int limit = static_cast<int>(std::ceil(std::sqrt(std::max(n2max, 1.0)))) + 2;
    int n0 = 1;
    for (int n = 1; n <= limit; ++n)
        if (eigenvalue(n, lambda) >= -delta) n0 = n;
    return n0;
}

std::vector<Polynomial> lifting_polynomials(const PlantParams& params) {
    switch (params.scheme) {
        case Scheme::DirichletActuation: return {dirichlet_lifting()};
        case Scheme::SecondDerivActuation: return {quartic_lifting()};
        case Scheme::TwoInputTwoOutput: return {dirichlet_lifting(), quartic_lifting()};
    }
    return {};
}

std::vector<Polynomial> forcing_polynomials(const PlantParams& params) {
    std::vector<Polynomial> out;
    for (const Polynomial& b : lifting_polynomials(params)) out.push_back(forcing_of(b, params.lambda));
    return out;
}

std::vector<double> sensor_locations(const PlantParams& params) {
    if (params.scheme == Scheme::TwoInputTwoOutput) return {1.0, params.xi.value()};
    return {1.0};
}

InputCoefficients input_coefficients(const PlantParams& params, int n) {
    const auto bs = lifting_polynomials(params);
    const auto as = forcing_polynomials(params);
    const double sn = eigenvalue(n, params.lambda);
    const int m = static_cast<int>(bs.size());
    InputCoefficients out;
    out.b.resize(m);
    out.a.resize(m);
    out.beta.resize(m);
    for (int c = 0; c < m; ++c) {
        out.b(c) = kSqrt2 * sine_moment(bs[c], n);
        out.a(c) = kSqrt2 * sine_moment(as[c], n);
        out.beta(c) = out.a(c) + sn * out.b(c);
    }
    return out;
}

Eigen::VectorXd output_coefficients(const PlantParams& params, int n) {
    const auto sensors = sensor_locations(params);
    Eigen::VectorXd c(sensors.size());
    for (std::size_t i = 0; i < sensors.size(); ++i) c(i) = mode_eval(n, sensors[i], 1);
    return c;
}

TailNorms tail_norms(const PlantParams& params, int N) {
    if (N < 1) throw std::invalid_argument("N must be >= 1");
    const auto bs = lifting_polynomials(params);
    const auto as = forcing_polynomials(params);
    const int m = static_cast<int>(bs.size());
    TailNorms out;
    out.N = N;
    out.r_b.setZero(m);
    out.r_a.setZero(m);
    for (int c = 0; c < m; ++c) {
        double rb = (bs[c] * bs[c]).integral01();
        double ra = (as[c] * as[c]).integral01();
        for (int n = 1; n <= N; ++n) {
            const double bn = kSqrt2 * sine_moment(bs[c], n);
            const double an = kSqrt2 * sine_moment(as[c], n);
            rb -= bn * bn;
            ra -= an * an;
        }
        out.r_b(c) = std::max(rb, 0.0);
        out.r_a(c) = std::max(ra, 0.0);
    }
    double partial = 0.0;
    for (int n = 1; n <= N; ++n) partial += 1.0 / (static_cast<double>(n) * n);
    out.m_phi = 2.0 * kPi * kPi * (kPi * kPi / 6.0 - partial);
    return out;
}

Eigen::VectorXd SpectralPlant::a0_diag() const {
    Eigen::VectorXd d(n0);
    for (int n = 1; n <= n0; ++n) d(n - 1) = sigma(n);
    return d;
}

Eigen::MatrixXd SpectralPlant::b0() const {
    Eigen::MatrixXd b(n0, inputs());
    for (int n = 1; n <= n0; ++n) b.row(n - 1) = coefficients(n).beta.transpose();
    return b;
}

Eigen::MatrixXd SpectralPlant::c0() const {
    Eigen::MatrixXd c(outputs(), n0);
    for (int n = 1; n <= n0; ++n) c.col(n - 1) = this->c(n);
    return c;
}

SpectralPlant make_spectral_plant(const PlantParams& params, double delta) {
    params.validate();
    if (!(delta > 0.0)) throw std::invalid_argument("delta must be positive");
    SpectralPlant plant;
    plant.params = params;
    plant.delta = delta;
    plant.n0 = n0_for_decay(params.lambda, delta);
    return plant;
}

} // namespace ksestab
