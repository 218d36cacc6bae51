#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ksestab/spectral_plant.hpp"
#include "oracles.hpp"

using namespace ksestab;

namespace {
constexpr double kPi = std::numbers::pi;
constexpr double kSqrt2 = std::numbers::sqrt2;

PlantParams dirichlet_params(double lambda, double mu = 1.0) {
    PlantParams p;
    p.lambda = lambda;
    p.mu = mu;
    p.scheme = Scheme::DirichletActuation;
    return p;
}

PlantParams secondderiv_params(double lambda) {
    PlantParams p;
    p.lambda = lambda;
    p.mu = 1.0;
    p.scheme = Scheme::SecondDerivActuation;
    return p;
}

PlantParams mimo_params(double lambda, double xi) {
    PlantParams p;
    p.lambda = lambda;
    p.mu = 1.0;
    p.scheme = Scheme::TwoInputTwoOutput;
    p.xi = xi;
    return p;
}
} // namespace

TEST_CASE("eigenvalues of the lifted operator") {
    CHECK(eigenvalue(1, 25.0) == doctest::Approx(149.33101899323154).epsilon(1e-14));
    CHECK(eigenvalue(2, 25.0) == doctest::Approx(-571.58501643510317).epsilon(1e-14));
    CHECK(eigenvalue(1, kPi * kPi) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("mode evaluation") {
    CHECK(mode_eval(1, 0.5, 0) == doctest::Approx(kSqrt2).epsilon(1e-15));
    for (int n = 1; n <= 7; ++n) {
        const double expected = (n % 2 == 0 ? 1.0 : -1.0) * kSqrt2 * n * kPi;
        CHECK(mode_eval(n, 1.0, 1) == doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK(mode_eval(1, 0.0, 1) == doctest::Approx(kSqrt2 * kPi).epsilon(1e-15));
    CHECK_THROWS_AS(mode_eval(1, 0.5, 2), std::invalid_argument);
}

TEST_CASE("input coefficients per scheme") {
    const auto dir = input_coefficients(dirichlet_params(25.0), 1);
    CHECK(dir.b(0) == doctest::Approx(-0.45015815807855303).epsilon(1e-14));
    CHECK(dir.beta(0) == doctest::Approx(-67.22257645398652).epsilon(1e-13));
    CHECK(dir.a(0) == doctest::Approx(0.0).epsilon(1e-15));

    for (double lambda : {25.0, 3.0, 180.0}) {
        const auto sd = input_coefficients(secondderiv_params(lambda), 1);
        CHECK(sd.beta(0) == doctest::Approx(-kSqrt2 * kPi).epsilon(1e-12));
    }

    const auto mm = input_coefficients(mimo_params(5.0 * kPi * kPi, 0.0), 1);
    CHECK(mm.b(1) == doctest::Approx(0.0086400321016870986).epsilon(1e-12));
    // cross-check with direct quadrature of the quartic lifting
    const double quad = oracle::project([](double x) { return x * (1 - x) * (1 - x) * (1 - x) / 6.0; }, 1);
    CHECK(mm.b(1) == doctest::Approx(quad).epsilon(1e-12));
    CHECK(mm.beta(1) == doctest::Approx(-kSqrt2 * kPi).epsilon(1e-12));
}

TEST_CASE("output coefficients") {
    CHECK(output_coefficients(dirichlet_params(25.0), 1)(0) ==
          doctest::Approx(-4.4428829381583661).epsilon(1e-14));
    CHECK(output_coefficients(dirichlet_params(25.0), 2)(0) ==
          doctest::Approx(2.0 * kSqrt2 * kPi).epsilon(1e-14));
    const auto c = output_coefficients(mimo_params(5.0 * kPi * kPi, 0.0), 1);
    CHECK(c(0) == doctest::Approx(-kSqrt2 * kPi).epsilon(1e-14));
    CHECK(c(1) == doctest::Approx(kSqrt2 * kPi).epsilon(1e-14));
}

TEST_CASE("tail norms") {
    const auto t5 = tail_norms(dirichlet_params(25.0), 5);
    CHECK(t5.r_b(0) == doctest::Approx(0.036743712993623487).epsilon(1e-12));
    CHECK(t5.m_phi == doctest::Approx(3.5791716839231289).epsilon(1e-12));
    CHECK(t5.r_a(0) == doctest::Approx(0.0).epsilon(1e-15));

    // independent check of the M_phi tail against a long partial sum
    double tail = 0.0;
    for (int n = 2000000; n >= 6; --n) tail += 1.0 / (double(n) * n);
    tail += 1.0 / 2000000.5;  // midpoint remainder estimate
    CHECK(t5.m_phi == doctest::Approx(2.0 * kPi * kPi * tail).epsilon(1e-10));

    double prev = t5.r_b(0);
    for (int n = 6; n <= 60; ++n) {
        const double cur = tail_norms(dirichlet_params(25.0), n).r_b(0);
        CHECK(cur <= prev + 1e-15);
        CHECK(cur >= 0.0);
        prev = cur;
    }
    CHECK(prev < 3.4e-3);  // ~2/(pi^2 N) at N = 60
}

TEST_CASE("unstable mode count") {
    CHECK(n0_for_decay(25.0, 0.5) == 1);
    CHECK(n0_for_decay(65.0 * kPi * kPi, 1.0) == 8);
    CHECK(n0_for_decay(kPi * kPi / 2.0, 0.1) == 1);
    // huge delta also counts slow stable modes
    CHECK(n0_for_decay(25.0, 600.0) == 2);
}

TEST_CASE("mode orthonormality by quadrature") {
    for (int n = 1; n <= 20; ++n)
        for (int m = n; m <= 20; ++m) {
            const double ip = oracle::integrate(
                [&](double x) { return oracle::mode(n, x) * oracle::mode(m, x); }, 0.0, 1.0, 64);
            CHECK(std::abs(ip - (n == m ? 1.0 : 0.0)) < 1e-10);
        }
}

TEST_CASE("Parseval consistency of tail norms") {
    for (const auto& params : {dirichlet_params(25.0), secondderiv_params(25.0),
                               mimo_params(5.0 * kPi * kPi, 0.25)}) {
        const auto lifts = lifting_polynomials(params);
        for (int N : {1, 5, 17, 50}) {
            const auto tails = tail_norms(params, N);
            for (std::size_t c = 0; c < lifts.size(); ++c) {
                const double full = (lifts[c] * lifts[c]).integral01();
                double partial = 0.0;
                for (int n = 1; n <= N; ++n) {
                    const double bn = input_coefficients(params, n).b(static_cast<int>(c));
                    partial += bn * bn;
                }
                CHECK(std::abs(partial + tails.r_b(static_cast<int>(c)) - full) < 1e-12);
            }
        }
    }
}

TEST_CASE("beta identity against quadrature-computed coefficients") {
    for (const auto& params : {dirichlet_params(7.3), secondderiv_params(7.3),
                               mimo_params(5.0 * kPi * kPi, 0.37)}) {
        const auto lifts = lifting_polynomials(params);
        const auto forcings = forcing_polynomials(params);
        for (int n = 1; n <= 50; ++n) {
            const auto ic = input_coefficients(params, n);
            for (std::size_t c = 0; c < lifts.size(); ++c) {
                const double bq = oracle::project([&](double x) { return lifts[c](x); }, n, 64);
                const double aq = oracle::project([&](double x) { return forcings[c](x); }, n, 64);
                const double beta_q = aq + eigenvalue(n, params.lambda) * bq;
                const double scale = std::max(1.0, std::abs(ic.beta(static_cast<int>(c))));
                CHECK(std::abs(ic.beta(static_cast<int>(c)) - beta_q) <= 1e-9 * scale);
            }
        }
    }
}

TEST_CASE("H2 norm identities on random mode combinations") {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 25; ++trial) {
        const int modes = 3 + static_cast<int>(rng() % 10);
        std::vector<double> coeff(modes);
        for (double& c : coeff) c = gauss(rng);
        auto f = [&](double x) {
            double acc = 0.0;
            for (int n = 1; n <= modes; ++n) acc += coeff[n - 1] * oracle::mode(n, x);
            return acc;
        };
        auto fp = [&](double x) {
            double acc = 0.0;
            for (int n = 1; n <= modes; ++n)
                acc += coeff[n - 1] * kSqrt2 * n * kPi * std::cos(n * kPi * x);
            return acc;
        };
        auto fpp = [&](double x) {
            double acc = 0.0;
            for (int n = 1; n <= modes; ++n)
                acc -= coeff[n - 1] * double(n) * n * kPi * kPi * oracle::mode(n, x);
            return acc;
        };
        double sum1 = 0.0, sum2 = 0.0;
        for (int n = 1; n <= modes; ++n) {
            const double n2p2 = double(n) * n * kPi * kPi;
            sum1 += n2p2 * coeff[n - 1] * coeff[n - 1];
            sum2 += n2p2 * n2p2 * coeff[n - 1] * coeff[n - 1];
        }
        const double q1 = oracle::integrate([&](double x) { return fp(x) * fp(x); }, 0, 1, 64);
        const double q2 = oracle::integrate([&](double x) { return fpp(x) * fpp(x); }, 0, 1, 64);
        CHECK(std::abs(sum1 - q1) <= 1e-8 * std::max(1.0, std::abs(q1)));
        CHECK(std::abs(sum2 - q2) <= 1e-8 * std::max(1.0, std::abs(q2)));
    }
}

TEST_CASE("plant construction and validation") {
    const SpectralPlant plant = make_spectral_plant(dirichlet_params(25.0), 0.5);
    CHECK(plant.n0 == 1);
    CHECK(plant.a0_diag()(0) == doctest::Approx(149.33101899323154));
    CHECK(plant.b0()(0, 0) == doctest::Approx(-67.22257645398652));
    CHECK(plant.c0()(0, 0) == doctest::Approx(-4.4428829381583661));

    PlantParams bad = dirichlet_params(25.0);
    bad.xi = 0.3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    PlantParams mimo_missing;
    mimo_missing.lambda = 5.0;
    mimo_missing.scheme = Scheme::TwoInputTwoOutput;
    CHECK_THROWS_AS(mimo_missing.validate(), std::invalid_argument);
    CHECK_THROWS_AS(make_spectral_plant(dirichlet_params(25.0), -1.0), std::invalid_argument);
}
