#pragma once

#include <vector>

namespace ksestab {

// Dense univariate polynomial, coefficients in ascending powers of x.
// Used for the boundary-lifting profiles and their exact trigonometric
// moments; everything here is closed-form, no quadrature.
class Polynomial {
public:
    Polynomial() = default;
    explicit Polynomial(std::vector<double> coeffs) : c_(std::move(coeffs)) { trim(); }

    double operator()(double x) const;

    Polynomial derivative() const;
    Polynomial operator*(const Polynomial& rhs) const;
    Polynomial operator+(const Polynomial& rhs) const;
    Polynomial scaled(double s) const;

    // ∫_0^1 p(x) dx
    double integral01() const;

    bool is_zero() const { return c_.empty(); }
    int degree() const { return c_.empty() ? -1 : static_cast<int>(c_.size()) - 1; }
    const std::vector<double>& coeffs() const { return c_; }

private:
    std::vector<double> c_;
    void trim();
};

// ∫_0^1 p(x) sin(kπx) dx, exact via repeated integration by parts.
// Odd in k; zero at k = 0.
double sine_moment(const Polynomial& p, int k);

// ∫_0^1 p(x) cos(kπx) dx; k = 0 reduces to ∫_0^1 p.
double cosine_moment(const Polynomial& p, int k);

} // namespace ksestab
