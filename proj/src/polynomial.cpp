#include "ksestab/polynomial.hpp"

#include <cmath>
#include <numbers>

namespace ksestab {

namespace {
constexpr double kPi = std::numbers::pi;
}

void Polynomial::trim() {
    while (!c_.empty() && c_.back() == 0.0) c_.pop_back();
}

double Polynomial::operator()(double x) const {
    double acc = 0.0;
    for (auto it = c_.rbegin(); it != c_.rend(); ++it) acc = acc * x + *it;
    return acc;
}

Polynomial Polynomial::derivative() const {
    if (c_.size() <= 1) return Polynomial{};
    std::vector<double> d(c_.size() - 1);
    for (std::size_t i = 1; i < c_.size(); ++i) d[i - 1] = static_cast<double>(i) * c_[i];
    return Polynomial(std::move(d));
}

Polynomial Polynomial::operator*(const Polynomial& rhs) const {
    if (is_zero() || rhs.is_zero()) return Polynomial{};
    std::vector<double> prod(c_.size() + rhs.c_.size() - 1, 0.0);
    for (std::size_t i = 0; i < c_.size(); ++i)
        for (std::size_t j = 0; j < rhs.c_.size(); ++j) prod[i + j] += c_[i] * rhs.c_[j];
    return Polynomial(std::move(prod));
}

Polynomial Polynomial::operator+(const Polynomial& rhs) const {
    std::vector<double> sum(std::max(c_.size(), rhs.c_.size()), 0.0);
    for (std::size_t i = 0; i < c_.size(); ++i) sum[i] += c_[i];
    for (std::size_t i = 0; i < rhs.c_.size(); ++i) sum[i] += rhs.c_[i];
    return Polynomial(std::move(sum));
}

Polynomial Polynomial::scaled(double s) const {
    std::vector<double> out(c_);
    for (double& v : out) v *= s;
    return Polynomial(std::move(out));
}

double Polynomial::integral01() const {
    double acc = 0.0;
    for (std::size_t i = 0; i < c_.size(); ++i) acc += c_[i] / static_cast<double>(i + 1);
    return acc;
}

// I_k(p) = (p(0) - (-1)^k p(1)) / (kπ) - I_k(p'') / (kπ)²
double sine_moment(const Polynomial& p, int k) {
    if (k == 0 || p.is_zero()) return 0.0;
    if (k < 0) return -sine_moment(p, -k);
    const double kpi = k * kPi;
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    double result = 0.0;
    double mult = 1.0 / kpi;
    Polynomial cur = p;
    while (!cur.is_zero()) {
        result += mult * (cur(0.0) - sign * cur(1.0));
        cur = cur.derivative().derivative();
        mult *= -1.0 / (kpi * kpi);
    }
    return result;
}

double cosine_moment(const Polynomial& p, int k) {
    if (k == 0) return p.integral01();
    if (k < 0) return cosine_moment(p, -k);
    return -sine_moment(p.derivative(), k) / (k * kPi);
}

} // namespace ksestab
