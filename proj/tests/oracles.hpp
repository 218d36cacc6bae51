#pragma once

// Test-only oracles, independent of the library's computation paths:
// composite Gauss-Legendre quadrature, brute-force resonance enumeration,
// the PBH controllability test, and finite-difference norms on a fine grid.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

inline constexpr double kPi = std::numbers::pi;

struct GaussLegendre {
    std::vector<double> nodes;    // on (-1,1)
    std::vector<double> weights;

    explicit GaussLegendre(int order) {
        nodes.resize(order);
        weights.resize(order);
        for (int i = 0; i < order; ++i) {
            double x = std::cos(kPi * (i + 0.75) / (order + 0.5));
            double dp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = x;
                for (int k = 2; k <= order; ++k) {
                    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = order * (x * p1 - p0) / (x * x - 1.0);
                const double dx = p1 / dp;
                x -= dx;
                if (std::abs(dx) < 1e-15) break;
            }
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
    }
};

// Composite Gauss-Legendre integral of f over [a,b].
inline double integrate(const std::function<double(double)>& f, double a, double b, int panels,
                        int order = 16) {
    static thread_local int cached_order = -1;
    static thread_local GaussLegendre* gl = nullptr;
    if (cached_order != order) {
        delete gl;
        gl = new GaussLegendre(order);
        cached_order = order;
    }
    const double h = (b - a) / panels;
    double acc = 0.0;
    for (int p = 0; p < panels; ++p) {
        const double mid = a + (p + 0.5) * h;
        for (int i = 0; i < order; ++i) acc += gl->weights[i] * f(mid + 0.5 * h * gl->nodes[i]);
    }
    return acc * 0.5 * h;
}

inline double mode(int n, double x) { return std::numbers::sqrt2 * std::sin(n * kPi * x); }

// ⟨f, φ_n⟩ by quadrature
inline double project(const std::function<double(double)>& f, int n, int panels = 64) {
    return integrate([&](double x) { return f(x) * mode(n, x); }, 0.0, 1.0, panels);
}

// Brute-force enumeration of the resonance sets.
struct BruteClass {
    bool lambda1 = false;
    int lambda1_n = 0;
    std::vector<std::pair<int, int>> pairs;
};

inline BruteClass brute_classify(double lambda, double tol) {
    BruteClass out;
    const double scale = std::max(1.0, lambda);
    const double ratio = lambda / (kPi * kPi);
    const int limit = static_cast<int>(std::floor(std::sqrt(ratio + 1.0))) + 1;
    for (int n = 1; n <= limit; ++n) {
        if (std::abs(lambda - double(n) * n * kPi * kPi) <= tol * scale) {
            out.lambda1 = true;
            if (out.lambda1_n == 0) out.lambda1_n = n;
        }
        for (int m = n + 1; double(n) * n + double(m) * m <= ratio + 1.0; ++m)
            if (std::abs(lambda - (double(n) * n + double(m) * m) * kPi * kPi) <= tol * scale)
                out.pairs.emplace_back(n, m);
    }
    return out;
}

// PBH: (A, B) controllable iff rank [σI - A, B] = n at every eigenvalue σ of
// the diagonal A.
inline bool pbh_controllable(const Eigen::VectorXd& a_diag, const Eigen::MatrixXd& b) {
    const int n = static_cast<int>(a_diag.size());
    for (int i = 0; i < n; ++i) {
        Eigen::MatrixXd m(n, n + b.cols());
        m.leftCols(n) = Eigen::MatrixXd(
            (Eigen::VectorXd::Constant(n, a_diag(i)) - a_diag).asDiagonal());
        m.rightCols(b.cols()) = b;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
        const auto& sv = svd.singularValues();
        int rank = 0;
        for (int k = 0; k < sv.size(); ++k)
            if (sv(k) > 1e-9 * sv(0)) ++rank;
        if (rank < n) return false;
    }
    return true;
}

// L², H¹, H² norms of a grid-sampled function via 4th-order finite
// differences and composite Simpson integration. Grid must be uniform on
// [0,1] with an even interval count.
struct FdNorms {
    double l2 = 0.0, h1 = 0.0, h2 = 0.0;
};

inline double simpson(const std::vector<double>& f, double h) {
    double acc = f.front() + f.back();
    for (std::size_t i = 1; i + 1 < f.size(); ++i) acc += (i % 2 == 1 ? 4.0 : 2.0) * f[i];
    return acc * h / 3.0;
}

inline FdNorms fd_norms(const std::vector<double>& f, double h) {
    const std::size_t n = f.size();
    std::vector<double> d1(n), d2(n);
    auto at = [&](std::ptrdiff_t i) { return f[static_cast<std::size_t>(i)]; };
    for (std::size_t i = 0; i < n; ++i) {
        const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(i);
        if (i >= 2 && i + 2 < n) {
            d1[i] = (-at(k + 2) + 8 * at(k + 1) - 8 * at(k - 1) + at(k - 2)) / (12 * h);
            d2[i] = (-at(k + 2) + 16 * at(k + 1) - 30 * at(k) + 16 * at(k - 1) - at(k - 2)) /
                    (12 * h * h);
        } else {
            // edges: differentiate the quartic through the 5 nearest points
            const int s = (i < 2) ? 0 : static_cast<int>(n) - 5;
            const double t = static_cast<double>(i) - s;
            double c1 = 0.0, c2 = 0.0;
            for (int j = 0; j < 5; ++j) {
                double dsum = 0.0, d2sum = 0.0;
                for (int a = 0; a < 5; ++a) {
                    if (a == j) continue;
                    double prod = 1.0;
                    for (int b = 0; b < 5; ++b) {
                        if (b == j || b == a) continue;
                        prod *= (t - b) / (j - b);
                    }
                    dsum += prod / (j - a);
                    double dd = 0.0;
                    for (int c = 0; c < 5; ++c) {
                        if (c == j || c == a) continue;
                        double prod2 = 1.0;
                        for (int b = 0; b < 5; ++b) {
                            if (b == j || b == a || b == c) continue;
                            prod2 *= (t - b) / (j - b);
                        }
                        dd += prod2 / (j - c);
                    }
                    d2sum += dd / (j - a);
                }
                c1 += f[s + j] * dsum;
                c2 += f[s + j] * d2sum;
            }
            d1[i] = c1 / h;
            d2[i] = c2 / (h * h);
        }
    }
    std::vector<double> f2(n), g2(n), k2(n);
    for (std::size_t i = 0; i < n; ++i) {
        f2[i] = f[i] * f[i];
        g2[i] = d1[i] * d1[i];
        k2[i] = d2[i] * d2[i];
    }
    FdNorms out;
    const double l2sq = simpson(f2, h);
    const double h1sq = l2sq + simpson(g2, h);
    const double h2sq = h1sq + simpson(k2, h);
    out.l2 = std::sqrt(l2sq);
    out.h1 = std::sqrt(h1sq);
    out.h2 = std::sqrt(h2sq);
    return out;
}

} // namespace oracle
