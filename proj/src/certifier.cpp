#include "ksestab/certifier.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "ksestab/log.hpp"

namespace ksestab {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kPi2 = kPi * kPi;
constexpr double kPi4 = kPi2 * kPi2;

// coefficient c_h with α-bound c_h/π⁴ and damping terms c_h (N+1)⁴/α
double theorem_coefficient(int theorem) {
    switch (theorem) {
        case 1: return 1.0;
        case 2: return 1.5;
        case 3: return 2.0;
    }
    throw std::invalid_argument("theorem must be 1, 2 or 3");
}

double spectral_abscissa(const Eigen::MatrixXd& a) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(a, false);
    return es.eigenvalues().real().maxCoeff();
}

struct EvalContext {
    const ReducedModel* model = nullptr;
    const TailNorms* tails = nullptr;
    int theorem = 1;
    double delta = 0.0;
    double c_h = 1.0;

    ConstraintMargins margins(const Eigen::MatrixXd& p, double alpha, const Eigen::VectorXd& betas,
                              double gamma) const {
        return evaluate_constraints(theorem, *model, *tails, p, alpha, betas, gamma, delta);
    }
};

struct SearchPoint {
    Eigen::MatrixXd P;
    double alpha = 0.0;
    Eigen::VectorXd betas;
    double gamma = 0.0;
    ConstraintMargins margins;
    double merit = std::numeric_limits<double>::infinity();
};

bool margins_ok(const ConstraintMargins& m, double eps1, double eps2) {
    return m.theta1_max_eig < -eps1 && m.theta2 < -eps2 && m.theta3 >= 0.0;
}

// Convex max-violation descent over (P, betas, gamma) at fixed alpha. The
// constraints are affine in the decision variables, so their eigenvalue max
// is convex; it is minimized through a log-sum-exp smoothing over all
// eigenvalues (annealed) with momentum and a diagonal preconditioner. Any
// strictly feasible iterate is cone-upscaled until the margins clear the
// epsilons and returned.
bool refine_subgradient(const EvalContext& ctx, double alpha, Eigen::MatrixXd& p,
                        Eigen::VectorXd& betas, double& gamma, const SearchConfig& cfg) {
    const ReducedModel& m = *ctx.model;
    const TailNorms& tails = *ctx.tails;
    const int dim = 2 * m.N;
    const int pout = m.outputs;
    const double mphi = tails.m_phi;
    const double s_damp = m.sigma_next + ctx.delta +
                          ctx.c_h * std::pow(m.N + 1.0, 4.0) / alpha;
    if (!(s_damp < 0.0)) return false;
    const double w2 = 1.0 / std::max(1.0, std::abs(s_damp) / m.N + std::sqrt(double(m.N)) * mphi);

    auto rescale_cone = [&]() {
        const double tr = p.diagonal().cwiseAbs().sum();
        if (tr > 1e-300) {
            const double s = dim / tr;
            p *= s;
            betas *= s;
            gamma *= s;
        }
    };
    rescale_cone();

    double f_target = -0.5;
    int since_progress = 0;
    double best_f = std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < cfg.refiner_max_iters; ++iter) {
        const Eigen::MatrixXd th1 =
            theta1_matrix(ctx.theorem, m, tails, p, alpha, betas, gamma, ctx.delta);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> saes(th1);
        const Eigen::VectorXd& ev1 = saes.eigenvalues();
        const double th1max = ev1(dim + pout - 1);
        const double th2 = 2.0 * gamma * s_damp + betas.sum() * mphi;

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> pes(p);
        const double pmin = pes.eigenvalues()(0);

        const double f = std::max({th1max, th2 * w2, 1e-12 - pmin, -betas.minCoeff(), -gamma});

        if (th1max < 0.0 && th2 < 0.0 && pmin > 0.0 && betas.minCoeff() > 0.0 && gamma > 0.0) {
            // the constraints are jointly homogeneous in (P, beta, gamma):
            // upscale the cone ray until the strict margins clear the epsilons
            Eigen::MatrixXd pc = 0.5 * (p + p.transpose());
            const double scale =
                std::min(1e12, std::max({1.0, 10.0 * cfg.eps1 / -th1max, 10.0 * cfg.eps2 / -th2}));
            pc *= scale;
            const Eigen::VectorXd bc = betas * scale;
            const double gc = gamma * scale;
            const ConstraintMargins mg = ctx.margins(pc, alpha, bc, gc);
            if (margins_ok(mg, cfg.eps1, cfg.eps2)) {
                p = pc;
                betas = bc;
                gamma = gc;
                return true;
            }
        }

        if (f < best_f - 1e-12) {
            best_f = f;
            since_progress = 0;
        } else if (++since_progress > 3000) {
            f_target *= 0.25;
            since_progress = 0;
            if (f_target > -1e-10) return false;
        }

        // per-iteration preconditioner: sqrt-diag for P, log-space for beta/gamma
        const Eigen::VectorXd dvec = p.diagonal().cwiseAbs().cwiseMax(1e-8).cwiseSqrt();
        const Eigen::VectorXd dbeta = betas.cwiseAbs().cwiseMax(1e-12);
        const double dgamma = std::max(std::abs(gamma), 1e-12);

        // softmax weights across every scalar constraint value
        const double mu = std::max(1e-9, 0.15 * std::abs(f));
        std::vector<double> vals;
        vals.reserve(dim + pout + dim + pout + 1);
        for (int i = 0; i < ev1.size(); ++i) vals.push_back(ev1(i));
        vals.push_back(th2 * w2);
        const Eigen::VectorXd& evp = pes.eigenvalues();
        for (int i = 0; i < evp.size(); ++i) vals.push_back(-evp(i));
        for (int c = 0; c < pout; ++c) vals.push_back(-betas(c));
        vals.push_back(-gamma);
        double zsum = 0.0;
        std::vector<double> w(vals.size());
        for (std::size_t i = 0; i < vals.size(); ++i) {
            w[i] = std::exp((vals[i] - f) / mu);
            zsum += w[i];
        }
        for (double& wi : w) wi /= zsum;

        // weighted eigenprojections of Theta1
        Eigen::MatrixXd wmat = Eigen::MatrixXd::Zero(dim + pout, dim + pout);
        for (int i = 0; i < ev1.size(); ++i)
            if (w[i] > 1e-14)
                wmat.noalias() += w[i] * saes.eigenvectors().col(i) *
                                  saes.eigenvectors().col(i).transpose();
        const Eigen::MatrixXd wxx = wmat.topLeftCorner(dim, dim);
        const Eigen::MatrixXd wxz = wmat.topRightCorner(dim, pout);

        Eigen::MatrixXd gp = wxx * m.F.transpose() + m.F * wxx + 2.0 * ctx.delta * wxx +
                             m.Lcal * wxz.transpose() + wxz * m.Lcal.transpose();
        Eigen::VectorXd gbeta = -wmat.bottomRightCorner(pout, pout).diagonal();
        double ggamma = 0.0;
        for (int c = 0; c < m.inputs; ++c)
            ggamma += alpha * tails.r_b(c) * m.E.row(c) * wmat * m.E.row(c).transpose();
        if (ctx.theorem == 2)
            ggamma += alpha * tails.r_a(0) * m.Ktilde.row(0) * wxx * m.Ktilde.row(0).transpose();
        else if (ctx.theorem == 3)
            ggamma += alpha * tails.r_a(1) * m.Ktilde.row(1) * wxx * m.Ktilde.row(1).transpose();

        // theta2 term
        const std::size_t i_th2 = ev1.size();
        gbeta.array() += w[i_th2] * mphi * w2;
        ggamma += w[i_th2] * 2.0 * s_damp * w2;
        // -lambda_i(P) terms
        for (int i = 0; i < evp.size(); ++i) {
            const double wi = w[i_th2 + 1 + i];
            if (wi > 1e-14)
                gp.noalias() -= wi * pes.eigenvectors().col(i) * pes.eigenvectors().col(i).transpose();
        }
        // positivity of beta and gamma
        for (int c = 0; c < pout; ++c) gbeta(c) -= w[i_th2 + 1 + evp.size() + c];
        ggamma -= w.back();

        // preconditioned momentum step
        const Eigen::MatrixXd gp_pre = dvec.asDiagonal() * gp * dvec.asDiagonal();
        const Eigen::VectorXd gbeta_pre = dbeta.cwiseProduct(gbeta);
        const double ggamma_pre = dgamma * ggamma;
        const double gnorm = std::sqrt(gp_pre.squaredNorm() + gbeta_pre.squaredNorm() +
                                       ggamma_pre * ggamma_pre);
        if (!(gnorm > 1e-300)) return false;

        // Polyak step toward the annealed target in the preconditioned metric
        const double tau = (f - f_target) / (gnorm * gnorm);
        p -= tau * (dvec.asDiagonal() * gp_pre * dvec.asDiagonal());
        betas -= tau * dbeta.cwiseProduct(gbeta_pre);
        gamma -= tau * dgamma * ggamma_pre;
        p = 0.5 * (p + p.transpose());

        if (iter % 2000 == 0)
            klog(LogLevel::Debug,
                 "refine iter %d: f=%.6g th1=%.6g th2=%.6g pmin=%.3g target=%.2g gnorm=%.3g",
                 iter, f, th1max, th2, pmin, f_target, gnorm);
        if (iter % 500 == 499) rescale_cone();
    }
    return false;
}

// Parlett-Reinsch style balancing with powers of two; returns the diagonal
// scaling D with H_balanced = D^{-1} H D.
Eigen::VectorXd balance_in_place(Eigen::MatrixXd& h) {
    const int n = static_cast<int>(h.rows());
    Eigen::VectorXd d = Eigen::VectorXd::Ones(n);
    for (int sweep = 0; sweep < 8; ++sweep) {
        bool converged = true;
        for (int i = 0; i < n; ++i) {
            double r = 0.0, c = 0.0;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                r += std::abs(h(i, j));
                c += std::abs(h(j, i));
            }
            if (r == 0.0 || c == 0.0) continue;
            double f = 1.0;
            while (c < r / 2.0) {
                c *= 2.0;
                r /= 2.0;
                f *= 2.0;
            }
            while (c > 2.0 * r) {
                c /= 2.0;
                r *= 2.0;
                f /= 2.0;
            }
            if (f != 1.0) {
                converged = false;
                d(i) *= f;
                h.row(i) /= f;
                h.col(i) *= f;
            }
        }
        if (converged) break;
    }
    return d;
}

// Stabilizing solution of AᵀP + PA + P G P + Q = 0 through the invariant
// subspace of the Hamiltonian [A, G; -Q, -Aᵀ].
std::optional<Eigen::MatrixXd> solve_riccati(const Eigen::MatrixXd& a, const Eigen::MatrixXd& g,
                                             const Eigen::MatrixXd& q) {
    const int n = static_cast<int>(a.rows());
    Eigen::MatrixXd ham(2 * n, 2 * n);
    ham.topLeftCorner(n, n) = a;
    ham.topRightCorner(n, n) = g;
    ham.bottomLeftCorner(n, n) = -q;
    ham.bottomRightCorner(n, n) = -a.transpose();
    const Eigen::VectorXd bal = balance_in_place(ham);
    Eigen::EigenSolver<Eigen::MatrixXd> es(ham);
    if (es.info() != Eigen::Success) return std::nullopt;
    const auto& evals = es.eigenvalues();
    Eigen::MatrixXcd basis(2 * n, n);
    int count = 0;
    for (int i = 0; i < 2 * n; ++i) {
        if (!(evals(i).real() < 0.0)) continue;
        if (count == n) return std::nullopt;  // no clean stable/antistable split
        basis.col(count++) = bal.cast<std::complex<double>>().asDiagonal() * es.eigenvectors().col(i);
    }
    if (count != n) return std::nullopt;
    const Eigen::MatrixXcd x1 = basis.topRows(n);
    const Eigen::MatrixXcd x2 = basis.bottomRows(n);
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(x1.transpose());
    if (!lu.isInvertible()) return std::nullopt;
    // P = X2 X1^{-1}, computed as (X1^{-T} X2^{T})^{T}
    Eigen::MatrixXd p = lu.solve(x2.transpose()).transpose().real();
    p = 0.5 * (p + p.transpose());
    if (!p.allFinite()) return std::nullopt;

    // Kleinman polish: the subspace solve leaves a residual well above
    // machine precision on stiff problems; each Newton step is one Lyapunov
    // solve and converges quadratically near the solution.
    auto residual_norm = [&](const Eigen::MatrixXd& pk) {
        return (a.transpose() * pk + pk * a + pk * g * pk + q).norm();
    };
    auto kleinman = [&](Eigen::MatrixXd pk, int iters) {
        double res = residual_norm(pk);
        for (int it = 0; it < iters && res > 1e-13 * (1.0 + pk.norm() * a.norm()); ++it) {
            const Eigen::MatrixXd acl = a + g * pk;
            Eigen::MatrixXd pn;
            try {
                pn = solve_lyapunov(acl, Eigen::MatrixXd(q - pk * g * pk));
            } catch (const std::exception&) {
                break;
            }
            if (!pn.allFinite()) break;
            const double rn = residual_norm(pn);
            if (rn >= 0.9 * res) break;
            pk = pn;
            res = rn;
        }
        return std::make_pair(pk, res);
    };

    auto [p1, res1] = kleinman(p, 6);
    if (res1 > 1e-10 * (1.0 + p1.norm() * a.norm())) {
        // restart from zero; valid whenever A itself is Hurwitz
        Eigen::EigenSolver<Eigen::MatrixXd> aes(a, false);
        if (aes.eigenvalues().real().maxCoeff() < 0.0) {
            auto [p2, res2] = kleinman(Eigen::MatrixXd::Zero(n, n), 30);
            if (res2 < res1) return p2;
        }
    }
    return p1;
}

// For fixed (alpha, betas, gamma) the Theta1 block inequality reduces, after
// Schur elimination of the measurement-residue corner, to a Riccati
// inequality in P. A stabilizing ARE solution (with a slack added to the
// constant block) is an explicit candidate P.
std::optional<Eigen::MatrixXd> riccati_candidate(const EvalContext& ctx, double alpha,
                                                 const Eigen::VectorXd& betas, double gamma,
                                                 double slack) {
    const ReducedModel& m = *ctx.model;
    const TailNorms& tails = *ctx.tails;
    const int dim = 2 * m.N;
    const int pout = m.outputs;

    Eigen::MatrixXd corner = Eigen::MatrixXd(betas.asDiagonal());
    Eigen::MatrixXd smat = Eigen::MatrixXd::Zero(dim, pout);
    Eigen::MatrixXd qmat = Eigen::MatrixXd::Zero(dim, dim);
    for (int c = 0; c < m.inputs; ++c) {
        const double t = alpha * gamma * tails.r_b(c);
        const Eigen::VectorXd ex = m.E.row(c).head(dim);
        const Eigen::VectorXd ez = m.E.row(c).tail(pout);
        corner -= t * ez * ez.transpose();
        smat += t * ex * ez.transpose();
        qmat += t * ex * ex.transpose();
    }
    if (ctx.theorem == 2)
        qmat += alpha * gamma * tails.r_a(0) * m.Ktilde.row(0).transpose() * m.Ktilde.row(0);
    else if (ctx.theorem == 3)
        qmat += alpha * gamma * tails.r_a(1) * m.Ktilde.row(1).transpose() * m.Ktilde.row(1);

    Eigen::LLT<Eigen::MatrixXd> llt(corner);
    if (llt.info() != Eigen::Success) return std::nullopt;  // corner not PD
    const Eigen::MatrixXd rinv = llt.solve(Eigen::MatrixXd::Identity(pout, pout));

    const Eigen::MatrixXd a = m.F + ctx.delta * Eigen::MatrixXd::Identity(dim, dim) +
                              m.Lcal * rinv * smat.transpose();
    const Eigen::MatrixXd g = m.Lcal * rinv * m.Lcal.transpose();
    const Eigen::MatrixXd q = qmat + smat * rinv * smat.transpose() +
                              slack * Eigen::MatrixXd::Identity(dim, dim);
    auto p = solve_riccati(a, g, q);
    if (p && log_level() >= LogLevel::Debug) {
        const double res = (a.transpose() * *p + *p * a + *p * g * *p + q).norm();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> pes(*p, Eigen::EigenvaluesOnly);
        const Eigen::MatrixXd th1 =
            theta1_matrix(ctx.theorem, m, tails, *p, alpha, betas, gamma, ctx.delta);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tes(th1, Eigen::EigenvaluesOnly);
        klog(LogLevel::Debug,
             "riccati g=%.3g b=%.3g slack=%.3g: res=%.3g pmin=%.3g th1max=%.3g cornermin=%.3g",
             gamma, betas(0), slack, res, pes.eigenvalues().minCoeff(),
             tes.eigenvalues().maxCoeff(),
             Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(corner, Eigen::EigenvaluesOnly)
                 .eigenvalues()
                 .minCoeff());
    }
    return p;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const int rows = static_cast<int>(j.size());
    const int cols = rows > 0 ? static_cast<int>(j.at(0).size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
    return m;
}

} // namespace

int theorem_for_scheme(Scheme s) {
    switch (s) {
        case Scheme::DirichletActuation: return 1;
        case Scheme::SecondDerivActuation: return 2;
        case Scheme::TwoInputTwoOutput: return 3;
    }
    return 1;
}

double alpha_lower_bound(int theorem) { return theorem_coefficient(theorem) / kPi4; }

ReducedModel assemble_reduced_model(const SpectralPlant& plant, const GainSet& gains, int N) {
    const int n0 = plant.n0;
    if (N < n0 + 1) {
        std::ostringstream os;
        os << "observer order N = " << N << " must be at least N0 + 1 = " << (n0 + 1);
        throw OrderTooSmallError(os.str());
    }
    const int m = plant.inputs();
    const int p = plant.outputs();
    if (gains.K.rows() != m || gains.K.cols() != n0 || gains.L.rows() != n0 || gains.L.cols() != p)
        throw DimensionMismatchError("gain dimensions do not match the plant");

    ReducedModel out;
    out.N = N;
    out.N0 = n0;
    out.inputs = m;
    out.outputs = p;
    out.scheme = plant.params.scheme;
    out.lambda = plant.params.lambda;
    out.sigma_next = plant.sigma(N + 1);
    out.K = gains.K;
    out.L = gains.L;
    out.B0 = plant.b0();
    out.C0 = plant.c0();

    const int nr = N - n0;
    out.A1.resize(nr);
    out.Btilde1.resize(nr, m);
    out.Ctilde1.resize(p, nr);
    for (int j = 0; j < nr; ++j) {
        const int n = n0 + 1 + j;
        const double n2 = static_cast<double>(n) * n;
        out.A1(j) = plant.sigma(n);
        out.Btilde1.row(j) = plant.coefficients(n).beta.transpose() / (n2 * n2);
        out.Ctilde1.col(j) = plant.c(n) / n2;
    }

    const int iz = 0, ie = n0, izt = 2 * n0, iet = 2 * n0 + nr;
    const Eigen::MatrixXd a0 = plant.a0_diag().asDiagonal();
    out.F = Eigen::MatrixXd::Zero(2 * N, 2 * N);
    out.F.block(iz, iz, n0, n0) = a0 + out.B0 * out.K;
    out.F.block(iz, ie, n0, n0) = out.L * out.C0;
    out.F.block(iz, iet, n0, nr) = out.L * out.Ctilde1;
    out.F.block(ie, ie, n0, n0) = a0 - out.L * out.C0;
    out.F.block(ie, iet, n0, nr) = -out.L * out.Ctilde1;
    out.F.block(izt, iz, nr, n0) = out.Btilde1 * out.K;
    out.F.block(izt, izt, nr, nr) = out.A1.asDiagonal();
    out.F.block(iet, iet, nr, nr) = out.A1.asDiagonal();

    out.G = Eigen::MatrixXd::Zero(2 * N, N);
    out.G.block(ie, 0, n0, n0).setIdentity();
    out.G.block(iet, n0, nr, nr).setIdentity();

    out.Lcal = Eigen::MatrixXd::Zero(2 * N, p);
    out.Lcal.block(iz, 0, n0, p) = out.L;
    out.Lcal.block(ie, 0, n0, p) = -out.L;

    out.Ktilde = Eigen::MatrixXd::Zero(m, 2 * N);
    out.Ktilde.block(0, iz, m, n0) = out.K;

    Eigen::MatrixXd inner(n0, 2 * N + p);
    inner.setZero();
    inner.block(0, iz, n0, n0) = a0 + out.B0 * out.K;
    inner.block(0, ie, n0, n0) = out.L * out.C0;
    inner.block(0, iet, n0, nr) = out.L * out.Ctilde1;
    inner.block(0, 2 * N, n0, p) = out.L;
    out.E = out.K * inner;
    return out;
}

Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& a, const Eigen::MatrixXd& q) {
    const int n = static_cast<int>(a.rows());
    if (a.cols() != n || q.rows() != n || q.cols() != n)
        throw DimensionMismatchError("solve_lyapunov needs square matrices of equal size");
    using Cd = std::complex<double>;
    Eigen::ComplexSchur<Eigen::MatrixXcd> schur(a.cast<Cd>());
    if (schur.info() != Eigen::Success) throw std::runtime_error("Schur decomposition failed");
    const Eigen::MatrixXcd& u = schur.matrixU();
    const Eigen::MatrixXcd& t = schur.matrixT();
    const Eigen::MatrixXcd c = u.adjoint() * q.cast<Cd>() * u;
    Eigen::MatrixXcd y(n, n);
    const Eigen::MatrixXcd tadj = t.adjoint();
    for (int j = 0; j < n; ++j) {
        Eigen::VectorXcd rhs = -c.col(j);
        if (j > 0) rhs -= y.leftCols(j) * t.topRows(j).col(j);
        Eigen::MatrixXcd lower = tadj;
        lower.diagonal().array() += t(j, j);
        y.col(j) = lower.triangularView<Eigen::Lower>().solve(rhs);
    }
    Eigen::MatrixXd p = (u * y * u.adjoint()).real();
    p = 0.5 * (p + p.transpose());
    if (!p.allFinite()) throw std::runtime_error("Lyapunov equation is singular");
    return p;
}

Eigen::MatrixXd lyapunov_candidate(const Eigen::MatrixXd& f, double delta) {
    const double abscissa = spectral_abscissa(f);
    if (abscissa >= -delta) {
        std::ostringstream os;
        os << "F + " << delta << " I is not Hurwitz (spectral abscissa " << abscissa << ")";
        throw NotHurwitzError(os.str());
    }
    const int n = static_cast<int>(f.rows());
    Eigen::MatrixXd shifted = f + delta * Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd p = solve_lyapunov(shifted, Eigen::MatrixXd::Identity(n, n));
    const Eigen::MatrixXd residual = f.transpose() * p + p * f + 2.0 * delta * p +
                                     Eigen::MatrixXd::Identity(n, n);
    if (residual.norm() > 1e-8 * (1.0 + p.norm()))
        throw std::runtime_error("Lyapunov residual check failed");
    return p;
}

Eigen::MatrixXd theta1_matrix(int theorem, const ReducedModel& model, const TailNorms& tails,
                              const Eigen::MatrixXd& p, double alpha, const Eigen::VectorXd& betas,
                              double gamma, double delta) {
    const int dim = 2 * model.N;
    const int pout = model.outputs;
    if (p.rows() != dim || p.cols() != dim)
        throw DimensionMismatchError("P must be 2N x 2N");
    if (betas.size() != pout)
        throw DimensionMismatchError("need one beta per output channel");
    if ((theorem == 3) != (model.outputs == 2))
        throw DimensionMismatchError("theorem does not match the model's channel structure");

    Eigen::MatrixXd top = model.F.transpose() * p + p * model.F + 2.0 * delta * p;
    if (theorem == 2)
        top += alpha * gamma * tails.r_a(0) * model.Ktilde.row(0).transpose() * model.Ktilde.row(0);
    else if (theorem == 3)
        top += alpha * gamma * tails.r_a(1) * model.Ktilde.row(1).transpose() * model.Ktilde.row(1);

    Eigen::MatrixXd th = Eigen::MatrixXd::Zero(dim + pout, dim + pout);
    th.topLeftCorner(dim, dim) = top;
    const Eigen::MatrixXd pl = p * model.Lcal;
    th.topRightCorner(dim, pout) = pl;
    th.bottomLeftCorner(pout, dim) = pl.transpose();
    for (int c = 0; c < pout; ++c) th(dim + c, dim + c) = -betas(c);
    for (int c = 0; c < model.inputs; ++c)
        th += alpha * gamma * tails.r_b(c) * model.E.row(c).transpose() * model.E.row(c);
    return 0.5 * (th + th.transpose());
}

ConstraintMargins evaluate_constraints(int theorem, const ReducedModel& model,
                                       const TailNorms& tails, const Eigen::MatrixXd& p,
                                       double alpha, const Eigen::VectorXd& betas, double gamma,
                                       double delta) {
    if (tails.N != model.N) throw DimensionMismatchError("tail norms computed at a different N");
    if (betas.size() != model.outputs)
        throw DimensionMismatchError("need one beta per output channel");
    const double c_h = theorem_coefficient(theorem);
    if (!(alpha > c_h / kPi4)) throw std::invalid_argument("alpha is at or below the theorem bound");
    if (!(gamma > 0.0) || !(betas.minCoeff() > 0.0))
        throw std::invalid_argument("beta and gamma must be positive");

    ConstraintMargins out;
    const Eigen::MatrixXd th1 = theta1_matrix(theorem, model, tails, p, alpha, betas, gamma, delta);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> saes(th1, Eigen::EigenvaluesOnly);
    out.theta1_max_eig = saes.eigenvalues().maxCoeff();
    const double np1 = model.N + 1.0;
    out.theta2 = 2.0 * gamma * (model.sigma_next + delta + c_h * np1 * np1 * np1 * np1 / alpha) +
                 betas.sum() * tails.m_phi;
    out.theta3 = np1 * np1 * (kPi4 - c_h / alpha) - model.lambda * kPi2;
    return out;
}

CertifyResult certify(const SpectralPlant& plant, const GainSet& gains, double delta, int N,
                      const SearchConfig& search) {
    const ReducedModel model = assemble_reduced_model(plant, gains, N);
    const TailNorms tails = tail_norms(plant.params, N);
    const int theorem = theorem_for_scheme(plant.params.scheme);
    const double c_h = theorem_coefficient(theorem);
    const double bound = c_h / kPi4;
    EvalContext ctx{&model, &tails, theorem, delta, c_h};

    const double np1 = N + 1.0;
    const double theta3_slope = kPi4 - model.lambda * kPi2 / (np1 * np1);
    InfeasibleReport report;
    report.N = N;
    if (theta3_slope <= 0.0) {
        report.note = "Theta3 cannot be nonnegative at this N for any alpha";
        report.best_margins = {0.0, 0.0, theta3_slope * np1 * np1};
        return report;
    }
    const double sig_gap = -(model.sigma_next + delta);  // > 0 since N >= N0+1
    const double alpha_theta3 = c_h / theta3_slope;
    const double alpha_damping = c_h * np1 * np1 * np1 * np1 / sig_gap;
    double alpha_lo = std::max({bound * (1.0 + 1e-9), alpha_theta3, alpha_damping * (1.0 + 1e-6)});
    if (!(alpha_lo < search.alpha_max)) {
        report.note = "no admissible alpha below alpha_max";
        return report;
    }

    std::vector<double> alphas;
    const int pts = std::max(4, search.alpha_points);
    for (int i = 0; i < pts; ++i)
        alphas.push_back(alpha_lo * std::pow(search.alpha_max / alpha_lo,
                                             static_cast<double>(i) / (pts - 1)));
    for (double f : {1.25, 1.5, 2.0, 3.0}) alphas.push_back(alpha_lo * f);
    std::sort(alphas.begin(), alphas.end());

    const double abscissa = -spectral_abscissa(model.F);  // decay margin of F
    const double mphi = tails.m_phi;
    const int pout = model.outputs;

    SearchPoint best;
    std::map<double, SearchPoint> best_by_alpha;
    auto consider = [&](const Eigen::MatrixXd& p, double alpha, const Eigen::VectorXd& betas,
                        double gamma) {
        const ConstraintMargins mg = ctx.margins(p, alpha, betas, gamma);
        const double s_damp = model.sigma_next + delta + c_h * np1 * np1 * np1 * np1 / alpha;
        const double w2 = 1.0 / std::max(1.0, std::abs(s_damp) / N + std::sqrt(double(N)) * mphi);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> pes(p, Eigen::EigenvaluesOnly);
        const double pmin_scaled = pes.eigenvalues().minCoeff() / std::max(1.0, p.norm());
        const double merit = std::max({mg.theta1_max_eig + search.eps1,
                                       (mg.theta2 + search.eps2) * w2, -pmin_scaled});
        if (merit < best.merit) best = {p, alpha, betas, gamma, mg, merit};
        auto& slot = best_by_alpha[alpha];
        if (merit < slot.merit) slot = {p, alpha, betas, gamma, mg, merit};
        return merit;
    };

    // Stage 1: the proof's construction. Lyapunov candidates (optionally at a
    // boosted rate, optionally with the observer-error blocks down-weighted
    // in the right-hand side to shrink ||P Lcal||), scalar rescale,
    // beta/gamma seeded at sqrt(N), 1/N and refined by multiplicative
    // coordinate descent.
    const int n0 = plant.n0;
    auto error_weighted_rhs = [&](double q) {
        Eigen::VectorXd d = Eigen::VectorXd::Ones(2 * N);
        d.segment(n0, n0).setConstant(q);
        d.segment(2 * n0 + (N - n0), N - n0).setConstant(q);
        return Eigen::MatrixXd(d.asDiagonal());
    };
    std::vector<std::pair<double, double>> candidates;  // (rate boost, error weight)
    for (double boost : search.rate_boost) candidates.emplace_back(boost, 1.0);
    for (double q : {1e-2, 1e-4, 1e-6})
        for (double boost : {0.0, 0.8}) candidates.emplace_back(boost, q);

    for (const auto& [boost, eweight] : candidates) {
        const double rate = delta + boost * std::max(0.0, 0.999 * abscissa - delta);
        Eigen::MatrixXd p0;
        try {
            if (eweight == 1.0) {
                p0 = lyapunov_candidate(model.F, rate);
            } else {
                if (!(abscissa > rate)) continue;
                p0 = solve_lyapunov(model.F + rate * Eigen::MatrixXd::Identity(2 * N, 2 * N),
                                    error_weighted_rhs(eweight));
            }
        } catch (const NotHurwitzError&) {
            if (boost == 0.0) throw;  // delta itself fails: propagate
            continue;
        }
        for (double alpha : alphas) {
            const double s_damp = model.sigma_next + delta + c_h * np1 * np1 * np1 * np1 / alpha;
            if (!(s_damp < 0.0)) continue;
            for (double scale : search.scale_grid) {
                Eigen::VectorXd betas = Eigen::VectorXd::Constant(pout, std::sqrt(double(N)));
                double gamma = 1.0 / N;
                double cur = consider(scale * p0, alpha, betas, gamma);
                for (double factor : {8.0, 4.0, 2.0, 1.4, 1.15}) {
                    bool improved = true;
                    int guard = 0;
                    while (improved && guard++ < 12) {
                        improved = false;
                        for (int coord = 0; coord < pout + 1; ++coord) {
                            for (double dir : {factor, 1.0 / factor}) {
                                Eigen::VectorXd tb = betas;
                                double tg = gamma;
                                if (coord < pout)
                                    tb(coord) *= dir;
                                else
                                    tg *= dir;
                                const double m = consider(scale * p0, alpha, tb, tg);
                                if (m < cur - 1e-15) {
                                    cur = m;
                                    betas = tb;
                                    gamma = tg;
                                    improved = true;
                                }
                            }
                        }
                    }
                    if (cur < 0.0) break;
                }
                if (best.merit < 0.0) break;
            }
            if (best.merit < 0.0) break;
        }
        if (best.merit < 0.0) break;
    }

    // Stage 1.5: Riccati-constructed candidates. For fixed (alpha, beta,
    // gamma), Theta1 < 0 is a Riccati inequality in P after Schur
    // elimination of the measurement-residue corner; the stabilizing ARE
    // solution is an explicit candidate that the Lyapunov family cannot
    // always express.
    if (best.merit >= 0.0) {
        for (double alpha : alphas) {
            const double s_damp = model.sigma_next + delta + c_h * np1 * np1 * np1 * np1 / alpha;
            if (!(s_damp < 0.0)) continue;
            SearchPoint local;
            for (double gfac : {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0}) {
                const double gamma = gfac / N;
                const double bcap = -2.0 * gamma * s_damp / mphi;  // Theta2 < 0 needs sum(beta) < bcap
                if (!(bcap > 0.0)) continue;
                for (double bfac : {0.5, 0.15, 0.85}) {
                    const Eigen::VectorXd betas =
                        Eigen::VectorXd::Constant(pout, bcap * bfac / pout);
                    for (double slack : {1e-6, 1e-3, 1e-1, 1e1}) {
                        const auto p0 = riccati_candidate(ctx, alpha, betas, gamma, slack);
                        if (!p0) continue;
                        const double merit = consider(*p0, alpha, betas, gamma);
                        if (merit < local.merit) local = {*p0, alpha, betas, gamma, {}, merit};
                        if (best.merit < 0.0) break;
                    }
                    if (best.merit < 0.0) break;
                }
                if (best.merit < 0.0) break;
            }
            if (best.merit < 0.0) break;
            // multiplicative descent around the best ARE-solvable scalars
            if (local.P.size() > 0) {
                double cur = local.merit;
                Eigen::VectorXd betas = local.betas;
                double gamma = local.gamma;
                for (double factor : {4.0, 2.0, 1.4, 1.15}) {
                    bool improved = true;
                    int guard = 0;
                    while (improved && guard++ < 10) {
                        improved = false;
                        for (int coord = 0; coord < pout + 1; ++coord) {
                            for (double dir : {factor, 1.0 / factor}) {
                                Eigen::VectorXd tb = betas;
                                double tg = gamma;
                                if (coord < pout)
                                    tb(coord) *= dir;
                                else
                                    tg *= dir;
                                const auto p0 =
                                    riccati_candidate(ctx, alpha, tb, tg, 1e-6 * (1.0 + tg));
                                if (!p0) continue;
                                const double merit = consider(*p0, alpha, tb, tg);
                                if (merit < cur - 1e-15) {
                                    cur = merit;
                                    betas = tb;
                                    gamma = tg;
                                    improved = true;
                                }
                            }
                        }
                        if (cur < 0.0) break;
                    }
                    if (cur < 0.0) break;
                }
            }
            if (best.merit < 0.0) break;
        }
    }

    // Stage 2: if the explicit construction missed, run the convex
    // max-violation descent at a handful of alpha values, warm-started from
    // each alpha's best stage-1 candidate. For fixed alpha the constraints
    // are affine in (P, beta, gamma), so the descent is globally convergent
    // whenever the set has interior at that alpha.
    if (best.merit >= 0.0 && search.use_refiner && !best_by_alpha.empty()) {
        std::vector<const SearchPoint*> ranked;
        for (const auto& [alpha, point] : best_by_alpha)
            if (point.P.size() > 0) ranked.push_back(&point);
        std::sort(ranked.begin(), ranked.end(),
                  [](const SearchPoint* a, const SearchPoint* b) { return a->merit < b->merit; });
        // moderate alphas a small factor above the lower bound first (the
        // interior of the feasible set peaks there: the E-term stays small
        // while Theta2 already clears), then the merit-ranked leaders
        std::vector<const SearchPoint*> attempts;
        for (double factor : {2.5, 5.0, 1.5, 15.0, 60.0}) {
            const double want = alpha_lo * factor;
            const SearchPoint* closest = nullptr;
            double dist = std::numeric_limits<double>::infinity();
            for (const auto& [alpha, point] : best_by_alpha) {
                const double d = std::abs(std::log(alpha / want));
                if (point.P.size() > 0 && d < dist) {
                    dist = d;
                    closest = &point;
                }
            }
            if (closest) attempts.push_back(closest);
        }
        for (std::size_t i = 0; i < ranked.size() && i < 2; ++i) attempts.push_back(ranked[i]);
        std::vector<const SearchPoint*> unique_attempts;
        for (const SearchPoint* a : attempts) {
            bool seen = false;
            for (const SearchPoint* u : unique_attempts) seen |= (u == a);
            if (!seen) unique_attempts.push_back(a);
        }

        SearchConfig per_alpha = search;
        per_alpha.refiner_max_iters = std::max(
            12000, search.refiner_max_iters / std::max<int>(1, unique_attempts.size()));
        for (const SearchPoint* start : unique_attempts) {
            Eigen::MatrixXd p = start->P;
            Eigen::VectorXd betas = start->betas;
            double gamma = start->gamma;
            klog(LogLevel::Debug, "refine attempt at alpha=%.6g (stage-1 merit %.3g)",
                 start->alpha, start->merit);
            if (refine_subgradient(ctx, start->alpha, p, betas, gamma, per_alpha)) {
                consider(p, start->alpha, betas, gamma);
                break;
            }
        }
    }

    auto package = [&](SearchPoint pt) -> std::optional<Certificate> {
        if (pt.P.size() == 0) return std::nullopt;
        ConstraintMargins mg = ctx.margins(pt.P, pt.alpha, pt.betas, pt.gamma);
        if (!margins_ok(mg, search.eps1, search.eps2)) {
            if (!(mg.theta1_max_eig < 0.0 && mg.theta2 < 0.0 && mg.theta3 >= 0.0))
                return std::nullopt;
            const double scale = std::min(
                1e12, std::max({1.0, 10.0 * search.eps1 / -mg.theta1_max_eig,
                                10.0 * search.eps2 / -mg.theta2}));
            pt.P *= scale;
            pt.betas *= scale;
            pt.gamma *= scale;
            mg = ctx.margins(pt.P, pt.alpha, pt.betas, pt.gamma);
            if (!margins_ok(mg, search.eps1, search.eps2)) return std::nullopt;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> pes(pt.P, Eigen::EigenvaluesOnly);
        if (!(pes.eigenvalues().minCoeff() > 0.0)) return std::nullopt;
        Certificate cert;
        cert.theorem = theorem;
        cert.N = N;
        cert.N0 = plant.n0;
        cert.delta = delta;
        cert.alpha = pt.alpha;
        cert.betas = pt.betas;
        cert.gamma = pt.gamma;
        cert.P = pt.P;
        cert.margins = mg;
        cert.plant = plant.params;
        cert.K = gains.K;
        cert.L = gains.L;
        return cert;
    };

    if (auto cert = package(best)) return *cert;

    report.best_margins = best.margins;
    report.alpha = best.alpha;
    report.betas = best.betas;
    report.gamma = best.gamma;
    if (report.note.empty()) report.note = "constraint search exhausted without a feasible point";
    return report;
}

std::optional<int> min_feasible_N(const SpectralPlant& plant, const GainSet& gains, double delta,
                                  int n_max, const SearchConfig& search) {
    for (int n = plant.n0 + 1; n <= n_max; ++n) {
        const CertifyResult res = certify(plant, gains, delta, n, search);
        if (std::holds_alternative<Certificate>(res)) return n;
    }
    return std::nullopt;
}

bool verify_certificate(const Certificate& cert, ConstraintMargins* out, double eps1,
                        double eps2) {
    const SpectralPlant plant = make_spectral_plant(cert.plant, cert.delta);
    if (plant.n0 != cert.N0) return false;
    GainSet gains;
    gains.K = cert.K;
    gains.L = cert.L;
    gains.scheme = cert.plant.scheme;
    const ReducedModel model = assemble_reduced_model(plant, gains, cert.N);
    const TailNorms tails = tail_norms(cert.plant, cert.N);
    if (cert.theorem != theorem_for_scheme(cert.plant.scheme)) return false;
    if (!(cert.alpha > alpha_lower_bound(cert.theorem))) return false;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> pes(cert.P, Eigen::EigenvaluesOnly);
    if (!(pes.eigenvalues().minCoeff() > 0.0)) return false;
    const ConstraintMargins mg = evaluate_constraints(cert.theorem, model, tails, cert.P,
                                                      cert.alpha, cert.betas, cert.gamma,
                                                      cert.delta);
    if (out) *out = mg;
    return margins_ok(mg, eps1, eps2);
}

std::string certificate_to_json(const Certificate& cert) {
    nlohmann::json j;
    j["theorem"] = cert.theorem;
    j["N"] = cert.N;
    j["N0"] = cert.N0;
    j["delta"] = cert.delta;
    j["alpha"] = cert.alpha;
    j["betas"] = nlohmann::json::array();
    for (int i = 0; i < cert.betas.size(); ++i) j["betas"].push_back(cert.betas(i));
    j["gamma"] = cert.gamma;
    j["P"] = matrix_to_json(cert.P);
    j["margins"] = {{"theta1_max_eig", cert.margins.theta1_max_eig},
                    {"theta2", cert.margins.theta2},
                    {"theta3", cert.margins.theta3}};
    j["gains"] = {{"K", matrix_to_json(cert.K)}, {"L", matrix_to_json(cert.L)}};
    nlohmann::json plant;
    plant["lambda"] = cert.plant.lambda;
    plant["mu"] = cert.plant.mu;
    plant["scheme"] = scheme_name(cert.plant.scheme);
    if (cert.plant.xi)
        plant["xi"] = *cert.plant.xi;
    else
        plant["xi"] = nullptr;
    j["plant"] = plant;
    return j.dump(2);
}

Certificate certificate_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    Certificate cert;
    cert.theorem = j.at("theorem").get<int>();
    cert.N = j.at("N").get<int>();
    cert.N0 = j.at("N0").get<int>();
    cert.delta = j.at("delta").get<double>();
    cert.alpha = j.at("alpha").get<double>();
    const auto& betas = j.at("betas");
    cert.betas.resize(betas.size());
    for (std::size_t i = 0; i < betas.size(); ++i) cert.betas(i) = betas.at(i).get<double>();
    cert.gamma = j.at("gamma").get<double>();
    cert.P = matrix_from_json(j.at("P"));
    cert.margins.theta1_max_eig = j.at("margins").at("theta1_max_eig").get<double>();
    cert.margins.theta2 = j.at("margins").at("theta2").get<double>();
    cert.margins.theta3 = j.at("margins").at("theta3").get<double>();
    cert.K = matrix_from_json(j.at("gains").at("K"));
    cert.L = matrix_from_json(j.at("gains").at("L"));
    cert.plant.lambda = j.at("plant").at("lambda").get<double>();
    cert.plant.mu = j.at("plant").at("mu").get<double>();
    const auto scheme = scheme_from_name(j.at("plant").at("scheme").get<std::string>());
    if (!scheme) throw std::invalid_argument("unknown scheme in certificate");
    cert.plant.scheme = *scheme;
    if (!j.at("plant").at("xi").is_null()) cert.plant.xi = j.at("plant").at("xi").get<double>();
    return cert;
}

void save_certificate(const Certificate& cert, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << certificate_to_json(cert) << "\n";
}

Certificate load_certificate(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return certificate_from_json(buf.str());
}

} // namespace ksestab
