#include "ksestab/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

namespace ksestab {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSqrt2 = std::numbers::sqrt2;

double phi1(double x) {
    if (x == 0.0) return 1.0;
    return std::expm1(x) / x;
}

double phi2(double x) {
    if (std::abs(x) < 0.1) {
        // Taylor: Σ x^k/(k+2)!, truncation below 1e-16 at |x| = 0.1
        double acc = 0.0;
        double term = 0.5;  // 1/(k+2)! starting at k = 0
        double xp = 1.0;
        for (int k = 0; k <= 9; ++k) {
            acc += term * xp;
            xp *= x;
            term /= static_cast<double>(k + 3);
        }
        return acc;
    }
    return (std::expm1(x) - x) / (x * x);
}

int effective_grid(int modes, bool dealias, int grid) {
    if (!dealias) return modes + 1;
    const int padded = (3 * modes) / 2 + 1;
    return std::max(grid > 0 ? grid : 2 * modes, padded);
}

} // namespace

NonlinearTerm::NonlinearTerm(const PlantParams& params, int modes, bool dealias, int grid)
    : mu_(params.mu), modes_(modes), grid_(effective_grid(modes, dealias, grid)) {
    const auto lifts = lifting_polynomials(params);
    inputs_ = static_cast<int>(lifts.size());

    lift_coeff_.resize(modes_, inputs_);
    for (int n = 1; n <= modes_; ++n)
        for (int c = 0; c < inputs_; ++c)
            lift_coeff_(n - 1, c) = kSqrt2 * sine_moment(lifts[c], n);

    const int ng = grid_;
    sin_synth_.resize(ng - 1, modes_);
    cos_analysis_.resize(modes_, ng - 1);
    for (int j = 1; j < ng; ++j) {
        const double x = static_cast<double>(j) / ng;
        for (int n = 1; n <= modes_; ++n) {
            sin_synth_(j - 1, n - 1) = kSqrt2 * std::sin(n * kPi * x);
            // r_n^(grid) = μ nπ/√2 · γ_n with γ_n = (2/ng) Σ_j q_j cos(nπx_j)
            cos_analysis_(n - 1, j - 1) = (n * kPi / kSqrt2) * (2.0 / ng) * std::cos(n * kPi * x);
        }
    }

    cross_.resize(inputs_);
    for (int c = 0; c < inputs_; ++c) {
        cross_[c].resize(modes_, modes_);
        for (int n = 1; n <= modes_; ++n)
            for (int m = 1; m <= modes_; ++m)
                cross_[c](n - 1, m - 1) =
                    n * kPi * (sine_moment(lifts[c], m + n) + sine_moment(lifts[c], m - n));
    }
    for (int c = 0; c < inputs_; ++c)
        for (int cc = c; cc < inputs_; ++cc) {
            const Polynomial prod = lifts[c] * lifts[cc];
            Eigen::VectorXd v(modes_);
            for (int n = 1; n <= modes_; ++n)
                v(n - 1) = (n * kPi / kSqrt2) * cosine_moment(prod, n);
            quad_.push_back(v);
            quad_pairs_.emplace_back(c, cc);
        }
}

Eigen::VectorXd NonlinearTerm::operator()(const Eigen::VectorXd& z_modes,
                                          const Eigen::VectorXd& u) const {
    if (z_modes.size() != modes_ || u.size() != inputs_)
        throw std::invalid_argument("nonlinear term: dimension mismatch");
    if (mu_ == 0.0) return Eigen::VectorXd::Zero(modes_);

    const Eigen::VectorXd w = z_modes + lift_coeff_ * u;
    const Eigen::VectorXd wgrid = sin_synth_ * w;
    const Eigen::VectorXd q = 0.5 * wgrid.array().square().matrix();
    Eigen::VectorXd r = mu_ * (cos_analysis_ * q);

    for (int c = 0; c < inputs_; ++c)
        if (u(c) != 0.0) r.noalias() -= mu_ * u(c) * (cross_[c] * w);
    for (std::size_t k = 0; k < quad_.size(); ++k) {
        const auto [c, cc] = quad_pairs_[k];
        const double factor = (c == cc ? 1.0 : 2.0) * u(c) * u(cc);
        if (factor != 0.0) r.noalias() += mu_ * factor * quad_[k];
    }
    return r;
}

Eigen::VectorXd nonlinear_term(const Eigen::VectorXd& z_modes, const Eigen::VectorXd& u,
                               const PlantParams& params, const SimConfig& config) {
    NonlinearTerm nl(params, static_cast<int>(z_modes.size()), config.dealias, config.grid);
    return nl(z_modes, u);
}

NormTriple h2_norm(const Eigen::VectorXd& z_modes, const Eigen::VectorXd& u,
                   const PlantParams& params) {
    const auto lifts = lifting_polynomials(params);
    const int m = static_cast<int>(lifts.size());
    if (u.size() != m) throw std::invalid_argument("h2_norm: one input value per channel required");
    const int modes = static_cast<int>(z_modes.size());

    Polynomial q;  // z = w_modal + q with q = -Σ_c b_c u_c
    for (int c = 0; c < m; ++c) q = q + lifts[c].scaled(-u(c));
    const Polynomial qd = q.derivative();
    const Polynomial qdd = qd.derivative();

    double s0 = 0.0, s1 = 0.0, s2 = 0.0, x0 = 0.0, x1 = 0.0, x2 = 0.0;
    for (int n = 1; n <= modes; ++n) {
        double wn = z_modes(n - 1);
        for (int c = 0; c < m; ++c) wn += kSqrt2 * sine_moment(lifts[c], n) * u(c);
        const double n2p2 = static_cast<double>(n) * n * kPi * kPi;
        s0 += wn * wn;
        s1 += n2p2 * wn * wn;
        s2 += n2p2 * n2p2 * wn * wn;
        if (!q.is_zero()) {
            x0 += wn * kSqrt2 * sine_moment(q, n);
            x1 += wn * kSqrt2 * n * kPi * cosine_moment(qd, n);
            x2 += wn * (-n2p2) * kSqrt2 * sine_moment(qdd, n);
        }
    }
    const double l2sq = s0 + 2.0 * x0 + (q * q).integral01();
    const double h1sq = l2sq + s1 + 2.0 * x1 + (qd * qd).integral01();
    const double h2sq = h1sq + s2 + 2.0 * x2 + (qdd * qdd).integral01();
    NormTriple out;
    out.l2 = std::sqrt(std::max(l2sq, 0.0));
    out.h1 = std::sqrt(std::max(h1sq, 0.0));
    out.h2 = std::sqrt(std::max(h2sq, 0.0));
    return out;
}

ClosedLoopStepper::ClosedLoopStepper(const SpectralPlant& plant, const GainSet& gains,
                                     int observer_order, const SimConfig& config)
    : params_(plant.params),
      modes_(config.modes),
      order_(observer_order),
      n0_(plant.n0),
      inputs_(plant.inputs()),
      outputs_(plant.outputs()),
      K_(gains.K),
      L_(gains.L),
      nl_(plant.params, config.modes, config.dealias, config.grid),
      guard_(config.blowup_guard),
      tol_(config.step_error_tol),
      max_halvings_(config.max_halvings) {
    if (order_ < n0_) throw std::invalid_argument("observer order below the unstable count");
    if (modes_ < 2 * order_)
        throw std::invalid_argument("plant truncation must satisfy M >= 2N");
    if (K_.rows() != inputs_ || K_.cols() != n0_ || L_.rows() != n0_ || L_.cols() != outputs_)
        throw std::invalid_argument("gain dimensions do not match the plant");

    sigma_z_.resize(modes_);
    beta_z_.resize(modes_, inputs_);
    lift_z_.resize(modes_, inputs_);
    c_z_.resize(outputs_, modes_);
    for (int n = 1; n <= modes_; ++n) {
        sigma_z_(n - 1) = plant.sigma(n);
        const auto ic = plant.coefficients(n);
        beta_z_.row(n - 1) = ic.beta.transpose();
        lift_z_.row(n - 1) = ic.b.transpose();
        c_z_.col(n - 1) = plant.c(n);
    }
    sigma_h_ = sigma_z_.head(order_);
    beta_h_ = beta_z_.topRows(order_);
    lift_h_ = lift_z_.topRows(order_);
    c_h_ = c_z_.leftCols(order_);

    const auto lifts = lifting_polynomials(params_);
    const auto sensors = sensor_locations(params_);
    out_correction_.resize(outputs_, inputs_);
    for (int s = 0; s < outputs_; ++s)
        for (int c = 0; c < inputs_; ++c)
            out_correction_(s, c) = lifts[c].derivative()(sensors[s]);

    z_ = Eigen::VectorXd::Zero(modes_);
    zhat_ = Eigen::VectorXd::Zero(order_);
}

void ClosedLoopStepper::set_state(const Eigen::VectorXd& z, const Eigen::VectorXd& zhat,
                                  double t) {
    if (z.size() != modes_ || zhat.size() != order_)
        throw std::invalid_argument("state dimensions do not match the stepper");
    z_ = z;
    zhat_ = zhat;
    t_ = t;
}

Eigen::VectorXd ClosedLoopStepper::control_input() const { return K_ * zhat_.head(n0_); }

Eigen::VectorXd ClosedLoopStepper::w_modes() const {
    return z_ + lift_z_ * control_input();
}

Eigen::VectorXd ClosedLoopStepper::homogeneous_output() const { return c_z_ * w_modes(); }

Eigen::VectorXd ClosedLoopStepper::measurement() const {
    return homogeneous_output() - out_correction_ * control_input();
}

double ClosedLoopStepper::wellposed_monitor() const {
    const Eigen::VectorXd w = w_modes();
    double acc = 0.0;
    for (int n = 1; n <= modes_; ++n) {
        const double n2 = static_cast<double>(n) * n;
        acc += n2 * n2 * w(n - 1) * w(n - 1);
    }
    return acc;
}

void ClosedLoopStepper::rhs(const Eigen::VectorXd& z, const Eigen::VectorXd& zhat,
                            Eigen::VectorXd& fz, Eigen::VectorXd& fh) const {
    const Eigen::VectorXd u = K_ * zhat.head(n0_);
    const Eigen::VectorXd w = z + lift_z_ * u;
    const Eigen::VectorXd what = zhat + lift_h_ * u;
    const Eigen::VectorXd ytilde = c_z_ * w;
    const Eigen::VectorXd innovation = c_h_ * what - ytilde;
    fz = beta_z_ * u + nl_(z, u);
    fh = beta_h_ * u;
    fh.head(n0_) -= L_ * innovation;
}

const ClosedLoopStepper::PhiTable& ClosedLoopStepper::table_for(double dt) {
    for (const auto& t : tables_)
        if (t.dt == dt) return t;
    PhiTable t;
    t.dt = dt;
    auto fill = [dt](const Eigen::VectorXd& sigma, Eigen::ArrayXd& e, Eigen::ArrayXd& p1,
                     Eigen::ArrayXd& p2) {
        const int n = static_cast<int>(sigma.size());
        e.resize(n);
        p1.resize(n);
        p2.resize(n);
        for (int i = 0; i < n; ++i) {
            const double x = sigma(i) * dt;
            e(i) = std::exp(x);
            p1(i) = dt * phi1(x);
            p2(i) = dt * phi2(x);
        }
    };
    fill(sigma_z_, t.exp_z, t.phi1dt_z, t.phi2dt_z);
    fill(sigma_h_, t.exp_h, t.phi1dt_h, t.phi2dt_h);
    tables_.push_back(std::move(t));
    return tables_.back();
}

void ClosedLoopStepper::check_guard() const {
    const bool bad = !z_.allFinite() || !zhat_.allFinite() ||
                     z_.lpNorm<Eigen::Infinity>() > guard_ ||
                     zhat_.lpNorm<Eigen::Infinity>() > guard_ || wellposed_monitor() > guard_;
    if (bad) throw BlowUpError(t_);
}

void ClosedLoopStepper::advance(double dt, int depth) {
    const PhiTable& tab = table_for(dt);
    Eigen::VectorXd fz0(modes_), fh0(order_), fz1(modes_), fh1(order_);
    rhs(z_, zhat_, fz0, fh0);
    const Eigen::VectorXd az = (tab.exp_z * z_.array() + tab.phi1dt_z * fz0.array()).matrix();
    const Eigen::VectorXd ah = (tab.exp_h * zhat_.array() + tab.phi1dt_h * fh0.array()).matrix();
    rhs(az, ah, fz1, fh1);
    const Eigen::VectorXd cz = (tab.phi2dt_z * (fz1 - fz0).array()).matrix();
    const Eigen::VectorXd ch = (tab.phi2dt_h * (fh1 - fh0).array()).matrix();

    const double scale = std::max(1.0, std::max(az.lpNorm<Eigen::Infinity>(),
                                                ah.lpNorm<Eigen::Infinity>()));
    const double est = std::max(cz.lpNorm<Eigen::Infinity>(), ch.lpNorm<Eigen::Infinity>()) / scale;
    if (est > tol_ && depth < max_halvings_) {
        advance(0.5 * dt, depth + 1);
        advance(0.5 * dt, depth + 1);
        return;
    }
    z_ = az + cz;
    zhat_ = ah + ch;
    t_ += dt;
    check_guard();
}

void ClosedLoopStepper::step(double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    advance(dt, 0);
}

Trajectory simulate(const SpectralPlant& plant, const GainSet& gains, const Certificate* cert,
                    const Eigen::VectorXd& z0_modes, const SimConfig& config) {
    SimConfig cfg = config;
    if (cfg.observer_order == 0) {
        if (!cert) throw std::invalid_argument("observer order missing: set it or pass a certificate");
        cfg.observer_order = cert->N;
    }
    if (cert && cert->N != cfg.observer_order)
        throw std::invalid_argument("certificate order differs from the configured observer order");
    if (z0_modes.size() != cfg.modes)
        throw std::invalid_argument("initial condition must provide one coefficient per mode");

    ClosedLoopStepper stepper(plant, gains, cfg.observer_order, cfg);
    stepper.set_state(z0_modes, Eigen::VectorXd::Zero(cfg.observer_order), 0.0);

    const int nsteps = std::max(1, static_cast<int>(std::ceil(cfg.horizon / cfg.dt - 1e-12)));
    const int nrec = nsteps + 1;
    const int m = plant.inputs(), p = plant.outputs();
    const int n0 = plant.n0, N = cfg.observer_order, M = cfg.modes;

    Trajectory traj;
    traj.times.resize(nrec);
    traj.z_modes.resize(M, nrec);
    traj.controller_state.resize(N, nrec);
    traj.u.resize(m, nrec);
    traj.y.resize(p, nrec);
    traj.l2.resize(nrec);
    traj.h1.resize(nrec);
    traj.h2.resize(nrec);
    traj.wellposed.resize(nrec);
    if (cert) traj.V.resize(nrec);

    auto record = [&](int k) {
        traj.times(k) = stepper.time();
        traj.z_modes.col(k) = stepper.z();
        traj.controller_state.col(k) = stepper.zhat();
        const Eigen::VectorXd u = stepper.control_input();
        traj.u.col(k) = u;
        traj.y.col(k) = stepper.measurement();
        const NormTriple norms = h2_norm(stepper.z(), u, plant.params);
        traj.l2(k) = norms.l2;
        traj.h1(k) = norms.h1;
        traj.h2(k) = norms.h2;
        traj.wellposed(k) = stepper.wellposed_monitor();
        if (cert) {
            Eigen::VectorXd x(2 * N);
            const Eigen::VectorXd w = stepper.w_modes();
            const Eigen::VectorXd& z = stepper.z();
            const Eigen::VectorXd& zh = stepper.zhat();
            for (int n = 1; n <= n0; ++n) {
                x(n - 1) = zh(n - 1);
                x(n0 + n - 1) = z(n - 1) - zh(n - 1);
            }
            for (int n = n0 + 1; n <= N; ++n) {
                const double n2 = static_cast<double>(n) * n;
                x(n0 + n - 1) = zh(n - 1) / (n2 * n2);
                x(N + n - 1) = n2 * (z(n - 1) - zh(n - 1));
            }
            double tail = 0.0;
            for (int n = N + 1; n <= M; ++n) {
                const double n2 = static_cast<double>(n) * n;
                tail += n2 * n2 * w(n - 1) * w(n - 1);
            }
            traj.V(k) = x.dot(cert->P * x) + cert->gamma * tail;
        }
    };

    record(0);
    int recorded = 1;
    for (int k = 0; k < nsteps; ++k) {
        const double remaining = cfg.horizon - stepper.time();
        const double dt = std::min(cfg.dt, remaining);
        if (dt <= 0.0) break;
        try {
            stepper.step(dt);
        } catch (const BlowUpError& e) {
            traj.blew_up = true;
            traj.blowup_time = e.time;
            break;
        }
        record(recorded);
        ++recorded;
    }
    if (recorded < nrec) {
        traj.times.conservativeResize(recorded);
        traj.z_modes.conservativeResize(Eigen::NoChange, recorded);
        traj.controller_state.conservativeResize(Eigen::NoChange, recorded);
        traj.u.conservativeResize(Eigen::NoChange, recorded);
        traj.y.conservativeResize(Eigen::NoChange, recorded);
        traj.l2.conservativeResize(recorded);
        traj.h1.conservativeResize(recorded);
        traj.h2.conservativeResize(recorded);
        traj.wellposed.conservativeResize(recorded);
        if (cert) traj.V.conservativeResize(recorded);
    }
    return traj;
}

double decay_rate_fit(const Eigen::VectorXd& times, const Eigen::VectorXd& values, double t_min,
                      double t_max) {
    if (times.size() != values.size()) throw std::invalid_argument("times/values size mismatch");
    if (times.size() < 10) throw std::invalid_argument("need at least 10 samples");
    double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
    int n = 0;
    for (int i = 0; i < times.size(); ++i) {
        if (times(i) < t_min || times(i) > t_max) continue;
        if (!(values(i) > 0.0))
            throw NonPositiveValuesError("decay fit needs positive values in the window");
        const double y = std::log(values(i));
        st += times(i);
        sy += y;
        stt += times(i) * times(i);
        sty += times(i) * y;
        ++n;
    }
    if (n < 2) throw std::invalid_argument("fit window contains fewer than 2 samples");
    const double det = n * stt - st * st;
    if (det == 0.0) throw std::invalid_argument("degenerate fit window");
    const double slope = (n * sty - st * sy) / det;
    return -slope;
}

double decay_rate_fit(const Eigen::VectorXd& times, const Eigen::VectorXd& values) {
    if (times.size() < 2) throw std::invalid_argument("need at least 10 samples");
    const double t0 = times(0);
    const double t1 = times(times.size() - 1);
    return decay_rate_fit(times, values, t0 + 0.1 * (t1 - t0), t1);
}

Eigen::VectorXd sample_initial_modes(int modes, double h2_target, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd z(modes);
    for (int n = 1; n <= modes; ++n) z(n - 1) = gauss(rng) / std::pow(double(n), 5.0);
    double h2sq = 0.0;
    for (int n = 1; n <= modes; ++n) {
        const double n2p2 = static_cast<double>(n) * n * kPi * kPi;
        h2sq += (1.0 + n2p2 + n2p2 * n2p2) * z(n - 1) * z(n - 1);
    }
    if (h2sq > 0.0) z *= h2_target / std::sqrt(h2sq);
    return z;
}

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    const int m = static_cast<int>(traj.u.rows());
    const int p = static_cast<int>(traj.y.rows());
    os << "t,l2,h1,h2,wellposed_monitor,V";
    for (int c = 1; c <= m; ++c) os << ",u_" << c;
    for (int c = 1; c <= p; ++c) os << ",y_" << c;
    os << "\n";
    char buf[32];
    auto emit = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf;
    };
    for (int k = 0; k < traj.times.size(); ++k) {
        emit(traj.times(k));
        for (double v : {traj.l2(k), traj.h1(k), traj.h2(k), traj.wellposed(k)}) {
            os << ",";
            emit(v);
        }
        os << ",";
        emit(traj.V.size() > 0 ? traj.V(k) : std::numeric_limits<double>::quiet_NaN());
        for (int c = 0; c < m; ++c) {
            os << ",";
            emit(traj.u(c, k));
        }
        for (int c = 0; c < p; ++c) {
            os << ",";
            emit(traj.y(c, k));
        }
        os << "\n";
    }
}

void write_modal_csv(const Trajectory& traj, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    const int mz = static_cast<int>(traj.z_modes.rows());
    const int mh = static_cast<int>(traj.controller_state.rows());
    os << "t";
    for (int n = 1; n <= mz; ++n) os << ",z_" << n;
    for (int n = 1; n <= mh; ++n) os << ",zhat_" << n;
    os << "\n";
    char buf[32];
    auto emit = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf;
    };
    for (int k = 0; k < traj.times.size(); ++k) {
        emit(traj.times(k));
        for (int n = 0; n < mz; ++n) {
            os << ",";
            emit(traj.z_modes(n, k));
        }
        for (int n = 0; n < mh; ++n) {
            os << ",";
            emit(traj.controller_state(n, k));
        }
        os << "\n";
    }
}

} // namespace ksestab
