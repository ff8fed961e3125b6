#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "grid.hpp"
#include "kernel.hpp"
#include "parallel.hpp"
#include "preavg.hpp"

namespace volfn {

// Hat: rate-optimal plug-in with noise offsets. Tilde: PSD plug-in.
enum class EstimatorKind { Hat, Tilde };

inline const char* kind_name(EstimatorKind k) { return k == EstimatorKind::Hat ? "hat" : "tilde"; }

struct TuningPlan {
    EstimatorKind mode = EstimatorKind::Hat;
    double theta = 1.0;
    double theta_prime = std::numeric_limits<double>::quiet_NaN();  // NaN means "same as theta"
    double varrho = 1.0;
    double kappa = 0.69;
    double rho = 0.47;
    double delta = 0.0;
    double nu_jump = 0.0;
    bool relaxed = false;
};

// Integer windows derived from a tuning plan at a given spacing.
struct WindowPlan {
    EstimatorKind kind = EstimatorKind::Hat;
    int l_n = 0;
    int k_n = 0;
    int m_n = 0;
    double theta = 1.0;
    double delta = 0.0;
    double delta_n = 0.0;
    TuningPlan tuning;
    std::vector<std::string> warnings;

    // Spot estimator normalizer (k_n - l_n) * delta_n.
    double spot_normalizer() const { return static_cast<double>(k_n - l_n) * delta_n; }
    // Scale entering the confidence intervals: delta_n^{1/2} or delta_n^{1/2 - delta}.
    double rate_scale() const {
        return kind == EstimatorKind::Hat ? std::sqrt(delta_n) : std::pow(delta_n, 0.5 - delta);
    }
};

namespace detail {

inline int floor_count(double x) {
    // Guard exact powers such as 10000^{1/2} evaluating just below an integer.
    return static_cast<int>(std::floor(x * (1.0 + 1e-12)));
}

struct RangeCheck {
    std::vector<std::string>* warnings;
    void operator()(const char* name, double value, double lo, bool lo_closed, double hi, const std::string& rule) const {
        const bool ok_lo = lo_closed ? value >= lo : value > lo;
        const bool ok_hi = value < hi;
        if (!ok_lo || !ok_hi) {
            std::ostringstream os;
            os << name << "=" << value << " violates " << rule << " (admissible " << (lo_closed ? "[" : "(") << lo
               << ", " << hi << "))";
            throw TuningError(os.str());
        }
        const double margin = 0.05 * (hi - lo);
        if (value - lo < margin || hi - value < margin) {
            std::ostringstream os;
            os << name << "=" << value << " lies within 5% of the boundary of " << rule;
            warnings->push_back(os.str());
        }
    }
};

}  // namespace detail

inline WindowPlan validate_tuning(const TuningPlan& plan, double delta_n) {
    if (!(delta_n > 0.0 && delta_n < 1.0)) throw TuningError("delta_n must lie in (0, 1)");
    if (!(plan.theta > 0.0)) throw TuningError("theta must be positive");
    if (!(plan.varrho > 0.0)) throw TuningError("varrho must be positive");
    const double theta_prime = std::isnan(plan.theta_prime) ? plan.theta : plan.theta_prime;
    if (!(theta_prime > 0.0)) throw TuningError("theta_prime must be positive");
    const double nu = plan.nu_jump;
    if (!(nu >= 0.0 && nu < 1.0)) throw TuningError("jump activity index nu must lie in [0, 1)");

    WindowPlan w;
    w.kind = plan.mode;
    w.theta = plan.theta;
    w.delta_n = delta_n;
    w.tuning = plan;
    w.tuning.theta_prime = theta_prime;
    detail::RangeCheck check{&w.warnings};

    if (plan.mode == EstimatorKind::Hat) {
        if (plan.delta != 0.0) throw TuningError("delta applies to the PSD plan only");
        if (plan.relaxed) {
            check("kappa", plan.kappa, 2.0 / 3.0, false, 0.75, "2/3 < kappa < 3/4 (relaxed range)");
            check("rho", plan.rho, 0.25 + 1.0 / (4.0 * (2.0 - nu)), true, 0.5,
                  "1/4 + 1/(4(2-nu)) <= rho < 1/2 (relaxed range)");
        } else {
            check("kappa", plan.kappa, std::max(2.0 / 3.0, (2.0 + nu) / 4.0), false, 0.75,
                  "max(2/3, (2+nu)/4) < kappa < 3/4 (rate-optimal range)");
            check("rho", plan.rho, 0.25 + (1.0 - plan.kappa) / (2.0 - nu), true, 0.5,
                  "1/4 + (1-kappa)/(2-nu) <= rho < 1/2 (rate-optimal range)");
        }
        w.delta = 0.0;
        w.l_n = detail::floor_count(plan.theta * std::pow(delta_n, -0.5));
    } else {
        const double dl = plan.delta;
        check("delta", dl, 0.1, false, 0.5, "1/10 < delta < 1/2 (PSD range)");
        check("kappa", plan.kappa, std::max(2.0 / 3.0 + 2.0 * dl / 3.0, (2.0 + nu) / 4.0 + (2.0 - nu) * dl / 2.0),
              false, 0.75 + dl / 2.0,
              "max(2/3 + 2delta/3, (2+nu)/4 + (2-nu)delta/2) < kappa < 3/4 + delta/2 (PSD range)");
        check("rho", plan.rho, 0.25 + dl / 2.0 + (1.0 - plan.kappa) / (2.0 - nu), true, 0.5,
              "1/4 + delta/2 + (1-kappa)/(2-nu) <= rho < 1/2 (PSD range)");
        w.delta = dl;
        w.l_n = detail::floor_count(plan.theta * std::pow(delta_n, -0.5 - dl));
    }
    w.k_n = detail::floor_count(plan.varrho * std::pow(delta_n, -plan.kappa));
    w.m_n = detail::floor_count(theta_prime * std::pow(delta_n, -0.5));
    if (w.l_n < 2) throw TuningError("l_n = " + std::to_string(w.l_n) + " < 2; increase theta");
    if (w.k_n <= w.l_n)
        throw TuningError("k_n = " + std::to_string(w.k_n) + " must exceed l_n = " + std::to_string(w.l_n));
    if (w.m_n < 1) throw TuningError("m_n must be >= 1; increase theta_prime");
    return w;
}

// Window plan with explicit integer windows, bypassing the rate conditions.
inline WindowPlan explicit_windows(EstimatorKind kind, int l_n, int k_n, int m_n, double delta_n, double theta = 1.0,
                                   double delta = 0.0) {
    if (l_n < 2) throw TuningError("l_n must be >= 2");
    if (k_n <= l_n) throw TuningError("k_n must exceed l_n");
    if (m_n < 1) throw TuningError("m_n must be >= 1");
    WindowPlan w;
    w.kind = kind;
    w.l_n = l_n;
    w.k_n = k_n;
    w.m_n = m_n;
    w.theta = theta;
    w.delta = delta;
    w.delta_n = delta_n;
    w.tuning.mode = kind;
    w.tuning.theta = theta;
    w.tuning.delta = delta;
    return w;
}

inline void require_symmetric(const Eigen::MatrixXd& m, double tol = 1e-10) {
    if (m.rows() != m.cols()) throw ShapeError("matrix is not square");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * scale) throw ShapeError("matrix is not symmetric");
}

inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

inline Eigen::MatrixXd psd_project(const Eigen::MatrixXd& m) {
    require_symmetric(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(m));
    if (es.eigenvalues().minCoeff() >= 0.0) return symmetrized(m);
    const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    return symmetrized(es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose());
}

// Raises eigenvalues below rel * trace to that level.
inline Eigen::MatrixXd floor_eigenvalues(const Eigen::MatrixXd& c, double rel) {
    const double tr = c.trace();
    if (!(tr > 0.0)) throw DomainError("spot matrix has nonpositive trace; functional domain cannot be restored");
    const double eps = rel * tr;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(c));
    if (es.eigenvalues().minCoeff() >= eps) return c;
    const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(eps);
    return symmetrized(es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose());
}

inline void require_window_fits(Eigen::Index start, Eigen::Index span, Eigen::Index available, const char* what) {
    if (start < 0 || start + span > available)
        throw SizeError(std::string(what) + " window [" + std::to_string(start) + ", " + std::to_string(start + span) +
                        ") overruns " + std::to_string(available) + " rows");
}

inline Eigen::MatrixXd spot_tilde(const PreAveragedSeries& pre, const TruncationMask& mask, Eigen::Index i,
                                  const WindowPlan& plan) {
    const Eigen::Index span = plan.k_n - plan.l_n + 1;
    require_window_fits(i, span, pre.ybar.rows(), "spot");
    const Eigen::Index d = pre.ybar.cols();
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index r = i; r < i + span; ++r) {
        if (!mask[r]) continue;
        const auto y = pre.ybar.row(r).transpose();
        acc.noalias() += y * y.transpose();
    }
    return acc / plan.spot_normalizer();
}

inline Eigen::MatrixXd spot_hat(const PreAveragedSeries& pre, const TruncationMask& mask, Eigen::Index i,
                                const WindowPlan& plan) {
    const Eigen::Index span = plan.k_n - plan.l_n + 1;
    require_window_fits(i, span, static_cast<Eigen::Index>(pre.yhat.size()), "spot offset");
    Eigen::MatrixXd c = spot_tilde(pre, mask, i, plan);
    Eigen::MatrixXd off = Eigen::MatrixXd::Zero(c.rows(), c.cols());
    for (Eigen::Index r = i; r < i + span; ++r) off += pre.yhat[r];
    return c - off / plan.spot_normalizer();
}

inline Eigen::MatrixXd noise_cov(const IncrementSeries& incr, Eigen::Index i, const WindowPlan& plan) {
    require_window_fits(i, plan.m_n, incr.count(), "noise covariance");
    const auto block = incr.values.middleRows(i, plan.m_n);
    return (block.transpose() * block) / (2.0 * plan.m_n);
}

struct SpotOptions {
    bool renormalize_kept = false;
    int threads = 1;
    PreavgMethod method = PreavgMethod::Auto;
};

struct SpotVolSeries {
    EstimatorKind kind = EstimatorKind::Hat;
    std::vector<Eigen::MatrixXd> c_mats;
    std::vector<Eigen::MatrixXd> gamma_mats;
    std::vector<Eigen::Index> starts;
    std::vector<int> kept;  // kept pre-averages per window
    int N_t = 0;
    double a_t = 1.0;
    double horizon = 0.0;
    int k_n = 0;
    int l_n = 0;
    double delta_n = 0.0;
    double veto_fraction = 0.0;
};

// Spot matrices on disjoint windows starting at 0, k_n, 2 k_n, ...
inline SpotVolSeries spot_series(const IncrementSeries& incr, const WindowPlan& plan, const KernelProfile& profile,
                                 const TruncationSpec& trunc, const SpotOptions& opt = {}) {
    const Eigen::Index n = incr.count();
    if (n < plan.k_n)
        throw SizeError("series has " + std::to_string(n) + " increments, fewer than k_n = " + std::to_string(plan.k_n));
    const DiscreteKernel dk = discretize(profile, plan.l_n);
    const Eigen::MatrixXd ybar = preaverage(incr, dk, opt.method);
    const TruncationMask mask = truncate(ybar, trunc);

    SpotVolSeries s;
    s.kind = plan.kind;
    s.N_t = static_cast<int>(n / plan.k_n);
    s.a_t = static_cast<double>(n) / (static_cast<double>(s.N_t) * plan.k_n);
    s.horizon = incr.horizon();
    s.k_n = plan.k_n;
    s.l_n = plan.l_n;
    s.delta_n = plan.delta_n;
    s.c_mats.resize(s.N_t);
    s.gamma_mats.resize(s.N_t);
    s.starts.resize(s.N_t);
    s.kept.resize(s.N_t);

    // Offset weight of increment t inside a window: sum of squared kernel
    // differences over the pre-averages that contain it.
    const int span = plan.k_n - plan.l_n + 1;
    std::vector<double> dw2_prefix(plan.l_n + 1, 0.0);
    for (int h = 0; h < plan.l_n; ++h) dw2_prefix[h + 1] = dw2_prefix[h] + dk.diff_weights[h] * dk.diff_weights[h];
    std::vector<double> offset_weight(plan.k_n, 0.0);
    for (int t = 0; t < plan.k_n; ++t) {
        const int lo = std::max(0, t - span + 1);
        const int hi = std::min(plan.l_n - 1, t);
        offset_weight[t] = hi >= lo ? dw2_prefix[hi + 1] - dw2_prefix[lo] : 0.0;
    }
    const double offset_norm = 1.0 / (2.0 * dk.psi_n);
    const Eigen::Index d = incr.dim();
    const bool hat = plan.kind == EstimatorKind::Hat;

    parallel_for(static_cast<std::size_t>(s.N_t), opt.threads, [&](std::size_t w) {
        const Eigen::Index start = static_cast<Eigen::Index>(w) * plan.k_n;
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
        int kept = 0;
        for (Eigen::Index r = start; r < start + span; ++r) {
            if (!mask[r]) continue;
            ++kept;
            const auto y = ybar.row(r).transpose();
            acc.noalias() += y * y.transpose();
        }
        if (opt.renormalize_kept && kept > 0) acc *= static_cast<double>(span) / kept;
        Eigen::MatrixXd c = acc / plan.spot_normalizer();
        if (hat) {
            Eigen::MatrixXd off = Eigen::MatrixXd::Zero(d, d);
            for (int t = 0; t < plan.k_n; ++t) {
                const auto x = incr.values.row(start + t).transpose();
                off.noalias() += offset_weight[t] * (x * x.transpose());
            }
            c -= offset_norm * off / plan.spot_normalizer();
        }
        const auto block = incr.values.middleRows(start, plan.m_n);
        s.c_mats[w] = symmetrized(c);
        s.gamma_mats[w] = symmetrized(block.transpose() * block) / (2.0 * plan.m_n);
        s.starts[w] = start;
        s.kept[w] = kept;
    });
    long total_kept = 0;
    for (int k : s.kept) total_kept += k;
    s.veto_fraction = 1.0 - static_cast<double>(total_kept) / (static_cast<double>(s.N_t) * span);
    return s;
}

inline SpotVolSeries spot_series(const LogPriceGrid& grid, const WindowPlan& plan, const KernelProfile& profile,
                                 const TruncationSpec& trunc, const SpotOptions& opt = {}) {
    return spot_series(increments(grid), plan, profile, trunc, opt);
}

}  // namespace volfn
