#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "error.hpp"
#include "functional.hpp"
#include "kernel.hpp"
#include "parallel.hpp"
#include "preavg.hpp"
#include "spot.hpp"

namespace volfn {

struct BiasTensors {
    Tensor4 Sigma, Theta, Upsilon, Xi;
};

inline Tensor4 sigma_tensor(const Eigen::MatrixXd& x, double theta, const KernelConstants& kc) {
    const Eigen::Index d = x.rows();
    const double a = 2.0 * theta * kc.Phi00 / (kc.phi0_at_0 * kc.phi0_at_0);
    Tensor4 t(d * d, d * d);
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index k = 0; k < d; ++k)
            for (Eigen::Index l = 0; l < d; ++l)
                for (Eigen::Index m = 0; m < d; ++m)
                    t(pair_index(j, k, d), pair_index(l, m, d)) = a * (x(j, l) * x(k, m) + x(j, m) * x(k, l));
    return t;
}

inline BiasTensors tensors(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, double theta, const KernelConstants& kc) {
    if (x.rows() != x.cols() || z.rows() != z.cols() || x.rows() != z.rows())
        throw ShapeError("tensor inputs must be square matrices of equal size");
    const Eigen::Index d = x.rows();
    const double phi0sq = kc.phi0_at_0 * kc.phi0_at_0;
    const double b = 2.0 * kc.Phi01 / (theta * phi0sq);
    const double c = 2.0 * kc.Phi11 / (theta * theta * theta * phi0sq);
    BiasTensors out;
    out.Sigma = sigma_tensor(x, theta, kc);
    out.Theta.resize(d * d, d * d);
    out.Upsilon.resize(d * d, d * d);
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index k = 0; k < d; ++k)
            for (Eigen::Index l = 0; l < d; ++l)
                for (Eigen::Index m = 0; m < d; ++m) {
                    const auto row = pair_index(j, k, d), col = pair_index(l, m, d);
                    out.Theta(row, col) =
                        b * (x(j, l) * z(k, m) + x(j, m) * z(k, l) + x(k, m) * z(j, l) + x(k, l) * z(j, m));
                    out.Upsilon(row, col) = c * (z(j, l) * z(k, m) + z(j, m) * z(k, l));
                }
    out.Xi = out.Sigma + out.Theta + out.Upsilon;
    return out;
}

namespace detail {

inline Eigen::VectorXd contract_hessians(const std::vector<Tensor4>& h, const Tensor4& t) {
    Eigen::VectorXd out(h.size());
    for (std::size_t p = 0; p < h.size(); ++p) out(p) = contract(h[p], t);
    return out;
}

// sum_{jklm} dg_p(jk) dg_q(lm) T(jk, lm)
inline Eigen::MatrixXd quadratic_form(const std::vector<Eigen::MatrixXd>& g, const Tensor4& t) {
    const auto r = static_cast<Eigen::Index>(g.size());
    const Eigen::Index dd = t.rows();
    Eigen::MatrixXd G(dd, r);
    for (Eigen::Index p = 0; p < r; ++p) G.col(p) = Eigen::Map<const Eigen::VectorXd>(g[p].data(), dd);
    return G.transpose() * t * G;
}

}  // namespace detail

inline Eigen::VectorXd bias_hat(const MatrixFunctional& g, const Eigen::MatrixXd& c_hat, const Eigen::MatrixXd& gamma_hat,
                                const WindowPlan& plan, const KernelConstants& kc) {
    const auto t = tensors(c_hat, gamma_hat, plan.theta, kc);
    return detail::contract_hessians(g.hessian(c_hat), t.Xi) / (2.0 * plan.k_n * std::sqrt(plan.delta_n));
}

inline Eigen::VectorXd bias_tilde(const MatrixFunctional& g, const Eigen::MatrixXd& c_tilde, const WindowPlan& plan,
                                  const KernelConstants& kc) {
    const Tensor4 s = sigma_tensor(c_tilde, plan.theta, kc);
    return detail::contract_hessians(g.hessian(c_tilde), s) /
           (2.0 * plan.k_n * std::pow(plan.delta_n, 0.5 + plan.delta));
}

inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("quantile level must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

// Rows are components; columns are (lower, upper).
inline Eigen::MatrixXd confidence_interval(const Eigen::VectorXd& value, const Eigen::MatrixXd& avar, double rate_scale,
                                           double level) {
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
    const double z = normal_quantile(0.5 * (1.0 + level));
    Eigen::MatrixXd ci(value.size(), 2);
    for (Eigen::Index j = 0; j < value.size(); ++j) {
        if (avar(j, j) < 0.0)
            throw NumericError("asymptotic variance of component " + std::to_string(j + 1) +
                               " is negative; the rate-optimal plug-in is not PSD here, try the PSD estimator (--psd)");
        const double half = z * std::sqrt(rate_scale * avar(j, j));
        ci(j, 0) = value(j) - half;
        ci(j, 1) = value(j) + half;
    }
    return ci;
}

struct EstimateOptions {
    bool bias_correction = true;
    double ci_level = 0.95;
    int threads = 1;
    // Relative eigenvalue floor for functionals with a domain guard; negative
    // means use the functional's own guard.
    double floor_rel = -1.0;
};

struct FunctionalEstimate {
    std::string functional;
    std::vector<std::string> output_names;
    EstimatorKind kind = EstimatorKind::Hat;
    Eigen::VectorXd value;
    Eigen::VectorXd uncorrected;  // Riemann sum without bias terms
    Eigen::MatrixXd avar;
    double rate_scale = 0.0;
    double ci_level = 0.95;
    Eigen::MatrixXd ci;
    WindowPlan plan;
    long n = 0;  // increments used
    double delta_n = 0.0;
    double horizon = 0.0;
    int N_t = 0;
    double a_t = 1.0;
    int floored_windows = 0;
    double veto_fraction = 0.0;
    std::vector<std::string> warnings;

    Eigen::VectorXd standard_error() const { return (rate_scale * avar.diagonal().array()).sqrt(); }
};

struct WindowTerms {
    Eigen::VectorXd value, bias;
    Eigen::MatrixXd avar;
    bool floored = false;
};

inline WindowTerms window_terms(const MatrixFunctional& g, const Eigen::MatrixXd& c, const Eigen::MatrixXd& gamma,
                                const WindowPlan& plan, const KernelConstants& kc, double floor_rel) {
    WindowTerms w;
    Eigen::MatrixXd x = c;
    if (floor_rel > 0.0) {
        x = floor_eigenvalues(c, floor_rel);
        w.floored = !(x.array() == c.array()).all();
    }
    w.value = g.value(x);
    const auto grad = g.gradient(x);
    const auto hess = g.hessian(x);
    const double k = plan.k_n;
    if (plan.kind == EstimatorKind::Hat) {
        const auto t = tensors(x, gamma, plan.theta, kc);
        w.bias = detail::contract_hessians(hess, t.Xi) / (2.0 * k * std::sqrt(plan.delta_n));
        w.avar = detail::quadratic_form(grad, t.Xi);
    } else {
        const Tensor4 s = sigma_tensor(x, plan.theta, kc);
        w.bias = detail::contract_hessians(hess, s) / (2.0 * k * std::pow(plan.delta_n, 0.5 + plan.delta));
        w.avar = detail::quadratic_form(grad, s);
    }
    return w;
}

// V = k_n delta_n sum_i grad' Xi grad over the windows of a spot series.
inline Eigen::MatrixXd avar(const SpotVolSeries& spot, const MatrixFunctional& g, const WindowPlan& plan,
                            const KernelConstants& kc, double floor_rel = -1.0, int threads = 1) {
    if (spot.kind != plan.kind) throw ConfigError("spot series kind does not match the plan");
    const double fr = floor_rel < 0.0 ? g.domain_guard : floor_rel;
    std::vector<Eigen::MatrixXd> parts(spot.c_mats.size());
    parallel_for(parts.size(), threads, [&](std::size_t i) {
        parts[i] = window_terms(g, spot.c_mats[i], spot.gamma_mats[i], plan, kc, fr).avar;
    });
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(parts.empty() ? 0 : parts[0].rows(), parts.empty() ? 0 : parts[0].cols());
    for (const auto& p : parts) v += p;
    v *= plan.k_n * plan.delta_n;
    return symmetrized(v);
}

inline FunctionalEstimate estimate_from_spot(const SpotVolSeries& spot, const MatrixFunctional& g,
                                             const WindowPlan& plan, const KernelConstants& kc,
                                             const EstimateOptions& opt = {}) {
    if (spot.kind != plan.kind) throw ConfigError("spot series kind does not match the plan");
    if (spot.N_t == 0) throw EstimationError("no complete estimation window in the sample");
    bool any_kept = false;
    for (int k : spot.kept) any_kept = any_kept || k > 0;
    if (!any_kept) throw EstimationError("every pre-averaged increment was vetoed by jump truncation");
    if (!spot.c_mats.empty()) g.check_dim(spot.c_mats[0].rows());
    const double fr = opt.floor_rel < 0.0 ? g.domain_guard : opt.floor_rel;

    std::vector<WindowTerms> terms(spot.c_mats.size());
    parallel_for(terms.size(), opt.threads, [&](std::size_t i) {
        terms[i] = window_terms(g, spot.c_mats[i], spot.gamma_mats[i], plan, kc, fr);
    });

    FunctionalEstimate est;
    est.functional = g.name;
    est.kind = plan.kind;
    est.plan = plan;
    est.delta_n = plan.delta_n;
    est.horizon = spot.horizon;
    est.n = std::lround(spot.horizon / plan.delta_n);
    est.N_t = spot.N_t;
    est.a_t = spot.a_t;
    est.veto_fraction = spot.veto_fraction;
    est.ci_level = opt.ci_level;
    est.warnings = plan.warnings;
    const Eigen::Index r = terms[0].value.size();
    est.output_names = g.output_names;
    if (static_cast<Eigen::Index>(est.output_names.size()) != r) {
        est.output_names.clear();
        for (Eigen::Index p = 0; p < r; ++p) est.output_names.push_back(g.name + "[" + std::to_string(p + 1) + "]");
    }
    Eigen::VectorXd sum_g = Eigen::VectorXd::Zero(r), sum_b = Eigen::VectorXd::Zero(r);
    Eigen::MatrixXd sum_v = Eigen::MatrixXd::Zero(r, r);
    for (const auto& t : terms) {
        sum_g += t.value;
        sum_b += t.bias;
        sum_v += t.avar;
        est.floored_windows += t.floored ? 1 : 0;
    }
    const double kd = plan.k_n * plan.delta_n;
    est.uncorrected = kd * sum_g * spot.a_t;
    est.value = opt.bias_correction ? Eigen::VectorXd(kd * (sum_g - sum_b) * spot.a_t) : est.uncorrected;
    Eigen::MatrixXd v = kd * sum_v;
    if ((v - v.transpose()).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, v.cwiseAbs().maxCoeff()))
        est.warnings.push_back("asymptotic variance was asymmetric beyond 1e-8 before symmetrization");
    est.avar = symmetrized(v);
    if (est.floored_windows > 0)
        est.warnings.push_back(std::to_string(est.floored_windows) + " spot matrices were eigenvalue-floored");
    est.rate_scale = plan.rate_scale();
    est.ci = confidence_interval(est.value, est.avar, est.rate_scale, opt.ci_level);
    return est;
}

struct PipelineConfig {
    KernelProfile profile = minmax_kernel();
    TruncationSpec truncation;  // resolved or Off
    SpotOptions spot;
    EstimateOptions estimate;
};

inline FunctionalEstimate estimate(const IncrementSeries& incr, const MatrixFunctional& g, const WindowPlan& plan,
                                   const KernelConstants& kc, const PipelineConfig& cfg) {
    if (incr.count() < plan.k_n)
        throw EstimationError("sample of " + std::to_string(incr.count()) +
                              " increments holds no complete window of k_n = " + std::to_string(plan.k_n));
    SpotOptions so = cfg.spot;
    so.threads = cfg.estimate.threads;
    const SpotVolSeries spot = spot_series(incr, plan, cfg.profile, cfg.truncation, so);
    return estimate_from_spot(spot, g, plan, kc, cfg.estimate);
}

inline FunctionalEstimate estimate(const LogPriceGrid& grid, const MatrixFunctional& g, const WindowPlan& plan,
                                   const KernelConstants& kc, const PipelineConfig& cfg) {
    return estimate(increments(grid), g, plan, kc, cfg);
}

}  // namespace volfn
