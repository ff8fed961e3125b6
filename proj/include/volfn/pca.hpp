#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "error.hpp"
#include "estimate.hpp"
#include "functional.hpp"
#include "parallel.hpp"
#include "spot.hpp"

namespace volfn {

struct PcaOptions {
    double gap_rel = 1e-6;          // gap tolerance relative to the trace
    double exclusion_budget = 0.05;  // largest tolerated share of excluded windows
    bool bias_correction = true;
    double ci_level = 0.95;
    int threads = 1;
};

struct WindowSpectrum {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
    bool included = true;
};

struct RealizedEigenvalues {
    Eigen::VectorXd value;
    Eigen::VectorXd uncorrected;
    Eigen::MatrixXd avar;
    Eigen::MatrixXd ci;
    double rate_scale = 0.0;
    int excluded = 0;
    int windows = 0;
};

struct RealizedEigenvector {
    int index = 0;
    Eigen::VectorXd value;
    Eigen::VectorXd uncorrected;
    Eigen::MatrixXd avar;
    Eigen::MatrixXd ci;
    double rate_scale = 0.0;
    int excluded = 0;
    int windows = 0;
};

namespace detail {

inline void require_psd_series(const SpotVolSeries& spot) {
    if (spot.kind != EstimatorKind::Tilde) throw ConfigError("realized PCA needs the PSD (tilde) spot series");
    if (spot.c_mats.empty()) throw EstimationError("spot series is empty");
}

inline std::vector<WindowSpectrum> window_spectra(const SpotVolSeries& spot, int threads) {
    std::vector<WindowSpectrum> out(spot.c_mats.size());
    parallel_for(out.size(), threads, [&](std::size_t i) {
        const Spectrum s = eig_sorted(spot.c_mats[i]);
        out[i].values = s.values;
        out[i].vectors = s.vectors;
    });
    return out;
}

inline void enforce_budget(int excluded, int windows, double budget, const std::string& what) {
    if (excluded > budget * windows)
        throw DegeneracyError(what + ": " + std::to_string(excluded) + " of " + std::to_string(windows) +
                              " windows fail the eigen-gap test, above the " +
                              std::to_string(static_cast<int>(std::lround(budget * 100))) + "% budget");
}

// 2 theta Phi00 / phi0(0)^2
inline double sigma_constant(const WindowPlan& plan, const KernelConstants& kc) {
    return 2.0 * plan.theta * kc.Phi00 / (kc.phi0_at_0 * kc.phi0_at_0);
}

}  // namespace detail

inline std::vector<WindowSpectrum> spectra(const SpotVolSeries& spot, int threads = 1) {
    return detail::window_spectra(spot, threads);
}

inline RealizedEigenvalues realized_eigenvalues(const SpotVolSeries& spot, const ClusterSpec& cl, const WindowPlan& plan,
                                                const KernelConstants& kc, const PcaOptions& opt = {}) {
    detail::require_psd_series(spot);
    const Eigen::Index d = spot.c_mats[0].rows();
    cl.check(d);
    auto spec = detail::window_spectra(spot, opt.threads);
    const int K = cl.count();
    const double a = detail::sigma_constant(plan, kc);
    const double corr_scale = a / (plan.k_n * std::pow(plan.delta_n, 0.5 + plan.delta));
    RealizedEigenvalues out;
    out.windows = static_cast<int>(spec.size());
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(K), raw = Eigen::VectorXd::Zero(K), sq = Eigen::VectorXd::Zero(K);
    for (auto& w : spec) {
        const double tol = opt.gap_rel * w.values.cwiseAbs().sum();
        Spectrum s{w.values, w.vectors};
        if (K > 1 && !(min_cluster_gap(s, cl) > tol)) {
            w.included = false;
            ++out.excluded;
            continue;
        }
        for (int k = 0; k < K; ++k) {
            const double mean = w.values.segment(cl.first(k), cl.size(k)).mean();
            double corr = 0.0;
            for (Eigen::Index v = 0; v < d; ++v) {
                if (v >= cl.first(k) && v < cl.last(k)) continue;
                corr += w.values(v) / (mean - w.values(v));
            }
            const double factor = opt.bias_correction ? 1.0 - corr_scale * corr : 1.0;
            sum(k) += factor * mean;
            raw(k) += mean;
            sq(k) += mean * mean;
        }
    }
    detail::enforce_budget(out.excluded, out.windows, opt.exclusion_budget, "realized eigenvalues");
    const int used = out.windows - out.excluded;
    if (used == 0) throw EstimationError("no window passed the eigen-gap test");
    // Excluded windows are replaced by the average of the included ones.
    const double kd = plan.k_n * plan.delta_n * spot.a_t * out.windows / used;
    out.value = kd * sum;
    out.uncorrected = kd * raw;
    out.avar = Eigen::MatrixXd::Zero(K, K);
    for (int k = 0; k < K; ++k) out.avar(k, k) = 2.0 * a / cl.size(k) * plan.k_n * plan.delta_n * sq(k) * out.windows / used;
    out.rate_scale = plan.rate_scale();
    out.ci = confidence_interval(out.value, out.avar, out.rate_scale, opt.ci_level);
    return out;
}

inline RealizedEigenvector realized_eigenvector(const SpotVolSeries& spot, int index, const WindowPlan& plan,
                                                const KernelConstants& kc, const PcaOptions& opt = {}) {
    detail::require_psd_series(spot);
    const Eigen::Index d = spot.c_mats[0].rows();
    if (index < 0 || index >= d) throw ConfigError("eigenvector index outside 1..d");
    auto spec = detail::window_spectra(spot, opt.threads);
    const double a = detail::sigma_constant(plan, kc);
    const double corr_scale = 0.5 * a / (plan.k_n * std::pow(plan.delta_n, 0.5 + plan.delta));
    RealizedEigenvector out;
    out.index = index;
    out.windows = static_cast<int>(spec.size());
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), raw = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd var = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd prev;
    for (auto& w : spec) {
        const double tol = opt.gap_rel * w.values.cwiseAbs().sum();
        Spectrum s{w.values, w.vectors};
        if (!(eigen_gap(s, index) > tol)) {
            w.included = false;
            ++out.excluded;
            continue;
        }
        Eigen::VectorXd q = w.vectors.col(index);
        if (prev.size() > 0 && q.dot(prev) < 0.0) q = -q;
        prev = q;
        const double lk = w.values(index);
        double corr = 0.0;
        Eigen::MatrixXd v = Eigen::MatrixXd::Zero(d, d);
        for (Eigen::Index u = 0; u < d; ++u) {
            if (u == index) continue;
            const double ratio = lk * w.values(u) / ((lk - w.values(u)) * (lk - w.values(u)));
            corr += ratio;
            v += ratio * w.vectors.col(u) * w.vectors.col(u).transpose();
        }
        const double factor = opt.bias_correction ? 1.0 + corr_scale * corr : 1.0;
        sum += factor * q;
        raw += q;
        var += v;
    }
    detail::enforce_budget(out.excluded, out.windows, opt.exclusion_budget, "realized eigenvector");
    const int used = out.windows - out.excluded;
    if (used == 0) throw EstimationError("no window passed the eigen-gap test");
    const double kd = plan.k_n * plan.delta_n * spot.a_t * out.windows / used;
    out.value = kd * sum;
    out.uncorrected = kd * raw;
    out.avar = symmetrized(a * plan.k_n * plan.delta_n * var * out.windows / used);
    out.rate_scale = plan.rate_scale();
    out.ci = confidence_interval(out.value, out.avar, out.rate_scale, opt.ci_level);
    return out;
}

}  // namespace volfn
