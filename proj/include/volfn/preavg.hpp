#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numeric>
#include <string>
#include <vector>

#include "error.hpp"
#include "grid.hpp"
#include "kernel.hpp"

namespace volfn {

enum class PreavgMethod { Auto, Direct, Fft };

// Above this many multiply-adds per column the FFT path is used.
inline constexpr double kFftSwitchover = 4194304.0;  // 2^22

inline void require_window(const IncrementSeries& incr, int l_n) {
    if (incr.count() < l_n - 1 || incr.count() < 1)
        throw SizeError("series of " + std::to_string(incr.count()) + " increments is shorter than window l_n=" +
                        std::to_string(l_n));
}

// Row r holds psi^{-1/2} sum_{h=1}^{l-1} phi_h * incr[r + h - 1].
inline Eigen::MatrixXd preaverage_direct(const IncrementSeries& incr, const DiscreteKernel& dk) {
    require_window(incr, dk.l_n);
    const Eigen::Index rows = incr.count() - dk.l_n + 2;
    const Eigen::Index d = incr.dim();
    const double norm = 1.0 / std::sqrt(dk.psi_n);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double* x = incr.values.col(j).data();
        double* y = out.col(j).data();
        for (Eigen::Index r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (std::size_t t = 0; t < dk.weights.size(); ++t) acc += dk.weights[t] * x[r + t];
            y[r] = acc * norm;
        }
    }
    return out;
}

inline Eigen::MatrixXd preaverage_fft(const IncrementSeries& incr, const DiscreteKernel& dk) {
    require_window(incr, dk.l_n);
    const Eigen::Index n = incr.count();
    const Eigen::Index rows = n - dk.l_n + 2;
    const Eigen::Index d = incr.dim();
    const std::size_t wlen = dk.weights.size();
    std::size_t size = 1;
    while (size < static_cast<std::size_t>(n) + wlen) size <<= 1;
    Eigen::FFT<double> fft;
    // Correlation with the weights is convolution with the reversed weights.
    std::vector<double> kern(size, 0.0);
    for (std::size_t t = 0; t < wlen; ++t) kern[t] = dk.weights[wlen - 1 - t];
    std::vector<std::complex<double>> kern_hat;
    fft.fwd(kern_hat, kern);
    const double norm = 1.0 / std::sqrt(dk.psi_n);
    Eigen::MatrixXd out(rows, d);
    std::vector<double> buf(size), conv;
    std::vector<std::complex<double>> spec;
    for (Eigen::Index j = 0; j < d; ++j) {
        std::fill(buf.begin(), buf.end(), 0.0);
        for (Eigen::Index i = 0; i < n; ++i) buf[i] = incr.values(i, j);
        fft.fwd(spec, buf);
        for (std::size_t f = 0; f < spec.size(); ++f) spec[f] *= kern_hat[f];
        fft.inv(conv, spec);
        for (Eigen::Index r = 0; r < rows; ++r) out(r, j) = conv[r + wlen - 1] * norm;
    }
    return out;
}

inline Eigen::MatrixXd preaverage(const IncrementSeries& incr, const DiscreteKernel& dk,
                                  PreavgMethod method = PreavgMethod::Auto) {
    if (method == PreavgMethod::Auto)
        method = static_cast<double>(incr.count()) * dk.l_n > kFftSwitchover ? PreavgMethod::Fft : PreavgMethod::Direct;
    return method == PreavgMethod::Fft ? preaverage_fft(incr, dk) : preaverage_direct(incr, dk);
}

// Row r holds (2 psi)^{-1} sum_{h=0}^{l-1} (phi_{h+1} - phi_h)^2 incr[r+h] incr[r+h]^T.
inline std::vector<Eigen::MatrixXd> noise_offset(const IncrementSeries& incr, const DiscreteKernel& dk) {
    if (incr.count() < dk.l_n)
        throw SizeError("series of " + std::to_string(incr.count()) + " increments is shorter than offset window " +
                        std::to_string(dk.l_n));
    const Eigen::Index rows = incr.count() - dk.l_n + 1;
    const Eigen::Index d = incr.dim();
    const double norm = 1.0 / (2.0 * dk.psi_n);
    std::vector<Eigen::MatrixXd> out(static_cast<std::size_t>(rows));
    for (Eigen::Index r = 0; r < rows; ++r) {
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
        for (int h = 0; h < dk.l_n; ++h) {
            const double w = dk.diff_weights[h] * dk.diff_weights[h];
            if (w == 0.0) continue;
            const auto x = incr.values.row(r + h).transpose();
            acc.noalias() += w * (x * x.transpose());
        }
        out[r] = norm * acc;
    }
    return out;
}

struct PreAveragedSeries {
    Eigen::MatrixXd ybar;
    std::vector<Eigen::MatrixXd> yhat;  // empty when offsets were not requested
    Eigen::Index base_index = 0;
};

inline PreAveragedSeries preaverage_series(const IncrementSeries& incr, const DiscreteKernel& dk,
                                           bool with_offsets = true, PreavgMethod method = PreavgMethod::Auto) {
    PreAveragedSeries out;
    out.ybar = preaverage(incr, dk, method);
    if (with_offsets) out.yhat = noise_offset(incr, dk);
    return out;
}

enum class TruncationMode { GlobalNorm, Elementwise, Off };

inline TruncationMode truncation_mode_from(const std::string& s) {
    if (s == "elementwise") return TruncationMode::Elementwise;
    if (s == "global" || s == "global-norm") return TruncationMode::GlobalNorm;
    if (s == "off" || s == "none") return TruncationMode::Off;
    throw ConfigError("unknown truncation mode '" + s + "' (elementwise, global-norm, off)");
}

inline const char* truncation_mode_name(TruncationMode m) {
    switch (m) {
    case TruncationMode::GlobalNorm: return "global-norm";
    case TruncationMode::Elementwise: return "elementwise";
    case TruncationMode::Off: return "off";
    }
    return "";
}

// Threshold nu_n = alpha * delta_n^rho, with alpha either one scale for the
// Euclidean norm or one scale per component.
struct TruncationSpec {
    TruncationMode mode = TruncationMode::Elementwise;
    double alpha_mult = 1.5;
    double rho = 0.47;
    std::vector<double> alpha;  // resolved scales
    std::vector<double> nu_n;   // resolved thresholds

    bool resolved() const { return mode == TruncationMode::Off || !nu_n.empty(); }
};

// Fills alpha and nu_n from per-asset variance levels sigma_bar (variance per day).
inline TruncationSpec threshold(const TruncationSpec& spec, double delta_n, const std::vector<double>& sigma_bar) {
    TruncationSpec out = spec;
    out.alpha.clear();
    out.nu_n.clear();
    if (spec.mode == TruncationMode::Off) return out;
    if (!(spec.alpha_mult > 0.0)) throw ConfigError("truncation alpha multiplier must be positive");
    if (sigma_bar.empty()) throw DataError("truncation needs per-asset variance levels");
    for (double s : sigma_bar)
        if (!(s > 0.0) || !std::isfinite(s)) throw DataError("truncation variance level must be positive, got " +
                                                             detail::format_double(s));
    const double scale = std::pow(delta_n, spec.rho);
    if (spec.mode == TruncationMode::GlobalNorm) {
        const double mean = std::accumulate(sigma_bar.begin(), sigma_bar.end(), 0.0) / sigma_bar.size();
        out.alpha = {spec.alpha_mult * mean * std::sqrt(static_cast<double>(sigma_bar.size()))};
    } else {
        for (double s : sigma_bar) out.alpha.push_back(spec.alpha_mult * s);
    }
    for (double a : out.alpha) out.nu_n.push_back(a * scale);
    return out;
}

inline TruncationSpec threshold(const LogPriceGrid& grid, const TruncationSpec& spec,
                                const std::vector<double>& sigma_bar) {
    return threshold(spec, grid.delta_n(), sigma_bar);
}

using TruncationMask = std::vector<char>;

inline TruncationMask truncate(const Eigen::MatrixXd& ybar, const TruncationSpec& spec) {
    TruncationMask keep(static_cast<std::size_t>(ybar.rows()), 1);
    if (spec.mode == TruncationMode::Off) return keep;
    if (!spec.resolved()) throw ConfigError("truncation thresholds have not been resolved");
    if (spec.mode == TruncationMode::GlobalNorm) {
        const double nu = spec.nu_n.front();
        for (Eigen::Index r = 0; r < ybar.rows(); ++r) keep[r] = ybar.row(r).norm() <= nu;
        return keep;
    }
    if (static_cast<Eigen::Index>(spec.nu_n.size()) != ybar.cols())
        throw ShapeError("elementwise truncation needs one threshold per component");
    for (Eigen::Index r = 0; r < ybar.rows(); ++r) {
        bool ok = true;
        for (Eigen::Index j = 0; j < ybar.cols() && ok; ++j) ok = std::abs(ybar(r, j)) <= spec.nu_n[j];
        keep[r] = ok;
    }
    return keep;
}

inline TruncationMask truncate(const PreAveragedSeries& pre, const TruncationSpec& spec) {
    return truncate(pre.ybar, spec);
}

}  // namespace volfn
