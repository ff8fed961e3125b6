#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "error.hpp"
#include "grid.hpp"

namespace volfn {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Independent stream for replication `rep` under a master seed.
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t rep) {
    return splitmix64(splitmix64(master) ^ splitmix64(rep + 0x632BE59BD9B4E019ULL));
}

using Rng = std::mt19937_64;

inline double laplace_draw(Rng& rng, double scale) {
    std::exponential_distribution<double> ex(1.0);
    std::bernoulli_distribution coin(0.5);
    const double m = scale * ex(rng);
    return coin(rng) ? m : -m;
}

// Scalar stochastic-volatility model with leverage, price and volatility
// jumps and additive Gaussian noise. Rates are per trading day.
struct ScalarModelParams {
    double drift = 0.03;
    double kappa = 6.0;
    double theta = 0.16;
    double xi = 0.5;
    double rho = -0.6;
    double c0 = 0.16;
    double noise_sd = 0.005;
    double jump_mean = -0.01;
    double jump_sd = 0.02;
    double jump_intensity = 36.0;
    double vol_jump_log_mean = -5.0;
    double vol_jump_log_var = 0.8;
    double vol_jump_intensity = 12.0;
    double floor = 1e-10;

    ScalarModelParams without_jumps() const {
        ScalarModelParams p = *this;
        p.jump_intensity = 0.0;
        p.vol_jump_intensity = 0.0;
        return p;
    }
};

// Random inputs of the scalar Euler scheme, one entry per fine step.
struct ScalarDrivers {
    double dt = 0.0;
    Eigen::VectorXd dB;          // volatility Brownian increments
    Eigen::VectorXd dW_perp;     // price Brownian increments orthogonal to dB
    Eigen::VectorXd price_jump;  // 0 when no jump
    Eigen::VectorXd vol_jump;    // J^c, 0 when no jump
};

inline ScalarDrivers draw_scalar_drivers(const ScalarModelParams& p, double dt, long steps, Rng& rng) {
    ScalarDrivers d;
    d.dt = dt;
    d.dB.resize(steps);
    d.dW_perp.resize(steps);
    d.price_jump = Eigen::VectorXd::Zero(steps);
    d.vol_jump = Eigen::VectorXd::Zero(steps);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double sq = std::sqrt(dt);
    const double pj = p.jump_intensity * dt, pv = p.vol_jump_intensity * dt;
    for (long i = 0; i < steps; ++i) {
        d.dB(i) = sq * z(rng);
        d.dW_perp(i) = sq * z(rng);
        const double u1 = u(rng), u2 = u(rng);
        const double jz = z(rng), vz = z(rng);
        if (u1 < pj) d.price_jump(i) = p.jump_mean + p.jump_sd * jz;
        if (u2 < pv) d.vol_jump(i) = std::exp(p.vol_jump_log_mean + std::sqrt(p.vol_jump_log_var) * vz);
    }
    return d;
}

// Pairs consecutive steps; Brownian increments add, jumps add.
inline ScalarDrivers coarsen(const ScalarDrivers& f) {
    const long n = f.dB.size() / 2;
    ScalarDrivers c;
    c.dt = 2.0 * f.dt;
    c.dB.resize(n);
    c.dW_perp.resize(n);
    c.price_jump.resize(n);
    c.vol_jump.resize(n);
    for (long i = 0; i < n; ++i) {
        c.dB(i) = f.dB(2 * i) + f.dB(2 * i + 1);
        c.dW_perp(i) = f.dW_perp(2 * i) + f.dW_perp(2 * i + 1);
        c.price_jump(i) = f.price_jump(2 * i) + f.price_jump(2 * i + 1);
        c.vol_jump(i) = f.vol_jump(2 * i) + f.vol_jump(2 * i + 1);
    }
    return c;
}

struct ScalarLatent {
    double dt = 0.0;
    Eigen::VectorXd c;  // spot variance at each step start, plus the end point
    Eigen::VectorXd x;  // efficient log-price on the same points
    long floor_hits = 0;
};

// Full-truncation Euler scheme: drift and diffusion use max(c, floor).
inline ScalarLatent euler_scalar(const ScalarModelParams& p, const ScalarDrivers& d, double x0 = 0.0) {
    const long n = d.dB.size();
    ScalarLatent out;
    out.dt = d.dt;
    out.c.resize(n + 1);
    out.x.resize(n + 1);
    out.c(0) = p.c0;
    out.x(0) = x0;
    const double rperp = std::sqrt(1.0 - p.rho * p.rho);
    for (long i = 0; i < n; ++i) {
        const double c = std::max(out.c(i), p.floor);
        const double sc = std::sqrt(c);
        const double dW = p.rho * d.dB(i) + rperp * d.dW_perp(i);
        out.x(i + 1) = out.x(i) + p.drift * d.dt + sc * dW + d.price_jump(i);
        double next = c + p.kappa * (p.theta - c) * d.dt + p.xi * sc * d.dB(i) + sc * d.vol_jump(i);
        if (next < p.floor) {
            next = p.floor;
            ++out.floor_hits;
        }
        out.c(i + 1) = next;
    }
    return out;
}

struct ScalarPath {
    LogPriceGrid grid;
    ScalarLatent latent;  // on the fine grid
    int substeps = 1;
    Eigen::VectorXd noise;
};

inline long observation_count(double days, double delta_n) {
    return std::lround(days / delta_n);
}

inline ScalarPath simulate_scalar(const ScalarModelParams& p, double delta_n, double days, std::uint64_t seed,
                                  int substeps = 1) {
    if (!(delta_n > 0.0)) throw ConfigError("delta_n must be positive");
    if (!(days > 0.0)) throw ConfigError("days must be positive");
    if (substeps < 1) throw ConfigError("substeps must be >= 1");
    const long n = observation_count(days, delta_n);
    if (n < 2) throw ConfigError("simulation horizon holds fewer than 2 increments");
    Rng rng(seed);
    const ScalarDrivers drivers = draw_scalar_drivers(p, delta_n / substeps, n * substeps, rng);
    ScalarLatent lat = euler_scalar(p, drivers);
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::VectorXd noise(n + 1);
    for (long i = 0; i <= n; ++i) noise(i) = p.noise_sd * z(rng);
    Eigen::MatrixXd y(n + 1, 1);
    for (long i = 0; i <= n; ++i) y(i, 0) = lat.x(i * substeps) + noise(i);
    return {LogPriceGrid(std::move(y), delta_n, {"y"}), std::move(lat), substeps, std::move(noise)};
}

// Left-point Riemann sum of f(c) over the latent path.
template <class F>
double integrate_latent(const ScalarLatent& lat, F&& f) {
    double s = 0.0;
    for (Eigen::Index i = 0; i + 1 < lat.c.size(); ++i) s += f(lat.c(i));
    return s * lat.dt;
}

// Factor model X = int beta dF + Z with CIR market loadings, OU loadings for
// the other factors, CIR factor variances co-jumping with the factors and a
// CIR idiosyncratic variance. Defaults are not taken from any table; they
// keep the top eigenvalue near five times the second.
struct FactorModelParams {
    int d = 30;
    int r = 3;
    double loading_kappa = 2.0;
    double market_loading_mean = 1.0;   // centre of the CIR loading means
    double market_loading_spread = 0.5;  // means span centre +- spread/2 across assets
    double market_loading_xi = 0.3;
    double other_loading_xi = 0.1;
    std::vector<double> other_loading_level = {0.7, 0.5};  // magnitudes of OU loading means, factors 2..r
    std::vector<double> factor_drift = {0.0, 0.0, 0.0};
    std::vector<double> factor_var_kappa = {4.0, 4.0, 4.0};
    std::vector<double> factor_var_mean = {0.5, 0.2, 0.16};
    std::vector<double> factor_var_eta = {0.6, 0.35, 0.3};
    std::vector<double> leverage = {-0.5, -0.5, -0.5};
    std::vector<double> factor_jump_intensity = {1.0, 1.0, 1.0};
    std::vector<double> factor_jump_scale = {0.01, 0.01, 0.01};
    std::vector<double> factor_var_jump_mean = {0.02, 0.01, 0.01};
    double idio_kappa = 4.0;
    double idio_mean = 0.05;
    double idio_eta = 0.2;
    double idio_jump_intensity = 0.5;
    double idio_jump_scale = 0.01;
    double noise_sd = 0.005;
    double noise_corr = 0.0;  // equicorrelation of the noise across assets
    double floor = 1e-10;

    // Long-run mean of the loading beta^{jk}.
    double loading_mean(int j, int k) const {
        if (k == 0) {
            const double u = d > 1 ? static_cast<double>(j) / (d - 1) - 0.5 : 0.0;
            return market_loading_mean + market_loading_spread * u;
        }
        const double level = k - 1 < static_cast<int>(other_loading_level.size()) ? other_loading_level[k - 1] : 0.3;
        // Alternate signs with period 2 for factor 2, period 4 for factor 3, ...
        const int period = 1 << k;
        return (j % period) < period / 2 ? level : -level;
    }

    template <class V>
    static double at(const V& v, int k, double fallback) {
        return k < static_cast<int>(v.size()) ? v[k] : fallback;
    }

    void validate() const {
        if (d < 1) throw ConfigError("factor model needs d >= 1");
        if (r < 0) throw ConfigError("factor count must be nonnegative");
        if (r > d) throw ConfigError("factor count r exceeds dimension d");
    }
};

struct FactorPath {
    LogPriceGrid grid;
    std::vector<Eigen::MatrixXd> c_latent;  // spot covariance every `latent_stride` steps
    int latent_stride = 1;
    double dt = 0.0;
    long floor_hits = 0;
    long steps = 0;
};

inline FactorPath simulate_factor(const FactorModelParams& p, double delta_n, double days, std::uint64_t seed,
                                  int latent_stride = 1) {
    p.validate();
    if (!(delta_n > 0.0)) throw ConfigError("delta_n must be positive");
    if (latent_stride < 1) throw ConfigError("latent stride must be >= 1");
    const long n = observation_count(days, delta_n);
    if (n < 2) throw ConfigError("simulation horizon holds fewer than 2 increments");
    const int d = p.d, r = p.r;
    Rng rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double dt = delta_n, sq = std::sqrt(dt);

    Eigen::MatrixXd beta(d, r);
    for (int j = 0; j < d; ++j)
        for (int k = 0; k < r; ++k) beta(j, k) = p.loading_mean(j, k);
    Eigen::VectorXd Pi(r);
    for (int k = 0; k < r; ++k) Pi(k) = FactorModelParams::at(p.factor_var_mean, k, 0.1);
    double chi2 = p.idio_mean;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(d);

    FactorPath out{LogPriceGrid(Eigen::MatrixXd::Zero(2, d), delta_n), {}, latent_stride, dt, 0, n};
    auto floor_at = [&](double v) {
        if (v < p.floor) {
            ++out.floor_hits;
            return p.floor;
        }
        return v;
    };
    auto spot = [&]() {
        Eigen::MatrixXd c = beta * Pi.asDiagonal() * beta.transpose();
        c.diagonal().array() += chi2;
        return c;
    };
    // Noise with unit variance and equicorrelation noise_corr.
    const double nc = std::clamp(p.noise_corr, 0.0, 1.0);
    auto noise = [&]() {
        Eigen::VectorXd e(d);
        const double common = z(rng);
        for (int j = 0; j < d; ++j) e(j) = p.noise_sd * (std::sqrt(nc) * common + std::sqrt(1.0 - nc) * z(rng));
        return e;
    };

    Eigen::MatrixXd y(n + 1, d);
    y.row(0) = (x + noise()).transpose();
    out.c_latent.reserve(static_cast<std::size_t>(n / latent_stride + 1));
    Eigen::VectorXd dF(r);
    for (long i = 0; i < n; ++i) {
        if (i % latent_stride == 0) out.c_latent.push_back(spot());
        // Factors and their variances.
        for (int k = 0; k < r; ++k) {
            const double pk = std::max(Pi(k), p.floor);
            const double rho = FactorModelParams::at(p.leverage, k, 0.0);
            const double dWt = sq * z(rng);
            const double dW = rho * dWt + std::sqrt(1.0 - rho * rho) * sq * z(rng);
            double jumpF = 0.0, jumpPi = 0.0;
            if (u(rng) < FactorModelParams::at(p.factor_jump_intensity, k, 0.0) * dt) {
                jumpF = laplace_draw(rng, FactorModelParams::at(p.factor_jump_scale, k, 0.01));
                std::exponential_distribution<double> ex(1.0 / FactorModelParams::at(p.factor_var_jump_mean, k, 0.01));
                jumpPi = ex(rng);
            }
            dF(k) = FactorModelParams::at(p.factor_drift, k, 0.0) * dt + std::sqrt(pk) * dW + jumpF;
            Pi(k) = floor_at(pk + FactorModelParams::at(p.factor_var_kappa, k, 4.0) *
                                      (FactorModelParams::at(p.factor_var_mean, k, 0.1) - pk) * dt +
                             FactorModelParams::at(p.factor_var_eta, k, 0.3) * std::sqrt(pk) * dWt + jumpPi);
        }
        const double c2 = std::max(chi2, p.floor);
        const double chi = std::sqrt(c2);
        for (int j = 0; j < d; ++j) {
            double dz = chi * sq * z(rng);
            if (u(rng) < p.idio_jump_intensity * dt) dz += laplace_draw(rng, p.idio_jump_scale);
            x(j) += beta.row(j).dot(dF) + dz;
        }
        chi2 = floor_at(c2 + p.idio_kappa * (p.idio_mean - c2) * dt + p.idio_eta * chi * sq * z(rng));
        for (int j = 0; j < d; ++j)
            for (int k = 0; k < r; ++k) {
                const double b = beta(j, k);
                const double m = p.loading_mean(j, k);
                if (k == 0) {
                    const double bf = std::max(b, p.floor);
                    beta(j, k) = floor_at(bf + p.loading_kappa * (m - bf) * dt +
                                          p.market_loading_xi * std::sqrt(bf) * sq * z(rng));
                } else {
                    beta(j, k) = b + p.loading_kappa * (m - b) * dt + p.other_loading_xi * sq * z(rng);
                }
            }
        y.row(i + 1) = (x + noise()).transpose();
    }
    out.c_latent.push_back(spot());
    std::vector<std::string> labels;
    for (int j = 0; j < d; ++j) labels.push_back("y" + std::to_string(j + 1));
    out.grid = LogPriceGrid(std::move(y), delta_n, std::move(labels));
    return out;
}

// Left-point Riemann sum of f(c) over the stored latent covariances; the
// final entry is the terminal state and carries no weight.
template <class F>
Eigen::VectorXd integrate_latent(const FactorPath& path, F&& f) {
    const std::size_t m = path.c_latent.size() - 1;
    Eigen::VectorXd s;
    for (std::size_t i = 0; i < m; ++i) {
        const long first = static_cast<long>(i) * path.latent_stride;
        const long len = std::min<long>(path.latent_stride, path.steps - first);
        const Eigen::VectorXd term = f(path.c_latent[i]) * (static_cast<double>(len) * path.dt);
        if (i == 0)
            s = term;
        else
            s += term;
    }
    return s;
}

// (pi/2) t^{-1} sum |dY_{i-1}| |dY_i| per asset.
inline std::vector<double> bipower(const LogPriceGrid& grid) {
    if (grid.rows() < 3) throw SizeError("bipower variation needs at least 3 observations");
    const Eigen::MatrixXd dy = grid.values().bottomRows(grid.rows() - 1) - grid.values().topRows(grid.rows() - 1);
    std::vector<double> out(grid.dim());
    const double t = grid.horizon();
    for (Eigen::Index j = 0; j < grid.dim(); ++j) {
        double s = 0.0;
        for (Eigen::Index i = 1; i < dy.rows(); ++i) s += std::abs(dy(i - 1, j)) * std::abs(dy(i, j));
        out[j] = 0.5 * M_PI * s / t;
    }
    return out;
}

}  // namespace volfn
