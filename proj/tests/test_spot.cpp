#include <gtest/gtest.h>

#include <volfn/sim.hpp>
#include <volfn/spot.hpp>

#include "oracles.hpp"

#include <random>

using namespace volfn;

namespace {

constexpr double kSecond = 1.0 / 23400;

TuningPlan hat_plan(double kappa = 0.69, double rho = 0.47) {
    TuningPlan p;
    p.kappa = kappa;
    p.rho = rho;
    return p;
}

TuningPlan psd_plan(double delta, double kappa, double rho) {
    TuningPlan p;
    p.mode = EstimatorKind::Tilde;
    p.delta = delta;
    p.kappa = kappa;
    p.rho = rho;
    return p;
}

Eigen::MatrixXd gaussian(int n, int d, std::uint64_t seed, double sd) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, sd);
    Eigen::MatrixXd m(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = z(rng);
    return m;
}

double min_eig(const Eigen::MatrixXd& m) {
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues().minCoeff();
}

TruncationSpec off() {
    TruncationSpec t;
    t.mode = TruncationMode::Off;
    return t;
}

}  // namespace

TEST(Tuning, RateOptimalDefaultsAreValid) {
    const auto w = validate_tuning(hat_plan(), kSecond);
    EXPECT_EQ(w.l_n, 152);  // floor(sqrt(23400))
    EXPECT_EQ(w.k_n, static_cast<int>(std::floor(std::pow(23400.0, 0.69))));
    EXPECT_EQ(w.m_n, 152);
    EXPECT_DOUBLE_EQ(w.rate_scale(), std::sqrt(kSecond));
}

TEST(Tuning, KappaBelowTwoThirdsIsRejected) {
    try {
        validate_tuning(hat_plan(0.60), kSecond);
        FAIL() << "expected a tuning error";
    } catch (const TuningError& e) {
        EXPECT_NE(std::string(e.what()).find("kappa"), std::string::npos);
    }
}

TEST(Tuning, RhoBelowLowerBoundIsRejected) {
    // 1/4 + (1 - 0.69)/2 = 0.405
    EXPECT_THROW(validate_tuning(hat_plan(0.69, 0.40), kSecond), TuningError);
    EXPECT_NO_THROW(validate_tuning(hat_plan(0.69, 0.405), kSecond));
    EXPECT_THROW(validate_tuning(hat_plan(0.69, 0.5), kSecond), TuningError);
}

TEST(Tuning, PsdDeltaMustExceedOneTenth) {
    EXPECT_THROW(validate_tuning(psd_plan(0.05, 0.75, 0.47), kSecond), TuningError);
    const auto w = validate_tuning(psd_plan(0.12, 0.75, 0.47), kSecond);
    EXPECT_EQ(w.l_n, static_cast<int>(std::floor(std::pow(kSecond, -0.62))));
    EXPECT_DOUBLE_EQ(w.rate_scale(), std::pow(kSecond, 0.38));
}

TEST(Tuning, RelaxedRangeAndModeConsistency) {
    TuningPlan p = hat_plan(0.70, 0.39);
    EXPECT_THROW(validate_tuning(p, kSecond), TuningError);  // strict bound 1/4 + 0.3/2 = 0.4
    p.relaxed = true;
    EXPECT_NO_THROW(validate_tuning(p, kSecond));  // relaxed bound 1/4 + 1/8 = 0.375
    TuningPlan q = hat_plan();
    q.delta = 0.2;
    EXPECT_THROW(validate_tuning(q, kSecond), TuningError);
}

TEST(Tuning, JumpActivityTightensKappa) {
    TuningPlan p = hat_plan(0.70, 0.49);
    p.nu_jump = 0.9;  // (2 + 0.9)/4 = 0.725
    EXPECT_THROW(validate_tuning(p, kSecond), TuningError);
    p.kappa = 0.74;
    EXPECT_NO_THROW(validate_tuning(p, kSecond));
}

TEST(Tuning, BoundaryProximityWarns) {
    EXPECT_TRUE(validate_tuning(hat_plan(0.70, 0.47), kSecond).warnings.empty());
    EXPECT_FALSE(validate_tuning(hat_plan(0.748, 0.47), kSecond).warnings.empty());
}

TEST(Tuning, WindowOrderingIsEnforced) {
    TuningPlan p = hat_plan();
    p.varrho = 0.01;
    EXPECT_THROW(validate_tuning(p, kSecond), TuningError);
    EXPECT_THROW(explicit_windows(EstimatorKind::Hat, 5, 5, 1, 0.01), TuningError);
}

TEST(SpotHat, ZeroDataGivesZero) {
    const auto w = explicit_windows(EstimatorKind::Hat, 4, 10, 3, 0.001);
    const IncrementSeries incr{Eigen::MatrixXd::Zero(40, 2), 0.001};
    const auto pre = preaverage_series(incr, discretize(minmax_kernel(), 4));
    const TruncationMask keep(pre.ybar.rows(), 1);
    EXPECT_TRUE((spot_hat(pre, keep, 0, w).array() == 0.0).all());
    EXPECT_TRUE((spot_tilde(pre, keep, 5, w).array() == 0.0).all());
}

TEST(SpotHat, ConstantSquaresAllKept) {
    const double v = 0.3, dn = 0.002;
    const int l = 4, k = 10;
    const auto w = explicit_windows(EstimatorKind::Hat, l, k, 1, dn);
    PreAveragedSeries pre;
    pre.ybar = Eigen::MatrixXd::Constant(20, 1, std::sqrt(v));
    pre.yhat.assign(20, Eigen::MatrixXd::Zero(1, 1));
    const TruncationMask keep(20, 1);
    EXPECT_NEAR(spot_hat(pre, keep, 2, w)(0, 0), v * (k - l + 1) / ((k - l) * dn), 1e-10);
}

TEST(SpotTilde, SingleKeptTerm) {
    const double wsq = 0.7, dn = 0.01;
    const int l = 3, k = 8;
    const auto w = explicit_windows(EstimatorKind::Tilde, l, k, 1, dn);
    PreAveragedSeries pre;
    pre.ybar = Eigen::MatrixXd::Constant(12, 1, 5.0);
    pre.ybar(4, 0) = std::sqrt(wsq);
    TruncationMask keep(12, 0);
    keep[4] = 1;
    EXPECT_NEAR(spot_tilde(pre, keep, 1, w)(0, 0), wsq / ((k - l) * dn), 1e-12);
}

TEST(SpotTilde, OverrunIsSizeError) {
    const auto w = explicit_windows(EstimatorKind::Tilde, 3, 8, 1, 0.01);
    PreAveragedSeries pre;
    pre.ybar = Eigen::MatrixXd::Zero(10, 1);
    const TruncationMask keep(10, 1);
    EXPECT_NO_THROW(spot_tilde(pre, keep, 4, w));
    EXPECT_THROW(spot_tilde(pre, keep, 5, w), SizeError);
}

TEST(SpotTilde, AlwaysPositiveSemidefinite) {
    const auto mm = minmax_kernel();
    for (int trial = 0; trial < 30; ++trial) {
        const int d = 1 + trial % 5;
        const IncrementSeries incr{gaussian(400, d, 50 + trial, 0.01), 0.001};
        const auto w = explicit_windows(EstimatorKind::Tilde, 5, 40, 5, 0.001);
        const auto pre = preaverage_series(incr, discretize(mm, 5), false);
        TruncationMask keep(pre.ybar.rows(), 1);
        for (std::size_t i = 0; i < keep.size(); i += 3) keep[i] = 0;
        for (int start = 0; start + 36 <= pre.ybar.rows(); start += 40)
            EXPECT_GE(min_eig(spot_tilde(pre, keep, start, w)), -1e-12);
    }
}

TEST(SpotHat, DifferenceToTildeIsAverageOffset) {
    const auto mm = minmax_kernel();
    const IncrementSeries incr{gaussian(300, 3, 77, 0.01), 0.001};
    const int l = 6, k = 30;
    const auto w = explicit_windows(EstimatorKind::Hat, l, k, 4, 0.001);
    const auto pre = preaverage_series(incr, discretize(mm, l));
    TruncationMask keep(pre.ybar.rows(), 1);
    keep[3] = keep[17] = 0;
    for (int start : {0, 30, 120, 240}) {
        Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(3, 3);
        for (int r = start; r <= start + k - l; ++r) avg += pre.yhat[r];
        avg /= (k - l) * 0.001;
        const Eigen::MatrixXd diff = spot_tilde(pre, keep, start, w) - spot_hat(pre, keep, start, w);
        EXPECT_LT((diff - avg).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, avg.cwiseAbs().maxCoeff()));
    }
}

TEST(NoiseCov, SingleIncrement) {
    const auto w = explicit_windows(EstimatorKind::Hat, 2, 3, 1, 0.01);
    Eigen::MatrixXd x(2, 1);
    x << 0.4, 9.0;
    EXPECT_NEAR(noise_cov({x, 0.01}, 0, w)(0, 0), 0.08, 1e-15);
    EXPECT_TRUE((noise_cov({Eigen::MatrixXd::Zero(5, 2), 0.01}, 1, w).array() == 0.0).all());
    EXPECT_THROW(noise_cov({x, 0.01}, 2, w), SizeError);
}

TEST(NoiseCov, PureNoiseRecoversVariance) {
    // Increments of iid noise have variance 2 sigma^2; the 1/2 restores sigma^2.
    const double sd = 0.005;
    std::mt19937_64 rng(8);
    std::normal_distribution<double> z(0.0, sd);
    const int n = 200000;
    Eigen::MatrixXd y(n + 1, 2);
    for (int i = 0; i <= n; ++i) y.row(i) << z(rng), z(rng);
    const IncrementSeries incr{y.bottomRows(n) - y.topRows(n), 1.0 / n};
    const auto w = explicit_windows(EstimatorKind::Hat, 2, n, n, 1.0 / n);
    const auto g = noise_cov(incr, 0, w);
    // Standard errors from the lag-1 dependence of squared noise increments.
    EXPECT_NEAR(g(0, 0), sd * sd, 4 * sd * sd * std::sqrt(3.0 / n));
    EXPECT_NEAR(g(1, 1), sd * sd, 4 * sd * sd * std::sqrt(3.0 / n));
    EXPECT_NEAR(g(0, 1), 0.0, 4 * sd * sd * std::sqrt(1.5 / n));
}

TEST(NoiseCov, LinearTrendChangesLittle) {
    const double dn = kSecond;
    Eigen::MatrixXd y = gaussian(2000, 1, 9, 0.005);
    Eigen::MatrixXd trend = y;
    for (int i = 0; i < y.rows(); ++i) trend(i, 0) += 1.0 * i * dn;
    const auto w = explicit_windows(EstimatorKind::Hat, 2, 500, 152, dn);
    const LogPriceGrid a(y, dn), b(trend, dn);
    for (int i : {0, 300, 1500})
        EXPECT_LT(std::abs(noise_cov(increments(a), i, w)(0, 0) - noise_cov(increments(b), i, w)(0, 0)), 10 * dn);
}

TEST(PsdProject, Examples) {
    Eigen::Matrix2d a;
    a << 2, 0, 0, -1;
    EXPECT_LT((psd_project(a) - Eigen::Matrix2d(Eigen::Vector2d(2, 0).asDiagonal())).cwiseAbs().maxCoeff(), 1e-15);
    Eigen::Matrix2d b;
    b << 0, 1, 1, 0;
    EXPECT_LT((psd_project(b) - Eigen::Matrix2d::Constant(0.5)).cwiseAbs().maxCoeff(), 1e-14);
    Eigen::Matrix2d c;
    c << 2, 1, 1, 2;
    EXPECT_LT((psd_project(c) - c).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::Matrix2d bad;
    bad << 1, 2, 0, 1;
    EXPECT_THROW(psd_project(bad), ShapeError);
}

TEST(PsdProject, IdempotentAndNonexpansive) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 1000; ++trial) {
        const int d = 1 + trial % 6;
        const Eigen::MatrixXd a = oracle::random_symmetric(d, rng);
        const Eigen::MatrixXd b = oracle::random_symmetric(d, rng);
        const Eigen::MatrixXd pa = psd_project(a), pb = psd_project(b);
        EXPECT_GE(min_eig(pa), -1e-12);
        EXPECT_LT((psd_project(pa) - pa).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LE((pa - pb).norm(), (a - b).norm() + 1e-12);
        // Nearest PSD matrix: no PSD candidate is closer.
        const Eigen::MatrixXd cand = psd_project(oracle::random_symmetric(d, rng));
        EXPECT_LE((a - pa).norm(), (a - cand).norm() + 1e-12);
    }
}

TEST(SpotSeries, ExactTiling) {
    const int l = 4, k = 20;
    const auto w = explicit_windows(EstimatorKind::Tilde, l, k, 3, 0.001);
    const IncrementSeries incr{gaussian(3 * k, 2, 4, 0.01), 0.001};
    const auto s = spot_series(incr, w, minmax_kernel(), off());
    EXPECT_EQ(s.N_t, 3);
    EXPECT_DOUBLE_EQ(s.a_t, 1.0);
    EXPECT_EQ(s.starts, (std::vector<Eigen::Index>{0, 20, 40}));
    EXPECT_NEAR(s.N_t * s.k_n * s.delta_n * s.a_t, s.horizon, 1e-15);
}

TEST(SpotSeries, PartialTailStretchesAdjustment) {
    const int l = 4, k = 20;
    const auto w = explicit_windows(EstimatorKind::Tilde, l, k, 3, 0.001);
    const IncrementSeries incr{gaussian(3 * k + k / 2, 1, 4, 0.01), 0.001};
    const auto s = spot_series(incr, w, minmax_kernel(), off());
    EXPECT_EQ(s.N_t, 3);
    EXPECT_NEAR(s.a_t, incr.horizon() / (3 * k * 0.001), 1e-14);
    EXPECT_GT(s.a_t, 1.0);
    EXPECT_NEAR(s.N_t * s.k_n * s.delta_n * s.a_t, s.horizon, 1e-15);
    EXPECT_THROW(spot_series(IncrementSeries{gaussian(k - 1, 1, 4, 0.01), 0.001}, w, minmax_kernel(), off()),
                 SizeError);
}

TEST(SpotSeries, MatchesDefinitionLoops) {
    const auto mm = minmax_kernel();
    const int l = 7, k = 45, m = 6, n = 460, d = 3;
    const double dn = 0.0005;
    const Eigen::MatrixXd x = gaussian(n, d, 31, 0.02);
    const auto ybar = oracle::preaverage(x, mm.phi, l);
    const auto yhat = oracle::offsets(x, mm.phi, l);
    TruncationSpec trunc;
    trunc.nu_n = {0.03, 0.035, 0.04};
    std::vector<char> keep(ybar.rows());
    for (int r = 0; r < ybar.rows(); ++r)
        keep[r] = std::abs(ybar(r, 0)) <= 0.03 && std::abs(ybar(r, 1)) <= 0.035 && std::abs(ybar(r, 2)) <= 0.04;
    for (auto kind : {EstimatorKind::Hat, EstimatorKind::Tilde}) {
        const auto w = explicit_windows(kind, l, k, m, dn);
        const auto s = spot_series(IncrementSeries{x, dn}, w, mm, trunc);
        ASSERT_EQ(s.N_t, n / k);
        for (int i = 0; i < s.N_t; ++i) {
            const auto ref =
                oracle::spot(ybar, kind == EstimatorKind::Hat ? &yhat : nullptr, keep, i * k, k, l, dn);
            EXPECT_LT((s.c_mats[i] - ref).cwiseAbs().maxCoeff(), 1e-10 * ref.cwiseAbs().maxCoeff());
            const Eigen::MatrixXd blk = x.middleRows(i * k, m);
            EXPECT_LT((s.gamma_mats[i] - blk.transpose() * blk / (2.0 * m)).cwiseAbs().maxCoeff(), 1e-15);
        }
    }
}

TEST(SpotSeries, TildeMatricesArePsd) {
    const auto w = explicit_windows(EstimatorKind::Tilde, 5, 25, 5, 0.001);
    const auto s = spot_series(IncrementSeries{gaussian(1000, 4, 2, 0.01), 0.001}, w, minmax_kernel(), off());
    for (const auto& c : s.c_mats) EXPECT_GE(min_eig(c), -1e-12);
}

TEST(SpotSeries, RenormalizeKeptRescalesByKeptShare) {
    const int l = 4, k = 20;
    const auto w = explicit_windows(EstimatorKind::Tilde, l, k, 3, 0.001);
    const IncrementSeries incr{gaussian(200, 1, 6, 0.01), 0.001};
    TruncationSpec trunc;
    trunc.nu_n = {0.012};
    const auto plain = spot_series(incr, w, minmax_kernel(), trunc);
    SpotOptions opt;
    opt.renormalize_kept = true;
    const auto scaled = spot_series(incr, w, minmax_kernel(), trunc, opt);
    bool any_veto = false;
    for (int i = 0; i < plain.N_t; ++i) {
        const int span = k - l + 1;
        any_veto = any_veto || plain.kept[i] < span;
        if (plain.kept[i] > 0)
            EXPECT_NEAR(scaled.c_mats[i](0, 0), plain.c_mats[i](0, 0) * span / plain.kept[i], 1e-12);
    }
    EXPECT_TRUE(any_veto);
    EXPECT_GT(plain.veto_fraction, 0.0);
}

TEST(SpotHat, UnbiasedOnConstantVolatilityPath) {
    ScalarModelParams p = ScalarModelParams{}.without_jumps();
    p.noise_sd = 0.0;
    p.xi = 0.0;
    p.kappa = 0.0;
    p.drift = 0.0;
    p.c0 = 0.16;
    const auto path = simulate_scalar(p, kSecond, 5.0, 2024);
    const auto w = validate_tuning(hat_plan(), kSecond);
    const auto s = spot_series(path.grid, w, minmax_kernel(), off());
    double mean = 0, sq = 0;
    for (const auto& c : s.c_mats) {
        mean += c(0, 0);
        sq += c(0, 0) * c(0, 0);
    }
    mean /= s.N_t;
    const double se = std::sqrt((sq / s.N_t - mean * mean) / (s.N_t - 1));
    EXPECT_LT(std::abs(mean - 0.16), 3 * se) << "mean " << mean << " se " << se;
}
