#include <gtest/gtest.h>

#include <volfn/mc.hpp>

using namespace volfn;

namespace {

McStudy small_scalar(int reps) {
    McStudy s;
    s.replications = reps;
    s.days = 1.0;
    s.seed = 3;
    s.scalar = ScalarModelParams{}.without_jumps();
    return s;
}

}  // namespace

TEST(MonteCarlo, EmptyStudiesAreConfigErrors) {
    EXPECT_THROW(run_mc(small_scalar(0)), ConfigError);
    auto s = small_scalar(2);
    s.targets.clear();
    EXPECT_THROW(run_mc(s), ConfigError);
    EXPECT_THROW(mc_model_from("garch"), ConfigError);
    EXPECT_THROW(rate_study(small_scalar(2), {2340}), ConfigError);
}

TEST(MonteCarlo, ThreadCountDoesNotChangeRecords) {
    auto a = small_scalar(4), b = small_scalar(4);
    b.threads = 3;
    a.targets = b.targets = {McTarget{"square", {}}, McTarget{"log", {}}};
    const auto ra = run_mc(a), rb = run_mc(b);
    ASSERT_EQ(ra.names, (std::vector<std::string>{"square", "log"}));
    for (int r = 0; r < 4; ++r) {
        EXPECT_EQ(ra.records[r].seed, rb.records[r].seed);
        EXPECT_EQ(ra.records[r].estimate, rb.records[r].estimate);
        EXPECT_EQ(ra.records[r].truth, rb.records[r].truth);
    }
    EXPECT_EQ(ra.summary[0].mean, rb.summary[0].mean);
}

TEST(MonteCarlo, RecordsAreConsistent) {
    const auto rep = run_mc(small_scalar(3));
    for (const auto& r : rep.records) {
        EXPECT_NEAR(r.studentized(0), (r.estimate(0) - r.truth(0)) / r.se(0), 1e-12);
        EXPECT_EQ(r.hit[0] != 0, std::abs(r.studentized(0)) <= normal_quantile(0.975));
        EXPECT_GT(r.truth(0), 0.0);
    }
    EXPECT_EQ(rep.plan.k_n, static_cast<int>(std::floor(std::pow(23400.0, 0.69))));
}

TEST(MonteCarlo, JumpFreeStudentizedErrorsAreReasonable) {
    auto s = small_scalar(40);
    s.days = 2.0;
    const auto rep = run_mc(s);
    EXPECT_LT(std::abs(rep.summary[0].mean), 0.6);
    EXPECT_GT(rep.summary[0].sd, 0.4);
    EXPECT_LT(rep.summary[0].sd, 1.6);
    EXPECT_GT(rep.summary[0].coverage, 0.8);
    EXPECT_LT(rep.summary[0].mae, rep.summary[0].mae_uncorrected);
}

TEST(MonteCarlo, FactorEigenvalueRoute) {
    McStudy s;
    s.model = McModel::Factor;
    s.replications = 2;
    s.days = 0.5;
    s.delta_n = 1.0 / 22800;
    s.factor.d = 4;
    s.factor.r = 2;
    s.plan.mode = EstimatorKind::Tilde;
    s.plan.theta = 0.23;
    s.plan.delta = 0.12;
    s.plan.kappa = 0.75;
    s.plan.varrho = 0.57;
    s.targets = {McTarget{"eigenvalue", {}}};
    s.targets[0].params.cluster_sizes = {1, 1, 2};
    const auto rep = run_mc(s);
    EXPECT_EQ(rep.names, (std::vector<std::string>{"eigenvalue[1]", "eigenvalue[2]", "eigenvalue[3]"}));
    for (const auto& r : rep.records) {
        EXPECT_GT(r.truth(0), r.truth(1));
        EXPECT_TRUE((r.se.array() > 0).all());
    }
}

TEST(DensityTable, HistogramAgainstNormal) {
    const auto rows = density_table({0.1, 0.2, -0.6, 5.0}, 2, -1.0, 1.0);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_DOUBLE_EQ(rows[0].x, -0.5);
    EXPECT_DOUBLE_EQ(rows[0].empirical, 0.25);
    EXPECT_DOUBLE_EQ(rows[1].empirical, 0.5);
    EXPECT_NEAR(rows[1].normal, std::exp(-0.125) / std::sqrt(2 * M_PI), 1e-15);
    EXPECT_THROW(density_table({}, 0), ConfigError);
}
