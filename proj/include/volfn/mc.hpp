#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "error.hpp"
#include "estimate.hpp"
#include "functional.hpp"
#include "kernel.hpp"
#include "parallel.hpp"
#include "pca.hpp"
#include "preavg.hpp"
#include "sim.hpp"
#include "spot.hpp"

namespace volfn {

enum class McModel { Scalar, Factor };

inline McModel mc_model_from(const std::string& s) {
    if (s == "scalar") return McModel::Scalar;
    if (s == "factor") return McModel::Factor;
    throw ConfigError("unknown model '" + s + "' (expected scalar or factor)");
}

inline const char* mc_model_name(McModel m) { return m == McModel::Scalar ? "scalar" : "factor"; }

struct McTarget {
    std::string functional = "square";
    FunctionalParams params;
};

struct McStudy {
    McModel model = McModel::Scalar;
    int replications = 100;
    std::uint64_t seed = 1;
    double days = 5.0;
    double delta_n = 1.0 / 23400.0;
    int substeps = 1;
    int latent_stride = 10;  // factor model only
    ScalarModelParams scalar;
    FactorModelParams factor;
    TuningPlan plan;
    std::vector<McTarget> targets = {McTarget{}};
    TruncationSpec truncation;
    KernelProfile profile = minmax_kernel();
    bool bias_correction = true;
    double ci_level = 0.95;
    int threads = 1;
    // Eigen-gap settings for the closed-form PCA route.
    PcaOptions pca;
};

struct McRecord {
    int rep = 0;
    std::uint64_t seed = 0;
    Eigen::VectorXd estimate, uncorrected, truth, se, studentized;
    std::vector<char> hit;
    long floor_hits = 0;
    double veto_fraction = 0.0;
};

struct McComponentSummary {
    std::string name;
    double mean = 0.0;  // of studentized errors
    double sd = 0.0;
    double coverage = 0.0;
    double rmse = 0.0;
    double mae = 0.0;
    double mae_uncorrected = 0.0;
    double mean_truth = 0.0;
};

struct McReport {
    std::vector<std::string> names;
    std::vector<McRecord> records;
    std::vector<McComponentSummary> summary;
    WindowPlan plan;
    long floor_hits = 0;
    long steps = 0;
};

namespace detail {

inline bool pca_route(const McStudy& s, const McTarget& t) {
    return s.plan.mode == EstimatorKind::Tilde && (t.functional == "eigenvalue" || t.functional == "eigenvector");
}

inline ClusterSpec target_clusters(const McTarget& t, Eigen::Index d) {
    return t.params.cluster_sizes.empty() ? ClusterSpec::singletons(static_cast<int>(d))
                                          : ClusterSpec::from_sizes(t.params.cluster_sizes);
}

// Value of a target at a latent covariance, with eigenvectors aligned to `prev`.
inline Eigen::VectorXd target_truth_point(const McTarget& t, const MatrixFunctional& g, const Eigen::MatrixXd& c,
                                          Eigen::VectorXd& prev) {
    if (t.functional == "eigenvector") {
        Eigen::VectorXd q = eig_sorted(c).vectors.col(t.params.index);
        if (prev.size() > 0 && q.dot(prev) < 0.0) q = -q;
        prev = q;
        return q;
    }
    return g.value(c);
}

struct TargetResult {
    Eigen::VectorXd value, uncorrected, se;
};

inline TargetResult run_target(const McStudy& s, const McTarget& t, const MatrixFunctional& g,
                               const SpotVolSeries& spot, const WindowPlan& plan, const KernelConstants& kc) {
    TargetResult r;
    if (pca_route(s, t)) {
        PcaOptions po = s.pca;
        po.bias_correction = s.bias_correction;
        po.ci_level = s.ci_level;
        po.threads = 1;
        if (t.functional == "eigenvalue") {
            const auto e = realized_eigenvalues(spot, target_clusters(t, spot.c_mats[0].rows()), plan, kc, po);
            r.value = e.value;
            r.uncorrected = e.uncorrected;
            r.se = (e.rate_scale * e.avar.diagonal().array()).sqrt();
        } else {
            const auto e = realized_eigenvector(spot, t.params.index, plan, kc, po);
            r.value = e.value;
            r.uncorrected = e.uncorrected;
            r.se = (e.rate_scale * e.avar.diagonal().array()).sqrt();
        }
        return r;
    }
    EstimateOptions eo;
    eo.bias_correction = s.bias_correction;
    eo.ci_level = s.ci_level;
    const auto e = estimate_from_spot(spot, g, plan, kc, eo);
    r.value = e.value;
    r.uncorrected = e.uncorrected;
    r.se = e.standard_error();
    return r;
}

}  // namespace detail

inline MatrixFunctional target_functional(const McTarget& t, Eigen::Index d) {
    FunctionalParams p = t.params;
    if (t.functional == "eigenvalue" && p.cluster_sizes.empty()) p.cluster_sizes.assign(d, 1);
    return builtin(t.functional, p);
}

inline McReport run_mc(const McStudy& study) {
    if (study.replications <= 0) throw ConfigError("Monte Carlo study has no replications; report would be empty");
    if (study.targets.empty()) throw ConfigError("Monte Carlo study has no target functional");
    const WindowPlan plan = validate_tuning(study.plan, study.delta_n);
    const KernelConstants kc = constants(study.profile);
    const Eigen::Index d = study.model == McModel::Scalar ? 1 : study.factor.d;

    std::vector<MatrixFunctional> gs;
    McReport report;
    report.plan = plan;
    for (const auto& t : study.targets) {
        gs.push_back(target_functional(t, d));
        gs.back().check_dim(d);
        // Output size from a well-separated positive definite probe.
        const Eigen::VectorXd probe = Eigen::VectorXd::LinSpaced(d, static_cast<double>(d), 1.0);
        const Eigen::Index r = gs.back().value(probe.asDiagonal().toDenseMatrix()).size();
        for (Eigen::Index p = 0; p < r; ++p) {
            std::string name = t.functional;
            if (t.functional == "entry") name += "(" + std::to_string(t.params.j + 1) + "," + std::to_string(t.params.k + 1) + ")";
            if (t.functional == "eigenvector") name += "(" + std::to_string(t.params.index + 1) + ")";
            if (r > 1) name += "[" + std::to_string(p + 1) + "]";
            report.names.push_back(name);
        }
    }
    const double z = normal_quantile(0.5 + 0.5 * study.ci_level);

    report.records.resize(study.replications);
    std::vector<long> steps(study.replications, 0);
    parallel_for(static_cast<std::size_t>(study.replications), study.threads, [&](std::size_t rep) {
        McRecord& rec = report.records[rep];
        rec.rep = static_cast<int>(rep);
        rec.seed = stream_seed(study.seed, rep);
        LogPriceGrid grid(Eigen::MatrixXd::Zero(2, 1), study.delta_n);
        std::vector<Eigen::VectorXd> truths;
        if (study.model == McModel::Scalar) {
            ScalarPath path = simulate_scalar(study.scalar, study.delta_n, study.days, rec.seed, study.substeps);
            rec.floor_hits = path.latent.floor_hits;
            steps[rep] = path.latent.c.size() - 1;
            for (std::size_t i = 0; i < gs.size(); ++i) {
                Eigen::VectorXd prev;
                Eigen::VectorXd acc;
                Eigen::MatrixXd c(1, 1);
                for (Eigen::Index s = 0; s + 1 < path.latent.c.size(); ++s) {
                    c(0, 0) = path.latent.c(s);
                    const Eigen::VectorXd v = detail::target_truth_point(study.targets[i], gs[i], c, prev);
                    if (acc.size() == 0) acc = Eigen::VectorXd::Zero(v.size());
                    acc += v;
                }
                truths.push_back(acc * path.latent.dt);
            }
            grid = std::move(path.grid);
        } else {
            FactorPath path = simulate_factor(study.factor, study.delta_n, study.days, rec.seed, study.latent_stride);
            rec.floor_hits = path.floor_hits;
            steps[rep] = path.steps;
            for (std::size_t i = 0; i < gs.size(); ++i) {
                Eigen::VectorXd prev;
                truths.push_back(integrate_latent(path, [&](const Eigen::MatrixXd& c) {
                    return detail::target_truth_point(study.targets[i], gs[i], c, prev);
                }));
            }
            grid = std::move(path.grid);
        }
        const TruncationSpec trunc = threshold(grid, study.truncation, study.truncation.mode == TruncationMode::Off
                                                                           ? std::vector<double>{}
                                                                           : bipower(grid));
        const SpotVolSeries spot = spot_series(grid, plan, study.profile, trunc);
        rec.veto_fraction = spot.veto_fraction;

        std::vector<Eigen::VectorXd> est, unc, se;
        for (std::size_t i = 0; i < gs.size(); ++i) {
            auto r = detail::run_target(study, study.targets[i], gs[i], spot, plan, kc);
            // Eigenvector signs follow the truth path.
            if (study.targets[i].functional == "eigenvector" && r.value.dot(truths[i]) < 0.0) {
                r.value = -r.value;
                r.uncorrected = -r.uncorrected;
            }
            est.push_back(r.value);
            unc.push_back(r.uncorrected);
            se.push_back(r.se);
        }
        auto flatten = [](const std::vector<Eigen::VectorXd>& parts) {
            Eigen::Index n = 0;
            for (const auto& p : parts) n += p.size();
            Eigen::VectorXd out(n);
            Eigen::Index o = 0;
            for (const auto& p : parts) {
                out.segment(o, p.size()) = p;
                o += p.size();
            }
            return out;
        };
        rec.estimate = flatten(est);
        rec.uncorrected = flatten(unc);
        rec.truth = flatten(truths);
        rec.se = flatten(se);
        rec.studentized = (rec.estimate - rec.truth).cwiseQuotient(rec.se);
        rec.hit.resize(rec.estimate.size());
        for (Eigen::Index p = 0; p < rec.estimate.size(); ++p)
            rec.hit[p] = std::abs(rec.estimate(p) - rec.truth(p)) <= z * rec.se(p);
    });

    for (std::size_t rep = 0; rep < report.records.size(); ++rep) {
        report.floor_hits += report.records[rep].floor_hits;
        report.steps += steps[rep];
    }
    const std::size_t P = report.names.size();
    const double R = study.replications;
    for (std::size_t p = 0; p < P; ++p) {
        McComponentSummary s;
        s.name = report.names[p];
        double sum = 0.0, sq = 0.0, hits = 0.0, se2 = 0.0, ae = 0.0, aeu = 0.0, tr = 0.0;
        for (const auto& rec : report.records) {
            const double e = rec.estimate(p) - rec.truth(p);
            sum += rec.studentized(p);
            sq += rec.studentized(p) * rec.studentized(p);
            hits += rec.hit[p];
            se2 += e * e;
            ae += std::abs(e);
            aeu += std::abs(rec.uncorrected(p) - rec.truth(p));
            tr += rec.truth(p);
        }
        s.mean = sum / R;
        s.sd = R > 1 ? std::sqrt(std::max(0.0, (sq - R * s.mean * s.mean) / (R - 1))) : 0.0;
        s.coverage = hits / R;
        s.rmse = std::sqrt(se2 / R);
        s.mae = ae / R;
        s.mae_uncorrected = aeu / R;
        s.mean_truth = tr / R;
        report.summary.push_back(s);
    }
    return report;
}

struct RatePoint {
    long n = 0;
    double delta_n = 0.0;
    int l_n = 0, k_n = 0;
    std::vector<double> rmse;  // per component
};

struct RateTable {
    std::vector<std::string> names;
    std::vector<RatePoint> points;
    std::vector<double> slope;  // least-squares slope of log RMSE against log n
};

// RMSE against the sample size at a fixed horizon `study.days`.
inline RateTable rate_study(const McStudy& study, const std::vector<long>& sizes) {
    if (sizes.size() < 2) throw ConfigError("rate study needs at least two sample sizes");
    RateTable t;
    for (long n : sizes) {
        McStudy s = study;
        s.delta_n = study.days / static_cast<double>(n);
        const McReport rep = run_mc(s);
        t.names = rep.names;
        RatePoint pt;
        pt.n = n;
        pt.delta_n = s.delta_n;
        pt.l_n = rep.plan.l_n;
        pt.k_n = rep.plan.k_n;
        for (const auto& c : rep.summary) pt.rmse.push_back(c.rmse);
        t.points.push_back(pt);
    }
    for (std::size_t p = 0; p < t.names.size(); ++p) {
        double mx = 0, my = 0;
        const double m = static_cast<double>(t.points.size());
        for (const auto& pt : t.points) {
            mx += std::log(static_cast<double>(pt.n));
            my += std::log(pt.rmse[p]);
        }
        mx /= m;
        my /= m;
        double sxy = 0, sxx = 0;
        for (const auto& pt : t.points) {
            const double x = std::log(static_cast<double>(pt.n)) - mx;
            sxy += x * (std::log(pt.rmse[p]) - my);
            sxx += x * x;
        }
        t.slope.push_back(sxy / sxx);
    }
    return t;
}

struct DensityRow {
    double x = 0.0, empirical = 0.0, normal = 0.0;
};

// Histogram density of `values` on [lo, hi] next to the standard normal curve.
inline std::vector<DensityRow> density_table(const std::vector<double>& values, int bins = 40, double lo = -4.0,
                                             double hi = 4.0) {
    if (bins < 1 || !(hi > lo)) throw ConfigError("density table needs bins >= 1 and hi > lo");
    std::vector<DensityRow> out(bins);
    const double w = (hi - lo) / bins;
    std::vector<double> count(bins, 0.0);
    for (double v : values) {
        if (!(v >= lo && v < hi)) continue;
        count[std::min(bins - 1, static_cast<int>((v - lo) / w))] += 1.0;
    }
    const double total = values.empty() ? 1.0 : static_cast<double>(values.size());
    for (int b = 0; b < bins; ++b) {
        const double x = lo + (b + 0.5) * w;
        out[b] = {x, count[b] / (total * w), std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI)};
    }
    return out;
}

}  // namespace volfn
