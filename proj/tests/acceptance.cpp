// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Monte Carlo criteria use every available hardware thread.

#include <volfn/volfn.hpp>

#include "cli.hpp"
#include "oracles.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

using namespace volfn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int threads() { return std::max(1u, std::thread::hardware_concurrency()); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

bool within(double x, double lo, double hi) { return x >= lo && x <= hi; }

const KernelConstants& kc() {
    static const KernelConstants k = constants(minmax_kernel());
    return k;
}

Outcome kernel_constants() {
    using E = oracle::MinmaxExact;
    const auto k = constants(minmax_kernel());
    double worst = 0;
    for (auto [got, want] : {std::pair{k.phi0_at_0, E::phi0_at_0}, {k.phi1_at_0, E::phi1_at_0}, {k.Phi11, E::Phi11},
                             {k.Phi01, E::Phi01}, {k.Phi00, E::Phi00}})
        worst = std::max(worst, std::abs(got - want) / std::abs(want));
    return {worst <= 1e-7, "max relative error " + fmt("%.2e", worst)};
}

Outcome fft_equivalence() {
    std::mt19937_64 rng(20240601);
    std::uniform_int_distribution<int> nd(2, 100000), dd(1, 5);
    std::normal_distribution<double> z;
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = nd(rng), d = dd(rng);
        std::uniform_int_distribution<int> ld(2, std::max(2, std::min(n, 400)));
        const int l = ld(rng);
        Eigen::MatrixXd x(n, d);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) x(i, j) = 1e-3 * z(rng);
        const IncrementSeries s{x, 1.0 / 23400};
        const auto dk = discretize(minmax_kernel(), l);
        const Eigen::MatrixXd a = preaverage(s, dk, PreavgMethod::Direct);
        const Eigen::MatrixXd b = preaverage(s, dk, PreavgMethod::Fft);
        worst = std::max(worst, (a - b).cwiseAbs().maxCoeff() / a.cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-10, "200 cases, max relative deviation " + fmt("%.2e", worst)};
}

Outcome derivatives() {
    FunctionalParams ent;
    ent.j = 1;
    ent.k = 2;
    FunctionalParams beta;
    beta.split = 2;
    const std::vector<std::pair<MatrixFunctional, int>> cat = {
        {builtin("trace"), 4},
        {builtin("entry", ent), 3},
        {builtin("square"), 1},
        {builtin("square"), 4},
        {builtin("log"), 1},
        {builtin("logdet"), 4},
        {builtin("laplace"), 1},
        {laplace_functional(0.5), 3},
        {builtin("beta", beta), 4},
        {eigenvalue_functional(ClusterSpec::singletons(4)), 4},
        {eigenvalue_functional(ClusterSpec::from_sizes({1, 2, 2})), 5},
        {eigenvector_functional(0), 4},
        {eigenvector_functional(2), 4},
    };
    std::mt19937_64 rng(77);
    double g = 0, h = 0;
    for (const auto& [f, d] : cat)
        for (int point = 0; point < 100; ++point) {
            const Eigen::MatrixXd c = oracle::random_spd(d, rng);
            for (double step : {1e-4, 1e-5}) {
                const auto e = oracle::fd_errors(f, c, step, rng, 2);
                g = std::max(g, e.gradient);
                h = std::max(h, e.hessian);
            }
        }
    return {g <= 1e-5 && h <= 1e-3,
            std::to_string(cat.size()) + " functionals x 100 points, gradient " + fmt("%.2e", g) + ", Hessian " +
                fmt("%.2e", h)};
}

std::string summary_text(const McComponentSummary& s) {
    return s.name + " mean " + fmt("%+.3f", s.mean) + " sd " + fmt("%.3f", s.sd) + " cov " + fmt("%.3f", s.coverage);
}

Outcome scalar_mc() {
    bool ok = true;
    std::string detail;
    struct Setup {
        const char* g;
        double kappa, alpha;
    };
    for (const Setup su : {Setup{"square", 0.69, 1.6}, Setup{"log", 0.70, 1.5}}) {
        McStudy s;
        s.replications = 500;
        s.days = 5.0;
        s.seed = 4;
        s.plan.kappa = su.kappa;
        s.plan.rho = 0.47;
        s.truncation.alpha_mult = su.alpha;
        s.truncation.rho = 0.47;
        s.targets = {McTarget{su.g, {}}};
        s.threads = threads();
        const auto rep = run_mc(s);
        const auto& c = rep.summary[0];
        ok = ok && std::abs(c.mean) < 0.1 && within(c.sd, 0.85, 1.15) && within(c.coverage, 0.91, 0.975);
        detail += (detail.empty() ? "" : "; ") + summary_text(c);
    }
    return {ok, detail};
}

Outcome rates() {
    McStudy base;
    base.replications = 200;
    base.days = 1.0;
    base.seed = 5;
    base.scalar = ScalarModelParams{}.without_jumps();
    base.threads = threads();
    const std::vector<long> sizes = {2340, 4680, 9360, 18720, 46800};
    const double hat = rate_study(base, sizes).slope[0];

    McStudy psd = base;
    psd.plan.mode = EstimatorKind::Tilde;
    psd.plan.delta = 0.15;
    psd.plan.kappa = 0.79;
    psd.plan.theta = 0.5;
    const double tilde = rate_study(psd, sizes).slope[0];
    const double target = -(0.25 - 0.15 / 2);
    const bool ok = within(hat, -0.32, -0.18) && std::abs(tilde) < std::abs(hat) && std::abs(tilde - target) <= 0.07;
    return {ok, "hat slope " + fmt("%+.3f", hat) + ", tilde slope " + fmt("%+.3f", tilde)};
}

Outcome pca_mc() {
    McStudy s;
    s.model = McModel::Factor;
    s.replications = 300;
    s.days = 5.0;
    s.delta_n = 1.0 / 22800;
    s.seed = 6;
    s.factor.d = 10;
    s.factor.r = 3;
    s.plan.mode = EstimatorKind::Tilde;
    s.plan.theta = 0.23;
    s.plan.delta = 0.12;
    s.plan.kappa = 0.75;
    s.plan.varrho = 0.57;
    McTarget ev{"eigenvalue", {}};
    ev.params.cluster_sizes = {1, 1, 1, 7};
    McTarget q1{"eigenvector", {}};
    q1.params.index = 0;
    s.targets = {ev, q1};
    s.threads = threads();
    const auto rep = run_mc(s);
    // lambda1, lambda2, then q1 entries 1 and 2.
    bool ok = true;
    std::string detail;
    for (std::size_t p : {std::size_t{0}, std::size_t{1}, std::size_t{4}, std::size_t{5}}) {
        const auto& c = rep.summary[p];
        ok = ok && within(c.sd, 0.8, 1.2) && within(c.coverage, 0.90, 0.98);
        detail += (detail.empty() ? "" : "; ") + summary_text(c);
    }
    return {ok, detail};
}

Outcome bias_correction() {
    McStudy s;
    s.replications = 200;
    s.days = 1.0;
    s.seed = 7;
    s.scalar = ScalarModelParams{}.without_jumps();
    s.scalar.xi = 0.0;
    s.scalar.drift = 0.0;
    s.threads = threads();
    const auto c = run_mc(s).summary[0];
    const double gain = 1.0 - c.mae / c.mae_uncorrected;
    return {gain >= 0.25, "MAE " + fmt("%.3e", c.mae) + " vs " + fmt("%.3e", c.mae_uncorrected) + " uncorrected (" +
                              fmt("%.1f", 100 * gain) + "% reduction)"};
}

Outcome jump_robustness() {
    const double dn = 1.0 / 23400;
    const auto path = simulate_scalar(ScalarModelParams{}.without_jumps(), dn, 5.0, 8);
    const auto& grid = path.grid;
    TruncationSpec base;
    const double nu = threshold(base, dn, bipower(grid)).nu_n[0];
    Eigen::MatrixXd y = grid.values();
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<long> at(1, y.rows() - 1);
    for (int j = 0; j < 10; ++j) y.bottomRows(y.rows() - at(rng)).array() += 5 * nu;
    const LogPriceGrid jumped(y, dn);

    const auto plan = validate_tuning(TuningPlan{}, dn);
    auto run = [&](const LogPriceGrid& g, bool truncate) {
        PipelineConfig cfg;
        if (truncate)
            cfg.truncation = threshold(TruncationSpec{}, dn, bipower(g));
        else
            cfg.truncation.mode = TruncationMode::Off;
        return estimate(g, builtin("square"), plan, kc(), cfg).value(0);
    };
    const double on = std::abs(run(jumped, true) / run(grid, true) - 1);
    const double off = std::abs(run(jumped, false) / run(grid, false) - 1);
    return {on < 0.03 && off > 0.30, "jump size " + fmt("%.2e", 5 * nu) + ", change " + fmt("%.2f", 100 * on) +
                                         "% truncated, " + fmt("%.2f", 100 * off) + "% untruncated"};
}

Outcome psd() {
    double worst = 0;
    auto scan = [&](const SpotVolSeries& s) {
        for (const auto& c : s.c_mats)
            worst = std::min(worst, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(c).eigenvalues().minCoeff());
    };
    TuningPlan tp;
    tp.mode = EstimatorKind::Tilde;
    tp.delta = 0.12;
    tp.kappa = 0.75;
    tp.theta = 0.23;
    tp.varrho = 0.57;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto sp = simulate_scalar(ScalarModelParams{}, 1.0 / 23400, 2.0, seed);
        scan(spot_series(sp.grid, validate_tuning(tp, 1.0 / 23400), minmax_kernel(),
                         threshold(TruncationSpec{}, 1.0 / 23400, bipower(sp.grid))));
        FactorModelParams fp;
        fp.d = 10;
        const auto fpath = simulate_factor(fp, 1.0 / 22800, 1.0, seed, 100);
        scan(spot_series(fpath.grid, validate_tuning(tp, 1.0 / 22800), minmax_kernel(),
                         threshold(TruncationSpec{}, 1.0 / 22800, bipower(fpath.grid))));
    }
    std::mt19937_64 rng(10);
    double idem = 0;
    for (int i = 0; i < 1000; ++i) {
        const Eigen::MatrixXd a = oracle::random_symmetric(1 + i % 8, rng);
        const Eigen::MatrixXd p = psd_project(a);
        idem = std::max(idem, (psd_project(p) - p).cwiseAbs().maxCoeff() / std::max(1.0, p.cwiseAbs().maxCoeff()));
        worst = std::min(worst, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(p).eigenvalues().minCoeff());
    }
    return {worst >= -1e-12 && idem <= 1e-12,
            "min eigenvalue " + fmt("%.2e", worst) + ", projection idempotence " + fmt("%.2e", idem)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
    bool ok = true;
    std::string detail;
    McStudy s;
    s.replications = 6;
    s.days = 1.0;
    s.targets = {McTarget{"square", {}}, McTarget{"log", {}}};
    const auto a = run_mc(s), b = run_mc(s);
    s.threads = 4;
    const auto c = run_mc(s);
    double dev = 0;
    for (std::size_t r = 0; r < a.records.size(); ++r) {
        ok = ok && a.records[r].estimate == b.records[r].estimate && a.records[r].se == b.records[r].se;
        dev = std::max(dev, (a.records[r].estimate - c.records[r].estimate).cwiseAbs().maxCoeff());
    }

    const fs::path root = fs::temp_directory_path() / "volfn_acceptance";
    fs::remove_all(root);
    std::vector<std::string> outputs;
    for (const char* threads : {"1", "1", "4"}) {
        const fs::path dir = root / std::to_string(outputs.size());
        std::ostringstream out, err;
        ok = ok && cli::run({"simulate", "--days", "1", "--seed", "11", "--out", dir.string()}, out, err) == 0;
        ok = ok && cli::run({"estimate", "--input", (dir / "grid.csv").string(), "--functional", "square", "--threads",
                             threads, "--out", dir.string()},
                            out, err) == 0;
        outputs.push_back(slurp(dir / "grid.csv") + slurp(dir / "estimate.json"));
    }
    const bool bytes = outputs[0] == outputs[1];
    const auto ja = nlohmann::json::parse(slurp(root / "0" / "estimate.json"));
    const auto jc = nlohmann::json::parse(slurp(root / "2" / "estimate.json"));
    dev = std::max(dev, std::abs(ja["value"][0].get<double>() - jc["value"][0].get<double>()));
    ok = ok && bytes && dev <= 1e-12;
    detail = std::string("reruns ") + (bytes ? "byte-identical" : "differ") + ", thread deviation " + fmt("%.2e", dev);
    return {ok, detail};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"kernel constants", kernel_constants},
        {"FFT pre-averaging equivalence", fft_equivalence},
        {"derivative correctness", derivatives},
        {"scalar Monte Carlo", scalar_mc},
        {"convergence rate", rates},
        {"PCA Monte Carlo", pca_mc},
        {"bias-correction efficacy", bias_correction},
        {"jump robustness", jump_robustness},
        {"PSD guarantees", psd},
        {"determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += o.pass ? 0 : 1;
        std::cout << "criterion " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
                  << o.detail << " [" << fmt("%.1f", secs) << " s]" << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
