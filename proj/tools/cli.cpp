#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/sha.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "volfn/volfn.hpp"

namespace volfn::cli {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string git_blob_sha1(const std::string& bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
    SHA_CTX ctx;
    SHA1_Init(&ctx);
    SHA1_Update(&ctx, header.data(), header.size());
    SHA1_Update(&ctx, bytes.data(), bytes.size());
    unsigned char digest[SHA_DIGEST_LENGTH];
    SHA1_Final(digest, &ctx);
    std::ostringstream os;
    for (unsigned char c : digest) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(c);
    return os.str();
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

fs::path prepare_dir(const std::string& dir) {
    fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
    return p;
}

ordered_json vec_json(const Eigen::VectorXd& v) {
    ordered_json a = ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

ordered_json mat_json(const Eigen::MatrixXd& m) {
    ordered_json a = ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        a.push_back(row);
    }
    return a;
}

ordered_json plan_json(const WindowPlan& p) {
    ordered_json j;
    j["mode"] = kind_name(p.kind);
    j["l_n"] = p.l_n;
    j["k_n"] = p.k_n;
    j["m_n"] = p.m_n;
    j["theta"] = p.theta;
    j["theta_prime"] = p.tuning.theta_prime;
    j["varrho"] = p.tuning.varrho;
    j["kappa"] = p.tuning.kappa;
    j["rho"] = p.tuning.rho;
    j["delta"] = p.delta;
    j["nu_jump"] = p.tuning.nu_jump;
    j["relaxed"] = p.tuning.relaxed;
    j["warnings"] = p.warnings;
    return j;
}

ordered_json truncation_json(const TruncationSpec& t) {
    ordered_json j;
    j["mode"] = truncation_mode_name(t.mode);
    j["alpha_mult"] = t.alpha_mult;
    j["rho"] = t.rho;
    j["alpha"] = t.alpha;
    j["nu_n"] = t.nu_n;
    return j;
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

// Options shared by the estimation commands.
struct PlanArgs {
    std::string mode = "hat";
    bool psd = false;
    double theta = 1.0;
    double theta_prime = std::numeric_limits<double>::quiet_NaN();
    double varrho = 1.0;
    double kappa = 0.69;
    double rho = 0.47;
    double delta = 0.0;
    double nu_jump = 0.0;
    bool relaxed = false;
    std::string trunc_mode = "elementwise";
    double trunc_alpha = 1.5;
    double trunc_rho = 0.47;
    bool trunc_rho_set = false;
    std::string kernel = "minmax";
    std::string kernel_csv;
    std::string preavg = "auto";
    bool renormalize = false;
    double ci_level = 0.95;
    bool no_bias = false;
    int threads = 1;
};

void add_plan_options(CLI::App* app, PlanArgs& a, bool psd_default) {
    if (psd_default) a.mode = "tilde";
    app->add_option("--mode", a.mode, "estimator: hat (rate-optimal) or tilde (PSD plug-in)")
        ->check(CLI::IsMember({"hat", "tilde"}))
        ->capture_default_str();
    app->add_flag("--psd", a.psd, "use the PSD plug-in estimator (same as --mode tilde)");
    app->add_option("--theta", a.theta, "pre-averaging window constant")->capture_default_str();
    app->add_option("--theta-prime", a.theta_prime, "noise window constant (defaults to theta)");
    app->add_option("--varrho", a.varrho, "estimation window constant")->capture_default_str();
    app->add_option("--kappa", a.kappa, "estimation window exponent")->capture_default_str();
    app->add_option("--rho", a.rho, "truncation exponent used by the tuning check")->capture_default_str();
    app->add_option("--delta", a.delta, "PSD window exponent offset (tilde only)")->capture_default_str();
    app->add_option("--nu-jump", a.nu_jump, "jump activity index")->capture_default_str();
    app->add_flag("--relaxed", a.relaxed, "use the relaxed tuning range (hat only)");
    app->add_option("--trunc-mode", a.trunc_mode, "jump truncation: elementwise, global or off")
        ->check(CLI::IsMember({"elementwise", "global", "off"}))
        ->capture_default_str();
    app->add_option("--trunc-alpha", a.trunc_alpha, "threshold multiplier on the bipower variance")
        ->capture_default_str();
    app->add_option("--trunc-rho", a.trunc_rho, "threshold exponent (defaults to --rho)");
    app->add_option("--kernel", a.kernel, "kernel profile name")->capture_default_str();
    app->add_option("--kernel-csv", a.kernel_csv, "tabulated kernel profile (s,phi,phi_prime)");
    app->add_option("--preavg", a.preavg, "pre-averaging route: auto, direct or fft")
        ->check(CLI::IsMember({"auto", "direct", "fft"}))
        ->capture_default_str();
    app->add_flag("--renormalize-kept", a.renormalize, "rescale windows by the share of kept pre-averages");
    app->add_option("--ci-level", a.ci_level, "confidence level")->capture_default_str();
    app->add_flag("--no-bias-correction", a.no_bias, "report the uncorrected Riemann sum");
    app->add_option("--threads", a.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
}

TuningPlan resolve_plan(const PlanArgs& a, const CLI::App* app) {
    if (a.psd && a.mode == "hat" && app->count("--mode") > 0)
        throw ConfigError("--psd selects the PSD plug-in estimator and conflicts with --mode hat");
    TuningPlan p;
    p.mode = (a.psd || a.mode == "tilde") ? EstimatorKind::Tilde : EstimatorKind::Hat;
    if (p.mode == EstimatorKind::Hat && app->count("--delta") > 0 && a.delta != 0.0)
        throw ConfigError("--delta applies to the PSD plug-in estimator only (use --psd or --mode tilde)");
    if (p.mode == EstimatorKind::Tilde && a.relaxed)
        throw ConfigError("--relaxed applies to the rate-optimal (hat) estimator only");
    p.theta = a.theta;
    p.theta_prime = a.theta_prime;
    p.varrho = a.varrho;
    p.kappa = a.kappa;
    p.rho = a.rho;
    p.delta = p.mode == EstimatorKind::Tilde ? a.delta : 0.0;
    p.nu_jump = a.nu_jump;
    p.relaxed = a.relaxed;
    return p;
}

TruncationSpec resolve_truncation(const PlanArgs& a, const CLI::App* app) {
    TruncationSpec t;
    t.mode = truncation_mode_from(a.trunc_mode);
    t.alpha_mult = a.trunc_alpha;
    t.rho = app->count("--trunc-rho") > 0 ? a.trunc_rho : a.rho;
    return t;
}

KernelProfile resolve_kernel(const PlanArgs& a) {
    KernelProfile p = a.kernel_csv.empty() ? kernel_by_name(a.kernel) : load_kernel_csv(a.kernel_csv);
    validate_profile(p);
    return p;
}

PreavgMethod resolve_method(const std::string& s) {
    if (s == "direct") return PreavgMethod::Direct;
    if (s == "fft") return PreavgMethod::Fft;
    return PreavgMethod::Auto;
}

struct FunctionalArgs {
    std::string name = "square";
    std::vector<int> entry;
    double w = 1.0;
    int split = 1;
    int index = 1;
    std::vector<int> clusters;
};

void add_functional_options(CLI::App* app, FunctionalArgs& f) {
    app->add_option("--functional", f.name,
                    "trace, entry, square, log, logdet, laplace, beta, eigenvalue or eigenvector")
        ->capture_default_str();
    app->add_option("--entry", f.entry, "1-based indices j,k for the entry functional")->delimiter(',')->expected(2);
    app->add_option("--w", f.w, "Laplace transform argument")->capture_default_str();
    app->add_option("--split", f.split, "number of regressand assets for beta")->capture_default_str();
    app->add_option("--index", f.index, "1-based eigenvector index")->capture_default_str();
    app->add_option("--clusters", f.clusters, "eigenvalue cluster sizes, e.g. 1,1,8")->delimiter(',');
}

FunctionalParams resolve_functional(const FunctionalArgs& f, Eigen::Index d) {
    FunctionalParams p;
    if (!f.entry.empty()) {
        p.j = f.entry[0] - 1;
        p.k = f.entry[1] - 1;
        if (p.j < 0 || p.k < 0 || p.j >= d || p.k >= d) throw ConfigError("--entry indices must lie in 1..d");
    }
    p.w = f.w;
    p.split = f.split;
    p.index = f.index - 1;
    if (p.index < 0 || p.index >= d) throw ConfigError("--index must lie in 1..d");
    p.cluster_sizes = f.clusters;
    if (f.name == "eigenvalue" && p.cluster_sizes.empty()) p.cluster_sizes.assign(d, 1);
    return p;
}

// Every option of `app` with its effective value, in declaration order.
ordered_json options_json(const CLI::App* app) {
    ordered_json j = ordered_json::object();
    for (const CLI::Option* o : app->get_options()) {
        const std::string name = o->get_name(false, true);
        if (name.empty() || name == "--help" || name == "-h" || name == "--config") continue;
        std::string key = o->get_lnames().empty() ? name : o->get_lnames().front();
        if (o->count() > 0) {
            const auto& r = o->results();
            if (r.size() == 1)
                j[key] = r.front();
            else
                j[key] = r;
        } else {
            j[key] = o->get_default_str();
        }
    }
    return j;
}

void write_manifest(const fs::path& dir, const CLI::App* root, const CLI::App* sub,
                    const std::vector<std::string>& inputs) {
    ordered_json m;
    m["tool"] = "volfn";
    m["command"] = sub->get_name();
    m["options"] = options_json(sub);
    ordered_json ins = ordered_json::array();
    const CLI::Option* cfg = root->get_config_ptr();
    std::vector<std::string> all = inputs;
    if (cfg != nullptr && cfg->count() > 0) all.push_back(cfg->as<std::string>());
    for (const auto& path : all) {
        ordered_json e;
        e["path"] = path;
        e["sha1"] = git_blob_sha1(read_file(path));
        ins.push_back(e);
    }
    m["inputs"] = ins;
    write_text(dir / "manifest.json", dump(m));
}

ordered_json estimate_json(const FunctionalEstimate& e, const TruncationSpec& t) {
    ordered_json j;
    j["functional"] = e.functional;
    j["mode"] = kind_name(e.kind);
    j["outputs"] = e.output_names;
    j["value"] = vec_json(e.value);
    j["uncorrected"] = vec_json(e.uncorrected);
    j["avar"] = mat_json(e.avar);
    j["rate_scale"] = e.rate_scale;
    j["standard_error"] = vec_json(e.standard_error());
    j["ci_level"] = e.ci_level;
    j["ci"] = mat_json(e.ci);
    j["plan"] = plan_json(e.plan);
    j["truncation"] = truncation_json(t);
    j["n"] = e.n;
    j["delta_n"] = e.delta_n;
    j["horizon"] = e.horizon;
    j["windows"] = e.N_t;
    j["a_t"] = e.a_t;
    j["veto_fraction"] = e.veto_fraction;
    j["floored_windows"] = e.floored_windows;
    j["warnings"] = e.warnings;
    return j;
}

TruncationSpec resolved_threshold(const LogPriceGrid& grid, const TruncationSpec& t) {
    if (t.mode == TruncationMode::Off) return t;
    return threshold(grid, t, bipower(grid));
}

struct Common {
    std::string input;
    double delta_n = 1.0 / 23400.0;
    bool raw_prices = false;
    std::string out_dir = ".";
};

void add_input_options(CLI::App* app, Common& c) {
    app->add_option("--input", c.input, "CSV of log-prices with a header of labels")->required();
    app->add_option("--delta-n", c.delta_n, "sampling interval in trading days")->capture_default_str();
    app->add_flag("--raw-prices", c.raw_prices, "apply the natural log to each value first");
    app->add_option("--out", c.out_dir, "output directory")->capture_default_str();
}

// ---------------------------------------------------------------- commands

int cmd_kernel_constants(const CLI::App* root, const CLI::App* sub, const PlanArgs& a, int mesh,
                         const std::string& out_dir, std::ostream& out) {
    const KernelProfile p = resolve_kernel(a);
    const KernelConstants kc = constants(p, mesh);
    ordered_json j;
    j["kernel"] = p.name;
    j["phi0_at_0"] = kc.phi0_at_0;
    j["phi1_at_0"] = kc.phi1_at_0;
    j["Phi"] = {{"00", kc.Phi00}, {"01", kc.Phi01}, {"11", kc.Phi11}};
    j["Psi"] = {{"00", kc.Psi00}, {"01", kc.Psi01}, {"11", kc.Psi11}};
    const std::string text = dump(j);
    out << text;
    if (!out_dir.empty()) {
        const fs::path dir = prepare_dir(out_dir);
        write_text(dir / "kernel_constants.json", text);
        std::vector<std::string> inputs;
        if (!a.kernel_csv.empty()) inputs.push_back(a.kernel_csv);
        write_manifest(dir, root, sub, inputs);
    }
    return 0;
}

int cmd_estimate(const CLI::App* root, const CLI::App* sub, const Common& c, const PlanArgs& a,
                 const FunctionalArgs& fa, std::ostream& out) {
    const TuningPlan tp = resolve_plan(a, sub);
    const TruncationSpec ts = resolve_truncation(a, sub);
    const KernelProfile profile = resolve_kernel(a);
    const LogPriceGrid grid = load_csv(c.input, c.delta_n, c.raw_prices);
    const WindowPlan plan = validate_tuning(tp, c.delta_n);
    const MatrixFunctional g = builtin(fa.name, resolve_functional(fa, grid.dim()));
    const KernelConstants kc = constants(profile);
    PipelineConfig cfg;
    cfg.profile = profile;
    cfg.truncation = resolved_threshold(grid, ts);
    cfg.spot.method = resolve_method(a.preavg);
    cfg.spot.renormalize_kept = a.renormalize;
    cfg.estimate.bias_correction = !a.no_bias;
    cfg.estimate.ci_level = a.ci_level;
    cfg.estimate.threads = a.threads;
    const FunctionalEstimate e = estimate(grid, g, plan, kc, cfg);
    ordered_json j = estimate_json(e, cfg.truncation);
    if (g.experimental) j["experimental"] = true;
    const std::string text = dump(j);
    out << text;
    const fs::path dir = prepare_dir(c.out_dir);
    write_text(dir / "estimate.json", text);
    write_manifest(dir, root, sub, {c.input});
    return 0;
}

int cmd_pca(const CLI::App* root, const CLI::App* sub, const Common& c, const PlanArgs& a,
            const std::vector<int>& clusters, const std::vector<int>& vectors, double gap_rel, double budget,
            bool dump_windows, std::ostream& out) {
    if (sub->count("--mode") > 0 && a.mode == "hat")
        throw ConfigError("realized PCA uses the PSD plug-in estimator; --mode hat is not available");
    PlanArgs pa = a;
    pa.mode = "tilde";
    const TuningPlan tp = resolve_plan(pa, sub);
    const TruncationSpec ts = resolve_truncation(pa, sub);
    const KernelProfile profile = resolve_kernel(pa);
    const LogPriceGrid grid = load_csv(c.input, c.delta_n, c.raw_prices);
    const WindowPlan plan = validate_tuning(tp, c.delta_n);
    const KernelConstants kc = constants(profile);
    const Eigen::Index d = grid.dim();
    const ClusterSpec cl = clusters.empty() ? ClusterSpec::singletons(static_cast<int>(d)) : ClusterSpec::from_sizes(clusters);
    cl.check(d);
    const TruncationSpec trunc = resolved_threshold(grid, ts);
    SpotOptions so;
    so.threads = a.threads;
    so.method = resolve_method(a.preavg);
    so.renormalize_kept = a.renormalize;
    const SpotVolSeries spot = spot_series(grid, plan, profile, trunc, so);
    PcaOptions po;
    po.gap_rel = gap_rel;
    po.exclusion_budget = budget;
    po.bias_correction = !a.no_bias;
    po.ci_level = a.ci_level;
    po.threads = a.threads;

    ordered_json j;
    j["functional"] = "realized-pca";
    j["mode"] = "tilde";
    const auto ev = realized_eigenvalues(spot, cl, plan, kc, po);
    ordered_json je;
    je["clusters"] = cl.bounds;
    je["value"] = vec_json(ev.value);
    je["uncorrected"] = vec_json(ev.uncorrected);
    je["avar"] = mat_json(ev.avar);
    je["ci"] = mat_json(ev.ci);
    je["excluded_windows"] = ev.excluded;
    j["eigenvalues"] = je;
    ordered_json jv = ordered_json::array();
    for (int k : vectors) {
        if (k < 1 || k > d) throw ConfigError("--eigenvectors entries must lie in 1..d");
        const auto q = realized_eigenvector(spot, k - 1, plan, kc, po);
        ordered_json e;
        e["index"] = k;
        e["value"] = vec_json(q.value);
        e["uncorrected"] = vec_json(q.uncorrected);
        e["avar"] = mat_json(q.avar);
        e["ci"] = mat_json(q.ci);
        e["excluded_windows"] = q.excluded;
        jv.push_back(e);
    }
    j["eigenvectors"] = jv;
    j["rate_scale"] = plan.rate_scale();
    j["ci_level"] = a.ci_level;
    j["plan"] = plan_json(plan);
    j["truncation"] = truncation_json(trunc);
    j["n"] = grid.increment_count();
    j["delta_n"] = c.delta_n;
    j["windows"] = spot.N_t;
    j["veto_fraction"] = spot.veto_fraction;
    const std::string text = dump(j);
    out << text;
    const fs::path dir = prepare_dir(c.out_dir);
    write_text(dir / "pca.json", text);
    if (dump_windows) {
        const auto sp = spectra(spot, a.threads);
        std::ostringstream os;
        os << "window,start";
        for (Eigen::Index v = 0; v < d; ++v) os << ",lambda" << v + 1;
        for (Eigen::Index v = 0; v < d; ++v)
            for (Eigen::Index p = 0; p < d; ++p) os << ",q" << v + 1 << "_" << p + 1;
        os << '\n';
        for (std::size_t w = 0; w < sp.size(); ++w) {
            os << w << ',' << spot.starts[w];
            for (Eigen::Index v = 0; v < d; ++v) os << ',' << detail::format_double(sp[w].values(v));
            for (Eigen::Index v = 0; v < d; ++v)
                for (Eigen::Index p = 0; p < d; ++p) os << ',' << detail::format_double(sp[w].vectors(p, v));
            os << '\n';
        }
        write_text(dir / "windows.csv", os.str());
    }
    write_manifest(dir, root, sub, {c.input});
    return 0;
}

struct ModelArgs {
    std::string model = "scalar";
    double days = 5.0;
    double delta_n = 1.0 / 23400.0;
    bool no_jumps = false;
    int substeps = 1;
    int latent_stride = 10;
    ScalarModelParams scalar;
    FactorModelParams factor;
};

void add_model_options(CLI::App* app, ModelArgs& m) {
    app->add_option("--model", m.model, "scalar or factor")->check(CLI::IsMember({"scalar", "factor"}))->capture_default_str();
    app->add_option("--days", m.days, "horizon in trading days")->capture_default_str();
    app->add_option("--delta-n", m.delta_n, "sampling interval in trading days")->capture_default_str();
    app->add_flag("--no-jumps", m.no_jumps, "switch off price and volatility jumps");
    app->add_option("--substeps", m.substeps, "Euler steps per observation (scalar model)")->capture_default_str();
    app->add_option("--latent-stride", m.latent_stride, "steps between stored latent matrices (factor model)")
        ->capture_default_str();
    auto& s = m.scalar;
    app->add_option("--drift", s.drift)->capture_default_str()->group("Scalar model");
    app->add_option("--vol-kappa", s.kappa)->capture_default_str()->group("Scalar model");
    app->add_option("--vol-theta", s.theta)->capture_default_str()->group("Scalar model");
    app->add_option("--vol-xi", s.xi)->capture_default_str()->group("Scalar model");
    app->add_option("--vol-rho", s.rho)->capture_default_str()->group("Scalar model");
    app->add_option("--c0", s.c0)->capture_default_str()->group("Scalar model");
    app->add_option("--noise-sd", s.noise_sd)->capture_default_str()->group("Scalar model");
    app->add_option("--jump-mean", s.jump_mean)->capture_default_str()->group("Scalar model");
    app->add_option("--jump-sd", s.jump_sd)->capture_default_str()->group("Scalar model");
    app->add_option("--jump-intensity", s.jump_intensity)->capture_default_str()->group("Scalar model");
    app->add_option("--vol-jump-log-mean", s.vol_jump_log_mean)->capture_default_str()->group("Scalar model");
    app->add_option("--vol-jump-log-var", s.vol_jump_log_var)->capture_default_str()->group("Scalar model");
    app->add_option("--vol-jump-intensity", s.vol_jump_intensity)->capture_default_str()->group("Scalar model");
    auto& f = m.factor;
    const char* g = "Factor model";
    app->add_option("--d", f.d, "assets")->capture_default_str()->group(g);
    app->add_option("--r", f.r, "factors")->capture_default_str()->group(g);
    app->add_option("--loading-kappa", f.loading_kappa)->capture_default_str()->group(g);
    app->add_option("--market-loading-mean", f.market_loading_mean)->capture_default_str()->group(g);
    app->add_option("--market-loading-spread", f.market_loading_spread)->capture_default_str()->group(g);
    app->add_option("--market-loading-xi", f.market_loading_xi)->capture_default_str()->group(g);
    app->add_option("--other-loading-xi", f.other_loading_xi)->capture_default_str()->group(g);
    app->add_option("--other-loading-level", f.other_loading_level)->delimiter(',')->group(g);
    app->add_option("--factor-drift", f.factor_drift)->delimiter(',')->group(g);
    app->add_option("--factor-var-kappa", f.factor_var_kappa)->delimiter(',')->group(g);
    app->add_option("--factor-var-mean", f.factor_var_mean)->delimiter(',')->group(g);
    app->add_option("--factor-var-eta", f.factor_var_eta)->delimiter(',')->group(g);
    app->add_option("--leverage", f.leverage)->delimiter(',')->group(g);
    app->add_option("--factor-jump-intensity", f.factor_jump_intensity)->delimiter(',')->group(g);
    app->add_option("--factor-jump-scale", f.factor_jump_scale)->delimiter(',')->group(g);
    app->add_option("--factor-var-jump-mean", f.factor_var_jump_mean)->delimiter(',')->group(g);
    app->add_option("--idio-kappa", f.idio_kappa)->capture_default_str()->group(g);
    app->add_option("--idio-mean", f.idio_mean)->capture_default_str()->group(g);
    app->add_option("--idio-eta", f.idio_eta)->capture_default_str()->group(g);
    app->add_option("--idio-jump-intensity", f.idio_jump_intensity)->capture_default_str()->group(g);
    app->add_option("--idio-jump-scale", f.idio_jump_scale)->capture_default_str()->group(g);
    app->add_option("--factor-noise-sd", f.noise_sd)->capture_default_str()->group(g);
    app->add_option("--noise-corr", f.noise_corr)->capture_default_str()->group(g);
}

void finalize_model(ModelArgs& m) {
    if (m.no_jumps) {
        m.scalar = m.scalar.without_jumps();
        std::fill(m.factor.factor_jump_intensity.begin(), m.factor.factor_jump_intensity.end(), 0.0);
        m.factor.idio_jump_intensity = 0.0;
    }
}

int cmd_simulate(const CLI::App* root, const CLI::App* sub, ModelArgs m, std::uint64_t seed,
                 const std::string& out_dir, std::ostream& out) {
    finalize_model(m);
    const fs::path dir = prepare_dir(out_dir);
    ordered_json j;
    j["model"] = m.model;
    j["seed"] = seed;
    if (m.model == "scalar") {
        const ScalarPath p = simulate_scalar(m.scalar, m.delta_n, m.days, seed, m.substeps);
        write_csv(p.grid, (dir / "grid.csv").string());
        std::ostringstream os;
        os << "t,c,x\n";
        for (Eigen::Index i = 0; i < p.grid.rows(); ++i) {
            const Eigen::Index f = i * p.substeps;
            os << detail::format_double(i * m.delta_n) << ',' << detail::format_double(p.latent.c(f)) << ','
               << detail::format_double(p.latent.x(f)) << '\n';
        }
        write_text(dir / "latent.csv", os.str());
        j["observations"] = p.grid.rows();
        j["floor_hits"] = p.latent.floor_hits;
        j["integrated_variance"] = integrate_latent(p.latent, [](double c) { return c; });
    } else {
        const FactorPath p = simulate_factor(m.factor, m.delta_n, m.days, seed, m.latent_stride);
        write_csv(p.grid, (dir / "grid.csv").string());
        const int d = m.factor.d;
        std::ostringstream os;
        os << "t";
        for (int a = 0; a < d; ++a)
            for (int b = a; b < d; ++b) os << ",c" << a + 1 << "_" << b + 1;
        os << '\n';
        for (std::size_t i = 0; i < p.c_latent.size(); ++i) {
            const double t = std::min(static_cast<double>(i * p.latent_stride), static_cast<double>(p.steps)) * p.dt;
            os << detail::format_double(t);
            for (int a = 0; a < d; ++a)
                for (int b = a; b < d; ++b) os << ',' << detail::format_double(p.c_latent[i](a, b));
            os << '\n';
        }
        write_text(dir / "latent.csv", os.str());
        j["observations"] = p.grid.rows();
        j["floor_hits"] = p.floor_hits;
        j["latent_stride"] = p.latent_stride;
    }
    const std::string text = dump(j);
    out << text;
    write_text(dir / "simulate.json", text);
    write_manifest(dir, root, sub, {});
    return 0;
}

int cmd_mc(const CLI::App* root, const CLI::App* sub, ModelArgs m, const PlanArgs& a,
           const std::vector<std::string>& targets, const FunctionalArgs& fa, int reps, std::uint64_t seed,
           const std::vector<long>& rate_sizes, bool plot_data, const std::string& out_dir, std::ostream& out) {
    finalize_model(m);
    McStudy s;
    s.model = mc_model_from(m.model);
    s.replications = reps;
    s.seed = seed;
    s.days = m.days;
    s.delta_n = m.delta_n;
    s.substeps = m.substeps;
    s.latent_stride = m.latent_stride;
    s.scalar = m.scalar;
    s.factor = m.factor;
    s.plan = resolve_plan(a, sub);
    s.truncation = resolve_truncation(a, sub);
    s.profile = resolve_kernel(a);
    s.bias_correction = !a.no_bias;
    s.ci_level = a.ci_level;
    s.threads = a.threads;
    const Eigen::Index d = s.model == McModel::Scalar ? 1 : s.factor.d;
    s.targets.clear();
    for (const auto& name : targets) {
        FunctionalArgs f = fa;
        f.name = name;
        s.targets.push_back({name, resolve_functional(f, d)});
    }
    const fs::path dir = prepare_dir(out_dir);
    if (!rate_sizes.empty()) {
        const RateTable t = rate_study(s, rate_sizes);
        std::ostringstream os;
        os << "n,delta_n,l_n,k_n";
        for (const auto& n : t.names) os << ",rmse_" << n;
        os << '\n';
        for (const auto& p : t.points) {
            os << p.n << ',' << detail::format_double(p.delta_n) << ',' << p.l_n << ',' << p.k_n;
            for (double r : p.rmse) os << ',' << detail::format_double(r);
            os << '\n';
        }
        write_text(dir / "rate.csv", os.str());
        ordered_json j;
        j["names"] = t.names;
        j["slope"] = t.slope;
        const std::string text = dump(j);
        out << text;
        write_text(dir / "rate.json", text);
        write_manifest(dir, root, sub, {});
        return 0;
    }
    const McReport r = run_mc(s);
    std::ostringstream os;
    os << "rep,seed,component,estimate,uncorrected,truth,se,studentized,hit\n";
    for (const auto& rec : r.records)
        for (std::size_t p = 0; p < r.names.size(); ++p)
            os << rec.rep << ',' << rec.seed << ',' << r.names[p] << ',' << detail::format_double(rec.estimate(p)) << ','
               << detail::format_double(rec.uncorrected(p)) << ',' << detail::format_double(rec.truth(p)) << ','
               << detail::format_double(rec.se(p)) << ',' << detail::format_double(rec.studentized(p)) << ','
               << static_cast<int>(rec.hit[p]) << '\n';
    write_text(dir / "records.csv", os.str());
    ordered_json j;
    j["model"] = m.model;
    j["replications"] = reps;
    j["plan"] = plan_json(r.plan);
    j["floor_hit_rate"] = r.steps > 0 ? static_cast<double>(r.floor_hits) / r.steps : 0.0;
    ordered_json comps = ordered_json::array();
    for (const auto& c : r.summary) {
        ordered_json e;
        e["name"] = c.name;
        e["studentized_mean"] = c.mean;
        e["studentized_sd"] = c.sd;
        e["coverage"] = c.coverage;
        e["rmse"] = c.rmse;
        e["mae"] = c.mae;
        e["mae_uncorrected"] = c.mae_uncorrected;
        e["mean_truth"] = c.mean_truth;
        comps.push_back(e);
    }
    j["components"] = comps;
    const std::string text = dump(j);
    out << text;
    write_text(dir / "summary.json", text);
    if (plot_data) {
        std::ostringstream ps;
        ps << "component,x,density,normal\n";
        for (std::size_t p = 0; p < r.names.size(); ++p) {
            std::vector<double> z;
            for (const auto& rec : r.records) z.push_back(rec.studentized(p));
            for (const auto& row : density_table(z))
                ps << r.names[p] << ',' << detail::format_double(row.x) << ',' << detail::format_double(row.empirical)
                   << ',' << detail::format_double(row.normal) << '\n';
        }
        write_text(dir / "density.csv", ps.str());
    }
    write_manifest(dir, root, sub, {});
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Integrated volatility functionals from noisy high-frequency prices", "volfn"};
    app.set_config("--config", "", "TOML configuration; command-line flags take precedence");
    app.require_subcommand(1);

    // kernel-constants
    auto* kcmd = app.add_subcommand("kernel-constants", "print the kernel constants");
    PlanArgs kargs;
    int mesh = 1000;
    std::string kout;
    kcmd->add_option("--kernel", kargs.kernel, "kernel profile name")->capture_default_str();
    kcmd->add_option("--kernel-csv", kargs.kernel_csv, "tabulated kernel profile (s,phi,phi_prime)");
    kcmd->add_option("--mesh", mesh, "initial quadrature panels (>= 1000)")->capture_default_str();
    kcmd->add_option("--out", kout, "also write kernel_constants.json and manifest.json here");

    // estimate
    auto* ecmd = app.add_subcommand("estimate", "estimate an integrated volatility functional");
    Common ec;
    PlanArgs ea;
    FunctionalArgs ef;
    add_input_options(ecmd, ec);
    add_plan_options(ecmd, ea, false);
    add_functional_options(ecmd, ef);

    // pca
    auto* pcmd = app.add_subcommand("pca", "realized eigenvalues and eigenvectors");
    Common pc;
    PlanArgs pa;
    std::vector<int> clusters, eigvecs;
    double gap_rel = 1e-6, budget = 0.05;
    bool dump_windows = false;
    add_input_options(pcmd, pc);
    add_plan_options(pcmd, pa, true);
    pa.theta = 0.23;
    pa.varrho = 0.57;
    pa.kappa = 0.75;
    pa.delta = 0.12;
    pcmd->get_option("--theta")->default_val(pa.theta);
    pcmd->get_option("--varrho")->default_val(pa.varrho);
    pcmd->get_option("--kappa")->default_val(pa.kappa);
    pcmd->get_option("--delta")->default_val(pa.delta);
    pcmd->add_option("--clusters", clusters, "eigenvalue cluster sizes, e.g. 1,1,8")->delimiter(',');
    pcmd->add_option("--eigenvectors", eigvecs, "1-based eigenvector indices to integrate")->delimiter(',');
    pcmd->add_option("--gap-rel", gap_rel, "eigen-gap tolerance relative to the trace")->capture_default_str();
    pcmd->add_option("--exclusion-budget", budget, "largest share of windows failing the gap test")
        ->capture_default_str();
    pcmd->add_flag("--dump-windows", dump_windows, "write per-window spectra to windows.csv");

    // simulate
    auto* scmd = app.add_subcommand("simulate", "simulate a noisy price panel with its latent volatility");
    ModelArgs sm;
    std::uint64_t sseed = 1;
    std::string sout = ".";
    add_model_options(scmd, sm);
    scmd->add_option("--seed", sseed, "random seed")->capture_default_str();
    scmd->add_option("--out", sout, "output directory")->capture_default_str();

    // mc
    auto* mcmd = app.add_subcommand("mc", "Monte Carlo study of studentized errors and coverage");
    ModelArgs mm;
    PlanArgs ma;
    FunctionalArgs mf;
    std::vector<std::string> targets = {"square"};
    int reps = 100;
    std::uint64_t mseed = 1;
    std::vector<long> rate_sizes;
    bool plot = false;
    std::string mout = ".";
    add_model_options(mcmd, mm);
    add_plan_options(mcmd, ma, false);
    mcmd->add_option("--functional", targets, "target functionals (repeatable)")->delimiter(',')->capture_default_str();
    mcmd->add_option("--entry", mf.entry, "1-based indices j,k for the entry functional")->delimiter(',')->expected(2);
    mcmd->add_option("--w", mf.w, "Laplace transform argument")->capture_default_str();
    mcmd->add_option("--split", mf.split, "number of regressand assets for beta")->capture_default_str();
    mcmd->add_option("--index", mf.index, "1-based eigenvector index")->capture_default_str();
    mcmd->add_option("--clusters", mf.clusters, "eigenvalue cluster sizes")->delimiter(',');
    mcmd->add_option("--reps", reps, "replications")->capture_default_str();
    mcmd->add_option("--seed", mseed, "master seed")->capture_default_str();
    mcmd->add_option("--rate-sizes", rate_sizes, "sample sizes for an RMSE rate table at fixed --days")->delimiter(',');
    mcmd->add_flag("--plot-data", plot, "write studentized-error densities next to the normal curve");
    mcmd->add_option("--out", mout, "output directory")->capture_default_str();

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: config error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (kcmd->parsed()) return cmd_kernel_constants(&app, kcmd, kargs, mesh, kout, out);
        if (ecmd->parsed()) return cmd_estimate(&app, ecmd, ec, ea, ef, out);
        if (pcmd->parsed()) return cmd_pca(&app, pcmd, pc, pa, clusters, eigvecs, gap_rel, budget, dump_windows, out);
        if (scmd->parsed()) return cmd_simulate(&app, scmd, sm, sseed, sout, out);
        if (mcmd->parsed()) return cmd_mc(&app, mcmd, mm, ma, targets, mf, reps, mseed, rate_sizes, plot, mout, out);
    } catch (const Error& e) {
        err << "error: " << kind_name(e.kind()) << ": " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 4;
    }
    return 2;
}

}  // namespace volfn::cli
