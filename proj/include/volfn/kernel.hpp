#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "grid.hpp"

namespace volfn {

// Smoothing profile on [0, 1] with its almost-everywhere derivative.
// Breakpoints are interior points where the derivative may jump.
struct KernelProfile {
    std::string name;
    std::function<double(double)> phi;
    std::function<double(double)> phi_prime;
    std::vector<double> breakpoints;
};

inline KernelProfile minmax_kernel() {
    KernelProfile p;
    p.name = "minmax";
    p.phi = [](double s) { return (s <= 0.0 || s >= 1.0) ? 0.0 : std::min(s, 1.0 - s); };
    p.phi_prime = [](double s) {
        if (s < 0.0 || s > 1.0) return 0.0;
        return s < 0.5 ? 1.0 : -1.0;
    };
    p.breakpoints = {0.5};
    return p;
}

inline KernelProfile scaled_kernel(const KernelProfile& base, double factor) {
    KernelProfile p = base;
    p.name = base.name + "*" + detail::format_double(factor);
    p.phi = [f = base.phi, factor](double s) { return factor * f(s); };
    p.phi_prime = [f = base.phi_prime, factor](double s) { return factor * f(s); };
    return p;
}

// Piecewise cubic Hermite profile through tabulated (s, phi, phi') nodes.
inline KernelProfile tabulated_kernel(std::vector<double> s, std::vector<double> phi, std::vector<double> dphi,
                                      std::vector<double> breakpoints, std::string name = "tabulated") {
    const std::size_t n = s.size();
    if (n < 3 || phi.size() != n || dphi.size() != n) throw DataError("tabulated kernel needs >= 3 aligned nodes");
    for (std::size_t i = 1; i < n; ++i)
        if (!(s[i] > s[i - 1])) throw DataError("tabulated kernel nodes must be strictly increasing");
    if (std::abs(s.front()) > 1e-12 || std::abs(s.back() - 1.0) > 1e-12)
        throw DataError("tabulated kernel must span [0, 1]");
    struct Table {
        std::vector<double> s, f, df;
    };
    auto table = std::make_shared<Table>(Table{std::move(s), std::move(phi), std::move(dphi)});
    auto locate = [table](double x) {
        auto it = std::upper_bound(table->s.begin(), table->s.end(), x);
        std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - table->s.begin() - 1, 0));
        return std::min(i, table->s.size() - 2);
    };
    KernelProfile p;
    p.name = std::move(name);
    p.phi = [table, locate](double x) {
        if (x <= 0.0 || x >= 1.0) return 0.0;
        const std::size_t i = locate(x);
        const double h = table->s[i + 1] - table->s[i];
        const double t = (x - table->s[i]) / h;
        const double h00 = (1 + 2 * t) * (1 - t) * (1 - t), h10 = t * (1 - t) * (1 - t);
        const double h01 = t * t * (3 - 2 * t), h11 = t * t * (t - 1);
        return h00 * table->f[i] + h10 * h * table->df[i] + h01 * table->f[i + 1] + h11 * h * table->df[i + 1];
    };
    p.phi_prime = [table, locate](double x) {
        if (x < 0.0 || x > 1.0) return 0.0;
        const std::size_t i = locate(x);
        const double h = table->s[i + 1] - table->s[i];
        const double t = (x - table->s[i]) / h;
        const double d00 = 6 * t * t - 6 * t, d10 = 3 * t * t - 4 * t + 1;
        const double d01 = -6 * t * t + 6 * t, d11 = 3 * t * t - 2 * t;
        return (d00 * table->f[i] + d01 * table->f[i + 1]) / h + d10 * table->df[i] + d11 * table->df[i + 1];
    };
    p.breakpoints = std::move(breakpoints);
    return p;
}

// CSV with columns s,phi,phi_prime; an optional "# breakpoints: a b" line
// declares derivative jumps.
inline KernelProfile load_kernel_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open kernel table " + path);
    std::vector<double> s, f, df, bps;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        if (t[0] == '#') {
            const auto colon = t.find(':');
            if (t.find("breakpoints") != std::string::npos && colon != std::string::npos) {
                std::istringstream ss(t.substr(colon + 1));
                std::string tok;
                while (ss >> tok) bps.push_back(detail::parse_double(tok, line_no));
            }
            continue;
        }
        const auto fields = detail::split_csv_line(t);
        if (fields.size() != 3) throw FormatError(path + ": line " + std::to_string(line_no) + " needs 3 fields");
        if (!header_seen) {
            header_seen = true;
            char c0 = detail::trim(fields[0]).empty() ? 'x' : detail::trim(fields[0])[0];
            if (!(std::isdigit(static_cast<unsigned char>(c0)) || c0 == '-' || c0 == '.')) continue;
        }
        s.push_back(detail::parse_double(fields[0], line_no));
        f.push_back(detail::parse_double(fields[1], line_no));
        df.push_back(detail::parse_double(fields[2], line_no));
    }
    return tabulated_kernel(std::move(s), std::move(f), std::move(df), std::move(bps), "table:" + path);
}

inline KernelProfile kernel_by_name(const std::string& name) {
    if (name == "minmax") return minmax_kernel();
    throw ConfigError("unknown kernel '" + name + "' (available: minmax, or a table via --kernel-csv)");
}

// Support, energy and derivative consistency checks on a 1e4-point mesh.
inline void validate_profile(const KernelProfile& p) {
    if (!p.phi || !p.phi_prime) throw ConfigError("kernel profile lacks phi or phi'");
    if (std::abs(p.phi(0.0)) > 1e-12 || std::abs(p.phi(1.0)) > 1e-12)
        throw ConfigError("kernel profile must vanish at 0 and 1");
    const int mesh = 10000;
    const double h = 1e-6;
    double energy = 0.0;
    std::vector<double> bps = p.breakpoints;
    bps.push_back(0.0);
    bps.push_back(1.0);
    auto near_break = [&](double x, double tol) {
        for (double b : bps)
            if (std::abs(x - b) <= tol) return true;
        return false;
    };
    double prev_x = -1.0, prev_d = 0.0;
    for (int i = 1; i < mesh; ++i) {
        const double x = static_cast<double>(i) / mesh;
        const double v = p.phi(x);
        if (!std::isfinite(v)) throw ConfigError("kernel profile is not finite at " + std::to_string(x));
        energy += v * v / mesh;
        if (near_break(x, 2 * h)) {
            prev_x = -1.0;
            continue;
        }
        const double fd = (p.phi(x + h) - p.phi(x - h)) / (2 * h);
        const double d = p.phi_prime(x);
        if (std::abs(fd - d) > 1e-6 * std::max(1.0, std::abs(d)))
            throw ConfigError("kernel derivative disagrees with finite difference at s=" + std::to_string(x));
        if (prev_x >= 0.0) {
            bool crosses = false;
            for (double b : bps)
                if (b > prev_x && b < x) crosses = true;
            if (!crosses && std::abs(d - prev_d) / (x - prev_x) > 1e8)
                throw ConfigError("kernel derivative fails the Lipschitz bound near s=" + std::to_string(x));
        }
        prev_x = x;
        prev_d = d;
    }
    if (!(energy > 0.0)) throw ConfigError("kernel profile has zero energy");
}

// Kernel sampled at h / l_n.
struct DiscreteKernel {
    int l_n = 0;
    std::vector<double> weights;       // h = 1 .. l_n - 1
    std::vector<double> diff_weights;  // h = 0 .. l_n - 1, phi_{h+1} - phi_h
    double psi_n = 0.0;
};

inline DiscreteKernel discretize(const KernelProfile& p, int l_n) {
    if (l_n < 2) throw TuningError("pre-averaging window l_n must be >= 2, got " + std::to_string(l_n));
    DiscreteKernel dk;
    dk.l_n = l_n;
    std::vector<double> full(static_cast<std::size_t>(l_n) + 1, 0.0);
    for (int h = 1; h < l_n; ++h) full[h] = p.phi(static_cast<double>(h) / l_n);
    dk.weights.assign(full.begin() + 1, full.end() - 1);
    dk.diff_weights.resize(l_n);
    for (int h = 0; h < l_n; ++h) dk.diff_weights[h] = full[h + 1] - full[h];
    for (double w : dk.weights) dk.psi_n += w * w;
    if (!(dk.psi_n > 0.0)) throw TuningError("discretized kernel has zero energy at l_n=" + std::to_string(l_n));
    return dk;
}

struct KernelConstants {
    double phi0_at_0 = 0.0;
    double phi1_at_0 = 0.0;
    double Phi00 = 0.0, Phi01 = 0.0, Phi11 = 0.0;
    double Psi00 = 0.0, Psi01 = 0.0, Psi11 = 0.0;
};

namespace detail {

// Richardson-extrapolated composite midpoint rule for a vector-valued
// integrand over [a, b], split at the given breakpoints. Each piece starts
// from `panels` panels scaled by its length and triples the panel count until
// every component moves by less than tol. Midpoints never touch a piece
// boundary, so one-sided limits at kinks come for free.
template <std::size_t K, class F>
std::array<double, K> romberg(F&& f, double a, double b, std::vector<double> breaks, int panels, double tol,
                              std::array<double, K> abs_floor = {}, int max_levels = 8) {
    std::array<double, K> total{};
    if (!(b > a)) return total;
    breaks.push_back(a);
    breaks.push_back(b);
    std::sort(breaks.begin(), breaks.end());
    const double merge = 1e-13 * (b - a);
    std::vector<double> cuts;
    for (double x : breaks) {
        if (x < a || x > b) continue;
        if (cuts.empty() || x - cuts.back() > merge) cuts.push_back(x);
    }
    if (b - cuts.back() <= merge) cuts.back() = b;
    else cuts.push_back(b);
    // Rounding noise floor: a coarse midpoint estimate of the integral of |f|.
    std::array<double, K> global_abs{};
    for (std::size_t piece = 0; piece + 1 < cuts.size(); ++piece) {
        const double lo = cuts[piece], hi = cuts[piece + 1];
        const int m = 16;
        for (int i = 0; i < m; ++i) {
            const auto v = f(lo + (i + 0.5) * (hi - lo) / m);
            for (std::size_t c = 0; c < K; ++c) global_abs[c] += std::abs(v[c]) * (hi - lo) / m;
        }
    }
    for (std::size_t piece = 0; piece + 1 < cuts.size(); ++piece) {
        const double lo = cuts[piece], hi = cuts[piece + 1];
        long n = std::max(2L, static_cast<long>(std::ceil(panels * (hi - lo) / (b - a))));
        double h = (hi - lo) / n;
        std::array<double, K> mid{}, abs_mid{};
        // Sum over the midpoints of panels i = 0..n-1 at offsets `off` (in units of h).
        auto accumulate = [&](long count, double step, double first, std::array<double, K>& s,
                              std::array<double, K>& sa) {
            for (long i = 0; i < count; ++i) {
                const auto v = f(lo + first + i * step);
                for (std::size_t c = 0; c < K; ++c) {
                    s[c] += v[c];
                    sa[c] += std::abs(v[c]);
                }
            }
        };
        accumulate(n, h, 0.5 * h, mid, abs_mid);
        std::vector<std::array<double, K>> prev_row(1), row;
        for (std::size_t c = 0; c < K; ++c) prev_row[0][c] = h * mid[c];
        bool converged = false;
        for (int level = 1; level <= max_levels; ++level) {
            // Tripling keeps the old midpoints; add the two new ones per panel.
            std::array<double, K> add{}, abs_add{};
            const double h3 = h / 3.0;
            accumulate(n, h, 0.5 * h3, add, abs_add);
            accumulate(n, h, 2.5 * h3, add, abs_add);
            for (std::size_t c = 0; c < K; ++c) {
                mid[c] += add[c];
                abs_mid[c] += abs_add[c];
            }
            n *= 3;
            h = h3;
            row.assign(static_cast<std::size_t>(level) + 1, {});
            for (std::size_t c = 0; c < K; ++c) row[0][c] = h * mid[c];
            double factor = 1.0;
            for (int j = 1; j <= level; ++j) {
                factor *= 9.0;
                for (std::size_t c = 0; c < K; ++c)
                    row[j][c] = row[j - 1][c] + (row[j - 1][c] - prev_row[j - 1][c]) / (factor - 1.0);
            }
            bool ok = true;
            for (std::size_t c = 0; c < K; ++c) {
                const double change = std::abs(row[level][c] - prev_row[level - 1][c]);
                const double scale = std::max(std::abs(row[level][c]), h * abs_mid[c]);
                const double noise = 1e3 * std::numeric_limits<double>::epsilon() * global_abs[c];
                if (change > tol * scale && change > noise && change > abs_floor[c] && change > 1e-300) ok = false;
            }
            prev_row = row;
            if (ok && level >= 2) {
                converged = true;
                break;
            }
        }
        if (!converged)
            throw NumericError("kernel quadrature did not reach relative tolerance " + detail::format_double(tol));
        for (std::size_t c = 0; c < K; ++c) total[c] += prev_row.back()[c];
    }
    return total;
}

}  // namespace detail

// Returns (phi_0(s), phi_1(s)).
inline std::array<double, 2> kernel_autocorrelations(const KernelProfile& p, double s, int mesh = 1000,
                                                     double tol = 1e-8, std::array<double, 2> abs_floor = {}) {
    std::vector<double> breaks;
    for (double b : p.breakpoints) {
        breaks.push_back(b);
        breaks.push_back(b + s);
    }
    breaks.push_back(s);  // phi(u - s) starts at u = s
    return detail::romberg<2>(
        [&](double u) {
            return std::array<double, 2>{p.phi(u) * p.phi(u - s), p.phi_prime(u) * p.phi_prime(u - s)};
        },
        s, 1.0, breaks, mesh, tol, abs_floor);
}

inline KernelConstants constants(const KernelProfile& p, int mesh = 1000, double tol = 1e-8) {
    if (mesh < 1000) throw ConfigError("kernel quadrature mesh must be >= 1000 points");
    KernelConstants kc;
    const auto at0 = kernel_autocorrelations(p, 0.0, mesh, tol);
    kc.phi0_at_0 = at0[0];
    kc.phi1_at_0 = at0[1];
    // phi_l(s) is smooth between differences of profile breakpoints.
    std::vector<double> nodes = p.breakpoints;
    nodes.push_back(0.0);
    nodes.push_back(1.0);
    std::vector<double> outer_breaks;
    for (double x : nodes)
        for (double y : nodes)
            if (x - y > 0.0 && x - y < 1.0) outer_breaks.push_back(x - y);
    // Inner integrals refine on their own; a coarser start keeps the nested cost down.
    const int inner_panels = std::max(8, mesh / 100);
    // Near s = 1 both autocorrelations vanish; measure their error against the values at 0.
    const std::array<double, 2> inner_floor{tol * 1e-2 * std::abs(at0[0]), tol * 1e-2 * std::abs(at0[1])};
    const auto ints = detail::romberg<6>(
        [&](double s) {
            const auto v = kernel_autocorrelations(p, s, inner_panels, tol * 1e-2, inner_floor);
            return std::array<double, 6>{v[0] * v[0], v[0] * v[1], v[1] * v[1],
                                         s * v[0] * v[0], s * v[0] * v[1], s * v[1] * v[1]};
        },
        0.0, 1.0, outer_breaks, mesh, tol);
    kc.Phi00 = ints[0];
    kc.Phi01 = ints[1];
    kc.Phi11 = ints[2];
    kc.Psi00 = ints[3];
    kc.Psi01 = ints[4];
    kc.Psi11 = ints[5];
    return kc;
}

}  // namespace volfn
