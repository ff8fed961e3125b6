#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "error.hpp"
#include "spectral.hpp"

namespace volfn {

// g: symmetric d x d -> R^r with symmetric first and second derivatives.
struct MatrixFunctional {
    std::string name;
    int r_out = 1;              // 0 when the output size follows d
    int dim = 0;                // required dimension, 0 for any
    double domain_guard = 0.0;  // relative eigenvalue floor applied before evaluation, 0 for none
    bool experimental = false;
    std::vector<std::string> output_names;
    std::function<Eigen::VectorXd(const Eigen::MatrixXd&)> value;
    std::function<std::vector<Eigen::MatrixXd>(const Eigen::MatrixXd&)> gradient;
    std::function<std::vector<Tensor4>(const Eigen::MatrixXd&)> hessian;

    void check_dim(Eigen::Index d) const {
        if (dim != 0 && d != dim)
            throw ShapeError("functional " + name + " expects d=" + std::to_string(dim) + ", got d=" + std::to_string(d));
    }
};

// Symmetric basis direction: e_a e_a^T, or e_a e_b^T + e_b e_a^T for a != b.
inline Eigen::MatrixXd basis_direction(Eigen::Index d, Eigen::Index a, Eigen::Index b) {
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(d, d);
    e(a, b) = 1.0;
    e(b, a) = 1.0;
    return e;
}

// Symmetric gradient from first directional derivatives D(E).
inline std::vector<Eigen::MatrixXd> gradient_from_directional(
    Eigen::Index d, int r, const std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>& dir) {
    std::vector<Eigen::MatrixXd> g(r, Eigen::MatrixXd::Zero(d, d));
    for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = a; b < d; ++b) {
            const Eigen::VectorXd v = dir(basis_direction(d, a, b)) / (a == b ? 1.0 : 2.0);
            for (int p = 0; p < r; ++p) g[p](a, b) = g[p](b, a) = v(p);
        }
    return g;
}

// Fully symmetric Hessian from second directional derivatives D2(E, F).
inline std::vector<Tensor4> hessian_from_bilinear(
    Eigen::Index d, int r,
    const std::function<Eigen::VectorXd(const Eigen::MatrixXd&, const Eigen::MatrixXd&)>& bil) {
    std::vector<Tensor4> h(r, Tensor4::Zero(d * d, d * d));
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
    for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = a; b < d; ++b) pairs.emplace_back(a, b);
    std::vector<Eigen::MatrixXd> dirs;
    for (auto [a, b] : pairs) dirs.push_back(basis_direction(d, a, b));
    for (std::size_t x = 0; x < pairs.size(); ++x)
        for (std::size_t y = x; y < pairs.size(); ++y) {
            const auto [a, b] = pairs[x];
            const auto [c, e] = pairs[y];
            const double mult = (a == b ? 1.0 : 2.0) * (c == e ? 1.0 : 2.0);
            const Eigen::VectorXd v = bil(dirs[x], dirs[y]) / mult;
            for (int p = 0; p < r; ++p) {
                for (auto [j, k] : {std::pair{a, b}, std::pair{b, a}})
                    for (auto [l, m] : {std::pair{c, e}, std::pair{e, c}}) {
                        h[p](pair_index(j, k, d), pair_index(l, m, d)) = v(p);
                        h[p](pair_index(l, m, d), pair_index(j, k, d)) = v(p);
                    }
            }
        }
    return h;
}

inline std::vector<Eigen::MatrixXd> symmetrize_gradient(std::vector<Eigen::MatrixXd> g) {
    for (auto& m : g) m = symmetrized(m);
    return g;
}

inline std::vector<Tensor4> symmetrize_hessian(std::vector<Tensor4> h, Eigen::Index d) {
    for (auto& t : h) t = symmetrize_tensor(t, d);
    return h;
}

inline Eigen::VectorXd scalar_vec(double x) {
    Eigen::VectorXd v(1);
    v(0) = x;
    return v;
}

inline MatrixFunctional trace_functional() {
    MatrixFunctional f;
    f.name = "trace";
    f.output_names = {"trace"};
    f.value = [](const Eigen::MatrixXd& c) { return scalar_vec(c.trace()); };
    f.gradient = [](const Eigen::MatrixXd& c) {
        return std::vector<Eigen::MatrixXd>{Eigen::MatrixXd::Identity(c.rows(), c.cols())};
    };
    f.hessian = [](const Eigen::MatrixXd& c) {
        const auto d = c.rows();
        return std::vector<Tensor4>{Tensor4::Zero(d * d, d * d)};
    };
    return f;
}

inline MatrixFunctional entry_functional(int j, int k) {
    if (j < 0 || k < 0) throw ConfigError("entry indices must be nonnegative");
    MatrixFunctional f;
    f.name = "entry(" + std::to_string(j + 1) + "," + std::to_string(k + 1) + ")";
    f.output_names = {f.name};
    auto check = [j, k](const Eigen::MatrixXd& c) {
        if (j >= c.rows() || k >= c.rows()) throw ShapeError("entry index outside matrix");
    };
    f.value = [=](const Eigen::MatrixXd& c) {
        check(c);
        return scalar_vec(c(j, k));
    };
    f.gradient = [=](const Eigen::MatrixXd& c) {
        check(c);
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(c.rows(), c.cols());
        g(j, k) += 0.5;
        g(k, j) += 0.5;
        return std::vector<Eigen::MatrixXd>{g};
    };
    f.hessian = [](const Eigen::MatrixXd& c) {
        const auto d = c.rows();
        return std::vector<Tensor4>{Tensor4::Zero(d * d, d * d)};
    };
    return f;
}

// c^2 for d = 1, trace(c^2) otherwise.
inline MatrixFunctional square_functional() {
    MatrixFunctional f;
    f.name = "square";
    f.output_names = {"square"};
    f.value = [](const Eigen::MatrixXd& c) { return scalar_vec((c * c).trace()); };
    f.gradient = [](const Eigen::MatrixXd& c) { return std::vector<Eigen::MatrixXd>{2.0 * symmetrized(c)}; };
    f.hessian = [](const Eigen::MatrixXd& c) {
        const auto d = c.rows();
        Tensor4 h = Tensor4::Zero(d * d, d * d);
        for (Eigen::Index j = 0; j < d; ++j)
            for (Eigen::Index k = 0; k < d; ++k) {
                h(pair_index(j, k, d), pair_index(j, k, d)) += 1.0;
                h(pair_index(j, k, d), pair_index(k, j, d)) += 1.0;
            }
        return std::vector<Tensor4>{h};
    };
    return f;
}

inline MatrixFunctional log_functional() {
    MatrixFunctional f;
    f.name = "log";
    f.dim = 1;
    f.domain_guard = 1e-8;
    f.output_names = {"log"};
    auto guard = [](const Eigen::MatrixXd& c) {
        if (c.rows() != 1) throw ShapeError("log functional needs d=1");
        if (!(c(0, 0) > 0.0)) throw DomainError("log functional needs c > 0");
        return c(0, 0);
    };
    f.value = [=](const Eigen::MatrixXd& c) { return scalar_vec(std::log(guard(c))); };
    f.gradient = [=](const Eigen::MatrixXd& c) {
        return std::vector<Eigen::MatrixXd>{Eigen::MatrixXd::Constant(1, 1, 1.0 / guard(c))};
    };
    f.hessian = [=](const Eigen::MatrixXd& c) {
        const double x = guard(c);
        return std::vector<Tensor4>{Tensor4::Constant(1, 1, -1.0 / (x * x))};
    };
    return f;
}

inline MatrixFunctional logdet_functional() {
    MatrixFunctional f;
    f.name = "logdet";
    f.domain_guard = 1e-8;
    f.output_names = {"logdet"};
    auto chol = [](const Eigen::MatrixXd& c) {
        Eigen::LLT<Eigen::MatrixXd> llt(symmetrized(c));
        if (llt.info() != Eigen::Success) throw DomainError("logdet needs a positive definite matrix");
        return llt;
    };
    f.value = [=](const Eigen::MatrixXd& c) {
        const auto llt = chol(c);
        return scalar_vec(2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum());
    };
    f.gradient = [=](const Eigen::MatrixXd& c) {
        const auto llt = chol(c);
        return std::vector<Eigen::MatrixXd>{symmetrized(llt.solve(Eigen::MatrixXd::Identity(c.rows(), c.cols())))};
    };
    f.hessian = [=](const Eigen::MatrixXd& c) {
        const auto d = c.rows();
        const Eigen::MatrixXd inv = symmetrized(chol(c).solve(Eigen::MatrixXd::Identity(d, d)));
        Tensor4 h(d * d, d * d);
        for (Eigen::Index j = 0; j < d; ++j)
            for (Eigen::Index k = 0; k < d; ++k)
                for (Eigen::Index l = 0; l < d; ++l)
                    for (Eigen::Index m = 0; m < d; ++m)
                        h(pair_index(j, k, d), pair_index(l, m, d)) =
                            -0.5 * (inv(j, l) * inv(k, m) + inv(j, m) * inv(k, l));
        return std::vector<Tensor4>{h};
    };
    return f;
}

// (Re, Im) of trace exp(i w c); for d = 1 this is (cos wc, sin wc).
inline MatrixFunctional laplace_functional(double w) {
    if (!std::isfinite(w)) throw ConfigError("laplace frequency must be finite");
    MatrixFunctional f;
    f.name = "laplace(" + detail::format_double(w) + ")";
    f.r_out = 2;
    f.output_names = {"re", "im"};
    // Spectral function sum_i h(lam_i) with h = (cos(w x), sin(w x)).
    auto h0 = [w](double x) { return Eigen::Vector2d(std::cos(w * x), std::sin(w * x)); };
    auto h1 = [w](double x) { return Eigen::Vector2d(-w * std::sin(w * x), w * std::cos(w * x)); };
    auto h2 = [w](double x) { return Eigen::Vector2d(-w * w * std::cos(w * x), -w * w * std::sin(w * x)); };
    f.value = [=](const Eigen::MatrixXd& c) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(c));
        Eigen::VectorXd out = Eigen::VectorXd::Zero(2);
        for (Eigen::Index i = 0; i < c.rows(); ++i) out += h0(es.eigenvalues()(i));
        return out;
    };
    f.gradient = [=](const Eigen::MatrixXd& c) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(c));
        const auto& Q = es.eigenvectors();
        std::vector<Eigen::MatrixXd> g(2);
        for (int p = 0; p < 2; ++p) {
            Eigen::VectorXd dv(c.rows());
            for (Eigen::Index i = 0; i < c.rows(); ++i) dv(i) = h1(es.eigenvalues()(i))(p);
            g[p] = symmetrized(Q * dv.asDiagonal() * Q.transpose());
        }
        return g;
    };
    f.hessian = [=](const Eigen::MatrixXd& c) {
        const auto d = c.rows();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(c));
        const Eigen::VectorXd lam = es.eigenvalues();
        const Eigen::MatrixXd Q = es.eigenvectors();
        // First divided differences of h' (Daleckii-Krein).
        std::vector<Eigen::MatrixXd> K(2, Eigen::MatrixXd(d, d));
        for (Eigen::Index a = 0; a < d; ++a)
            for (Eigen::Index b = 0; b < d; ++b) {
                const double gap = lam(a) - lam(b);
                Eigen::Vector2d v;
                if (std::abs(gap) <= 1e-9 * std::max(1.0, std::abs(lam(a))))
                    v = h2(0.5 * (lam(a) + lam(b)));
                else
                    v = (h1(lam(a)) - h1(lam(b))) / gap;
                K[0](a, b) = v(0);
                K[1](a, b) = v(1);
            }
        return hessian_from_bilinear(d, 2, [&](const Eigen::MatrixXd& E, const Eigen::MatrixXd& F) {
            const Eigen::MatrixXd e = Q.transpose() * E * Q, fq = Q.transpose() * F * Q;
            Eigen::VectorXd out(2);
            for (int p = 0; p < 2; ++p) out(p) = (K[p].array() * e.array() * fq.transpose().array()).sum();
            return out;
        });
    };
    f.experimental = true;
    return f;
}

// Regression coefficients c_SS^{-1} c_SZ for the first `split` assets on the
// rest, flattened column-major.
inline MatrixFunctional beta_functional(int split) {
    if (split < 1) throw ConfigError("beta needs a nonempty S block (split >= 1)");
    MatrixFunctional f;
    f.name = "beta(" + std::to_string(split) + ")";
    f.domain_guard = 1e-8;
    const int s = split;
    auto blocks = [s](const Eigen::MatrixXd& c) {
        if (c.rows() <= s) throw ShapeError("beta needs a nonempty Z block");
        Eigen::LLT<Eigen::MatrixXd> llt(symmetrized(c.topLeftCorner(s, s)));
        if (llt.info() != Eigen::Success) throw DomainError("beta needs a positive definite S block");
        return llt;
    };
    auto beta = [=](const Eigen::MatrixXd& c) {
        return Eigen::MatrixXd(blocks(c).solve(c.topRightCorner(s, c.cols() - s)));
    };
    auto flat = [](const Eigen::MatrixXd& m) { return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(m.data(), m.size())); };
    f.value = [=](const Eigen::MatrixXd& c) { return flat(beta(c)); };
    f.gradient = [=](const Eigen::MatrixXd& c) {
        const auto llt = blocks(c);
        const Eigen::MatrixXd b = llt.solve(c.topRightCorner(s, c.cols() - s));
        return gradient_from_directional(c.rows(), static_cast<int>(b.size()), [&](const Eigen::MatrixXd& E) {
            const Eigen::MatrixXd db = llt.solve(E.topRightCorner(s, c.cols() - s) - E.topLeftCorner(s, s) * b);
            return flat(db);
        });
    };
    f.hessian = [=](const Eigen::MatrixXd& c) {
        const auto llt = blocks(c);
        const Eigen::MatrixXd b = llt.solve(c.topRightCorner(s, c.cols() - s));
        auto db = [&](const Eigen::MatrixXd& E) {
            return Eigen::MatrixXd(llt.solve(E.topRightCorner(s, c.cols() - s) - E.topLeftCorner(s, s) * b));
        };
        return hessian_from_bilinear(c.rows(), static_cast<int>(b.size()),
                                     [&](const Eigen::MatrixXd& E, const Eigen::MatrixXd& F) {
                                         const Eigen::MatrixXd v = -llt.solve(F.topLeftCorner(s, s) * db(E)) -
                                                                   llt.solve(E.topLeftCorner(s, s) * db(F));
                                         return flat(v);
                                     });
    };
    f.r_out = 0;
    return f;
}

struct ClusterSpec {
    std::vector<int> bounds;  // r_0 = 0 < r_1 < ... < r_K = d

    int count() const { return static_cast<int>(bounds.size()) - 1; }
    int first(int k) const { return bounds[k]; }
    int last(int k) const { return bounds[k + 1]; }
    int size(int k) const { return bounds[k + 1] - bounds[k]; }

    // From cluster sizes such as {1, 1, 8}.
    static ClusterSpec from_sizes(const std::vector<int>& sizes) {
        ClusterSpec c;
        c.bounds.push_back(0);
        for (int s : sizes) {
            if (s < 1) throw ConfigError("cluster sizes must be positive");
            c.bounds.push_back(c.bounds.back() + s);
        }
        return c;
    }
    static ClusterSpec singletons(int d) { return from_sizes(std::vector<int>(d, 1)); }

    void check(Eigen::Index d) const {
        if (bounds.size() < 2 || bounds.front() != 0) throw ConfigError("cluster boundaries must start at 0");
        for (std::size_t i = 1; i < bounds.size(); ++i)
            if (bounds[i] <= bounds[i - 1]) throw ConfigError("cluster boundaries must increase strictly");
        if (bounds.back() != d)
            throw ShapeError("clusters cover " + std::to_string(bounds.back()) + " eigenvalues but d=" + std::to_string(d));
    }
};

inline double default_gap_tol(const Spectrum& s) { return 1e-6 * s.values.cwiseAbs().sum(); }

// Smallest gap between neighbouring clusters.
inline double min_cluster_gap(const Spectrum& s, const ClusterSpec& cl) {
    double gap = std::numeric_limits<double>::infinity();
    for (int k = 0; k + 1 < cl.count(); ++k) gap = std::min(gap, s.values(cl.last(k) - 1) - s.values(cl.last(k)));
    return gap;
}

inline double eigen_gap(const Spectrum& s, int r) {
    double gap = std::numeric_limits<double>::infinity();
    if (r > 0) gap = std::min(gap, s.values(r - 1) - s.values(r));
    if (r + 1 < s.values.size()) gap = std::min(gap, s.values(r) - s.values(r + 1));
    return gap;
}

inline MatrixFunctional eigenvalue_functional(const ClusterSpec& cl, double gap_rel = 1e-6) {
    MatrixFunctional f;
    f.name = "eigenvalue";
    f.r_out = cl.count();
    for (int k = 0; k < cl.count(); ++k) f.output_names.push_back("lambda" + std::to_string(k + 1));
    auto spectrum = [cl, gap_rel](const Eigen::MatrixXd& c) {
        cl.check(c.rows());
        Spectrum s = eig_sorted(c);
        const double tol = gap_rel * s.values.cwiseAbs().sum();
        if (cl.count() > 1 && !(min_cluster_gap(s, cl) > tol))
            throw DegeneracyError("eigenvalue clusters are not separated (gap <= " + detail::format_double(tol) + ")");
        return s;
    };
    f.value = [=](const Eigen::MatrixXd& c) {
        const Spectrum s = spectrum(c);
        Eigen::VectorXd out(cl.count());
        for (int k = 0; k < cl.count(); ++k) out(k) = s.values.segment(cl.first(k), cl.size(k)).mean();
        return out;
    };
    f.gradient = [=](const Eigen::MatrixXd& c) {
        const Spectrum s = spectrum(c);
        std::vector<Eigen::MatrixXd> g;
        for (int k = 0; k < cl.count(); ++k) {
            const auto block = s.vectors.middleCols(cl.first(k), cl.size(k));
            g.push_back(block * block.transpose() / cl.size(k));
        }
        return g;
    };
    f.hessian = [=](const Eigen::MatrixXd& c) {
        const Spectrum s = spectrum(c);
        std::vector<Tensor4> h;
        for (int k = 0; k < cl.count(); ++k)
            h.push_back(symmetrize_tensor(cluster_hessian_raw(s, cl.first(k), cl.last(k)), c.rows()));
        return h;
    };
    return f;
}

// Unit eigenvector of the k-th largest eigenvalue under the sign rule.
inline MatrixFunctional eigenvector_functional(int k, double gap_rel = 1e-6) {
    if (k < 0) throw ConfigError("eigenvector index must be positive");
    MatrixFunctional f;
    f.name = "eigenvector(" + std::to_string(k + 1) + ")";
    f.r_out = 0;
    auto spectrum = [k, gap_rel](const Eigen::MatrixXd& c) {
        if (k >= c.rows()) throw ShapeError("eigenvector index exceeds dimension");
        Spectrum s = eig_sorted(c);
        const double tol = gap_rel * s.values.cwiseAbs().sum();
        if (!(eigen_gap(s, k) > tol))
            throw DegeneracyError("eigenvalue " + std::to_string(k + 1) + " is repeated; its eigenvector is not differentiable");
        return s;
    };
    f.value = [=](const Eigen::MatrixXd& c) { return Eigen::VectorXd(spectrum(c).vectors.col(k)); };
    f.gradient = [=](const Eigen::MatrixXd& c) { return symmetrize_gradient(eigenvector_gradient_raw(spectrum(c), k)); };
    f.hessian = [=](const Eigen::MatrixXd& c) {
        return symmetrize_hessian(eigenvector_hessian_raw(spectrum(c), k), c.rows());
    };
    return f;
}

struct FunctionalParams {
    int j = 0, k = 0;  // zero-based entry indices
    double w = 1.0;
    int split = 1;
    int index = 0;  // zero-based eigen index
    std::vector<int> cluster_sizes;
};

inline MatrixFunctional builtin(const std::string& name, const FunctionalParams& p = {}) {
    if (name == "trace") return trace_functional();
    if (name == "entry") return entry_functional(p.j, p.k);
    if (name == "square") return square_functional();
    if (name == "log") return log_functional();
    if (name == "logdet") return logdet_functional();
    if (name == "laplace") return laplace_functional(p.w);
    if (name == "beta") return beta_functional(p.split);
    if (name == "eigenvalue") {
        if (p.cluster_sizes.empty()) throw ConfigError("eigenvalue functional needs cluster sizes");
        return eigenvalue_functional(ClusterSpec::from_sizes(p.cluster_sizes));
    }
    if (name == "eigenvector") return eigenvector_functional(p.index);
    throw ConfigError("unknown functional '" + name +
                      "' (trace, entry, square, log, logdet, laplace, beta, eigenvalue, eigenvector)");
}

struct FdReport {
    double gradient_error = 0.0;
    double hessian_error = 0.0;
};

// Central differences along symmetric basis directions, relative to the
// magnitude of the analytic derivative (or of g/|c| when that vanishes).
inline FdReport fd_check(const MatrixFunctional& f, const Eigen::MatrixXd& c, double h, bool check_hessian = true) {
    const Eigen::Index d = c.rows();
    const Eigen::VectorXd g0 = f.value(c);
    const int r = static_cast<int>(g0.size());
    const auto grad = f.gradient(c);
    const double cmax = std::max(c.cwiseAbs().maxCoeff(), 1e-300);
    const double vmax = g0.cwiseAbs().maxCoeff();
    auto fd_grad = gradient_from_directional(d, r, [&](const Eigen::MatrixXd& E) {
        return Eigen::VectorXd((f.value(c + h * E) - f.value(c - h * E)) / (2 * h));
    });
    double gscale = vmax / cmax, gerr = 0.0;
    for (int p = 0; p < r; ++p) {
        gscale = std::max(gscale, grad[p].cwiseAbs().maxCoeff());
        gerr = std::max(gerr, (grad[p] - fd_grad[p]).cwiseAbs().maxCoeff());
    }
    FdReport rep;
    rep.gradient_error = gerr / std::max(gscale, 1e-300);
    if (!check_hessian) return rep;
    const auto hess = f.hessian(c);
    auto fd_hess = hessian_from_bilinear(d, r, [&](const Eigen::MatrixXd& E, const Eigen::MatrixXd& F) {
        return Eigen::VectorXd((f.value(c + h * E + h * F) - f.value(c + h * E - h * F) - f.value(c - h * E + h * F) +
                                f.value(c - h * E - h * F)) /
                               (4 * h * h));
    });
    double hscale = vmax / (cmax * cmax), herr = 0.0;
    for (int p = 0; p < r; ++p) {
        hscale = std::max(hscale, hess[p].cwiseAbs().maxCoeff());
        herr = std::max(herr, (hess[p] - fd_hess[p]).cwiseAbs().maxCoeff());
    }
    rep.hessian_error = herr / std::max(hscale, 1e-300);
    return rep;
}

}  // namespace volfn
