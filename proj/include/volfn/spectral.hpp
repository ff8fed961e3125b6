#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "error.hpp"
#include "spot.hpp"

namespace volfn {

// d^2 x d^2 array indexed by (j + d k, l + d m).
using Tensor4 = Eigen::MatrixXd;

inline Eigen::Index pair_index(Eigen::Index j, Eigen::Index k, Eigen::Index d) { return j + d * k; }

inline double contract(const Tensor4& a, const Tensor4& b) { return (a.array() * b.array()).sum(); }

// Averages over j<->k, l<->m and (jk)<->(lm).
inline Tensor4 symmetrize_tensor(const Tensor4& t, Eigen::Index d) {
    Tensor4 out(d * d, d * d);
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index k = 0; k < d; ++k)
            for (Eigen::Index l = 0; l < d; ++l)
                for (Eigen::Index m = 0; m < d; ++m) {
                    const auto at = [&](Eigen::Index a, Eigen::Index b, Eigen::Index c, Eigen::Index e) {
                        return t(pair_index(a, b, d), pair_index(c, e, d));
                    };
                    const double s = at(j, k, l, m) + at(k, j, l, m) + at(j, k, m, l) + at(k, j, m, l) +
                                     at(l, m, j, k) + at(m, l, j, k) + at(l, m, k, j) + at(m, l, k, j);
                    out(pair_index(j, k, d), pair_index(l, m, d)) = s / 8.0;
                }
    return out;
}

struct Spectrum {
    Eigen::VectorXd values;   // descending
    Eigen::MatrixXd vectors;  // columns match values
};

// Each column's largest-magnitude entry is made positive (first such row on
// ties, which are judged to 1e-12 relative).
inline void apply_sign_rule(Eigen::MatrixXd& q) {
    for (Eigen::Index c = 0; c < q.cols(); ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < q.rows(); ++r)
            if (std::abs(q(r, c)) > std::abs(q(best, c)) * (1.0 + 1e-12)) best = r;
        if (q(best, c) < 0.0) q.col(c) = -q.col(c);
    }
}

inline Spectrum eig_sorted(const Eigen::MatrixXd& c) {
    require_symmetric(c);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(c));
    if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
    const Eigen::Index d = c.rows();
    Spectrum s;
    s.values = es.eigenvalues().reverse();
    s.vectors = es.eigenvectors().rowwise().reverse();
    (void)d;
    apply_sign_rule(s.vectors);
    return s;
}

// Raw entrywise derivatives as printed for simple eigenvalues, treating
// c^{jk} and c^{kj} as separate symbols.
inline Eigen::MatrixXd eigenvalue_gradient_raw(const Spectrum& s, int r) {
    return s.vectors.col(r) * s.vectors.col(r).transpose();
}

inline Tensor4 eigenvalue_hessian_raw(const Spectrum& s, int r) {
    const Eigen::Index d = s.values.size();
    const auto& q = s.vectors;
    Tensor4 h = Tensor4::Zero(d * d, d * d);
    for (Eigen::Index v = 0; v < d; ++v) {
        if (v == r) continue;
        const double inv = 1.0 / (s.values(r) - s.values(v));
        for (Eigen::Index j = 0; j < d; ++j)
            for (Eigen::Index k = 0; k < d; ++k)
                for (Eigen::Index l = 0; l < d; ++l)
                    for (Eigen::Index m = 0; m < d; ++m)
                        h(pair_index(j, k, d), pair_index(l, m, d)) +=
                            inv * (q(j, v) * q(l, v) * q(k, r) * q(m, r) + q(k, v) * q(l, v) * q(j, r) * q(m, r));
    }
    return h;
}

// d x d matrix per output component p: derivative of q^r_p w.r.t. c^{jk}.
inline std::vector<Eigen::MatrixXd> eigenvector_gradient_raw(const Spectrum& s, int r) {
    const Eigen::Index d = s.values.size();
    const auto& q = s.vectors;
    std::vector<Eigen::MatrixXd> g(d, Eigen::MatrixXd::Zero(d, d));
    for (Eigen::Index v = 0; v < d; ++v) {
        if (v == r) continue;
        const double inv = 1.0 / (s.values(r) - s.values(v));
        const Eigen::MatrixXd outer = q.col(v) * q.col(r).transpose();
        for (Eigen::Index p = 0; p < d; ++p) g[p] += inv * q(p, v) * outer;
    }
    return g;
}

inline std::vector<Tensor4> eigenvector_hessian_raw(const Spectrum& s, int r) {
    const Eigen::Index d = s.values.size();
    const auto& q = s.vectors;
    const auto& lam = s.values;
    // Resolvent-like sums R_v = sum_{b != v} q^b q^b^T / (lam_v - lam_b).
    std::vector<Eigen::MatrixXd> R(d, Eigen::MatrixXd::Zero(d, d));
    for (Eigen::Index v = 0; v < d; ++v)
        for (Eigen::Index b = 0; b < d; ++b)
            if (b != v) R[v] += q.col(b) * q.col(b).transpose() / (lam(v) - lam(b));
    std::vector<Tensor4> h(d, Tensor4::Zero(d * d, d * d));
    for (Eigen::Index v = 0; v < d; ++v) {
        if (v == r) continue;
        const double a = 1.0 / (lam(r) - lam(v));
        for (Eigen::Index j = 0; j < d; ++j)
            for (Eigen::Index k = 0; k < d; ++k)
                for (Eigen::Index l = 0; l < d; ++l)
                    for (Eigen::Index m = 0; m < d; ++m) {
                        const Eigen::Index row = pair_index(j, k, d), col = pair_index(l, m, d);
                        const double t1 = a * a * (q(l, v) * q(m, v) * q(j, v) * q(k, r) -
                                                   q(j, v) * q(k, r) * q(l, r) * q(m, r));
                        // sum_{b != v} q^b_l q^b_p / (lam_v - lam_b) = R_v(l, p)
                        const double c2 = a * q(m, v) * q(j, v) * q(k, r);
                        // sum_{b != v} q^b_j q^b_l / (lam_v - lam_b) = R_v(j, l)
                        const double c3 = a * R[v](j, l) * q(m, v) * q(k, r);
                        // sum_{b != r} q^b_k q^b_l / (lam_r - lam_b) = R_r(k, l)
                        const double c4 = a * R[r](k, l) * q(m, r) * q(j, v);
                        for (Eigen::Index p = 0; p < d; ++p)
                            h[p](row, col) += (t1 + c3 + c4) * q(p, v) + c2 * R[v](l, p);
                    }
    }
    return h;
}

// Cluster-averaged eigenvalue derivatives with averaging over members.
inline Tensor4 cluster_hessian_raw(const Spectrum& s, int first, int last) {
    const Eigen::Index d = s.values.size();
    const auto& q = s.vectors;
    Tensor4 h = Tensor4::Zero(d * d, d * d);
    const double mult = 1.0 / (last - first);
    for (int r = first; r < last; ++r)
        for (Eigen::Index v = 0; v < d; ++v) {
            if (v >= first && v < last) continue;
            const double inv = mult / (s.values(r) - s.values(v));
            for (Eigen::Index j = 0; j < d; ++j)
                for (Eigen::Index k = 0; k < d; ++k)
                    for (Eigen::Index l = 0; l < d; ++l)
                        for (Eigen::Index m = 0; m < d; ++m)
                            h(pair_index(j, k, d), pair_index(l, m, d)) +=
                                inv * (q(j, r) * q(l, r) * q(k, v) * q(m, v) + q(j, v) * q(l, v) * q(k, r) * q(m, r));
        }
    return h;
}

}  // namespace volfn
