#pragma once

#include "netrecover/model.hpp"
#include "netrecover/parallel.hpp"
#include "netrecover/rng.hpp"
#include "netrecover/types.hpp"

#include <Eigen/Eigenvalues>

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

namespace netrecover {

using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;

struct EigenAnalysis {
    /// Eigenvalues of W (only when built from a known structural point).
    std::vector<std::complex<double>> eigenvalues_w;
    /// Eigenvalues of Pi; when built from a known point, entry m is paired with
    /// eigenvalues_w[m] through the shared eigenvector.
    std::vector<std::complex<double>> eigenvalues_pi;
    /// Right eigenvectors (columns).
    ComplexMatrix eigenvectors;
    /// Index into eigenvalues_pi of the dominant eigenvalue, -1 when none qualifies.
    int dominant_index = -1;
    /// Left dominant eigenvector, nonnegative and summing to one. Empty when unavailable.
    Vector eigencentrality;
    /// Condition number of the eigenvector matrix.
    double eigenvector_condition = 0.0;
    /// Eigenvectors are numerically unreliable (near-defective matrix).
    bool unreliable = false;
    /// Centrality carries no information (e.g. Pi proportional to the identity).
    bool uninformative = false;
};

namespace detail {

inline constexpr double kEigenTol = 1e-8;

/// Scale a complex eigenvector to a real nonnegative vector summing to one, if possible.
inline std::optional<Vector> positive_direction(const ComplexVector& v, double tol = 1e-8) {
    Eigen::Index big;
    v.cwiseAbs().maxCoeff(&big);
    const ComplexVector u = v / v(big);
    if (u.imag().cwiseAbs().maxCoeff() > tol) return std::nullopt;
    Vector r = u.real();
    if (r.minCoeff() < -tol) return std::nullopt;
    r = r.cwiseMax(0.0);
    return Vector(r / r.sum());
}

/// Index of the dominant real eigenvalue with a nonnegative eigenvector: largest
/// modulus first, ties by smallest index.
inline int dominant_eigen(const ComplexVector& values, const ComplexMatrix& vectors, Vector* direction) {
    std::vector<int> order(values.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return std::abs(values(a)) > std::abs(values(b)) + kEigenTol;
    });
    for (int i : order) {
        if (std::abs(values(i).imag()) > kEigenTol) continue;
        if (auto d = positive_direction(vectors.col(i))) {
            if (direction) *direction = *d;
            return i;
        }
    }
    return -1;
}

}  // namespace detail

/// Eigendecomposition of the first covariate's reduced form. Centrality is the
/// left dominant eigenvector (influence flows along columns of W).
inline EigenAnalysis eigen_analysis(const Matrix& pi) {
    if (pi.rows() != pi.cols() || pi.rows() < 1) throw InputError("reduced form must be square");
    if (!pi.allFinite()) throw InputError("reduced form has non-finite entries");
    EigenAnalysis out;
    Eigen::EigenSolver<Matrix> es(pi);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    const ComplexVector values = es.eigenvalues();
    out.eigenvectors = es.eigenvectors();
    out.eigenvalues_pi.assign(values.data(), values.data() + values.size());
    Eigen::JacobiSVD<ComplexMatrix> svd(out.eigenvectors);
    const auto& sv = svd.singularValues();
    out.eigenvector_condition = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
    out.unreliable = !(out.eigenvector_condition < 1e10);
    out.dominant_index = detail::dominant_eigen(values, out.eigenvectors, nullptr);

    // All eigenvalues equal: every vector is an eigenvector, centrality is void.
    const double spread = (values.array() - values(0)).abs().maxCoeff();
    out.uninformative = spread <= detail::kEigenTol * std::max(1.0, std::abs(values(0)));
    if (out.uninformative) {
        out.dominant_index = -1;
        return out;
    }
    Eigen::EigenSolver<Matrix> left(pi.transpose());
    if (left.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    Vector c;
    if (detail::dominant_eigen(left.eigenvalues(), left.eigenvectors(), &c) >= 0) out.eigencentrality = c;
    return out;
}

inline EigenAnalysis eigen_analysis(const ReducedForm& rf) { return eigen_analysis(rf.first()); }

/// Eigen-analysis from a known structural point: eigenvalues of W and, through each
/// of W's eigenvectors v, the paired eigenvalue v^H Pi v / v^H v of Pi.
inline EigenAnalysis eigen_analysis(const StructuralParams& theta) {
    const Matrix pi = reduced_form(theta).first();
    EigenAnalysis out = eigen_analysis(pi);
    Eigen::EigenSolver<Matrix> ew(theta.network.weights());
    if (ew.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    const ComplexMatrix v = ew.eigenvectors();
    const ComplexMatrix pic = pi.cast<std::complex<double>>();
    out.eigenvalues_w.clear();
    out.eigenvalues_pi.clear();
    for (Eigen::Index m = 0; m < v.cols(); ++m) {
        out.eigenvalues_w.push_back(ew.eigenvalues()(m));
        const ComplexVector col = v.col(m);
        out.eigenvalues_pi.push_back(col.dot(pic * col) / col.squaredNorm());
    }
    out.eigenvectors = v;
    const ComplexVector pv = Eigen::Map<const ComplexVector>(out.eigenvalues_pi.data(), out.eigenvalues_pi.size());
    if (!out.uninformative) out.dominant_index = detail::dominant_eigen(pv, v, nullptr);
    return out;
}

struct SignReport {
    /// sign(rho beta + gamma) read from the off-diagonal mass of Pi.
    int off_diagonal = 0;
    /// Sign read from where the positive eigenvector's eigenvalue sits in Pi's real
    /// spectrum: +1 largest, -1 smallest, 0 undetermined.
    int eigen = 0;
    bool agree = false;
};

inline SignReport sign_of_network_effect(const Matrix& pi) {
    if (pi.rows() != pi.cols() || !pi.allFinite()) throw InputError("reduced form must be square and finite");
    Matrix off = pi;
    off.diagonal().setZero();
    const double scale = std::max(1.0, pi.cwiseAbs().maxCoeff());
    if (off.cwiseAbs().maxCoeff() <= kZeroTol * scale) throw InputError("empty network; sign undefined");
    SignReport r;
    const double mass = off.sum();
    r.off_diagonal = mass > 0.0 ? 1 : (mass < 0.0 ? -1 : 0);

    Eigen::EigenSolver<Matrix> es(pi);
    const ComplexVector values = es.eigenvalues();
    const int dom = [&] {
        for (Eigen::Index i = 0; i < values.size(); ++i)
            if (std::abs(values(i).imag()) <= detail::kEigenTol && detail::positive_direction(es.eigenvectors().col(i)))
                return static_cast<int>(i);
        return -1;
    }();
    if (dom >= 0) {
        double lo = INFINITY, hi = -INFINITY;
        for (Eigen::Index i = 0; i < values.size(); ++i) {
            if (std::abs(values(i).imag()) > detail::kEigenTol) continue;
            lo = std::min(lo, values(i).real());
            hi = std::max(hi, values(i).real());
        }
        const double v = values(dom).real();
        const double tol = detail::kEigenTol * std::max(1.0, std::abs(v));
        if (hi - lo > tol) {
            if (std::abs(v - hi) <= tol)
                r.eigen = 1;
            else if (std::abs(v - lo) <= tol)
                r.eigen = -1;
        }
    }
    r.agree = r.eigen != 0 && r.eigen == r.off_diagonal;
    return r;
}

inline SignReport sign_of_network_effect(const ReducedForm& rf) { return sign_of_network_effect(rf.first()); }

struct InversionResult {
    StructuralParams theta;
    /// Max absolute entry of Pi(theta) - Pi.
    double residual = 0.0;
    AssumptionReport assumptions;
    /// Converged, but the recovered point violates an assumption or is degenerate.
    bool flagged = false;
    std::vector<std::string> notes;
};

struct InversionOptions {
    int random_starts = 20;
    std::uint64_t seed = 7;
    double tolerance = 1e-10;
    int max_iterations = 200;
    int threads = 1;
};

namespace detail {

/// W implied by (rho, beta, gamma): Pi - beta I = W (rho Pi + gamma I).
inline std::optional<Matrix> implied_network(const Matrix& pi, double rho, double beta, double gamma) {
    const auto n = pi.rows();
    const Matrix b = rho * pi + gamma * Matrix::Identity(n, n);
    Eigen::PartialPivLU<Matrix> lu(b);
    if (!(std::abs(lu.determinant()) > 1e-300)) return std::nullopt;
    // B commutes with Pi, so (Pi - beta I) B^{-1} = B^{-1} (Pi - beta I).
    const Matrix w = lu.solve(pi - beta * Matrix::Identity(n, n));
    if (!w.allFinite()) return std::nullopt;
    return w;
}

/// Residuals of the reduced problem: diag(W) = 0 and the normalized row sums to one.
inline std::optional<Vector> inversion_residual(const Matrix& pi, int row, const Eigen::Vector3d& u) {
    const auto w = implied_network(pi, u(0), u(1), u(2));
    if (!w) return std::nullopt;
    Vector r(pi.rows() + 1);
    r.head(pi.rows()) = w->diagonal();
    r(pi.rows()) = w->row(row).sum() - 1.0;
    return r;
}

/// Levenberg-Marquardt on the 3-parameter residual with central-difference Jacobian.
inline std::optional<Eigen::Vector3d> solve_inversion(const Matrix& pi, int row, Eigen::Vector3d u,
                                                      const InversionOptions& opt) {
    auto r = inversion_residual(pi, row, u);
    if (!r) return std::nullopt;
    double cost = r->squaredNorm();
    double lambda = 1e-3;
    for (int it = 0; it < opt.max_iterations && cost > 1e-30; ++it) {
        Matrix j(r->size(), 3);
        for (int c = 0; c < 3; ++c) {
            const double h = 1e-7 * std::max(1.0, std::abs(u(c)));
            Eigen::Vector3d up = u, dn = u;
            up(c) += h;
            dn(c) -= h;
            const auto rp = inversion_residual(pi, row, up), rm = inversion_residual(pi, row, dn);
            if (!rp || !rm) return std::nullopt;
            j.col(c) = (*rp - *rm) / (2.0 * h);
        }
        const Eigen::Matrix3d jtj = j.transpose() * j;
        const Eigen::Vector3d jtr = j.transpose() * *r;
        bool improved = false;
        for (int tries = 0; tries < 30; ++tries) {
            Eigen::Matrix3d a = jtj;
            a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
            const Eigen::Vector3d step = a.ldlt().solve(-jtr);
            const Eigen::Vector3d cand = u + step;
            const auto rc = inversion_residual(pi, row, cand);
            if (rc && rc->squaredNorm() < cost) {
                u = cand;
                r = rc;
                cost = rc->squaredNorm();
                lambda = std::max(lambda / 10.0, 1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if (!improved) break;
    }
    return u;
}

/// Misalignment of a = diag(Pi M^{-1}) and b = diag(M^{-1}) for M = cos(phi) Pi + sin(phi) I.
/// Zero exactly when some beta makes diag((Pi - beta I) M^{-1}) vanish.
inline std::optional<double> profile_misalignment(const Matrix& pi, double phi, double* beta = nullptr,
                                                  Matrix* w_unit = nullptr) {
    const auto n = pi.rows();
    const Matrix m = std::cos(phi) * pi + std::sin(phi) * Matrix::Identity(n, n);
    Eigen::PartialPivLU<Matrix> lu(m);
    if (!(lu.rcond() > 1e-13)) return std::nullopt;
    const Matrix minv = lu.inverse();
    const Vector a = (pi * minv).diagonal(), b = minv.diagonal();
    const double bb = b.squaredNorm(), aa = a.squaredNorm();
    if (!(bb > 0.0)) return std::nullopt;
    const double ab = a.dot(b);
    if (beta) *beta = ab / bb;
    if (w_unit) *w_unit = (pi - (ab / bb) * Matrix::Identity(n, n)) * minv;
    return aa > 0.0 ? std::max(0.0, 1.0 - ab * ab / (aa * bb)) : 0.0;
}

/// Starts from a scan over the direction phi of (rho, gamma) = c (cos phi, sin phi): for each
/// direction, beta follows by least squares and c from the normalized row sum.
inline std::vector<Eigen::Vector3d> profile_starts(const Matrix& pi, int row, int grid = 4096) {
    const double pi_c = std::acos(-1.0);
    std::vector<double> r(grid, INFINITY);
    for (int k = 0; k < grid; ++k)
        if (auto v = profile_misalignment(pi, pi_c * k / grid)) r[k] = *v;
    std::vector<Eigen::Vector3d> out;
    for (int k = 0; k < grid; ++k) {
        const double left = r[(k + grid - 1) % grid], right = r[(k + 1) % grid];
        if (!(r[k] < 1e-2) || r[k] > left || r[k] > right) continue;
        const auto [phi, val] = boost::math::tools::brent_find_minima(
            [&](double f) { return profile_misalignment(pi, f).value_or(1.0); }, pi_c * (k - 1) / grid,
            pi_c * (k + 1) / grid, 52);
        (void)val;
        double beta = 0.0;
        Matrix w1;
        if (!profile_misalignment(pi, phi, &beta, &w1)) continue;
        const double c = w1.row(row).sum() - w1(row, row);
        if (!(std::abs(c) > 1e-12)) continue;
        out.emplace_back(c * std::cos(phi), beta, c * std::sin(phi));
    }
    return out;
}

}  // namespace detail

/// Recover theta from an exactly known reduced form (first covariate) by
/// multi-start root finding on (rho, beta, gamma), with W implied in closed form.
/// Solutions with rho in [0, 1) and nonnegative W are preferred; among those the
/// smallest residual wins, ties by lowest start index.
inline InversionResult invert_exact(const Matrix& pi, int normalized_row = 0, const InversionOptions& opt = {}) {
    const int n = static_cast<int>(pi.rows());
    if (pi.rows() != pi.cols() || n < 1 || !pi.allFinite()) throw InputError("reduced form must be square and finite");
    if (n > 12) throw InputError("exact inversion is limited to N <= 12");
    if (normalized_row < 0 || normalized_row >= n) throw InputError("normalized_row out of range");
    const double scale = std::max(1.0, pi.cwiseAbs().maxCoeff());

    Matrix off = pi;
    off.diagonal().setZero();
    if (off.cwiseAbs().maxCoeff() <= kZeroTol * scale) {
        InversionResult res;
        const double beta = pi.diagonal().mean();
        res.theta = StructuralParams::scalar(Network::empty(n), 0.0, beta, 0.0);
        res.residual = (pi - beta * Matrix::Identity(n, n)).cwiseAbs().maxCoeff();
        res.assumptions = check_assumptions(res.theta);
        res.flagged = true;
        res.notes.push_back("empty network: rho and gamma are not identified");
        if (res.residual > 1e-8 * scale) res.notes.push_back("diagonal of Pi is not constant");
        return res;
    }

    // Starts: roots of the direction profile, diagonal-based guesses on a small
    // (rho, gamma) lattice, then random draws.
    std::vector<Eigen::Vector3d> starts = detail::profile_starts(pi, normalized_row);
    const double b0 = pi.diagonal().minCoeff();
    for (double rho : {0.1, 0.3, 0.6})
        for (double gamma : {-0.5, 0.2, 0.6}) starts.emplace_back(rho, b0, gamma);
    Rng rng(opt.seed);
    for (int s = 0; s < opt.random_starts; ++s)
        starts.emplace_back(rng.uniform(0.0, 0.95), b0 + rng.uniform(-0.5, 0.5), rng.uniform(-1.0, 1.0));

    struct Candidate {
        bool ok = false;
        bool admissible = false;
        double residual = INFINITY;
        Eigen::Vector3d u;
        Matrix w;
    };
    std::vector<Candidate> cands(starts.size());
    parallel_for(static_cast<int>(starts.size()), opt.threads, [&](int s) {
        const auto u = detail::solve_inversion(pi, normalized_row, starts[s], opt);
        if (!u) return;
        auto w = detail::implied_network(pi, (*u)(0), (*u)(1), (*u)(2));
        if (!w) return;
        Matrix wz = *w;
        wz.diagonal().setZero();
        Candidate& c = cands[s];
        c.u = *u;
        c.w = wz;
        try {
            const Matrix back = reduced_form(StructuralParams::scalar(Network(wz), (*u)(0), (*u)(1), (*u)(2))).first();
            c.residual = std::max((back - pi).cwiseAbs().maxCoeff(), w->diagonal().cwiseAbs().maxCoeff());
        } catch (const NumericalError&) {
            return;
        }
        c.ok = true;
        c.admissible = (*u)(0) >= -1e-12 && (*u)(0) < 1.0 && wz.minCoeff() >= -1e-9;
    });
    int best = -1;
    for (int s = 0; s < static_cast<int>(cands.size()); ++s) {
        const auto& c = cands[s];
        if (!c.ok) continue;
        if (best < 0) {
            best = s;
            continue;
        }
        const auto& b = cands[best];
        const bool c_good = c.admissible && c.residual <= 1e-8 * scale;
        const bool b_good = b.admissible && b.residual <= 1e-8 * scale;
        if (c_good != b_good ? c_good : c.residual < b.residual) best = s;
    }
    if (best < 0) throw NumericalError("exact inversion failed: no start produced a valid point");
    const auto& c = cands[best];
    if (c.residual > 1e-8 * scale)
        throw NumericalError("exact inversion did not converge; best residual " + std::to_string(c.residual));
    InversionResult res;
    Matrix w = c.w;
    w = w.unaryExpr([](double v) { return std::abs(v) <= 1e-12 ? 0.0 : v; });
    res.theta = StructuralParams::scalar(Network(w), c.u(0), c.u(1), c.u(2));
    res.residual = c.residual;
    res.assumptions = check_assumptions(res.theta, 1e-8);
    // Only the designated row is forced to sum to one; A4 needs just one such row.
    res.assumptions.a4.holds = std::abs(w.row(normalized_row).sum() - 1.0) <= 1e-8;
    res.flagged = !(res.assumptions.a1.holds && res.assumptions.a2.holds && res.assumptions.a3.holds &&
                    res.assumptions.a4.holds && res.assumptions.a5.holds) ||
                  !c.admissible;
    if (!c.admissible) res.notes.push_back("recovered point lies outside rho in [0,1) with nonnegative W");
    return res;
}

inline InversionResult invert_exact(const ReducedForm& rf, int normalized_row = 0, const InversionOptions& opt = {}) {
    return invert_exact(rf.first(), normalized_row, opt);
}

/// The two 5-node structures (pentagon and pentagram) that share a reduced form
/// although both break A5, and the second breaks A2.
inline std::pair<StructuralParams, StructuralParams> nonuniqueness_witness() {
    Matrix w0 = Matrix::Zero(5, 5), w1 = Matrix::Zero(5, 5);
    for (int i = 0; i < 5; ++i) {
        w0(i, (i + 1) % 5) = 0.5;
        w0(i, (i + 4) % 5) = 0.5;
        w1(i, (i + 2) % 5) = 0.5;
        w1(i, (i + 3) % 5) = 0.5;
    }
    return {StructuralParams::scalar(Network(w0), 0.5, 1.0, 0.5),
            StructuralParams::scalar(Network(w1), 1.5, 1.0, -2.5)};
}

struct CovariateEffect {
    double beta = 0.0;
    double gamma = 0.0;
    /// Covariate-specific network, normalized so non-isolated rows sum to one.
    /// Empty when gamma is (numerically) zero.
    std::optional<Matrix> w;
    /// Max deviation of diag((I - rho W) Pi_k) from beta.
    double diagonal_spread = 0.0;
    /// Max deviation of the nonzero row sums of gamma W_k from gamma.
    double rowsum_spread = 0.0;
    std::vector<std::string> warnings;
};

/// Given rho and W from the first covariate, split each (I - rho W) Pi_k into
/// beta_k I + gamma_k W_k.
inline std::vector<CovariateEffect> recover_covariate_effects(const ReducedForm& rf, double rho, const Network& w,
                                                              double tol = 1e-8) {
    const int n = w.n();
    const Matrix a = Matrix::Identity(n, n) - rho * w.weights();
    std::vector<CovariateEffect> out;
    for (const Matrix& pk : rf.pi) {
        if (pk.rows() != n || pk.cols() != n) throw InputError("reduced form and network sizes differ");
        CovariateEffect e;
        const Matrix m = a * pk;
        e.beta = m.diagonal().mean();
        e.diagonal_spread = (m.diagonal().array() - e.beta).abs().maxCoeff();
        if (e.diagonal_spread > tol) e.warnings.push_back("heterogeneous beta_k suspected (not modelled)");
        Matrix off = m;
        off.diagonal().setZero();
        std::vector<double> sums;
        for (int i = 0; i < n; ++i)
            if ((off.row(i).array().abs() > tol).any()) sums.push_back(off.row(i).sum());
        if (sums.empty()) {
            e.warnings.push_back("gamma_k is zero; W_k undefined");
        } else {
            double g = 0.0;
            for (double s : sums) g += s;
            e.gamma = g / static_cast<double>(sums.size());
            for (double s : sums) e.rowsum_spread = std::max(e.rowsum_spread, std::abs(s - e.gamma));
            if (std::abs(e.gamma) <= tol) {
                e.warnings.push_back("gamma_k is zero; W_k undefined");
            } else {
                e.w = off / e.gamma;
                e.w->diagonal().setZero();
            }
        }
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace netrecover
