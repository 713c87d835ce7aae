#pragma once

#include "netrecover/model.hpp"
#include "netrecover/types.hpp"

#include <limits>
#include <optional>
#include <vector>

namespace netrecover {

/// Objective value returned when (I - rho W) cannot be inverted.
inline constexpr double kObjectiveSentinel = 1e12;

enum class MomentSource { covariates, instruments };

struct GmmConfig {
    /// Empty means the identity weight matrix.
    std::optional<Matrix> weight_matrix;
    MomentSource moment_source = MomentSource::covariates;
    int max_iterations = 2000;
    double gradient_tolerance = 1e-9;
    double parameter_tolerance = 1e-12;
    int particle_count = 100;
    int swarm_iterations = 200;
    double inertia = 0.7;
    double cognitive = 1.5;
    double social = 1.5;
    /// Number of best swarm positions polished by local refinement.
    int refine_count = 3;
    std::uint64_t seed = 1;
};

/// Gradient of the GMM objective with respect to the structural coordinates.
struct GmmGradient {
    Matrix w;
    double rho = 0.0;
    std::vector<double> beta;
    std::vector<double> gamma;
};

/// Sample cross-moments needed to evaluate g(theta) = (1/T) sum_t [m_1t e_t' ... m_Nt e_t']'
/// with e_t = P (y_t - sum_k Pi_k x_kt). P is the identity, or I - 11'/N when the
/// panel has been globally differenced.
class GmmProblem {
public:
    GmmProblem(const PanelData& panel, MomentSource source, bool projected,
               std::optional<Matrix> weight = std::nullopt)
        : n_(panel.n()), k_(panel.k()), t_(panel.t()), projected_(projected), weight_(std::move(weight)) {
        panel.validate();
        const std::vector<Matrix>& inst = source == MomentSource::instruments ? panel.z : panel.x;
        if (inst.empty()) throw InputError("moment source has no instruments");
        l_ = static_cast<int>(inst.size());
        const double inv_t = 1.0 / static_cast<double>(t_);
        s_my_.reserve(l_);
        for (const auto& m : inst) s_my_.push_back(inv_t * m.transpose() * project_periods(panel.y));
        s_mx_.resize(static_cast<std::size_t>(l_) * k_);
        for (int j = 0; j < l_; ++j)
            for (int c = 0; c < k_; ++c) s_mx_[j * k_ + c] = inv_t * inst[j].transpose() * panel.x[c];
        if (weight_) {
            const auto q = static_cast<Eigen::Index>(l_) * n_ * n_;
            if (weight_->rows() != q || weight_->cols() != q)
                throw InputError("GMM weight matrix must be (L N^2) x (L N^2)");
            if (!weight_->isApprox(weight_->transpose(), 1e-12))
                throw InputError("GMM weight matrix must be symmetric");
            Eigen::LLT<Matrix> llt(*weight_);
            if (llt.info() != Eigen::Success) throw InputError("GMM weight matrix must be positive definite");
        }
    }

    int n() const { return n_; }
    int k() const { return k_; }
    int t() const { return t_; }
    int moment_count() const { return l_ * n_ * n_; }

    /// Cross-moment of instrument j with covariate c, (1/T) sum_t m_jt x_ct'.
    const Matrix& s_mx(int j, int c) const { return s_mx_[j * k_ + c]; }

    /// Moment matrices G_j; entry (i, m) is the mean of m_{j,it} e_{mt}.
    std::vector<Matrix> moment_matrices(const std::vector<Matrix>& pi) const {
        std::vector<Matrix> g(l_);
        for (int j = 0; j < l_; ++j) {
            Matrix fitted = Matrix::Zero(n_, n_);
            for (int c = 0; c < k_; ++c) fitted.noalias() += s_mx(j, c) * pi[c].transpose();
            g[j] = s_my_[j] - project_cols(fitted);
        }
        return g;
    }

    /// Stacked moment vector (length L N^2), row-major within each block.
    Vector moments(const std::vector<Matrix>& pi) const {
        const auto g = moment_matrices(pi);
        Vector out(moment_count());
        for (int j = 0; j < l_; ++j)
            for (int i = 0; i < n_; ++i)
                for (int m = 0; m < n_; ++m) out(j * n_ * n_ + i * n_ + m) = g[j](i, m);
        return out;
    }

    /// g' M g at a structural point; the sentinel when (I - rho W) is singular.
    double value(const Matrix& w, double rho, const std::vector<double>& beta,
                 const std::vector<double>& gamma, GmmGradient* grad = nullptr) const {
        const int n = n_;
        Matrix a = Matrix::Identity(n, n) - rho * w;
        Eigen::PartialPivLU<Matrix> lu(a);
        if (!(lu.rcond() > kMinRcond)) {
            if (grad) *grad = zero_gradient();
            return kObjectiveSentinel;
        }
        std::vector<Matrix> pi(k_);
        for (int c = 0; c < k_; ++c) {
            Matrix rhs = gamma[c] * w;
            rhs.diagonal().array() += beta[c];
            pi[c] = lu.solve(rhs);
            if (!pi[c].allFinite()) {
                if (grad) *grad = zero_gradient();
                return kObjectiveSentinel;
            }
        }
        const auto g = moment_matrices(pi);
        std::vector<Matrix> mg;  // M g reshaped like g
        double q = 0.0;
        if (!weight_) {
            for (const auto& gj : g) q += gj.squaredNorm();
            mg = g;
        } else {
            Vector gv(moment_count());
            for (int j = 0; j < l_; ++j)
                for (int i = 0; i < n; ++i)
                    for (int m = 0; m < n; ++m) gv(j * n * n + i * n + m) = g[j](i, m);
            const Vector wg = (*weight_) * gv;
            q = gv.dot(wg);
            mg.assign(l_, Matrix(n, n));
            for (int j = 0; j < l_; ++j)
                for (int i = 0; i < n; ++i)
                    for (int m = 0; m < n; ++m) mg[j](i, m) = wg(j * n * n + i * n + m);
        }
        if (grad) {
            // dQ/dPi_c = -2 sum_j P Gamma_j' S_mx(j, c); then back through Pi = A^{-1} B.
            grad->w = Matrix::Zero(n, n);
            grad->rho = 0.0;
            grad->beta.assign(k_, 0.0);
            grad->gamma.assign(k_, 0.0);
            for (int c = 0; c < k_; ++c) {
                Matrix d = Matrix::Zero(n, n);
                for (int j = 0; j < l_; ++j) d.noalias() -= 2.0 * mg[j].transpose() * s_mx(j, c);
                d = project_rows(d);
                const Matrix z = lu.transpose().solve(d);
                grad->w.noalias() += gamma[c] * z + rho * z * pi[c].transpose();
                grad->rho += (z.array() * (w * pi[c]).array()).sum();
                grad->beta[c] = z.trace();
                grad->gamma[c] = (z.array() * w.array()).sum();
            }
        }
        return q;
    }

private:
    GmmGradient zero_gradient() const {
        GmmGradient g;
        g.w = Matrix::Zero(n_, n_);
        g.beta.assign(k_, 0.0);
        g.gamma.assign(k_, 0.0);
        return g;
    }

    /// Right-multiply by P (columns index units).
    Matrix project_cols(Matrix m) const {
        if (projected_) m.colwise() -= m.rowwise().mean();
        return m;
    }
    /// Left-multiply an N x N matrix by P.
    Matrix project_rows(Matrix m) const {
        if (projected_) m.rowwise() -= m.colwise().mean();
        return m;
    }
    /// Center each period of a T x N panel across units.
    Matrix project_periods(Matrix m) const {
        if (projected_) m.colwise() -= m.rowwise().mean();
        return m;
    }

    int n_, k_, t_, l_ = 0;
    bool projected_;
    std::optional<Matrix> weight_;
    std::vector<Matrix> s_my_;
    std::vector<Matrix> s_mx_;
};

/// Stacked moment vector (1/T) sum_t m_t (x) e_t(theta) for a structural point.
inline Vector gmm_moments(const StructuralParams& theta, const PanelData& panel,
                          MomentSource source = MomentSource::covariates, bool projected = false) {
    if (theta.n() != panel.n() || theta.k() != panel.k())
        throw InputError("parameter and panel dimensions do not match");
    GmmProblem prob(panel, source, projected);
    return prob.moments(reduced_form(theta).pi);
}

}  // namespace netrecover
