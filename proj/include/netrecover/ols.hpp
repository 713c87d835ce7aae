#pragma once

#include "netrecover/types.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace netrecover {

/// Equation-by-equation OLS of each unit's outcome on every unit's covariates.
struct OlsReducedForm {
    /// One N x N estimate per covariate.
    std::vector<Matrix> pi_hat;
    /// Robust covariance of the stacked coefficients. Equation i occupies block i
    /// (length K N), ordered covariate-major within the block, so for K = 1 the
    /// stacking is Pi_hat vectorized by rows.
    Matrix cov;
    std::vector<std::string> warnings;
};

inline OlsReducedForm estimate_ols_reduced_form(const PanelData& panel) {
    panel.validate();
    const int n = panel.n(), k = panel.k(), t = panel.t();
    const int p = n * k;
    if (t < p + 2) throw InputError("OLS reduced form needs T >= K N + 2");
    OlsReducedForm out;
    if (t < 10 * p) out.warnings.push_back("T below 10 K N; OLS reduced form will be imprecise");

    Matrix x(t, p);
    for (int c = 0; c < k; ++c) x.middleCols(c * n, n) = panel.x[c];
    const Matrix xtx = x.transpose() * x;
    Eigen::FullPivLU<Matrix> rank_check(xtx);
    rank_check.setThreshold(1e-10);
    if (rank_check.rank() < p) throw NumericalError("covariate design rank-deficient");
    const Eigen::LDLT<Matrix> ldlt(xtx);
    const Matrix coef = ldlt.solve(x.transpose() * panel.y);  // p x N, column i = equation i
    const Matrix resid = panel.y - x * coef;

    out.pi_hat.assign(k, Matrix(n, n));
    for (int c = 0; c < k; ++c) out.pi_hat[c] = coef.middleRows(c * n, n).transpose();

    // Cov(b_i, b_j) = (X'X)^{-1} [sum_t v_it v_jt x_t x_t'] (X'X)^{-1}.
    const Matrix xtx_inv = ldlt.solve(Matrix::Identity(p, p));
    const Matrix h = x * xtx_inv;  // rows: (X'X)^{-1} x_t
    const int np = n * p;
    out.cov = Matrix::Zero(np, np);
    Vector score(np);
    for (int s = 0; s < t; ++s) {
        for (int i = 0; i < n; ++i) score.segment(i * p, p) = resid(s, i) * h.row(s).transpose();
        out.cov.selfadjointView<Eigen::Lower>().rankUpdate(score);
    }
    out.cov = out.cov.selfadjointView<Eigen::Lower>();
    return out;
}

struct WaldReport {
    double statistic = 0.0;
    int dof = 0;
    double p_value = 1.0;
    Vector row_sums;
};

inline double chi_squared_upper_tail(double stat, int dof) {
    if (!(stat > 0.0)) return 1.0;
    boost::math::chi_squared dist(dof);
    return boost::math::cdf(boost::math::complement(dist, stat));
}

/// Wald test that every row of Pi sums to the same value, given coefficients
/// vectorized by rows and their covariance. R pi compares each of the first N-1
/// row sums against the last.
inline WaldReport wald_rowsum_statistic(const Matrix& pi_hat, const Matrix& cov) {
    const int n = static_cast<int>(pi_hat.rows());
    WaldReport rep;
    rep.dof = n - 1;
    rep.row_sums = pi_hat.rowwise().sum();
    Matrix r = Matrix::Zero(n - 1, n * n);
    for (int i = 0; i < n - 1; ++i) {
        r.block(i, i * n, 1, n).setOnes();
        r.block(i, (n - 1) * n, 1, n).setConstant(-1.0);
    }
    Vector pi_vec(n * n);
    for (int i = 0; i < n; ++i) pi_vec.segment(i * n, n) = pi_hat.row(i).transpose();
    const Vector rp = r * pi_vec;
    const double scale = std::max(1.0, pi_hat.cwiseAbs().maxCoeff());
    if (rp.lpNorm<Eigen::Infinity>() <= 1e-12 * scale) {
        rep.statistic = 0.0;
        rep.p_value = 1.0;
        return rep;
    }
    const Matrix v = r * cov * r.transpose();
    Eigen::LDLT<Matrix> ldlt(v);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all())
        throw NumericalError("restricted covariance of row sums is singular");
    rep.statistic = rp.dot(ldlt.solve(rp));
    rep.p_value = chi_squared_upper_tail(rep.statistic, rep.dof);
    return rep;
}

/// Row-sum normalization test on the first covariate's reduced form.
inline WaldReport rowsum_wald_test(const PanelData& panel) {
    if (panel.t() < panel.n() * panel.k() + 2) throw InputError("row-sum test needs T >= K N + 2");
    const auto ols = estimate_ols_reduced_form(panel);
    const int n = panel.n(), p = n * panel.k();
    // Extract the covariate-1 block of every equation.
    Matrix cov(n * n, n * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) cov.block(i * n, j * n, n, n) = ols.cov.block(i * p, j * p, n, n);
    return wald_rowsum_statistic(ols.pi_hat[0], cov);
}

/// Pooled OLS of y_it on x_it (no intercept; panels are expected to be transformed).
inline std::vector<double> pooled_ols_beta(const PanelData& panel) {
    const int k = panel.k();
    const Eigen::Index m = panel.y.size();
    Matrix x(m, k);
    for (int c = 0; c < k; ++c) x.col(c) = panel.x[c].reshaped();
    const Vector y = panel.y.reshaped();
    const Vector b = x.colPivHouseholderQr().solve(y);
    return {b.data(), b.data() + b.size()};
}

/// Nonnegative lasso by cyclic coordinate descent:
///   min (1/2T) ||y - X b||^2 + lambda ||b||_1  subject to b >= 0.
inline Vector nonneg_lasso(const Matrix& x, const Vector& y, double lambda, int max_sweeps = 500,
                           double tol = 1e-10) {
    const auto t = static_cast<double>(x.rows());
    const Eigen::Index p = x.cols();
    Vector b = Vector::Zero(p);
    Vector r = y;
    const Vector col_sq = x.colwise().squaredNorm().transpose() / t;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (col_sq(j) <= 0.0) continue;
            const double rho = x.col(j).dot(r) / t + col_sq(j) * b(j);
            const double nb = std::max(0.0, rho - lambda) / col_sq(j);
            const double delta = nb - b(j);
            if (delta != 0.0) {
                r -= delta * x.col(j);
                b(j) = nb;
                max_change = std::max(max_change, std::abs(delta));
            }
        }
        if (max_change < tol) break;
    }
    return b;
}

}  // namespace netrecover
