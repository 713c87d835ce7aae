#pragma once

#include "netrecover/rng.hpp"
#include "netrecover/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace netrecover {

/// Inversions of (I - rho W) with reciprocal condition number below this are
/// treated as an A2 failure.
inline constexpr double kMinRcond = 1e-12;

inline double spectral_radius(const Matrix& m) {
    if (m.rows() == 0) return 0.0;
    Eigen::EigenSolver<Matrix> es(m, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Maximum absolute row sum (the induced infinity norm).
inline double max_abs_row_sum(const Matrix& m) {
    return m.rows() == 0 ? 0.0 : m.cwiseAbs().rowwise().sum().maxCoeff();
}

/// LU factorization of (I - rho W); throws NonInvertibleError when singular.
inline Eigen::PartialPivLU<Matrix> factor_multiplier(const Matrix& w, double rho) {
    const int n = static_cast<int>(w.rows());
    Matrix a = Matrix::Identity(n, n) - rho * w;
    Eigen::PartialPivLU<Matrix> lu(a);
    const double rc = lu.rcond();
    if (!(rc > kMinRcond)) {
        const double sr = spectral_radius(rho * w);
        std::ostringstream os;
        os << "A2 violated / non-invertible (I - rho W): spectral radius of rho W = " << sr
           << ", reciprocal condition = " << rc;
        throw NonInvertibleError(os.str(), sr, rc > 0 ? 1.0 / rc : INFINITY);
    }
    return lu;
}

/// Pi_k = (I - rho W)^{-1} (beta_k I + gamma_k W) for every covariate k.
inline ReducedForm reduced_form(const StructuralParams& p) {
    if (p.beta.size() != p.gamma.size() || p.beta.empty())
        throw InputError("beta and gamma must have the same nonzero length");
    const Matrix& w = p.network.weights();
    const auto lu = factor_multiplier(w, p.rho);
    ReducedForm rf;
    rf.pi.reserve(p.beta.size());
    for (std::size_t k = 0; k < p.beta.size(); ++k) {
        Matrix rhs = p.gamma[k] * w;
        rhs.diagonal().array() += p.beta[k];
        rf.pi.push_back(lu.solve(rhs));
    }
    return rf;
}

/// Reduced form via the truncated series beta I + (rho beta + gamma) sum_{m>=1} rho^{m-1} W^m.
/// The order is chosen so the geometric tail bound falls below tol.
inline Matrix neumann_reduced_form(const Matrix& w, double rho, double beta, double gamma,
                                   double tol = 1e-12, int max_terms = 100000) {
    const int n = static_cast<int>(w.rows());
    const double norm = max_abs_row_sum(rho * w);
    const double wnorm = std::max(max_abs_row_sum(w), 1e-300);
    Matrix pi = beta * Matrix::Identity(n, n);
    if (norm >= 1.0 && rho != 0.0)
        throw NonInvertibleError("Neumann series does not converge: ||rho W|| >= 1", norm, INFINITY);
    const double scale = std::abs(rho * beta + gamma);
    if (scale == 0.0 || wnorm == 1e-300) return pi;
    // Term m is bounded by scale * wnorm * norm^{m-1}.
    int terms = max_terms;
    if (norm > 0.0) {
        const double tail_factor = scale * wnorm / (1.0 - norm);
        terms = static_cast<int>(std::ceil(std::log(tol / tail_factor) / std::log(norm))) + 1;
        terms = std::clamp(terms, 1, max_terms);
    } else {
        terms = 1;
    }
    Matrix power = w;
    double rho_pow = 1.0;
    for (int m = 1; m <= terms; ++m) {
        pi += (rho * beta + gamma) * rho_pow * power;
        power = power * w;
        rho_pow *= rho;
    }
    return pi;
}

/// Simulate y_t = (I - rho W)^{-1}(sum_k beta_k x_kt + gamma_k W x_kt + alpha_t iota + alpha* + eps_t).
/// q = 1 is allowed; it adds a note to `warnings` since the disturbance covariance is singular.
inline PanelData simulate_panel(const StructuralParams& p, const ShockConfig& shocks, int t_periods,
                                std::vector<std::string>* warnings = nullptr) {
    if (t_periods < 1) throw InputError("t_periods must be at least 1");
    if (p.beta.empty() || p.beta.size() != p.gamma.size())
        throw InputError("beta and gamma must have the same nonzero length");
    const double q = shocks.noise_cross_correlation;
    if (q < 0.0 || q > 1.0) throw InputError("noise cross-correlation must lie in [0, 1]");
    if (q == 1.0 && warnings)
        warnings->push_back("noise cross-correlation q = 1: disturbances are one common factor (singular covariance)");
    const int n = p.n();
    const int k = p.k();
    const Matrix& w = p.network.weights();
    const auto lu = factor_multiplier(w, p.rho);

    Rng rng(shocks.seed);
    PanelData out;
    out.y.resize(t_periods, n);
    out.x.assign(k, Matrix(t_periods, n));
    for (int i = 0; i < n; ++i) out.unit_labels.push_back(std::to_string(i));
    for (int t = 0; t < t_periods; ++t) out.time_labels.push_back(std::to_string(t));

    Vector unit_effect = Vector::Zero(n);
    if (shocks.unit_effects)
        for (int i = 0; i < n; ++i) unit_effect(i) = shocks.unit_scale * rng.normal(1.0, 1.0);

    // Equicorrelated disturbances as sqrt(1-q) idiosyncratic + sqrt(q) common factor;
    // this has covariance (1-q) I + q 11' exactly, including q = 1.
    const double idio = std::sqrt(1.0 - q);
    const double common = std::sqrt(q);
    for (int t = 0; t < t_periods; ++t) {
        const double time_effect = shocks.time_effects ? shocks.time_scale * rng.normal(1.0, 1.0) : 0.0;
        const auto [load_t, load_i] = shocks.covariate_shock_loading;
        Vector rhs = Vector::Constant(n, time_effect) + unit_effect;
        for (int c = 0; c < k; ++c) {
            Vector xt(n);
            for (int i = 0; i < n; ++i)
                xt(i) = rng.normal() + load_t * time_effect + load_i * unit_effect(i);
            out.x[c].row(t) = xt.transpose();
            rhs += p.beta[c] * xt + p.gamma[c] * (w * xt);
        }
        const double f = rng.normal();
        for (int i = 0; i < n; ++i) rhs(i) += shocks.noise_sd * (idio * rng.normal() + common * f);
        out.y.row(t) = lu.solve(rhs).transpose();
    }
    return out;
}

namespace detail {
inline void demean_columns(Matrix& m) { m.rowwise() -= m.colwise().mean(); }
inline void demean_rows(Matrix& m) { m.colwise() -= m.rowwise().mean(); }
}  // namespace detail

/// Within transform: subtract each unit's time average (removes unit fixed effects).
inline PanelData demean_time(PanelData panel) {
    if (panel.t() < 2) throw InputError("insufficient periods for within transform (T < 2)");
    detail::demean_columns(panel.y);
    for (auto& m : panel.x) detail::demean_columns(m);
    for (auto& m : panel.z) detail::demean_columns(m);
    return panel;
}

/// Global differencing: apply (I - H), H = 11'/N, to every period (removes common shocks).
inline PanelData global_difference(PanelData panel) {
    if (panel.n() < 2) throw InputError("global differencing needs N >= 2");
    detail::demean_rows(panel.y);
    for (auto& m : panel.x) detail::demean_rows(m);
    for (auto& m : panel.z) detail::demean_rows(m);
    return panel;
}

struct AssumptionCheck {
    bool holds = false;
    double value = 0.0;
};

/// One flag and diagnostic per identification assumption.
struct AssumptionReport {
    AssumptionCheck a1;  ///< max |diag W|
    AssumptionCheck a2;  ///< max row sum of |rho W|
    double a2_rho_abs = 0.0;
    AssumptionCheck a3;  ///< |rho beta_1 + gamma_1|
    AssumptionCheck a4;  ///< min_i |sum_j W_ij - 1|
    AssumptionCheck a5;  ///< sd of diag(W^2)

    bool all() const { return a1.holds && a2.holds && a3.holds && a4.holds && a5.holds; }
};

/// Sample standard deviation (divisor n - 1).
inline double sample_sd(const Vector& v) {
    if (v.size() < 2) return 0.0;
    const double mean = v.mean();
    return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

inline AssumptionReport check_assumptions(const StructuralParams& p, double tol = kZeroTol) {
    const Matrix& w = p.network.weights();
    AssumptionReport r;
    r.a1.value = w.diagonal().cwiseAbs().maxCoeff();
    r.a1.holds = r.a1.value <= tol;
    r.a2.value = max_abs_row_sum(p.rho * w);
    r.a2_rho_abs = std::abs(p.rho);
    r.a2.holds = r.a2_rho_abs < 1.0 && r.a2.value < 1.0;
    const double b1 = p.beta.empty() ? 0.0 : p.beta[0];
    const double g1 = p.gamma.empty() ? 0.0 : p.gamma[0];
    r.a3.value = std::abs(p.rho * b1 + g1);
    r.a3.holds = r.a3.value > tol;
    r.a4.value = (w.rowwise().sum().array() - 1.0).abs().minCoeff();
    r.a4.holds = r.a4.value <= tol;
    const Vector d = (w * w).diagonal();
    r.a5.value = sample_sd(d);
    r.a5.holds = r.a5.value > tol;
    return r;
}

}  // namespace netrecover
