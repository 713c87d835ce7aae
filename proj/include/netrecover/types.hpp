#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace netrecover {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Entries with magnitude at or below this are treated as exact zeros.
inline constexpr double kZeroTol = 1e-10;

/// Bad input or configuration (CLI exit code 2).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical procedure failed (CLI exit code 3).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// (I - rho W) is singular or too ill-conditioned to invert.
class NonInvertibleError : public NumericalError {
public:
    NonInvertibleError(const std::string& what, double spectral_radius, double condition)
        : NumericalError(what), spectral_radius_(spectral_radius), condition_(condition) {}

    double spectral_radius() const { return spectral_radius_; }
    double condition() const { return condition_; }

private:
    double spectral_radius_;
    double condition_;
};

/// Weighted directed interaction matrix; entry (i, j) is the influence of j on i.
class Network {
public:
    Network() = default;

    explicit Network(Matrix weights) : w_(std::move(weights)) {
        if (w_.rows() != w_.cols() || w_.rows() < 1)
            throw InputError("network matrix must be square and non-empty");
        if (!w_.allFinite())
            throw InputError("network contains non-finite entries");
        for (Eigen::Index i = 0; i < w_.rows(); ++i) {
            if (w_(i, i) != 0.0)
                throw InputError("network diagonal must be zero (A1), row " + std::to_string(i));
        }
    }

    static Network empty(int n) { return Network(Matrix::Zero(n, n)); }

    int n() const { return static_cast<int>(w_.rows()); }
    const Matrix& weights() const { return w_; }
    double operator()(int i, int j) const { return w_(i, j); }

    bool is_nonneg() const { return (w_.array() >= 0.0).all(); }

    /// Every row with a nonzero entry sums to one.
    bool is_row_normalized(double tol = 1e-10) const {
        for (Eigen::Index i = 0; i < w_.rows(); ++i) {
            if ((w_.row(i).array().abs() > kZeroTol).any() && std::abs(w_.row(i).sum() - 1.0) > tol)
                return false;
        }
        return true;
    }

    bool operator==(const Network& other) const { return w_ == other.w_; }

private:
    Matrix w_;
};

/// Full structural parameter vector: network, endogenous effect, and per-covariate
/// exogenous (gamma) and own (beta) effects.
struct StructuralParams {
    Network network;
    double rho = 0.0;
    std::vector<double> gamma;
    std::vector<double> beta;

    int n() const { return network.n(); }
    int k() const { return static_cast<int>(beta.size()); }

    static StructuralParams scalar(Network w, double rho, double beta, double gamma) {
        return StructuralParams{std::move(w), rho, {gamma}, {beta}};
    }
};

/// Balanced panel: y is T x N; x[k] and z[l] are T x N.
struct PanelData {
    Matrix y;
    std::vector<Matrix> x;
    std::vector<Matrix> z;
    std::vector<std::string> unit_labels;
    std::vector<std::string> time_labels;

    int t() const { return static_cast<int>(y.rows()); }
    int n() const { return static_cast<int>(y.cols()); }
    int k() const { return static_cast<int>(x.size()); }

    void validate() const {
        if (y.rows() < 1) throw InputError("panel needs at least one period");
        if (y.cols() < 2) throw InputError("panel needs at least two units");
        if (x.empty()) throw InputError("panel needs at least one covariate");
        if (!y.allFinite()) throw InputError("panel outcomes contain missing or non-finite values");
        auto check = [&](const std::vector<Matrix>& arr, const char* name) {
            for (const auto& m : arr) {
                if (m.rows() != y.rows() || m.cols() != y.cols())
                    throw InputError(std::string("panel ") + name + " dimensions do not match y");
                if (!m.allFinite())
                    throw InputError(std::string("panel ") + name + " contains non-finite values");
            }
        };
        check(x, "covariate");
        check(z, "instrument");
        if (!unit_labels.empty() && static_cast<int>(unit_labels.size()) != n())
            throw InputError("unit label count does not match N");
        if (!time_labels.empty() && static_cast<int>(time_labels.size()) != t())
            throw InputError("time label count does not match T");
    }
};

/// Reduced-form projection matrices, one N x N matrix per covariate.
struct ReducedForm {
    std::vector<Matrix> pi;

    const Matrix& first() const { return pi.at(0); }
};

/// Shock structure for panel simulation.
struct ShockConfig {
    bool unit_effects = true;
    double unit_scale = 1.0;
    bool time_effects = true;
    double time_scale = 1.0;
    double noise_sd = 1.0;
    /// Pairwise correlation q of the disturbances across units.
    double noise_cross_correlation = 0.0;
    /// Loadings of alpha_t and alpha* into the mean of x.
    std::pair<double, double> covariate_shock_loading{0.0, 0.0};
    std::uint64_t seed = 1;

    static ShockConfig none(std::uint64_t seed = 1) {
        ShockConfig s;
        s.unit_effects = false;
        s.time_effects = false;
        s.seed = seed;
        return s;
    }
};

inline Vector ones(int n) { return Vector::Ones(n); }

}  // namespace netrecover
