#pragma once

#include "netrecover/gmm.hpp"
#include "netrecover/types.hpp"

#include <cmath>
#include <cstdlib>
#include <vector>

namespace netrecover {

/// A structural point in plain coordinates.
struct ThetaPoint {
    Matrix w;
    double rho = 0.0;
    std::vector<double> beta;
    std::vector<double> gamma;

    StructuralParams to_params() const { return StructuralParams{Network(w), rho, gamma, beta}; }
    static ThetaPoint from_params(const StructuralParams& p) {
        return ThetaPoint{p.network.weights(), p.rho, p.beta, p.gamma};
    }
};

using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Unconstrained coordinates for a point with a fixed support:
///   u = [r, beta_1..beta_K, gamma_1..gamma_K, w_free...]
/// with rho = r^2 and W_ij = w_ij^2 on free entries. On a normalized row the
/// anchor entry j* (the support entry closest to the diagonal, ties to the smaller
/// column) is W_ij* = 1 - sum of the row's free entries.
class RowSumParameterization {
public:
    RowSumParameterization(const Mask& support, std::vector<bool> normalized_rows, int k)
        : n_(static_cast<int>(support.rows())), k_(k), normalized_(std::move(normalized_rows)) {
        anchor_.assign(n_, -1);
        for (int i = 0; i < n_; ++i) {
            std::vector<int> cols;
            for (int j = 0; j < n_; ++j)
                if (j != i && support(i, j)) cols.push_back(j);
            if (normalized_[i] && !cols.empty()) {
                int best = cols[0];
                for (int j : cols)
                    if (std::abs(j - i) < std::abs(best - i)) best = j;
                anchor_[i] = best;
            }
            for (int j : cols)
                if (j != anchor_[i]) free_.emplace_back(i, j);
        }
    }

    int dimension() const { return 1 + 2 * k_ + static_cast<int>(free_.size()); }
    int anchor(int row) const { return anchor_[row]; }
    const std::vector<std::pair<int, int>>& free_entries() const { return free_; }

    ThetaPoint decode(const Vector& u) const {
        ThetaPoint p;
        p.rho = u(0) * u(0);
        p.beta.resize(k_);
        p.gamma.resize(k_);
        for (int c = 0; c < k_; ++c) {
            p.beta[c] = u(1 + c);
            p.gamma[c] = u(1 + k_ + c);
        }
        p.w = Matrix::Zero(n_, n_);
        const int off = 1 + 2 * k_;
        for (std::size_t f = 0; f < free_.size(); ++f) {
            const auto [i, j] = free_[f];
            p.w(i, j) = u(off + f) * u(off + f);
        }
        for (int i = 0; i < n_; ++i)
            if (anchor_[i] >= 0) p.w(i, anchor_[i]) = 1.0 - (p.w.row(i).sum() - p.w(i, anchor_[i]));
        return p;
    }

    /// Inverse of decode on the support; assumes normalized rows already sum to one.
    Vector encode(const ThetaPoint& p) const {
        Vector u(dimension());
        u(0) = std::sqrt(std::max(p.rho, 0.0));
        for (int c = 0; c < k_; ++c) {
            u(1 + c) = p.beta[c];
            u(1 + k_ + c) = p.gamma[c];
        }
        const int off = 1 + 2 * k_;
        for (std::size_t f = 0; f < free_.size(); ++f) {
            const auto [i, j] = free_[f];
            u(off + f) = std::sqrt(std::max(p.w(i, j), 0.0));
        }
        return u;
    }

    /// Anchors must stay nonnegative.
    bool feasible(const ThetaPoint& p) const {
        for (int i = 0; i < n_; ++i)
            if (anchor_[i] >= 0 && p.w(i, anchor_[i]) < 0.0) return false;
        return true;
    }

    /// Chain rule from a structural gradient (dW, drho, dbeta, dgamma) to du.
    Vector pull_back(const Vector& u, const Matrix& dw, double drho, const std::vector<double>& dbeta,
                     const std::vector<double>& dgamma) const {
        Vector g(dimension());
        g(0) = 2.0 * u(0) * drho;
        for (int c = 0; c < k_; ++c) {
            g(1 + c) = dbeta[c];
            g(1 + k_ + c) = dgamma[c];
        }
        const int off = 1 + 2 * k_;
        for (std::size_t f = 0; f < free_.size(); ++f) {
            const auto [i, j] = free_[f];
            double d = dw(i, j);
            if (anchor_[i] >= 0) d -= dw(i, anchor_[i]);
            g(off + f) = 2.0 * u(off + f) * d;
        }
        return g;
    }

private:
    int n_, k_;
    std::vector<bool> normalized_;
    std::vector<int> anchor_;
    std::vector<std::pair<int, int>> free_;
};

/// Elastic-net penalty sum_ij l1_ij |W_ij| + p2 sum_ij W_ij^2 over off-diagonal entries.
struct PenaltyWeights {
    Matrix l1;
    double p2 = 0.0;

    double value(const Matrix& w) const {
        return (l1.array() * w.array().abs()).sum() + p2 * w.squaredNorm();
    }
    /// Adds the (sub)gradient to dw.
    void add_gradient(const Matrix& w, Matrix& dw) const {
        dw.array() += l1.array() * w.array().sign() + 2.0 * p2 * w.array();
    }
};

/// Penalized GMM objective in reparameterized coordinates.
class PenalizedObjective {
public:
    PenalizedObjective(const GmmProblem& problem, const RowSumParameterization& param, const PenaltyWeights& pen)
        : problem_(problem), param_(param), pen_(pen) {}

    double operator()(const Vector& u, Vector& grad) const {
        const ThetaPoint p = param_.decode(u);
        if (!param_.feasible(p)) {
            grad = Vector::Zero(u.size());
            return kObjectiveSentinel;
        }
        GmmGradient gg;
        const double q = problem_.value(p.w, p.rho, p.beta, p.gamma, &gg);
        if (q >= kObjectiveSentinel) {
            grad = Vector::Zero(u.size());
            return kObjectiveSentinel;
        }
        pen_.add_gradient(p.w, gg.w);
        grad = param_.pull_back(u, gg.w, gg.rho, gg.beta, gg.gamma);
        return q + pen_.value(p.w);
    }

    double value(const Vector& u) const {
        Vector g;
        return (*this)(u, g);
    }

private:
    const GmmProblem& problem_;
    const RowSumParameterization& param_;
    const PenaltyWeights& pen_;
};

}  // namespace netrecover
