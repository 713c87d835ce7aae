#pragma once

#include "netrecover/model.hpp"
#include "netrecover/types.hpp"

#include <string>
#include <vector>

namespace netrecover {

struct TransformConfig {
    bool demean_time = true;
    bool global_difference = true;
};

/// Apply the configured within/common-shock transforms, time demeaning first.
inline PanelData apply_transforms(PanelData panel, const TransformConfig& tc) {
    if (tc.demean_time && panel.t() >= 2) panel = demean_time(std::move(panel));
    if (tc.global_difference) panel = global_difference(std::move(panel));
    return panel;
}

struct TslsResult {
    double rho = 0.0;
    std::vector<double> beta;
    std::vector<double> gamma;
    /// Robust standard errors ordered (rho, beta_1..K, gamma_1..K).
    std::vector<double> std_errors;
    Matrix cov;
};

/// 2SLS of y on (W y, x, W x) with peers-of-peers instruments (x, W x, W^2 x),
/// pooled over units and periods, heteroskedasticity-robust covariance. The
/// estimated network is treated as known.
inline TslsResult post_2sls(const PanelData& raw, const Network& w_hat, const TransformConfig& tc = {}) {
    raw.validate();
    const Matrix& w = w_hat.weights();
    if (w.rows() != raw.n()) throw InputError("network and panel sizes differ");
    if (!(w.array().abs() > kZeroTol).any()) throw InputError("post-2SLS needs a network with at least one nonzero row");
    const int k = raw.k();

    // Spatial lags commute with time demeaning but not with global differencing,
    // so lags are formed before the cross-sectional transform.
    PanelData base = raw;
    if (tc.demean_time && base.t() >= 2) base = demean_time(std::move(base));
    auto lag = [&](const Matrix& m) -> Matrix { return m * w.transpose(); };  // rows are periods
    std::vector<Matrix> cols_x{lag(base.y)};
    std::vector<Matrix> cols_z;
    for (int c = 0; c < k; ++c) cols_x.push_back(base.x[c]);
    for (int c = 0; c < k; ++c) cols_x.push_back(lag(base.x[c]));
    for (int c = 0; c < k; ++c) cols_z.push_back(base.x[c]);
    for (int c = 0; c < k; ++c) cols_z.push_back(lag(base.x[c]));
    for (int c = 0; c < k; ++c) cols_z.push_back(lag(lag(base.x[c])));
    Matrix yy = base.y;
    if (tc.global_difference) {
        auto centre = [](Matrix& m) { m.colwise() -= m.rowwise().mean(); };
        centre(yy);
        for (auto& m : cols_x) centre(m);
        for (auto& m : cols_z) centre(m);
    }
    const Eigen::Index obs = yy.size();
    Matrix xm(obs, cols_x.size()), zm(obs, cols_z.size());
    for (std::size_t c = 0; c < cols_x.size(); ++c) xm.col(c) = cols_x[c].reshaped();
    for (std::size_t c = 0; c < cols_z.size(); ++c) zm.col(c) = cols_z[c].reshaped();
    const Vector yv = yy.reshaped();

    const char* block_names[] = {"x", "W x", "W^2 x"};
    Eigen::Index expected = 0;
    for (int b = 0; b < 3; ++b) {
        expected += k;
        Eigen::ColPivHouseholderQR<Matrix> qr(zm.leftCols(expected));
        qr.setThreshold(1e-10);
        if (qr.rank() < expected)
            throw NumericalError(std::string("instrument rank deficiency in block ") + block_names[b]);
    }

    Eigen::ColPivHouseholderQR<Matrix> zqr(zm);
    const Matrix x_hat = zm * zqr.solve(xm);  // projection of regressors on instruments
    const Matrix a = x_hat.transpose() * xm;
    Eigen::FullPivLU<Matrix> alu(a);
    if (!alu.isInvertible()) throw NumericalError("2SLS normal matrix is singular");
    const Vector b = alu.solve(x_hat.transpose() * yv);
    const Vector u = yv - xm * b;
    const Matrix a_inv = alu.inverse();
    const Matrix meat = x_hat.transpose() * u.array().square().matrix().asDiagonal() * x_hat;

    TslsResult out;
    out.cov = a_inv * meat * a_inv.transpose();
    out.rho = b(0);
    for (int c = 0; c < k; ++c) {
        out.beta.push_back(b(1 + c));
        out.gamma.push_back(b(1 + k + c));
    }
    for (Eigen::Index i = 0; i < out.cov.rows(); ++i) out.std_errors.push_back(std::sqrt(std::max(0.0, out.cov(i, i))));
    return out;
}

}  // namespace netrecover
