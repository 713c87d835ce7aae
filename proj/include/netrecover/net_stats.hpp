#pragma once

#include "netrecover/model.hpp"
#include "netrecover/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <vector>

namespace netrecover {

struct NetworkStats {
    int nodes = 0;
    int edge_count = 0;
    int strong_edge_count = 0;
    int weak_edge_count = 0;
    /// Directed edges whose reverse is also present.
    int reciprocated_edge_count = 0;
    double clustering_coefficient = 0.0;
    int component_count = 0;
    int max_component_size = 0;
    double density = 0.0;
    double diag_w2_sd = 0.0;
    /// In-degree of i: links in row i (peers influencing i).
    double in_degree_mean = 0.0;
    double in_degree_sd = 0.0;
    /// Out-degree of j: links in column j (peers j influences).
    double out_degree_mean = 0.0;
    double out_degree_sd = 0.0;
    std::vector<int> top_out_degree_nodes;
    /// Top nodes by eigenvector centrality of the undirected binarized support;
    /// empty for an empty network.
    std::vector<int> top_eigencentrality_nodes;
};

namespace detail {

inline std::vector<int> top_nodes(const Vector& score, int count) {
    std::vector<int> idx(score.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return score(a) > score(b); });
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(count)));
    return idx;
}

}  // namespace detail

/// Leading eigenvector of the undirected binarized support, nonnegative and summing
/// to one. Empty when the network has no links.
inline Vector undirected_eigencentrality(const Network& net, double tol = kZeroTol) {
    const int n = net.n();
    Matrix u = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && (std::abs(net(i, j)) > tol || std::abs(net(j, i)) > tol)) u(i, j) = 1.0;
    if (u.sum() == 0.0) return {};
    Eigen::SelfAdjointEigenSolver<Matrix> es(u);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    Vector v = es.eigenvectors().col(n - 1);
    if (v.sum() < 0.0) v = -v;
    v = v.cwiseMax(0.0);
    return v / v.sum();
}

inline NetworkStats compute_stats(const Network& net, double strong_threshold = 0.3, double tol = kZeroTol) {
    const int n = net.n();
    const Matrix& w = net.weights();
    NetworkStats s;
    s.nodes = n;
    Eigen::MatrixXi a = Eigen::MatrixXi::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && std::abs(w(i, j)) > tol) {
                a(i, j) = 1;
                ++s.edge_count;
                if (w(i, j) > strong_threshold)
                    ++s.strong_edge_count;
                else
                    ++s.weak_edge_count;
            }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (a(i, j) && a(j, i)) ++s.reciprocated_edge_count;
    s.density = n > 1 ? static_cast<double>(s.edge_count) / (static_cast<double>(n) * (n - 1)) : 0.0;

    // Undirected binarized support for components and clustering.
    const Eigen::MatrixXi u = ((a + a.transpose()).array() > 0).cast<int>();
    std::vector<int> comp(n, -1);
    for (int start = 0; start < n; ++start) {
        if (comp[start] >= 0) continue;
        int size = 0;
        std::queue<int> q;
        q.push(start);
        comp[start] = s.component_count;
        while (!q.empty()) {
            const int v = q.front();
            q.pop();
            ++size;
            for (int x = 0; x < n; ++x)
                if (u(v, x) && comp[x] < 0) {
                    comp[x] = s.component_count;
                    q.push(x);
                }
        }
        ++s.component_count;
        s.max_component_size = std::max(s.max_component_size, size);
    }
    long long closed = 0, triples = 0;
    for (int v = 0; v < n; ++v) {
        const long long d = u.row(v).sum();
        triples += d * (d - 1) / 2;
        for (int x = 0; x < n; ++x)
            for (int y = x + 1; y < n; ++y)
                if (u(v, x) && u(v, y) && u(x, y)) ++closed;
    }
    s.clustering_coefficient = triples > 0 ? static_cast<double>(closed) / static_cast<double>(triples) : 0.0;

    s.diag_w2_sd = sample_sd((w * w).diagonal());
    const Vector in_deg = a.rowwise().sum().cast<double>();
    const Vector out_deg = a.colwise().sum().transpose().cast<double>();
    auto pop_sd = [](const Vector& v) { return std::sqrt((v.array() - v.mean()).square().mean()); };
    s.in_degree_mean = in_deg.mean();
    s.in_degree_sd = pop_sd(in_deg);
    s.out_degree_mean = out_deg.mean();
    s.out_degree_sd = pop_sd(out_deg);
    s.top_out_degree_nodes = detail::top_nodes(out_deg, 3);
    if (s.edge_count > 0) s.top_eigencentrality_nodes = detail::top_nodes(undirected_eigencentrality(net, tol), 3);
    return s;
}

struct RecoveryMetrics {
    double zero_recovery_rate = 1.0;
    double nonzero_recovery_rate = 1.0;
    /// Share of true links above the strong threshold that are estimated nonzero.
    double strong_edge_recovery_rate = 1.0;
    double mad_w = 0.0;
    double mad_pi = 0.0;
    double bias_rho = 0.0;
    double bias_gamma = 0.0;
    double bias_beta = 0.0;
};

/// Recovery of a network estimate against the truth over off-diagonal entries.
inline RecoveryMetrics compare(const Network& w_true, const Network& w_hat, const Matrix& pi_true, const Matrix& pi_hat,
                               const StructuralParams& theta_true, const StructuralParams& theta_hat,
                               double strong_threshold = 0.3, double tol = kZeroTol) {
    const int n = w_true.n();
    if (w_hat.n() != n || pi_true.rows() != n || pi_true.cols() != n || pi_hat.rows() != n || pi_hat.cols() != n)
        throw InputError("dimension mismatch in recovery comparison");
    int zeros = 0, zeros_hit = 0, nonzeros = 0, nonzeros_hit = 0, strong = 0, strong_hit = 0;
    double mad_w = 0.0, mad_pi = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const bool t0 = std::abs(w_true(i, j)) <= tol;
            const bool h0 = std::abs(w_hat(i, j)) <= tol;
            if (t0) {
                ++zeros;
                zeros_hit += h0;
            } else {
                ++nonzeros;
                nonzeros_hit += !h0;
                if (w_true(i, j) > strong_threshold) {
                    ++strong;
                    strong_hit += !h0;
                }
            }
            mad_w += std::abs(w_hat(i, j) - w_true(i, j));
            mad_pi += std::abs(pi_hat(i, j) - pi_true(i, j));
        }
    RecoveryMetrics m;
    if (zeros > 0) m.zero_recovery_rate = static_cast<double>(zeros_hit) / zeros;
    if (nonzeros > 0) m.nonzero_recovery_rate = static_cast<double>(nonzeros_hit) / nonzeros;
    if (strong > 0) m.strong_edge_recovery_rate = static_cast<double>(strong_hit) / strong;
    const double pairs = n > 1 ? static_cast<double>(n) * (n - 1) : 1.0;
    m.mad_w = mad_w / pairs;
    m.mad_pi = mad_pi / pairs;
    m.bias_rho = theta_hat.rho - theta_true.rho;
    if (!theta_hat.gamma.empty() && !theta_true.gamma.empty()) m.bias_gamma = theta_hat.gamma[0] - theta_true.gamma[0];
    if (!theta_hat.beta.empty() && !theta_true.beta.empty()) m.bias_beta = theta_hat.beta[0] - theta_true.beta[0];
    return m;
}

}  // namespace netrecover
