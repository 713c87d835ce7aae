#pragma once

#include "netrecover/rng.hpp"
#include "netrecover/types.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace netrecover {

/// True when diag(W^2) is not constant.
inline bool diag_square_varies(const Matrix& w) {
    const Vector d = (w * w).diagonal();
    return d.maxCoeff() - d.minCoeff() > kZeroTol;
}

/// Redraws until diag(W^2) varies. Attempt 0 uses the seed itself, attempt k
/// uses derive_seed(seed, {k}).
template <class Draw>
Network draw_until_diag_square_varies(std::uint64_t seed, Draw&& draw) {
    constexpr int kMaxAttempts = 10000;
    for (int k = 0; k < kMaxAttempts; ++k) {
        Network net = draw(k == 0 ? seed : derive_seed(seed, {static_cast<std::uint64_t>(k)}));
        if (diag_square_varies(net.weights())) return net;
    }
    throw NumericalError("no draw with non-constant diag(W^2) after " + std::to_string(kMaxAttempts) + " attempts");
}

/// One uniformly chosen link per row with weight 1, redrawn until some but not
/// all nodes sit in a 2-cycle (n = 2 cannot satisfy this and is returned as drawn).
inline Network gen_erdos_renyi(int n, std::uint64_t seed) {
    if (n < 2) throw InputError("Erdos-Renyi generator needs n >= 2");
    auto draw = [n](std::uint64_t s) {
        Rng rng(s);
        Matrix w = Matrix::Zero(n, n);
        for (int i = 0; i < n; ++i) {
            int j = static_cast<int>(rng.below(n - 1));
            if (j >= i) ++j;
            w(i, j) = 1.0;
        }
        return Network(std::move(w));
    };
    if (n == 2) return draw(seed);
    return draw_until_diag_square_varies(seed, draw);
}

/// Give each row one randomly chosen weight of .7 and split .3 equally over its
/// remaining links; single-link rows get weight 1.
inline Network assign_strong_weak(const Network& net, std::uint64_t seed, bool require_all_rows = true) {
    Rng rng(seed);
    const int n = net.n();
    Matrix w = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        std::vector<int> links;
        for (int j = 0; j < n; ++j)
            if (j != i && std::abs(net(i, j)) > kZeroTol) links.push_back(j);
        if (links.empty()) {
            if (require_all_rows) throw InputError("row " + std::to_string(i) + " has no links to weight");
            continue;
        }
        if (links.size() == 1) {
            w(i, links[0]) = 1.0;
            continue;
        }
        const auto strong = rng.below(links.size());
        const double weak = 0.3 / static_cast<double>(links.size() - 1);
        for (std::size_t l = 0; l < links.size(); ++l) w(i, links[l]) = l == strong ? 0.7 : weak;
    }
    return Network(std::move(w));
}

/// Leader node of each party for a political-party network of size n.
inline std::pair<int, int> party_leaders(int n) {
    const int size_a = static_cast<int>(std::lround(n / 3.0));
    return {0, size_a};
}

/// One draw of the political-party support, before the diag(W^2) check.
inline Network draw_political_party(int n, std::uint64_t seed) {
    Rng rng(seed);
    const auto [leader_a, leader_b] = party_leaders(n);
    Matrix support = Matrix::Zero(n, n);
    auto link_half = [&](int first, int last, int leader) {
        std::vector<int> members;
        for (int i = first; i < last; ++i)
            if (i != leader) members.push_back(i);
        rng.shuffle(members);
        const int size = last - first;
        for (int m = 0; m < size / 2 && m < static_cast<int>(members.size()); ++m) support(members[m], leader) = 1.0;
    };
    link_half(0, leader_b, leader_a);
    link_half(leader_b, n, leader_b);
    for (int i = 0; i < n; ++i) {
        std::vector<int> candidates;
        for (int j = 0; j < n; ++j)
            if (j != i && support(i, j) == 0.0) candidates.push_back(j);
        support(i, candidates[rng.below(candidates.size())]) = 1.0;
    }
    return assign_strong_weak(Network(std::move(support)), mix64(seed ^ 0x5eedULL));
}

/// Two parties (the first of round(n/3) members, led by node 0; the rest led by
/// node round(n/3)). floor(half) of each party's non-leader members link to their
/// leader, every row gets one extra random link, then weights follow
/// assign_strong_weak. Redrawn until diag(W^2) varies.
inline Network gen_political_party(int n, std::uint64_t seed) {
    if (n < 6) throw InputError("political-party generator needs n >= 6");
    return draw_until_diag_square_varies(seed, [n](std::uint64_t s) { return draw_political_party(n, s); });
}

}  // namespace netrecover
