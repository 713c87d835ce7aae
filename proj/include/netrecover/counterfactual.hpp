#pragma once

#include "netrecover/model.hpp"
#include "netrecover/types.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace netrecover {

/// Equilibrium response (I - rho W)^{-1} shock, feedback included.
inline Vector propagate(const Network& net, double rho, const Vector& shock) {
    if (shock.size() != net.n()) throw InputError("shock length does not match the network");
    if (max_abs_row_sum(rho * net.weights()) >= 1.0)
        throw InputError("rho W violates the invertibility condition (A2)");
    return factor_multiplier(net.weights(), rho).solve(shock);
}

struct ShockScenario {
    /// Unit receiving the shock; looked up in `labels` when given, else an index.
    std::string origin_unit;
    /// Proportional shock applied to the origin's baseline outcome.
    double shock_size = 0.10;
    Network hypothesis_a;
    Network hypothesis_b;
    double rho = 0.0;
    Vector baseline_outcomes;
    std::vector<std::string> labels;
};

struct UpsilonEntry {
    std::string unit;
    double upsilon = 0.0;
    bool defined = true;
    std::string reason;
};

/// Post-shock outcome under each hypothesis, y_j = baseline_j + response_j.
struct ScenarioOutcome {
    Vector outcome_a;
    Vector outcome_b;
    std::vector<UpsilonEntry> upsilon;
};

inline int resolve_unit(const std::string& unit, const std::vector<std::string>& labels, int n) {
    if (!labels.empty()) {
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == unit) return static_cast<int>(i);
        throw InputError("origin unit '" + unit + "' not found among labels");
    }
    try {
        std::size_t used = 0;
        const int idx = std::stoi(unit, &used);
        if (used == unit.size() && idx >= 0 && idx < n) return idx;
    } catch (const std::exception&) {
    }
    throw InputError("origin unit '" + unit + "' not found");
}

/// Upsilon_j = log(y_j | A) - log(y_j | B) after a proportional shock to the origin.
inline ScenarioOutcome compare_networks(const ShockScenario& s) {
    const int n = s.hypothesis_a.n();
    if (s.hypothesis_b.n() != n || s.baseline_outcomes.size() != n) throw InputError("scenario dimensions differ");
    if (!s.labels.empty() && static_cast<int>(s.labels.size()) != n) throw InputError("label count differs from N");
    const int origin = resolve_unit(s.origin_unit, s.labels, n);
    Vector shock = Vector::Zero(n);
    shock(origin) = s.shock_size * s.baseline_outcomes(origin);
    ScenarioOutcome out;
    out.outcome_a = s.baseline_outcomes + propagate(s.hypothesis_a, s.rho, shock);
    out.outcome_b = s.baseline_outcomes + propagate(s.hypothesis_b, s.rho, shock);
    for (int j = 0; j < n; ++j) {
        UpsilonEntry e;
        e.unit = s.labels.empty() ? std::to_string(j) : s.labels[j];
        if (!(out.outcome_a(j) > 0.0) || !(out.outcome_b(j) > 0.0)) {
            e.defined = false;
            e.reason = !(out.outcome_a(j) > 0.0) ? "non-positive outcome under hypothesis A"
                                                  : "non-positive outcome under hypothesis B";
        } else {
            e.upsilon = std::log(out.outcome_a(j)) - std::log(out.outcome_b(j));
        }
        out.upsilon.push_back(std::move(e));
    }
    return out;
}

}  // namespace netrecover
