#pragma once

#include "netrecover/rng.hpp"
#include "netrecover/types.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <vector>

namespace netrecover {

/// Objective returning f(x) and writing the gradient into g. Infeasible points
/// return a non-finite value or anything at or above `infeasible_above`.
using GradientObjective = std::function<double(const Vector& x, Vector& g)>;

struct LbfgsOptions {
    int max_iterations = 2000;
    int history = 10;
    double gradient_tolerance = 1e-9;
    /// Stop when the relative decrease over one iteration is below this.
    double function_tolerance = 1e-13;
    double step_tolerance = 1e-14;
    double armijo = 1e-4;
    double infeasible_above = 1e11;
};

struct LbfgsResult {
    Vector x;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
    /// Objective value after every accepted step (starting with the initial value).
    std::vector<double> descent_log;
};

/// Limited-memory BFGS with backtracking Armijo line search. Every accepted step
/// strictly decreases the objective.
inline LbfgsResult minimize_lbfgs(const GradientObjective& f, Vector x, const LbfgsOptions& opt = {}) {
    const auto bad = [&](double v) { return !std::isfinite(v) || v >= opt.infeasible_above; };
    LbfgsResult res;
    Vector g(x.size());
    double fx = f(x, g);
    res.descent_log.push_back(fx);
    if (bad(fx) || x.size() == 0) {
        res.x = std::move(x);
        res.value = fx;
        res.converged = x.size() == 0;
        return res;
    }
    std::deque<Vector> s_hist, y_hist;
    std::deque<double> rho_hist;
    Vector g_new(x.size());
    for (int it = 0; it < opt.max_iterations; ++it) {
        res.iterations = it;
        if (g.lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance) {
            res.converged = true;
            break;
        }
        // Two-loop recursion.
        Vector d = -g;
        std::vector<double> alpha(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            alpha[i] = rho_hist[i] * s_hist[i].dot(d);
            d -= alpha[i] * y_hist[i];
        }
        if (!s_hist.empty()) {
            const double gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
            d *= gamma;
        } else {
            d /= std::max(1.0, g.norm());
        }
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(d);
            d += (alpha[i] - beta) * s_hist[i];
        }
        double slope = g.dot(d);
        if (!(slope < 0.0)) {
            // Not a descent direction; restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = -g / std::max(1.0, g.norm());
            slope = g.dot(d);
        }
        double step = 1.0;
        bool accepted = false;
        Vector x_new;
        double f_new = 0.0;
        while (step * d.lpNorm<Eigen::Infinity>() > opt.step_tolerance) {
            x_new = x + step * d;
            f_new = f(x_new, g_new);
            if (!bad(f_new) && f_new <= fx + opt.armijo * step * slope && f_new < fx) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            res.converged = g.lpNorm<Eigen::Infinity>() <= std::sqrt(opt.gradient_tolerance);
            break;
        }
        Vector s = x_new - x;
        Vector y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-16 * s.norm() * y.norm()) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opt.history) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        const double decrease = fx - f_new;
        x = std::move(x_new);
        g = g_new;
        fx = f_new;
        res.descent_log.push_back(fx);
        if (decrease <= opt.function_tolerance * std::max(1.0, std::abs(fx))) {
            res.converged = true;
            res.iterations = it + 1;
            break;
        }
    }
    res.x = std::move(x);
    res.value = fx;
    return res;
}

struct ProjectedOptions {
    int max_iterations = 5000;
    /// Stop when the projected-gradient step has infinity norm below this.
    double gradient_tolerance = 1e-9;
    double function_tolerance = 1e-14;
    double armijo = 1e-4;
    double min_step = 1e-10;
    double max_step = 1e10;
    double infeasible_above = 1e11;
};

/// Spectral projected gradient with a monotone Armijo search along the projected
/// direction. `project` maps any point onto the feasible set.
inline LbfgsResult minimize_projected(const GradientObjective& f, const std::function<void(Vector&)>& project,
                                      Vector x, const ProjectedOptions& opt = {}) {
    const auto bad = [&](double v) { return !std::isfinite(v) || v >= opt.infeasible_above; };
    LbfgsResult res;
    project(x);
    Vector g(x.size()), g_new(x.size());
    double fx = f(x, g);
    res.descent_log.push_back(fx);
    if (bad(fx) || x.size() == 0) {
        res.x = std::move(x);
        res.value = fx;
        res.converged = x.size() == 0;
        return res;
    }
    double alpha = 1.0 / std::max(1.0, g.lpNorm<Eigen::Infinity>());
    for (int it = 0; it < opt.max_iterations; ++it) {
        res.iterations = it;
        Vector pg = x - g;
        project(pg);
        if ((pg - x).lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance) {
            res.converged = true;
            break;
        }
        Vector trial = x - alpha * g;
        project(trial);
        Vector d = trial - x;
        const double slope = g.dot(d);
        double lambda = 1.0;
        bool accepted = false;
        Vector x_new;
        double f_new = 0.0;
        while (lambda * d.lpNorm<Eigen::Infinity>() > 1e-16) {
            x_new = x + lambda * d;
            f_new = f(x_new, g_new);
            if (!bad(f_new) && f_new <= fx + opt.armijo * lambda * slope && f_new < fx) {
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!accepted) {
            res.converged = true;  // no further descent available at machine precision
            break;
        }
        const Vector s = x_new - x;
        const Vector y = g_new - g;
        const double sy = s.dot(y);
        alpha = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, opt.min_step, opt.max_step) : opt.max_step;
        const double decrease = fx - f_new;
        x = std::move(x_new);
        g = g_new;
        fx = f_new;
        res.descent_log.push_back(fx);
        if (decrease <= opt.function_tolerance * std::max(1.0, std::abs(fx))) {
            res.converged = true;
            res.iterations = it + 1;
            break;
        }
    }
    res.x = std::move(x);
    res.value = fx;
    return res;
}

/// Euclidean projection of v onto {x >= 0, sum x = 1}.
inline void project_simplex(Eigen::Ref<Vector> v) {
    const auto n = v.size();
    if (n == 0) return;
    Vector u = v;
    std::sort(u.data(), u.data() + n, std::greater<double>());
    double cum = 0.0, theta = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        cum += u(i);
        const double t = (cum - 1.0) / static_cast<double>(i + 1);
        if (u(i) - t > 0.0) theta = t;
    }
    for (Eigen::Index i = 0; i < n; ++i) v(i) = std::max(v(i) - theta, 0.0);
}

struct SwarmOptions {
    int iterations = 200;
    double inertia = 0.7;
    double cognitive = 1.5;
    double social = 1.5;
    /// Velocity is clamped to this fraction of the initial position spread per coordinate.
    double max_velocity = 0.5;
};

struct SwarmResult {
    /// Personal-best positions and values, one per particle.
    std::vector<Vector> best_positions;
    std::vector<double> best_values;
    int global_best = 0;
};

/// Global-best particle swarm. `project` maps a raw position onto the feasible set
/// (it may use the particle's previous feasible position). Ties in the global best
/// are broken by the lowest particle index, so the result does not depend on the
/// evaluation order.
inline SwarmResult particle_swarm(const std::function<double(const Vector&)>& objective,
                                  const std::function<void(Vector& pos, const Vector& previous)>& project,
                                  std::vector<Vector> positions, Rng& rng, const SwarmOptions& opt = {}) {
    const int np = static_cast<int>(positions.size());
    SwarmResult res;
    if (np == 0) return res;
    const auto dim = positions[0].size();
    Vector lo = positions[0], hi = positions[0];
    for (const auto& p : positions) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Vector vmax = (opt.max_velocity * (hi - lo)).cwiseMax(1e-3);
    std::vector<Vector> velocity(np, Vector::Zero(dim));
    res.best_positions = positions;
    res.best_values.resize(np);
    for (int i = 0; i < np; ++i) res.best_values[i] = objective(positions[i]);
    auto argmin = [&] {
        int best = 0;
        for (int i = 1; i < np; ++i)
            if (res.best_values[i] < res.best_values[best]) best = i;
        return best;
    };
    res.global_best = argmin();
    for (int it = 0; it < opt.iterations; ++it) {
        const Vector gbest = res.best_positions[res.global_best];
        for (int i = 0; i < np; ++i) {
            Vector& v = velocity[i];
            for (Eigen::Index d = 0; d < dim; ++d) {
                const double r1 = rng.uniform();
                const double r2 = rng.uniform();
                v(d) = opt.inertia * v(d) + opt.cognitive * r1 * (res.best_positions[i](d) - positions[i](d)) +
                       opt.social * r2 * (gbest(d) - positions[i](d));
                v(d) = std::clamp(v(d), -vmax(d), vmax(d));
            }
            const Vector previous = positions[i];
            positions[i] += v;
            project(positions[i], previous);
            const double val = objective(positions[i]);
            if (val < res.best_values[i]) {
                res.best_values[i] = val;
                res.best_positions[i] = positions[i];
            }
        }
        res.global_best = argmin();
    }
    return res;
}

}  // namespace netrecover
