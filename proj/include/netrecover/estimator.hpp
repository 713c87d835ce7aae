#pragma once

#include "netrecover/gmm.hpp"
#include "netrecover/model.hpp"
#include "netrecover/ols.hpp"
#include "netrecover/optim.hpp"
#include "netrecover/parallel.hpp"
#include "netrecover/param.hpp"
#include "netrecover/rng.hpp"
#include "netrecover/tsls.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace netrecover {

struct PenaltyTriple {
    double p1 = 0.0;
    double p1_star = 0.0;
    double p2 = 0.0;

    auto operator<=>(const PenaltyTriple&) const = default;
};

inline std::vector<double> default_penalty_axis() { return {0.0, 0.025, 0.05, 0.10}; }

/// Cartesian cube over one axis, ordered lexicographically by (p1, p1*, p2).
inline std::vector<PenaltyTriple> penalty_cube(const std::vector<double>& axis) {
    std::vector<PenaltyTriple> grid;
    for (double a : axis)
        for (double b : axis)
            for (double c : axis) grid.push_back({a, b, c});
    return grid;
}

struct PenaltyConfig {
    double adaptive_exponent = 2.5;
    std::vector<PenaltyTriple> grid = penalty_cube(default_penalty_axis());

    void validate() const {
        if (!(adaptive_exponent > 0.0)) throw InputError("adaptive exponent must be positive");
        if (grid.empty()) throw InputError("penalty grid is empty");
        for (const auto& p : grid)
            if (p.p1 < 0 || p.p1_star < 0 || p.p2 < 0) throw InputError("penalties must be nonnegative");
    }
};

enum class RowNormalization { all_rows, one_row };

/// Local solver used after the swarm and in stage 2. `projected` works on W >= 0
/// with rows projected onto the simplex; `reparameterized` runs L-BFGS on squared
/// coordinates with one anchor entry per normalized row.
enum class LocalSolver { projected, reparameterized };

struct EstimatorConfig {
    GmmConfig gmm;
    PenaltyConfig penalty;
    TransformConfig transforms;
    RowNormalization normalization = RowNormalization::all_rows;
    /// Row carrying the normalization when only one row is normalized.
    int normalized_row = 0;
    /// Weights of refined estimates below this are set to exact zero.
    double prune_threshold = 1e-4;
    int max_prune_rounds = 40;
    LocalSolver local_solver = LocalSolver::projected;
    /// Upper bound on rho for the projected solver.
    double rho_max = 0.999;
    int threads = 1;
};

struct ConvergenceRecord {
    PenaltyTriple penalty;
    int stage = 1;
    double objective = 0.0;
    double gmm_value = 0.0;
    int iterations = 0;
    int prune_rounds = 0;
    bool converged = false;
    int nonzeros = 0;
    /// Objective after every accepted local step, concatenated over prune rounds.
    std::vector<double> descent_log;
    /// Index into descent_log where each prune round begins. Pruning itself is not
    /// a descent step, so the log may rise at these boundaries.
    std::vector<std::size_t> round_starts;
};

struct GridPointResult {
    PenaltyTriple penalty;
    bool ok = false;
    std::string error;
    ThetaPoint stage1;
    ThetaPoint theta;
    double objective = 0.0;
    double gmm_value = 0.0;
    double bic = 0.0;
    int nonzeros = 0;
};

struct EstimationResult {
    StructuralParams theta_hat;
    StructuralParams stage1_theta;
    PenaltyTriple chosen_penalty;
    double bic_value = 0.0;
    double objective_value = 0.0;
    double gmm_value = 0.0;
    std::optional<TslsResult> post_2sls;
    std::string post_2sls_error;
    /// true where the estimated weight is zero.
    Mask zero_pattern;
    std::vector<ConvergenceRecord> convergence_log;
    std::vector<GridPointResult> grid;
    std::vector<std::string> warnings;
};

inline int count_offdiag_nonzeros(const Matrix& w, double tol = kZeroTol) {
    int c = 0;
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j)
            if (i != j && std::abs(w(i, j)) > tol) ++c;
    return c;
}

/// BIC(p) = log(g'Mg) + A log(T) / T, the log argument floored at 1e-300.
inline double bic_value(double gmm_value, int nonzeros, int t) {
    const double tt = static_cast<double>(t);
    return std::log(std::max(gmm_value, 1e-300)) + nonzeros * std::log(tt) / tt;
}

/// Everything derived once per panel and shared by all grid points.
class EstimationContext {
public:
    EstimationContext(const PanelData& raw, const EstimatorConfig& cfg)
        : cfg_(cfg),
          panel_(apply_transforms(raw, cfg.transforms)),
          problem_(panel_, cfg.gmm.moment_source, cfg.transforms.global_difference, cfg.gmm.weight_matrix),
          t_raw_(raw.t()) {
        const int n = panel_.n();
        if (cfg.normalization == RowNormalization::one_row &&
            (cfg.normalized_row < 0 || cfg.normalized_row >= n))
            throw InputError("normalized_row out of range");
        normalized_.assign(n, cfg.normalization == RowNormalization::all_rows);
        if (cfg.normalization == RowNormalization::one_row) normalized_[cfg.normalized_row] = true;
        beta_hat_ = pooled_ols_beta(panel_);
        GmmGradient g;
        const std::vector<double> gamma0(panel_.k(), 0.0);
        problem_.value(Matrix::Zero(n, n), 0.5, beta_hat_, gamma0, &g);
        neg_grad_ = -g.w;
        neg_grad_.diagonal().setZero();
    }

    const EstimatorConfig& config() const { return cfg_; }
    const PanelData& panel() const { return panel_; }
    const GmmProblem& problem() const { return problem_; }
    const std::vector<bool>& normalized_rows() const { return normalized_; }
    const std::vector<double>& beta_hat() const { return beta_hat_; }
    /// -dQ/dW at W = 0, rho = .5, gamma = 0, beta = pooled OLS.
    const Matrix& screen_gradient() const { return neg_grad_; }
    /// Stage-1 support for penalty p1: entries with -dQ/dW > p1. A normalized row
    /// left empty falls back to every off-diagonal entry.
    Mask screen(double p1, bool* degenerate = nullptr) const {
        const int n = this->n();
        Mask m = (neg_grad_.array() > p1).matrix();
        m.diagonal().setConstant(false);
        for (int i = 0; i < n; ++i) {
            if (!normalized_[i] || m.row(i).any()) continue;
            if (degenerate) *degenerate = true;
            m.row(i).setConstant(true);
            m(i, i) = false;
        }
        return m;
    }
    int n() const { return panel_.n(); }
    int k() const { return panel_.k(); }
    int t_raw() const { return t_raw_; }

private:
    EstimatorConfig cfg_;
    PanelData panel_;
    GmmProblem problem_;
    int t_raw_;
    std::vector<bool> normalized_;
    std::vector<double> beta_hat_;
    Matrix neg_grad_;
};

namespace detail {

/// Rescale rows to sum to one; normalized rows left empty get the entry with the
/// largest screening derivative, taken inside `within` when that row of it is nonempty.
inline Matrix normalize_rows(Matrix w, const EstimationContext& ctx, bool* degenerate = nullptr,
                             const Mask* within = nullptr) {
    const int n = ctx.n();
    for (int i = 0; i < n; ++i) {
        w(i, i) = 0.0;
        double s = w.row(i).sum();
        if (s <= 0.0) {
            if (!ctx.normalized_rows()[i]) continue;
            if (degenerate) *degenerate = true;
            w.row(i).setZero();
            Eigen::Index j;
            Matrix g = ctx.screen_gradient();
            g(i, i) = -INFINITY;
            if (within && within->row(i).any())
                for (int c = 0; c < n; ++c)
                    if (!(*within)(i, c)) g(i, c) = -INFINITY;
            g.row(i).maxCoeff(&j);
            w(i, j) = 1.0;
            s = 1.0;
        }
        w.row(i) /= s;
    }
    return w;
}

/// Stage-1 support: the screen at p1, intersected with `allowed` when given. A
/// normalized row left empty by the intersection keeps its allowed entries.
inline Mask stage1_support(const EstimationContext& ctx, double p1, const Mask* allowed, bool* degenerate = nullptr) {
    Mask m = ctx.screen(p1, degenerate);
    if (!allowed) return m;
    const Mask screened = m;
    m = m.array() && allowed->array();
    for (int i = 0; i < ctx.n(); ++i)
        if (ctx.normalized_rows()[i] && !m.row(i).any()) m.row(i) = allowed->row(i).any() ? allowed->row(i) : screened.row(i);
    return m;
}

inline Mask nonzero_support(const Matrix& w) {
    Mask m = (w.array() > 0.0).matrix();
    m.diagonal().setConstant(false);
    return m;
}

inline Matrix equal_weights(const Mask& support) {
    Matrix w = Matrix::Zero(support.rows(), support.cols());
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j)
            if (i != j && support(i, j)) w(i, j) = 1.0;
    return w;
}

/// Fit (rho, beta, gamma) with W held fixed.
inline ThetaPoint fit_scalars(const EstimationContext& ctx, ThetaPoint p, const PenaltyWeights& pen) {
    const int k = ctx.k();
    const Matrix w = p.w;
    GradientObjective f = [&](const Vector& u, Vector& g) {
        const double rho = u(0) * u(0);
        std::vector<double> b(u.data() + 1, u.data() + 1 + k), c(u.data() + 1 + k, u.data() + 1 + 2 * k);
        GmmGradient gg;
        const double q = ctx.problem().value(w, rho, b, c, &gg);
        g.resize(u.size());
        g(0) = 2.0 * u(0) * gg.rho;
        for (int i = 0; i < k; ++i) {
            g(1 + i) = gg.beta[i];
            g(1 + k + i) = gg.gamma[i];
        }
        return q + pen.value(w);
    };
    Vector u(1 + 2 * k);
    u(0) = std::sqrt(std::max(p.rho, 0.0));
    for (int i = 0; i < k; ++i) {
        u(1 + i) = p.beta[i];
        u(1 + k + i) = p.gamma[i];
    }
    LbfgsOptions opt;
    opt.max_iterations = 100;
    const auto r = minimize_lbfgs(f, u, opt);
    p.rho = r.x(0) * r.x(0);
    for (int i = 0; i < k; ++i) {
        p.beta[i] = r.x(1 + i);
        p.gamma[i] = r.x(1 + k + i);
    }
    return p;
}

inline int pso_dimension(int n, int k) { return 1 + 2 * k + n * (n - 1); }

inline Vector to_swarm(const ThetaPoint& p) {
    const int n = static_cast<int>(p.w.rows()), k = static_cast<int>(p.beta.size());
    Vector v(pso_dimension(n, k));
    v(0) = p.rho;
    for (int c = 0; c < k; ++c) {
        v(1 + c) = p.beta[c];
        v(1 + k + c) = p.gamma[c];
    }
    int idx = 1 + 2 * k;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) v(idx++) = p.w(i, j);
    return v;
}

inline ThetaPoint from_swarm(const Vector& v, int n, int k) {
    ThetaPoint p;
    p.rho = v(0);
    p.beta.assign(v.data() + 1, v.data() + 1 + k);
    p.gamma.assign(v.data() + 1 + k, v.data() + 1 + 2 * k);
    p.w = Matrix::Zero(n, n);
    int idx = 1 + 2 * k;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) p.w(i, j) = v(idx++);
    return p;
}

inline PenaltyWeights stage1_penalty(int n, double p1, double p2) {
    PenaltyWeights pen;
    pen.l1 = Matrix::Constant(n, n, p1);
    pen.l1.diagonal().setZero();
    pen.p2 = p2;
    return pen;
}

}  // namespace detail

/// Stage-1 objective g'Mg + p1 sum |W_ij| + p2 sum W_ij^2 over off-diagonal entries.
inline double objective_stage1(const StructuralParams& theta, const PanelData& panel, double p1, double p2,
                               const GmmConfig& gmm = {}, bool projected = false) {
    if (theta.n() != panel.n() || theta.k() != panel.k())
        throw InputError("parameter and panel dimensions do not match");
    const GmmProblem prob(panel, gmm.moment_source, projected, gmm.weight_matrix);
    const Matrix& w = theta.network.weights();
    const double q = prob.value(w, theta.rho, theta.beta, theta.gamma);
    return q + detail::stage1_penalty(theta.n(), p1, p2).value(w);
}

/// Initial particles for the stage-1 swarm: six deterministic constructions from
/// the screening derivative and row-wise lasso fits, then random admissible draws.
/// Every particle has a zero diagonal and normalized rows.
/// With `allowed`, every particle is confined to that support as well.
inline std::vector<ThetaPoint> particle_swarm_init(const EstimationContext& ctx, double p1, double p2,
                                                   std::vector<std::string>* warnings = nullptr,
                                                   const Mask* allowed = nullptr) {
    const auto& cfg = ctx.config().gmm;
    const int n = ctx.n(), k = ctx.k();
    const Matrix& grad = ctx.screen_gradient();
    const PenaltyWeights pen = detail::stage1_penalty(n, p1, p2);
    std::vector<ThetaPoint> out;
    bool degenerate = false;
    const Mask support = detail::stage1_support(ctx, p1, allowed, &degenerate);
    const Matrix keep = support.cast<double>();
    auto base = [&](Matrix w) {
        ThetaPoint p;
        p.w = detail::normalize_rows(w.cwiseProduct(keep), ctx, nullptr, &support);
        p.rho = 0.5;
        p.beta = ctx.beta_hat();
        p.gamma.assign(k, 0.0);
        return detail::fit_scalars(ctx, std::move(p), pen);
    };
    Mask positive = (grad.array() > 0.0).matrix();
    positive.diagonal().setConstant(false);
    // 1: screened support, equal weights.
    out.push_back(base(detail::equal_weights(support)));
    // 2: screened support, weights proportional to the derivative.
    out.push_back(base(grad.cwiseMax(0.0)));
    // 3: every positive derivative, equal weights (clipped to the screen like every particle).
    out.push_back(base(detail::equal_weights(positive)));
    // 4: top 5% of derivatives, equal weights.
    {
        std::vector<std::pair<double, int>> entries;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i != j) entries.emplace_back(-grad(i, j), i * n + j);
        std::sort(entries.begin(), entries.end());
        const auto top = static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(entries.size())));
        Mask sel = Mask::Constant(n, n, false);
        for (std::size_t e = 0; e < top; ++e) sel(entries[e].second / n, entries[e].second % n) = true;
        out.push_back(base(detail::equal_weights(sel)));
    }
    // 5 and 6: row-wise nonnegative lasso of y_i on the others' y (resp. x).
    for (int variant = 0; variant < 2; ++variant) {
        const Matrix& reg = variant == 0 ? ctx.panel().y : ctx.panel().x[0];
        Matrix w = Matrix::Zero(n, n);
        for (int i = 0; i < n; ++i) {
            Matrix xm(reg.rows(), n - 1);
            for (int j = 0, c = 0; j < n; ++j)
                if (j != i) xm.col(c++) = reg.col(j);
            Vector yi = ctx.panel().y.col(i);
            if (variant == 1) yi -= ctx.beta_hat()[0] * ctx.panel().x[0].col(i);
            const Vector b = nonneg_lasso(xm, yi, p1, 200);
            for (int j = 0, c = 0; j < n; ++j)
                if (j != i) w(i, j) = b(c++);
        }
        out.push_back(base(std::move(w)));
    }
    if (degenerate && warnings) warnings->push_back("degenerate screen: empty rows fell back to uniform weights");
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(p1 * 1e6), static_cast<std::uint64_t>(p2 * 1e6), 7}));
    while (static_cast<int>(out.size()) < cfg.particle_count) {
        ThetaPoint p;
        p.w = Matrix::Zero(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (support(i, j)) p.w(i, j) = rng.uniform();
        p.w = detail::normalize_rows(std::move(p.w), ctx, nullptr, &support);
        p.rho = rng.uniform(0.0, 0.9);
        for (int c = 0; c < k; ++c) {
            p.beta.push_back(ctx.beta_hat()[c] + rng.uniform(-0.5, 0.5));
            p.gamma.push_back(rng.uniform(-1.0, 1.0));
        }
        out.push_back(std::move(p));
    }
    out.resize(std::max(cfg.particle_count, 0));
    return out;
}

struct StageFit {
    ThetaPoint theta;
    double objective = 0.0;
    double gmm_value = 0.0;
    ConvergenceRecord record;
};

namespace detail {

/// Finish a refinement: snap small weights, renormalize, and record values.
inline StageFit finish_fit(const EstimationContext& ctx, ThetaPoint theta, const PenaltyWeights& pen,
                           ConvergenceRecord record, const Mask* within = nullptr) {
    const int n = ctx.n();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i == j || theta.w(i, j) < ctx.config().prune_threshold) theta.w(i, j) = 0.0;
    theta.w = normalize_rows(std::move(theta.w), ctx, nullptr, within);
    StageFit fit;
    fit.theta = std::move(theta);
    fit.gmm_value = ctx.problem().value(fit.theta.w, fit.theta.rho, fit.theta.beta, fit.theta.gamma);
    fit.objective = fit.gmm_value + pen.value(fit.theta.w);
    fit.record = std::move(record);
    fit.record.objective = fit.objective;
    fit.record.gmm_value = fit.gmm_value;
    fit.record.nonzeros = count_offdiag_nonzeros(fit.theta.w);
    return fit;
}

/// Projected spectral gradient over x = [rho, beta, gamma, W on the support].
inline StageFit refine_projected(const EstimationContext& ctx, ThetaPoint start, const PenaltyWeights& pen) {
    const auto& cfg = ctx.config();
    const int n = ctx.n(), k = ctx.k();
    ProjectedOptions opt;
    opt.max_iterations = cfg.gmm.max_iterations;
    opt.gradient_tolerance = cfg.gmm.gradient_tolerance;
    opt.infeasible_above = kObjectiveSentinel * 0.5;
    const Mask initial = nonzero_support(start.w);
    ConvergenceRecord record;
    record.converged = false;
    for (int round = 0; round < cfg.max_prune_rounds; ++round) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i == j || start.w(i, j) < cfg.prune_threshold) start.w(i, j) = 0.0;
        start.w = normalize_rows(std::move(start.w), ctx, nullptr, &initial);
        record.round_starts.push_back(record.descent_log.size());
        std::vector<std::vector<int>> cols(n);
        int m = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (start.w(i, j) > 0.0) {
                    cols[i].push_back(j);
                    ++m;
                }
        const int off = 1 + 2 * k;
        auto unpack = [&](const Vector& x) {
            ThetaPoint p;
            p.rho = x(0);
            p.beta.assign(x.data() + 1, x.data() + 1 + k);
            p.gamma.assign(x.data() + 1 + k, x.data() + off);
            p.w = Matrix::Zero(n, n);
            for (int i = 0, idx = off; i < n; ++i)
                for (int j : cols[i]) p.w(i, j) = x(idx++);
            return p;
        };
        Vector x(off + m);
        x(0) = start.rho;
        for (int c = 0; c < k; ++c) {
            x(1 + c) = start.beta[c];
            x(1 + k + c) = start.gamma[c];
        }
        for (int i = 0, idx = off; i < n; ++i)
            for (int j : cols[i]) x(idx++) = start.w(i, j);
        auto project = [&](Vector& v) {
            v(0) = std::clamp(v(0), 0.0, cfg.rho_max);
            for (int i = 0, idx = off; i < n; ++i) {
                const auto len = static_cast<Eigen::Index>(cols[i].size());
                auto seg = v.segment(idx, len);
                if (ctx.normalized_rows()[i])
                    project_simplex(seg);
                else
                    seg = seg.cwiseMax(0.0);
                idx += static_cast<int>(len);
            }
        };
        GradientObjective f = [&](const Vector& v, Vector& g) {
            const ThetaPoint p = unpack(v);
            GmmGradient gg;
            const double q = ctx.problem().value(p.w, p.rho, p.beta, p.gamma, &gg);
            g.resize(v.size());
            if (q >= kObjectiveSentinel) {
                g.setZero();
                return kObjectiveSentinel;
            }
            // On W >= 0 the L1 term is linear with slope l1.
            gg.w.array() += pen.l1.array() + 2.0 * pen.p2 * p.w.array();
            g(0) = gg.rho;
            for (int c = 0; c < k; ++c) {
                g(1 + c) = gg.beta[c];
                g(1 + k + c) = gg.gamma[c];
            }
            for (int i = 0, idx = off; i < n; ++i)
                for (int j : cols[i]) g(idx++) = gg.w(i, j);
            return q + pen.value(p.w);
        };
        const auto res = minimize_projected(f, project, std::move(x), opt);
        record.iterations += res.iterations;
        record.descent_log.insert(record.descent_log.end(), res.descent_log.begin(), res.descent_log.end());
        record.prune_rounds = round + 1;
        record.converged = res.converged;
        const ThetaPoint next = unpack(res.x);
        const bool shrank = ((next.w.array() > 0.0) && (next.w.array() < cfg.prune_threshold)).any() ||
                            ((next.w.array() == 0.0) && (start.w.array() > 0.0)).any();
        start = next;
        if (!shrank) break;
    }
    return finish_fit(ctx, std::move(start), pen, std::move(record), &initial);
}

}  // namespace detail

/// Local refinement from a start point: optimize over the start's nonzero entries,
/// zero out entries that fall below the prune threshold, and repeat on the reduced
/// support until it is stable.
inline StageFit refine(const EstimationContext& ctx, ThetaPoint start, const PenaltyWeights& pen) {
    if (ctx.config().local_solver == LocalSolver::projected) return detail::refine_projected(ctx, std::move(start), pen);
    const auto& cfg = ctx.config();
    const int n = ctx.n(), k = ctx.k();
    LbfgsOptions opt;
    opt.max_iterations = cfg.gmm.max_iterations;
    opt.gradient_tolerance = cfg.gmm.gradient_tolerance;
    opt.step_tolerance = cfg.gmm.parameter_tolerance;
    opt.infeasible_above = kObjectiveSentinel * 0.5;
    const Mask initial = detail::nonzero_support(start.w);
    StageFit fit;
    fit.record.converged = false;
    for (int round = 0; round < cfg.max_prune_rounds; ++round) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i == j || start.w(i, j) < cfg.prune_threshold) start.w(i, j) = 0.0;
        start.w = detail::normalize_rows(std::move(start.w), ctx, nullptr, &initial);
        fit.record.round_starts.push_back(fit.record.descent_log.size());
        const Mask support = (start.w.array() > 0.0).matrix();
        RowSumParameterization param(support, ctx.normalized_rows(), k);
        PenalizedObjective obj(ctx.problem(), param, pen);
        const auto res = minimize_lbfgs([&](const Vector& u, Vector& g) { return obj(u, g); }, param.encode(start), opt);
        fit.record.iterations += res.iterations;
        fit.record.descent_log.insert(fit.record.descent_log.end(), res.descent_log.begin(), res.descent_log.end());
        fit.record.prune_rounds = round + 1;
        fit.record.converged = res.converged;
        start = param.decode(res.x);
        fit.objective = res.value;
        bool pruned = false;
        for (int i = 0; i < n && !pruned; ++i)
            for (int j = 0; j < n; ++j)
                if (support(i, j) && start.w(i, j) < cfg.prune_threshold) {
                    pruned = true;
                    break;
                }
        if (!pruned) break;
    }
    return detail::finish_fit(ctx, std::move(start), pen, std::move(fit.record), &initial);
}

/// Multiply the W entries by the (1 + p2/T) bias factor. On normalized rows the
/// anchor (nonzero entry nearest the diagonal) absorbs the change so rows still sum
/// to one; an anchor pushed below zero is dropped and the row renormalized.
inline ThetaPoint apply_bias_factor(ThetaPoint p, double factor, const std::vector<bool>& normalized) {
    const int n = static_cast<int>(p.w.rows());
    for (int i = 0; i < n; ++i) {
        int anchor = -1;
        if (normalized[i]) {
            for (int j = 0; j < n; ++j)
                if (j != i && p.w(i, j) > 0.0 && (anchor < 0 || std::abs(j - i) < std::abs(anchor - i))) anchor = j;
        }
        if (anchor < 0) {
            p.w.row(i) *= factor;
            continue;
        }
        double free_sum = 0.0;
        for (int j = 0; j < n; ++j)
            if (j != anchor) {
                p.w(i, j) *= factor;
                free_sum += p.w(i, j);
            }
        p.w(i, anchor) = 1.0 - free_sum;
        if (p.w(i, anchor) < 0.0) {
            p.w(i, anchor) = 0.0;
            p.w.row(i) /= p.w.row(i).sum();
        }
    }
    return p;
}

/// Stage 1 for one (p1, p2): swarm over the initial particles, then local
/// refinement of the best personal-best positions.
/// With `allowed`, the fit is confined to that support.
inline StageFit fit_stage1(const EstimationContext& ctx, double p1, double p2, std::vector<std::string>* warnings,
                           const Mask* allowed = nullptr) {
    const auto& cfg = ctx.config();
    const int n = ctx.n(), k = ctx.k();
    const PenaltyWeights pen = detail::stage1_penalty(n, p1, p2);
    const auto particles = particle_swarm_init(ctx, p1, p2, warnings, allowed);
    std::vector<Vector> positions;
    positions.reserve(particles.size());
    for (const auto& p : particles) positions.push_back(detail::to_swarm(p));

    auto objective = [&](const Vector& v) {
        const ThetaPoint p = detail::from_swarm(v, n, k);
        return ctx.problem().value(p.w, p.rho, p.beta, p.gamma) + pen.value(p.w);
    };
    const Mask support = detail::stage1_support(ctx, p1, allowed);
    auto project = [&](Vector& v, const Vector& previous) {
        v(0) = std::clamp(v(0), 0.0, 0.99);
        int idx = 1 + 2 * k;
        for (int i = 0; i < n; ++i) {
            const int start = idx;
            double s = 0.0;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                v(idx) = support(i, j) ? std::max(v(idx), 0.0) : 0.0;
                s += v(idx++);
            }
            if (!ctx.normalized_rows()[i]) continue;
            if (s <= 0.0) {
                v.segment(start, n - 1) = previous.segment(start, n - 1);
                s = v.segment(start, n - 1).sum();
            }
            if (s > 0.0) v.segment(start, n - 1) /= s;
        }
    };
    SwarmOptions so;
    so.iterations = cfg.gmm.swarm_iterations;
    so.inertia = cfg.gmm.inertia;
    so.cognitive = cfg.gmm.cognitive;
    so.social = cfg.gmm.social;
    Rng rng(derive_seed(cfg.gmm.seed, {static_cast<std::uint64_t>(p1 * 1e6), static_cast<std::uint64_t>(p2 * 1e6), 11}));
    const auto swarm = particle_swarm(objective, project, std::move(positions), rng, so);

    std::vector<int> order(swarm.best_values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return swarm.best_values[a] < swarm.best_values[b]; });
    std::optional<StageFit> best;
    const int refine_count = std::max(1, std::min<int>(cfg.gmm.refine_count, static_cast<int>(order.size())));
    for (int r = 0; r < refine_count; ++r) {
        auto fit = refine(ctx, detail::from_swarm(swarm.best_positions[order[r]], n, k), pen);
        if (!best || fit.objective < best->objective) best = std::move(fit);
    }
    return *best;
}

/// Stage 2: adaptive weights p1* / |W~_ij|^gamma on the stage-1 support; stage-1
/// zeros stay zero, as do entries outside `allowed` when given.
inline StageFit fit_stage2(const EstimationContext& ctx, ThetaPoint stage1, double p1_star, double p2,
                           const Mask* allowed = nullptr) {
    const int n = ctx.n();
    const Matrix w1 = stage1.w;
    if (allowed) {
        stage1.w = stage1.w.cwiseProduct(allowed->cast<double>());
        stage1.w = detail::normalize_rows(std::move(stage1.w), ctx, nullptr, allowed);
    }
    PenaltyWeights pen;
    pen.p2 = p2;
    pen.l1 = Matrix::Zero(n, n);
    const double expo = ctx.config().penalty.adaptive_exponent;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && std::abs(stage1.w(i, j)) > kZeroTol) {
                const double a = std::abs(w1(i, j)) > kZeroTol ? std::abs(w1(i, j)) : std::abs(stage1.w(i, j));
                pen.l1(i, j) = p1_star / std::pow(a, expo);
            }
    return refine(ctx, std::move(stage1), pen);
}

namespace detail {

/// Partition indices 0..count-1 into paths of points that agree on everything but
/// p1 (`same_path`), each ordered by increasing p1 and then by index.
template <class Same, class P1>
std::vector<std::vector<std::size_t>> p1_paths(std::size_t count, Same same_path, P1 p1_of) {
    std::vector<std::vector<std::size_t>> paths;
    for (std::size_t i = 0; i < count; ++i) {
        auto it = std::find_if(paths.begin(), paths.end(), [&](const auto& path) { return same_path(path.front(), i); });
        if (it == paths.end())
            paths.push_back({i});
        else
            it->push_back(i);
    }
    for (auto& path : paths)
        std::stable_sort(path.begin(), path.end(), [&](std::size_t a, std::size_t b) { return p1_of(a) < p1_of(b); });
    return paths;
}

}  // namespace detail

/// Adaptive Elastic Net GMM with BIC selection over the penalty grid, followed by
/// the peers-of-peers 2SLS update of (rho, beta, gamma).
inline EstimationResult estimate(const PanelData& raw, const EstimatorConfig& cfg) {
    raw.validate();
    cfg.penalty.validate();
    if (raw.t() < 3) throw InputError("estimation needs T >= 3");
    const EstimationContext ctx(raw, cfg);
    const int t = raw.t();

    // Stage 1 depends only on (p1, p2); share it across p1*. Along each p1 path the
    // support found at one p1 bounds the fit at the next larger p1.
    std::vector<std::pair<double, double>> stage1_keys;
    for (const auto& p : cfg.penalty.grid) {
        const std::pair<double, double> key{p.p1, p.p2};
        if (std::find(stage1_keys.begin(), stage1_keys.end(), key) == stage1_keys.end()) stage1_keys.push_back(key);
    }
    std::sort(stage1_keys.begin(), stage1_keys.end());
    struct Stage1Slot {
        std::optional<StageFit> fit;
        ThetaPoint scaled;
        std::string error;
        std::vector<std::string> warnings;
    };
    std::vector<Stage1Slot> stage1(stage1_keys.size());
    const auto stage1_paths = detail::p1_paths(stage1_keys.size(), [&](std::size_t a, std::size_t b) {
        return stage1_keys[a].second == stage1_keys[b].second;
    }, [&](std::size_t s) { return stage1_keys[s].first; });
    parallel_for(static_cast<int>(stage1_paths.size()), cfg.threads, [&](int c) {
        std::optional<Mask> allowed;
        for (std::size_t s : stage1_paths[c]) {
            const auto [p1, p2] = stage1_keys[s];
            try {
                stage1[s].fit = fit_stage1(ctx, p1, p2, &stage1[s].warnings, allowed ? &*allowed : nullptr);
                stage1[s].scaled = apply_bias_factor(stage1[s].fit->theta, 1.0 + p2 / t, ctx.normalized_rows());
                allowed = detail::nonzero_support(stage1[s].fit->theta.w);
            } catch (const std::exception& e) {
                stage1[s].error = e.what();
            }
        }
    });
    auto slot_of = [&](const PenaltyTriple& p) {
        return static_cast<std::size_t>(
            std::find(stage1_keys.begin(), stage1_keys.end(), std::pair<double, double>{p.p1, p.p2}) -
            stage1_keys.begin());
    };

    std::vector<GridPointResult> grid(cfg.penalty.grid.size());
    std::vector<ConvergenceRecord> stage2_records(grid.size());
    const auto& triples = cfg.penalty.grid;
    const auto stage2_paths = detail::p1_paths(grid.size(), [&](std::size_t a, std::size_t b) {
        return triples[a].p1_star == triples[b].p1_star && triples[a].p2 == triples[b].p2;
    }, [&](std::size_t g) { return triples[g].p1; });
    parallel_for(static_cast<int>(stage2_paths.size()), cfg.threads, [&](int c) {
        std::optional<Mask> allowed;
        for (std::size_t g : stage2_paths[c]) {
            const auto& pen = triples[g];
            auto& out = grid[g];
            out.penalty = pen;
            const auto& s1 = stage1[slot_of(pen)];
            if (!s1.fit) {
                out.error = "stage 1 failed: " + s1.error;
                continue;
            }
            try {
                auto fit = fit_stage2(ctx, s1.scaled, pen.p1_star, pen.p2, allowed ? &*allowed : nullptr);
                out.stage1 = s1.scaled;
                out.theta = apply_bias_factor(fit.theta, 1.0 + pen.p2 / t, ctx.normalized_rows());
                out.gmm_value = ctx.problem().value(out.theta.w, out.theta.rho, out.theta.beta, out.theta.gamma);
                out.objective = fit.objective;
                out.nonzeros = count_offdiag_nonzeros(out.theta.w);
                out.bic = bic_value(out.gmm_value, out.nonzeros, t);
                out.ok = std::isfinite(out.bic) && out.gmm_value < kObjectiveSentinel;
                if (!out.ok) out.error = "non-finite objective";
                fit.record.penalty = pen;
                fit.record.stage = 2;
                stage2_records[g] = std::move(fit.record);
                if (out.ok) allowed = detail::nonzero_support(out.theta.w);
            } catch (const std::exception& e) {
                out.error = e.what();
            }
        }
    });

    EstimationResult result;
    for (std::size_t s = 0; s < stage1.size(); ++s) {
        for (auto& w : stage1[s].warnings)
            if (std::find(result.warnings.begin(), result.warnings.end(), w) == result.warnings.end())
                result.warnings.push_back(w);
        if (stage1[s].fit) {
            auto rec = stage1[s].fit->record;
            rec.penalty = {stage1_keys[s].first, 0.0, stage1_keys[s].second};
            rec.stage = 1;
            result.convergence_log.push_back(std::move(rec));
        }
    }
    for (std::size_t g = 0; g < grid.size(); ++g)
        if (grid[g].ok) result.convergence_log.push_back(stage2_records[g]);

    int best = -1;
    int failures = 0;
    for (int g = 0; g < static_cast<int>(grid.size()); ++g) {
        if (!grid[g].ok) {
            ++failures;
            continue;
        }
        if (best < 0 || grid[g].bic < grid[best].bic ||
            (grid[g].bic == grid[best].bic && grid[g].penalty < grid[best].penalty))
            best = g;
    }
    if (best < 0) {
        std::string msg = "all grid points failed to converge:";
        for (const auto& g : grid) msg += " [" + g.error + "]";
        throw NumericalError(msg);
    }
    if (failures > 0) result.warnings.push_back(std::to_string(failures) + " grid point(s) failed and were skipped");

    const auto& chosen = grid[best];
    result.theta_hat = chosen.theta.to_params();
    result.stage1_theta = chosen.stage1.to_params();
    result.chosen_penalty = chosen.penalty;
    result.bic_value = chosen.bic;
    result.objective_value = chosen.objective;
    result.gmm_value = chosen.gmm_value;
    result.zero_pattern = (chosen.theta.w.array().abs() <= kZeroTol).matrix();
    try {
        result.post_2sls = post_2sls(raw, result.theta_hat.network, cfg.transforms);
    } catch (const std::exception& e) {
        result.post_2sls_error = e.what();
        result.warnings.push_back(std::string("post-2SLS failed: ") + e.what());
    }
    result.grid = std::move(grid);
    return result;
}

}  // namespace netrecover
