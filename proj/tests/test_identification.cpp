#include "netrecover/generators.hpp"
#include "netrecover/identification.hpp"
#include "netrecover/model.hpp"
#include "netrecover/ols.hpp"
#include "netrecover/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

using namespace netrecover;

namespace {

Matrix example_w() {
    Matrix w = Matrix::Zero(3, 3);
    w(0, 1) = 1.0;
    w(1, 0) = 1.0;
    return w;
}

Matrix example_pi() {
    Matrix pi(3, 3);
    pi << 275, 310, 0, 310, 275, 0, 0, 0, 182;
    return pi / 455.0;
}

/// Strongly connected nonnegative row-normalized network: a ring plus random extra links.
Network random_irreducible(int n, Rng& rng) {
    Matrix w = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        w(i, (i + 1) % n) = rng.uniform(0.2, 1.0);
        const int extra = static_cast<int>(rng.below(2));
        for (int l = 0; l < extra; ++l) {
            int j = static_cast<int>(rng.below(n - 1));
            if (j >= i) ++j;
            w(i, j) = rng.uniform(0.2, 1.0);
        }
        w.row(i) /= w.row(i).sum();
    }
    return Network(w);
}

/// Random point with rho in (0, .9), rho beta + gamma > 0 and A5 holding.
StructuralParams random_admissible(int n, Rng& rng) {
    for (;;) {
        auto p = StructuralParams::scalar(random_irreducible(n, rng), rng.uniform(0.05, 0.9), rng.uniform(0.2, 1.2),
                                          rng.uniform(0.1, 0.9));
        if (check_assumptions(p).all()) return p;
    }
}

Matrix simulate_pi(const StructuralParams& p) { return reduced_form(p).first(); }

}  // namespace

TEST(EigenAnalysis, WorkedExampleEigenvalueMap) {
    const auto theta = StructuralParams::scalar(Network(example_w()), 0.3, 0.4, 0.5);
    const auto ea = eigen_analysis(theta);
    ASSERT_EQ(ea.eigenvalues_w.size(), 3u);
    int seen_plus = 0, seen_minus = 0;
    for (std::size_t m = 0; m < 3; ++m) {
        const auto lw = ea.eigenvalues_w[m];
        const auto expected = (0.4 + 0.5 * lw) / (1.0 - 0.3 * lw);
        EXPECT_LE(std::abs(ea.eigenvalues_pi[m] - expected), 1e-8);
        if (std::abs(lw - 1.0) < 1e-12) ++seen_plus;
        if (std::abs(lw + 1.0) < 1e-12) ++seen_minus;
    }
    EXPECT_EQ(seen_plus, 1);
    EXPECT_EQ(seen_minus, 1);

    // Closed form at lambda = +-1: .9/.7 and -.1/1.3, plus beta for the isolated node.
    std::vector<double> got;
    for (const auto& v : eigen_analysis(example_pi()).eigenvalues_pi) got.push_back(v.real());
    std::sort(got.begin(), got.end());
    EXPECT_NEAR(got[0], -0.1 / 1.3, 1e-12);
    EXPECT_NEAR(got[1], 0.4, 1e-12);
    EXPECT_NEAR(got[2], 0.9 / 0.7, 1e-12);
}

TEST(EigenAnalysis, ScaledIdentityIsUninformative) {
    const auto ea = eigen_analysis(Matrix(0.7 * Matrix::Identity(4, 4)));
    EXPECT_TRUE(ea.uninformative);
    EXPECT_EQ(ea.dominant_index, -1);
    EXPECT_EQ(ea.eigencentrality.size(), 0);
    for (const auto& v : ea.eigenvalues_pi) EXPECT_NEAR(std::abs(v - 0.7), 0.0, 1e-12);
}

TEST(EigenAnalysis, RejectsNonSquareOrNonFinite) {
    EXPECT_THROW(eigen_analysis(Matrix(Matrix::Zero(2, 3))), InputError);
    Matrix bad = Matrix::Identity(2, 2);
    bad(0, 1) = NAN;
    EXPECT_THROW(eigen_analysis(bad), InputError);
}

TEST(EigenAnalysisProperty, CentralityFromPiMatchesW) {
    Rng rng(201);
    for (int rep = 0; rep < 50; ++rep) {
        const auto theta = random_admissible(3 + static_cast<int>(rng.below(6)), rng);
        const auto from_w = eigen_analysis(theta.network.weights());
        const auto from_pi = eigen_analysis(simulate_pi(theta));
        ASSERT_EQ(from_w.eigencentrality.size(), theta.n());
        ASSERT_EQ(from_pi.eigencentrality.size(), theta.n());
        EXPECT_LE((from_w.eigencentrality - from_pi.eigencentrality).cwiseAbs().maxCoeff(), 1e-8) << "rep " << rep;
        EXPECT_NEAR(from_pi.eigencentrality.sum(), 1.0, 1e-12);
        EXPECT_GE(from_pi.eigencentrality.minCoeff(), 0.0);
    }
}

TEST(SignOfNetworkEffect, WorkedExampleIsPositive) {
    const auto s = sign_of_network_effect(example_pi());
    EXPECT_EQ(s.off_diagonal, 1);
    EXPECT_EQ(s.eigen, 1);
    EXPECT_TRUE(s.agree);
}

TEST(SignOfNetworkEffect, EmptyNetworkIsUndefined) {
    EXPECT_THROW(sign_of_network_effect(Matrix(0.4 * Matrix::Identity(5, 5))), InputError);
}

TEST(SignOfNetworkEffect, NegativeOnErdosRenyi) {
    const auto theta = StructuralParams::scalar(gen_erdos_renyi(12, 4), 0.3, 0.4, -0.62);
    EXPECT_EQ(sign_of_network_effect(simulate_pi(theta)).off_diagonal, -1);
}

TEST(SignOfNetworkEffectProperty, MatchesForwardMap) {
    Rng rng(202);
    int checked = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const int n = 3 + static_cast<int>(rng.below(6));
        const auto theta = StructuralParams::scalar(random_irreducible(n, rng), rng.uniform(0.01, 0.95),
                                                    rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        const double effect = theta.rho * theta.beta[0] + theta.gamma[0];
        if (std::abs(effect) < 1e-3) continue;
        ++checked;
        EXPECT_EQ(sign_of_network_effect(simulate_pi(theta)).off_diagonal, effect > 0 ? 1 : -1) << "rep " << rep;
    }
    EXPECT_GT(checked, 90);
}

TEST(InvertExact, WorkedExample) {
    const auto res = invert_exact(example_pi(), 0);
    EXPECT_NEAR(res.theta.rho, 0.3, 1e-8);
    EXPECT_NEAR(res.theta.beta[0], 0.4, 1e-8);
    EXPECT_NEAR(res.theta.gamma[0], 0.5, 1e-8);
    EXPECT_LE((res.theta.network.weights() - example_w()).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE(res.residual, 1e-8);
    EXPECT_FALSE(res.flagged);
}

TEST(InvertExact, ScaledIdentityIsFlaggedEmpty) {
    const auto res = invert_exact(Matrix(0.4 * Matrix::Identity(4, 4)));
    EXPECT_TRUE(res.flagged);
    EXPECT_NEAR(res.theta.beta[0], 0.4, 1e-12);
    EXPECT_EQ(res.theta.network.weights().cwiseAbs().maxCoeff(), 0.0);
    EXPECT_FALSE(res.assumptions.a3.holds && res.assumptions.a5.holds);
}

TEST(InvertExact, RejectsBadInput) {
    EXPECT_THROW(invert_exact(Matrix(Matrix::Identity(13, 13))), InputError);
    EXPECT_THROW(invert_exact(example_pi(), 3), InputError);
    EXPECT_THROW(invert_exact(Matrix(Matrix::Zero(2, 3))), InputError);
}

TEST(InvertExact, SeededRoundTrip) {
    Rng rng(7);
    const auto theta = random_admissible(6, rng);
    const auto res = invert_exact(simulate_pi(theta));
    EXPECT_NEAR(res.theta.rho, theta.rho, 1e-6);
    EXPECT_NEAR(res.theta.beta[0], theta.beta[0], 1e-6);
    EXPECT_NEAR(res.theta.gamma[0], theta.gamma[0], 1e-6);
    EXPECT_LE((res.theta.network.weights() - theta.network.weights()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_FALSE(res.flagged);
}

TEST(InvertExactProperty, RoundTrip) {
    Rng rng(203);
    for (int rep = 0; rep < 30; ++rep) {
        const auto theta = random_admissible(3 + static_cast<int>(rng.below(6)), rng);
        const auto res = invert_exact(simulate_pi(theta));
        EXPECT_NEAR(res.theta.rho, theta.rho, 1e-6) << "rep " << rep;
        EXPECT_NEAR(res.theta.beta[0], theta.beta[0], 1e-6) << "rep " << rep;
        EXPECT_NEAR(res.theta.gamma[0], theta.gamma[0], 1e-6) << "rep " << rep;
        EXPECT_LE((res.theta.network.weights() - theta.network.weights()).cwiseAbs().maxCoeff(), 1e-6) << "rep " << rep;
    }
}

TEST(InvertExact, IndependentOfThreadCount) {
    Rng rng(204);
    const auto theta = random_admissible(7, rng);
    const Matrix pi = simulate_pi(theta);
    InversionOptions one, many;
    many.threads = 8;
    const auto a = invert_exact(pi, 0, one), b = invert_exact(pi, 0, many);
    EXPECT_EQ(a.theta.rho, b.theta.rho);
    EXPECT_EQ(a.theta.network.weights(), b.theta.network.weights());
}

TEST(NonuniquenessWitness, SameReducedForm) {
    const auto [a, b] = nonuniqueness_witness();
    EXPECT_LE((simulate_pi(a) - simulate_pi(b)).cwiseAbs().maxCoeff(), 1e-10);
    const auto ra = check_assumptions(a), rb = check_assumptions(b);
    EXPECT_FALSE(ra.a5.holds);
    EXPECT_FALSE(rb.a5.holds);
    EXPECT_FALSE(rb.a2.holds);
    EXPECT_NEAR(ra.a5.value, 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(rb.a2_rho_abs, 1.5);
}

TEST(NonuniquenessWitness, PerturbationSeparates) {
    auto [a, b] = nonuniqueness_witness();
    Matrix w = a.network.weights();
    w(0, 1) += 0.01;
    a.network = Network(w);
    EXPECT_GT((simulate_pi(a) - simulate_pi(b)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(CovariateEffects, SharedNetwork) {
    const Network w = gen_political_party(12, 3);
    StructuralParams theta{w, 0.35, {0.5, -0.3}, {0.4, 0.7}};
    const auto effects = recover_covariate_effects(reduced_form(theta), theta.rho, w);
    ASSERT_EQ(effects.size(), 2u);
    for (int k = 0; k < 2; ++k) {
        EXPECT_NEAR(effects[k].beta, theta.beta[k], 1e-8);
        EXPECT_NEAR(effects[k].gamma, theta.gamma[k], 1e-8);
        ASSERT_TRUE(effects[k].w.has_value());
        EXPECT_LE((*effects[k].w - w.weights()).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_TRUE(effects[k].warnings.empty());
    }
}

TEST(CovariateEffects, ZeroGammaLeavesNetworkUndefined) {
    const Network w = gen_erdos_renyi(8, 2);
    StructuralParams theta{w, 0.3, {0.5, 0.0}, {0.4, 0.9}};
    const auto effects = recover_covariate_effects(reduced_form(theta), theta.rho, w);
    EXPECT_FALSE(effects[1].w.has_value());
    EXPECT_NEAR(effects[1].beta, 0.9, 1e-8);
    EXPECT_FALSE(effects[1].warnings.empty());
}

TEST(CovariateEffects, DistinctSecondNetwork) {
    const Network w1 = gen_erdos_renyi(8, 2);
    const Network w2 = gen_erdos_renyi(8, 5);
    ASSERT_NE(w1, w2);
    const double rho = 0.3;
    const Matrix a = Matrix::Identity(8, 8) - rho * w1.weights();
    ReducedForm rf;
    rf.pi.push_back(a.inverse() * (0.4 * Matrix::Identity(8, 8) + 0.5 * w1.weights()));
    rf.pi.push_back(a.inverse() * (0.8 * Matrix::Identity(8, 8) + 0.2 * w2.weights()));
    const auto effects = recover_covariate_effects(rf, rho, w1);
    EXPECT_NEAR(effects[1].beta, 0.8, 1e-8);
    EXPECT_NEAR(effects[1].gamma, 0.2, 1e-8);
    ASSERT_TRUE(effects[1].w.has_value());
    EXPECT_LE((*effects[1].w - w2.weights()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(CovariateEffects, HeterogeneousDiagonalWarns) {
    const Network w = gen_erdos_renyi(6, 1);
    ReducedForm rf;
    Matrix pi = reduced_form(StructuralParams::scalar(w, 0.3, 0.4, 0.5)).first();
    pi(2, 2) += 0.1;
    rf.pi.push_back(pi);
    const auto effects = recover_covariate_effects(rf, 0.3, w);
    ASSERT_FALSE(effects[0].warnings.empty());
    EXPECT_NE(effects[0].warnings[0].find("heterogeneous"), std::string::npos);
}

TEST(ChiSquared, ClosedFormTails) {
    for (double x : {0.1, 1.0, 3.5, 9.0, 20.0}) {
        EXPECT_NEAR(chi_squared_upper_tail(x, 2), std::exp(-x / 2.0), 1e-14);
        EXPECT_NEAR(chi_squared_upper_tail(x, 4), std::exp(-x / 2.0) * (1.0 + x / 2.0), 1e-14);
    }
    EXPECT_EQ(chi_squared_upper_tail(0.0, 3), 1.0);
}

TEST(WaldRowSum, ConstantRowSumsGiveZero) {
    Matrix pi(3, 3);
    pi << 0.5, 0.2, 0.3, 0.1, 0.8, 0.1, 0.0, 0.0, 1.0;
    const auto rep = wald_rowsum_statistic(pi, Matrix::Identity(9, 9));
    EXPECT_EQ(rep.statistic, 0.0);
    EXPECT_EQ(rep.p_value, 1.0);
    EXPECT_EQ(rep.dof, 2);
}

TEST(WaldRowSum, IdentityCovarianceClosedForm) {
    // With cov = I, R R' = n (I + 11') on the N-1 contrasts.
    Matrix pi = Matrix::Zero(3, 3);
    pi(0, 0) = 1.0;
    pi(1, 1) = 2.0;
    pi(2, 2) = 0.0;
    const auto rep = wald_rowsum_statistic(pi, Matrix::Identity(9, 9));
    Eigen::Vector2d d(1.0, 2.0);
    Eigen::Matrix2d v;
    v << 6, 3, 3, 6;
    EXPECT_NEAR(rep.statistic, d.dot(v.inverse() * d), 1e-12);
    EXPECT_NEAR(rep.p_value, std::exp(-rep.statistic / 2.0), 1e-12);
}

TEST(WaldRowSum, InvariantToUnitRelabeling) {
    const auto theta = StructuralParams::scalar(gen_erdos_renyi(5, 3), 0.3, 0.4, 0.5);
    ShockConfig s;
    s.seed = 9;
    const PanelData panel = simulate_panel(theta, s, 300);
    std::vector<int> perm{3, 0, 4, 1, 2};
    PanelData shuffled = panel;
    for (int c = 0; c < 5; ++c) {
        shuffled.y.col(c) = panel.y.col(perm[c]);
        shuffled.x[0].col(c) = panel.x[0].col(perm[c]);
    }
    const auto a = rowsum_wald_test(panel), b = rowsum_wald_test(shuffled);
    EXPECT_NEAR(a.statistic, b.statistic, 1e-8 * std::max(1.0, a.statistic));
    EXPECT_EQ(a.dof, 4);
}

TEST(WaldRowSum, RequiresEnoughPeriods) {
    const auto theta = StructuralParams::scalar(gen_erdos_renyi(5, 3), 0.3, 0.4, 0.5);
    const PanelData panel = simulate_panel(theta, ShockConfig{}, 6);
    EXPECT_THROW(rowsum_wald_test(panel), InputError);
}

TEST(OlsReducedForm, NoiselessIsExact) {
    const auto theta = StructuralParams::scalar(gen_erdos_renyi(6, 2), 0.3, 0.4, 0.5);
    ShockConfig s = ShockConfig::none(4);
    s.noise_sd = 0.0;
    const auto ols = estimate_ols_reduced_form(simulate_panel(theta, s, 40));
    EXPECT_LE((ols.pi_hat[0] - simulate_pi(theta)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(OlsReducedForm, DuplicateCovariatesAreRankDeficient) {
    const auto theta = StructuralParams::scalar(gen_erdos_renyi(4, 2), 0.3, 0.4, 0.5);
    PanelData panel = simulate_panel(theta, ShockConfig{}, 60);
    panel.x[0].col(3) = panel.x[0].col(1);
    EXPECT_THROW(estimate_ols_reduced_form(panel), NumericalError);
}
