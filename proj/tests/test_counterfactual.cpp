#include "netrecover/counterfactual.hpp"
#include "netrecover/generators.hpp"
#include "netrecover/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace netrecover;

namespace {

Network padded_pair() {
    Matrix w = Matrix::Zero(3, 3);
    w(0, 1) = 1.0;
    w(1, 0) = 1.0;
    return Network(w);
}

ShockScenario scenario(Network a, Network b, double rho, std::string origin = "0") {
    ShockScenario s;
    s.hypothesis_a = std::move(a);
    s.hypothesis_b = std::move(b);
    s.rho = rho;
    s.origin_unit = std::move(origin);
    s.baseline_outcomes = Vector::Constant(s.hypothesis_a.n(), 2.0);
    return s;
}

}  // namespace

TEST(Propagate, ZeroRhoIsIdentity) {
    const Vector shock = Vector::LinSpaced(6, -1.0, 2.0);
    EXPECT_LE((propagate(gen_erdos_renyi(6, 1), 0.0, shock) - shock).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Propagate, TwoNodeClosedForm) {
    const Vector r = propagate(padded_pair(), 0.3, Vector::Unit(3, 0));
    EXPECT_NEAR(r(0), 1.0 / (1.0 - 0.09), 1e-12);
    EXPECT_NEAR(r(1), 0.3 / (1.0 - 0.09), 1e-12);
    EXPECT_NEAR(r(0), 1.0989010989, 1e-9);
    EXPECT_NEAR(r(1), 0.3296703297, 1e-9);
    EXPECT_EQ(r(2), 0.0);
}

TEST(Propagate, EmptyNetworkIsIdentity) {
    const Vector shock = Vector::LinSpaced(4, 1.0, 4.0);
    for (double rho : {-0.9, 0.0, 0.5, 5.0})
        EXPECT_LE((propagate(Network::empty(4), rho, shock) - shock).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Propagate, RejectsA2Violation) {
    EXPECT_THROW(propagate(gen_erdos_renyi(5, 1), 1.0, Vector::Ones(5)), InputError);
    EXPECT_THROW(propagate(gen_erdos_renyi(5, 1), 0.3, Vector::Ones(4)), InputError);
}

TEST(PropagateProperty, Superposition) {
    Rng rng(401);
    for (int rep = 0; rep < 20; ++rep) {
        const Network w = gen_political_party(12, 10 + rep);
        const double rho = rng.uniform(-0.9, 0.9);
        Vector a(12), b(12);
        for (int i = 0; i < 12; ++i) {
            a(i) = rng.normal();
            b(i) = rng.normal();
        }
        const double ca = rng.uniform(-2, 2), cb = rng.uniform(-2, 2);
        const Vector lhs = propagate(w, rho, ca * a + cb * b);
        const Vector rhs = ca * propagate(w, rho, a) + cb * propagate(w, rho, b);
        EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(PropagateProperty, NonnegativeResponse) {
    Rng rng(402);
    for (int rep = 0; rep < 20; ++rep) {
        const Network w = gen_political_party(12, 40 + rep);
        const double rho = rng.uniform(0.01, 0.99);
        Vector shock = Vector::Zero(12);
        const int origin = static_cast<int>(rng.below(12));
        shock(origin) = rng.uniform(0.1, 3.0);
        const Vector r = propagate(w, rho, shock);
        EXPECT_GE(r.minCoeff(), 0.0);
        EXPECT_GE(r(origin), shock(origin));
    }
}

TEST(CompareNetworks, IdenticalNetworksGiveZero) {
    const Network w = gen_political_party(9, 3);
    const auto out = compare_networks(scenario(w, w, 0.4, "4"));
    for (const auto& e : out.upsilon) {
        EXPECT_TRUE(e.defined);
        EXPECT_EQ(e.upsilon, 0.0);
    }
}

TEST(CompareNetworks, EmptyHypothesisIsBelowConnectedOne) {
    const Network b = gen_political_party(9, 3);
    const auto s = scenario(Network::empty(9), b, 0.5, "0");
    const auto out = compare_networks(s);
    Vector shock = Vector::Zero(9);
    shock(0) = 0.1 * 2.0;
    const Vector reach = propagate(b, 0.5, shock);
    int negative = 0;
    for (int j = 0; j < 9; ++j) {
        if (j == 0) continue;
        ASSERT_TRUE(out.upsilon[j].defined);
        if (reach(j) > 1e-12) {
            EXPECT_LT(out.upsilon[j].upsilon, 0.0) << "unit " << j;
            ++negative;
        } else {
            EXPECT_EQ(out.upsilon[j].upsilon, 0.0);
        }
    }
    EXPECT_GT(negative, 0);
}

TEST(CompareNetworks, SwapNegates) {
    const Network a = gen_political_party(9, 3), b = gen_erdos_renyi(9, 8);
    const auto ab = compare_networks(scenario(a, b, 0.45, "1"));
    const auto ba = compare_networks(scenario(b, a, 0.45, "1"));
    for (int j = 0; j < 9; ++j) EXPECT_EQ(ab.upsilon[j].upsilon, -ba.upsilon[j].upsilon);
}

TEST(CompareNetworks, NonPositiveOutcomeIsUndefined) {
    auto s = scenario(gen_erdos_renyi(4, 2), Network::empty(4), 0.3);
    s.baseline_outcomes << 1.0, -1.0, 2.0, 0.0;
    const auto out = compare_networks(s);
    EXPECT_TRUE(out.upsilon[0].defined);
    EXPECT_FALSE(out.upsilon[1].defined);
    EXPECT_FALSE(out.upsilon[1].reason.empty());
}

TEST(CompareNetworks, LabelsAndUnknownOrigin) {
    auto s = scenario(gen_erdos_renyi(3, 2), Network::empty(3), 0.3, "CA");
    s.labels = {"AZ", "CA", "NV"};
    const auto out = compare_networks(s);
    EXPECT_EQ(out.upsilon[1].unit, "CA");
    EXPECT_NEAR(out.outcome_b(1), 2.2, 1e-12);
    s.origin_unit = "TX";
    EXPECT_THROW(compare_networks(s), InputError);
    s.labels.clear();
    s.origin_unit = "7";
    EXPECT_THROW(compare_networks(s), InputError);
}
