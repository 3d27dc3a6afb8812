#include <gtest/gtest.h>

#include <cmath>

#include "dynflow/entflow.hpp"
#include "dynflow/scenarios.hpp"

using namespace dynflow;

namespace {

// Gaussian profile in the normalized node coordinate (periodic on cycles).
MeasureVec bump(const SpaceSpec& s, double c, double w) {
    MeasureVec m;
    m.masses.resize(s.n());
    double span = s.topology.is_cycle() ? static_cast<double>(s.n()) : static_cast<double>(s.n() - 1);
    for (std::size_t i = 0; i < s.n(); ++i) {
        double d = static_cast<double>(i) / span - c;
        if (s.topology.is_cycle()) d -= std::round(d);
        m.masses[i] = std::exp(-d * d / (2 * w * w));
    }
    double tot = m.total();
    for (double& x : m.masses) x /= tot;
    return m;
}

SpaceSpec two_nodes() {
    SpaceSpec s;
    s.topology = Topology::path(2);
    s.t_min = 0.0;
    s.t_max = 1.0;
    s.edge_length = [](double, std::size_t) { return 1.0; };
    s.log_density = [](double, std::size_t) { return 0.0; };
    return s;
}

} // namespace

TEST(Entropy, Examples) {
    SpaceSpec s = two_nodes();
    MeasureVec mu;
    mu.masses = {1.0, 0.0};
    // m = (1/2, 1/2), density (2, 0): 1/2 * 2 log 2 + 0
    double oracle = 0.5 * 2.0 * std::log(2.0);
    EXPECT_NEAR(entropy(s, mu, 0.5).S, oracle, 1e-15);
    EXPECT_NEAR(entropy(s, mu, 0.5).S, 0.69314718055994529, 1e-15);
    MeasureVec uni;
    uni.masses = {0.5, 0.5};
    EXPECT_NEAR(entropy(s, uni, 0.5).S, 0.0, 1e-15);

    SpaceSpec c = scaling_circle(16, 0.3);
    double t = 0.7;
    Vec m = node_measure(c, t);
    double total = 0.0;
    for (double x : m) total += x;
    MeasureVec u;
    for (double x : m) u.masses.push_back(x / total);
    EXPECT_NEAR(entropy(c, u, t).S, -std::log(total), 1e-12);
    MeasureVec d;
    d.masses.assign(16, 0.0);
    d.masses[3] = 1.0;
    EXPECT_NEAR(entropy(c, d, t).S, std::log(1.0 / m[3]), 1e-12);
}

TEST(Entropy, JensenLowerBound) {
    Rng rng(31);
    for (SpaceSpec s : {wandering_gaussian(33), scaling_circle(20, -0.5), piecewise_diffusivity(21)}) {
        double t = 0.5 * (s.t_min + s.t_max);
        Vec m = node_measure(s, t);
        double total = 0.0;
        for (double x : m) total += x;
        for (int k = 0; k < 20; ++k) {
            MeasureVec mu;
            for (std::size_t i = 0; i < s.n(); ++i) mu.masses.push_back(rng.uniform());
            double z = mu.total();
            for (double& x : mu.masses) x /= z;
            EXPECT_GE(entropy(s, mu, t).S, -std::log(total) - 1e-12);
        }
    }
}

TEST(Entropy, DissipatesOnStaticSpace) {
    SpaceSpec s = static_interval(64, "0.3*x");
    MeasureVec mu = bump(s, 0.3, 0.05);
    Propagator P(s, 0.1, 1.0, {Scheme::ImplicitEuler, 64});
    Trajectory tr = P.dual_trajectory(mu.masses);
    double prev = kInf;
    for (std::size_t k = tr.size(); k-- > 0;) {
        double S = entropy_of_masses(tr.values[k], node_measure(s, tr.times[k]));
        EXPECT_LE(S, prev + 1e-12);
        prev = S;
    }
}

TEST(Entropy, BoundsHold) {
    Rng rng(32);
    for (SpaceSpec s : {static_interval(48), scaling_circle(48, 1.0), scaling_circle(48, -0.5), wandering_gaussian(49),
                        piecewise_diffusivity(49)}) {
        for (int trial = 0; trial < 4; ++trial) {
            // u >= 1 keeps u log u >= 0, the regime in which bound (i) is an estimate
            Vec u(s.n()), g(s.n());
            for (std::size_t i = 0; i < s.n(); ++i) {
                u[i] = 1.0 + rng.uniform(0, 3);
                g[i] = rng.uniform(0, 2);
            }
            double a = s.t_min, b = s.t_max;
            Propagator P(s, a, b, {Scheme::ImplicitEuler, 64});
            auto r = entropy_bounds_check(s, P.forward_trajectory(u), P.adjoint_trajectory(g), a, b);
            EXPECT_TRUE(r.forward_ok) << s.name << " " << r.forward_lhs << " " << r.forward_rhs;
            EXPECT_TRUE(r.adjoint_ok) << s.name << " " << r.adjoint_lhs << " " << r.adjoint_rhs;
            if (s.name == "scaling_circle" && s.L == 1.0) {
                EXPECT_LT(r.forward_lhs, r.forward_rhs);
            }
        }
    }
}

TEST(Entropy, ForwardSlackUnderStepRefinement) {
    SpaceSpec s = scaling_circle(48, 1.0);
    Vec u(48);
    for (std::size_t i = 0; i < 48; ++i) u[i] = 2.0 + std::sin(2 * M_PI * static_cast<double>(i) / 48.0);
    Vec g(48, 1.0);
    std::vector<double> slack;
    for (std::size_t steps : {16u, 32u, 64u, 128u}) {
        Propagator P(s, 0.1, 1.0, {Scheme::ImplicitEuler, steps});
        auto r = entropy_bounds_check(s, P.forward_trajectory(u), P.adjoint_trajectory(g), 0.1, 1.0);
        EXPECT_GT(r.forward_rhs - r.forward_lhs, 0.02 * r.forward_rhs) << steps;
        slack.push_back(r.forward_rhs - r.forward_lhs);
    }
    EXPECT_NEAR(slack[2], slack[3], 0.05 * slack[3]);
}

TEST(Entropy, ConstantDensityIsEquality) {
    SpaceSpec s = static_interval(32);
    Propagator P(s, 0.2, 0.9, {Scheme::CrankNicolson, 32});
    Vec c(32, 3.0);
    auto r = entropy_bounds_check(s, P.forward_trajectory(c), P.adjoint_trajectory(c), 0.2, 0.9);
    EXPECT_NEAR(r.forward_lhs, r.forward_rhs, 1e-12);
    EXPECT_NEAR(r.adjoint_lhs, r.adjoint_rhs, 1e-12);
    Trajectory bad = P.forward_trajectory(c);
    bad.values[3][0] = -1e-6;
    EXPECT_THROW(entropy_bounds_check(s, bad, P.adjoint_trajectory(c), 0.2, 0.9), ValidationError);
}

TEST(EviMinus, StaticIntervalHolds) {
    SpaceSpec s = static_interval(128);
    MeasureVec mu = bump(s, 0.4, 0.08);
    MeasureVec sigma;
    sigma.masses.assign(128, 1.0 / 128.0);
    auto r = evi_minus_check(s, mu, 0.9, sigma, 0.6, {0.02, 0.01}, {Scheme::CrankNicolson, 64});
    EXPECT_TRUE(r.ok) << r.margin;
    EXPECT_EQ(r.lhs.size(), 2u);
    EXPECT_THROW(evi_minus_check(s, mu, 0.9, sigma, 0.2, {0.2}), ValidationError);
}

TEST(EviMinus, CoincidentArgumentsConverge) {
    // rhs = 0; lhs tends to 0 at rate O(h) since W_2 between node measures is only
    // Lipschitz in small perturbations
    double prev = kInf;
    for (std::size_t n : {64u, 128u, 256u}) {
        SpaceSpec s = static_interval(n);
        MeasureVec mu = bump(s, 0.4, 0.08);
        MeasureVec mu_t = dual_flow(s, mu, 0.9, 0.6, {Scheme::CrankNicolson, 64});
        auto r = evi_minus_check(s, mu, 0.9, mu_t, 0.6, {0.02, 0.01}, {Scheme::CrankNicolson, 64});
        double h = 2 * M_PI / static_cast<double>(n - 1);
        EXPECT_NEAR(r.rhs, 0.0, 1e-12);
        EXPECT_LE(std::abs(r.lhs_extrapolated), h) << n;
        EXPECT_LT(std::abs(r.lhs_extrapolated), prev);
        prev = std::abs(r.lhs_extrapolated);
    }
}

TEST(EviMinus, ShrinkingCircleViolates) {
    // translated bumps of equal shape: equal entropies, so only the metric change is seen
    for (double c : {-0.5, 0.5}) {
        SpaceSpec s = scaling_circle(128, c);
        MeasureVec mu = bump(s, 0.3, 0.05), sigma = bump(s, 0.55, 0.05);
        auto r = evi_minus_check(s, mu, 0.6, sigma, 0.6, {0.02, 0.01}, {Scheme::CrankNicolson, 64});
        EXPECT_NEAR(r.rhs, 0.0, 1e-10);
        if (c < 0) {
            EXPECT_LT(r.margin, -3 * r.tol);
        } else {
            EXPECT_TRUE(r.ok);
        }
    }
}

TEST(DynamicConvexity, CoincidentEndpoints) {
    SpaceSpec s = static_interval(64);
    MeasureVec a = bump(s, 0.5, 0.1);
    auto r = dynamic_convexity_check(s, a, a, 0.8, 1.0);
    EXPECT_NEAR(r.lhs, 0.0, 1e-12);
    EXPECT_NEAR(r.rhs, 0.0, 1e-12);
    EXPECT_TRUE(r.ok);
    EXPECT_THROW(dynamic_convexity_check(s, a, a, 0.8, 1.0, 2), ValidationError);
}

TEST(DynamicConvexity, FlatGaussianOracle) {
    // Along the geodesic between Gaussians of widths w0, w1 the entropy is
    // -log((1 - a) w0 + a w1) + const, so the slope jump is (w1 - w0)^2 / (w0 w1).
    double w0 = 0.06, w1 = 0.08;
    double exact = (w1 - w0) * (w1 - w0) / (w0 * w1);
    // the grid bias is O(h): 15% at n = 256, under 1% at n = 2048
    double prev_err = kInf;
    for (std::size_t n : {256u, 512u, 1024u, 2048u}) {
        SpaceSpec s = static_interval(n);
        MeasureVec a = bump(s, 0.35, w0), b = bump(s, 0.6, w1);
        auto r = dynamic_convexity_check(s, a, b, 0.8, kInf, 33);
        double err = std::abs(r.lhs - exact);
        EXPECT_LT(err, prev_err) << n;
        prev_err = err;
        EXPECT_TRUE(r.ok);
        EXPECT_NEAR(r.dW2dt, 0.0, 1e-9);
    }
    EXPECT_LT(prev_err, 0.02 * exact);
}

TEST(DynamicConvexity, ScalingCircles) {
    Rng rng(33);
    for (int trial = 0; trial < 5; ++trial) {
        double c0 = rng.uniform(), c1 = c0 + rng.uniform(0.1, 0.4), w = rng.uniform(0.04, 0.08);
        SpaceSpec e = scaling_circle(256, 0.5), k = scaling_circle(256, -0.5);
        MeasureVec a = bump(e, c0, w), b = bump(e, c1, w);
        double t = rng.uniform(0.3, 1.0);
        auto re = dynamic_convexity_check(e, a, b, t, kInf);
        auto rk = dynamic_convexity_check(k, a, b, t, kInf);
        EXPECT_TRUE(re.ok) << re.margin;
        // translated profiles: no entropy convexity to offset -1/2 d_t W^2 > 0
        EXPECT_LT(rk.margin, -1e-2 * rk.scale) << rk.margin;
        // d_t W^2 = 2 c W^2 for uniform scaling
        EXPECT_NEAR(re.dW2dt, 2 * 0.5 * re.W2, 1e-3 * re.W2);
    }
}

TEST(DynamicConvexity, WanderingGaussianDimension) {
    SpaceSpec s = wandering_gaussian(257);
    MeasureVec a = bump(s, 0.45, 0.04), b = bump(s, 0.55, 0.04);
    auto inf = dynamic_convexity_check(s, a, b, 0.3, kInf);
    auto one = dynamic_convexity_check(s, a, b, 0.3, 1.0);
    EXPECT_TRUE(inf.ok) << inf.margin;
    EXPECT_LT(one.margin, -1e-2 * one.scale) << one.margin;
    EXPECT_LE(one.margin, inf.margin);
}
