#include <gtest/gtest.h>

#include <unsupported/Eigen/MatrixFunctions>
#include <cmath>

#include "dynflow/propagate.hpp"
#include "dynflow/scenarios.hpp"

using namespace dynflow;

namespace {

Vec random_field(Rng& rng, std::size_t n) {
    Vec u(n);
    for (double& x : u) x = rng.normal();
    return u;
}

double norm2(const Vec& u, const Vec& m) { return std::sqrt(dot_weighted(u, u, m)); }

SpaceSpec mass_rescaling(double sign, double L) {
    SpaceSpec s;
    s.topology = Topology::path(16);
    s.t_min = 0.1;
    s.t_max = 1.0;
    s.edge_length = [](double, std::size_t e) { return 0.2 + 0.01 * static_cast<double>(e); };
    s.log_density = [sign](double t, std::size_t) { return sign * t; };
    s.L = L;
    s.C = 1.0;
    return s;
}

// Oracle: classical RK4 on the semi-discrete system du/dt = Delta_t u.
Vec rk4(const SpaceSpec& s, Vec u, double a, double b, std::size_t steps) {
    double h = (b - a) / static_cast<double>(steps);
    auto F = [&](double t, const Vec& v) { return laplacian_apply(assemble_generator(s, t), v); };
    auto axpy = [](const Vec& x, double c, const Vec& y) {
        Vec r(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] + c * y[i];
        return r;
    };
    for (std::size_t k = 0; k < steps; ++k) {
        double t = a + h * static_cast<double>(k);
        Vec k1 = F(t, u), k2 = F(t + h / 2, axpy(u, h / 2, k1)), k3 = F(t + h / 2, axpy(u, h / 2, k2)),
            k4 = F(t + h, axpy(u, h, k3));
        for (std::size_t i = 0; i < u.size(); ++i) u[i] += h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    }
    return u;
}

} // namespace

TEST(Propagate, ConstantsArePreserved) {
    for (Scheme sc : {Scheme::ImplicitEuler, Scheme::CrankNicolson}) {
        SpaceSpec s = wandering_gaussian(33);
        SchemeConfig cfg{sc, 40};
        Vec u = heat_forward(s, Vec(33, 2.5), 0.3, 1.7, cfg);
        for (double x : u) EXPECT_NEAR(x, 2.5, 1e-14);
    }
}

TEST(Propagate, DualityOnRandomPairs) {
    Rng rng(1);
    for (const SpaceSpec& s : {scaling_circle(24, -0.5), wandering_gaussian(25), piecewise_diffusivity(25)}) {
        for (Scheme sc : {Scheme::ImplicitEuler, Scheme::CrankNicolson}) {
            Propagator P(s, s.t_min + 0.05, s.t_max - 0.05, {sc, 30});
            const Vec& ms = P.knot_measure(0);
            const Vec& mt = P.knot_measure(P.steps());
            for (int k = 0; k < 10; ++k) {
                Vec h = random_field(rng, s.n()), g = random_field(rng, s.n());
                double a = dot_weighted(P.forward(h), g, mt), b = dot_weighted(h, P.adjoint(g), ms);
                EXPECT_LE(std::abs(a - b), 1e-11 * norm2(h, ms) * norm2(g, mt));
            }
        }
    }
}

TEST(Propagate, CompositionOnAlignedGrids) {
    SpaceSpec s = scaling_circle(32, 0.7);
    Rng rng(2);
    Vec u = random_field(rng, 32);
    SchemeConfig half{Scheme::CrankNicolson, 20}, full{Scheme::CrankNicolson, 40};
    Vec a = heat_forward(s, heat_forward(s, u, 0.2, 0.5, half), 0.5, 0.8, half);
    Vec b = heat_forward(s, u, 0.2, 0.8, full);
    for (std::size_t i = 0; i < 32; ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
    Vec id = heat_forward(s, u, 0.4, 0.4, full);
    EXPECT_EQ(id, u);
}

TEST(Propagate, MaximumPrincipleAndMassForImplicitEuler) {
    Rng rng(3);
    SpaceSpec s = wandering_gaussian(41);
    SchemeConfig cfg{Scheme::ImplicitEuler, 25};
    Propagator P(s, 0.4, 1.6, cfg);
    Eigen::MatrixXd M = P.matrix();
    EXPECT_GE(M.minCoeff(), 0.0);
    for (int k = 0; k < 20; ++k) {
        Vec u(41);
        for (double& x : u) x = rng.uniform(-1.0, 3.0);
        Vec v = P.forward(u);
        double lo = *std::min_element(u.begin(), u.end()), hi = *std::max_element(u.begin(), u.end());
        for (double x : v) {
            EXPECT_GE(x, lo - 1e-12);
            EXPECT_LE(x, hi + 1e-12);
        }
        MeasureVec mu;
        mu.masses.resize(41);
        double tot = 0.0;
        for (double& x : mu.masses) tot += (x = rng.uniform());
        for (double& x : mu.masses) x /= tot;
        mu.t = 1.6;
        MeasureVec back = dual_flow(s, mu, 1.6, 0.4, cfg);
        EXPECT_NEAR(back.total(), 1.0, 1e-11);
        for (double x : back.masses) EXPECT_GE(x, 0.0);
    }
}

TEST(Propagate, CrankNicolsonIsSecondOrderAgainstRk4) {
    SpaceSpec s = scaling_circle(32, 1.0, 1.0, 2.0 * M_PI);
    Vec u(32);
    for (std::size_t i = 0; i < 32; ++i) {
        double x = 2.0 * M_PI * static_cast<double>(i) / 32.0;
        u[i] = std::sin(x) + 0.5 * std::cos(3.0 * x);
    }
    double a = 0.2, b = 0.6;
    std::vector<std::size_t> ks = {8, 16, 32, 64};
    Vec ref = rk4(s, u, a, b, 100 * ks.back());
    Vec err;
    for (std::size_t k : ks) {
        Vec v = heat_forward(s, u, a, b, {Scheme::CrankNicolson, k});
        double e = 0.0;
        for (std::size_t i = 0; i < 32; ++i) e = std::max(e, std::abs(v[i] - ref[i]));
        err.push_back(e);
    }
    for (std::size_t j = 1; j < err.size(); ++j) EXPECT_GE(std::log2(err[j - 1] / err[j]), 1.9);
}

TEST(Propagate, ImplicitEulerIsFirstOrderAgainstMatrixExponential) {
    // Static path: P_{t,s} = exp((t - s) Delta).
    SpaceSpec s = static_interval(21, "0.3*x");
    Generator g = assemble_generator(s, 0.5);
    Eigen::MatrixXd D(laplacian_matrix(g));
    Eigen::MatrixXd E = (0.5 * D).exp();
    Vec err;
    for (std::size_t k : {16, 32, 64}) {
        Eigen::MatrixXd P = Propagator(s, 0.2, 0.7, {Scheme::ImplicitEuler, k}).matrix();
        err.push_back((P - E).cwiseAbs().maxCoeff());
    }
    EXPECT_NEAR(std::log2(err[0] / err[1]), 1.0, 0.1);
    EXPECT_NEAR(std::log2(err[1] / err[2]), 1.0, 0.1);
}

TEST(Propagate, StaticKernelIsSymmetric) {
    SpaceSpec s = static_interval(15, "x*x/10");
    Eigen::MatrixXd p = heat_kernel(s, 0.8, 0.3, {Scheme::ImplicitEuler, 16});
    EXPECT_NEAR((p - p.transpose()).cwiseAbs().maxCoeff(), 0.0, 1e-12 * p.cwiseAbs().maxCoeff());
    // P h = sum_y p(x, y) h(y) m_s(y)
    Rng rng(4);
    Vec h = random_field(rng, 15);
    Vec ms = node_measure(s, 0.3);
    Vec direct = heat_forward(s, h, 0.3, 0.8, {Scheme::ImplicitEuler, 16});
    for (std::size_t x = 0; x < 15; ++x) {
        double acc = 0.0;
        for (std::size_t y = 0; y < 15; ++y) acc += p(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) * h[y] * ms[y];
        EXPECT_NEAR(acc, direct[x], 1e-12);
    }
}

TEST(Propagate, DirectPdeAdjointConvergesToDiscreteAdjoint) {
    SpaceSpec s = wandering_gaussian(25);
    Rng rng(6);
    Vec g(25);
    for (double& x : g) x = rng.uniform(0.5, 1.5);
    Vec err;
    for (std::size_t k : {20, 40, 80}) {
        SchemeConfig a{Scheme::ImplicitEuler, k, AdjointMode::DiscreteAdjoint};
        SchemeConfig b{Scheme::ImplicitEuler, k, AdjointMode::DirectPDE};
        Vec va = adjoint_backward(s, g, 1.5, 0.5, a), vb = adjoint_backward(s, g, 1.5, 0.5, b);
        double e = 0.0;
        for (std::size_t i = 0; i < 25; ++i) e = std::max(e, std::abs(va[i] - vb[i]));
        err.push_back(e);
    }
    EXPECT_LT(err[1], 0.7 * err[0]);
    EXPECT_LT(err[2], 0.7 * err[1]);
}

TEST(Propagate, Errors) {
    SpaceSpec s = scaling_circle(8, 0.0);
    EXPECT_THROW(heat_forward(s, Vec(8, 0.0), 0.6, 0.5), ValidationError);
    EXPECT_THROW(heat_forward(s, Vec(8, 0.0), 0.2, 0.5, {Scheme::CrankNicolson, 0}), ValidationError);
    EXPECT_THROW(heat_forward(s, Vec(7, 0.0), 0.2, 0.5), ValidationError);
    MeasureVec bad;
    bad.masses = Vec(8, 0.2);
    EXPECT_THROW(dual_flow(s, bad, 0.5, 0.2), ValidationError);
}

TEST(LpNorms, MassRescalingSaturatesTheL1Bound) {
    SchemeConfig cfg{Scheme::ImplicitEuler, 32};
    // m_t = e^{t} vol: mass of P h grows exactly like e^{t - s}.
    NormReport r = lp_norm_report(mass_rescaling(-1.0, 1.0), 0.9, 0.2, cfg);
    EXPECT_TRUE(r.ok);
    EXPECT_NEAR(r.get("P_1").empirical / std::exp(0.7), 1.0, 1e-3);
    EXPECT_NEAR(r.get("P_inf").empirical, 1.0, 1e-12);
    EXPECT_NEAR(r.get("Pstar_1").empirical, 1.0, 1e-12);
    // m_t = e^{-t} vol: mass decays, bound holds with room.
    NormReport q = lp_norm_report(mass_rescaling(1.0, 1.0), 0.9, 0.2, cfg);
    EXPECT_TRUE(q.ok);
    EXPECT_NEAR(q.get("P_1").empirical / std::exp(-0.7), 1.0, 1e-3);
}

TEST(LpNorms, UnderstatedLIsCaughtWithWitness) {
    NormReport r = lp_norm_report(mass_rescaling(-1.0, 0.5), 0.9, 0.2, {Scheme::ImplicitEuler, 32});
    EXPECT_FALSE(r.ok);
    const NormEntry& e = r.get("P_1");
    EXPECT_FALSE(e.ok);
    EXPECT_EQ(e.witness.size(), 16u);
}

TEST(LpNorms, CatalogScenariosRespectBounds) {
    for (const auto& entry : scenario_catalog()) {
        SpaceSpec s = entry.build(25);
        NormReport r = lp_norm_report(s, s.t_max, s.t_min, {Scheme::ImplicitEuler, 32}, 32, 9);
        EXPECT_TRUE(r.ok) << entry.name;
        for (const auto& e : r.entries) EXPECT_LE(e.exact, e.bound * (1.0 + kNormSlack)) << entry.name << " " << e.name;
    }
}

TEST(Estimates, EnergyDecay) {
    Rng rng(12);
    for (const auto& entry : scenario_catalog()) {
        SpaceSpec s = entry.build(33);
        Vec u = random_field(rng, 33);
        EnergyReport r = energy_decay_check(s, u, s.t_min, s.t_max, {Scheme::CrankNicolson, 128});
        EXPECT_TRUE(r.ok) << entry.name << " lhs=" << r.lhs << " rhs=" << r.rhs;
    }
    // static: equality up to quadrature error
    SpaceSpec st = static_interval(33);
    Vec u = random_field(rng, 33);
    EnergyReport r = energy_decay_check(st, u, 0.2, 0.6, {Scheme::CrankNicolson, 256});
    EXPECT_NEAR(r.lhs / r.rhs, 1.0, 0.05);
}

TEST(Estimates, CommutatorResidual) {
    SpaceSpec st = scaling_circle(32, 0.0);
    Vec u(32), g(32);
    for (std::size_t i = 0; i < 32; ++i) {
        double x = 2.0 * M_PI * static_cast<double>(i) / 32.0;
        u[i] = std::sin(x);
        g[i] = 1.0 + 0.5 * std::sin(x) + 0.3 * std::cos(2.0 * x);
    }
    SchemeConfig cfg{Scheme::CrankNicolson, 128};
    CommutatorReport r0 = commutator_residual(st, u, g, 0.1, 0.9, 0.3, 0.5, cfg);
    EXPECT_LT(r0.residual, 1e-12);

    SpaceSpec sc = scaling_circle(32, 1.0);
    Vec res, dts;
    for (int k = 0; k < 4; ++k) {
        double d = 0.2 / std::pow(2.0, k);
        CommutatorReport r = commutator_residual(sc, u, g, 0.1, 0.9, 0.3, 0.3 + d, cfg);
        EXPECT_TRUE(r.ok);
        res.push_back(std::log(r.residual));
        dts.push_back(std::log(r.t - r.s));
    }
    double mx = 0, my = 0;
    for (int k = 0; k < 4; ++k) mx += dts[k] / 4, my += res[k] / 4;
    double sxy = 0, sxx = 0;
    for (int k = 0; k < 4; ++k) sxy += (dts[k] - mx) * (res[k] - my), sxx += (dts[k] - mx) * (dts[k] - mx);
    EXPECT_GE(sxy / sxx, 0.4);
}

TEST(Estimates, EviForTheEnergy) {
    Rng rng(14);
    SpaceSpec s = scaling_circle(32, 0.5);
    Vec u = random_field(rng, 32);
    Trajectory tr = heat_trajectory(s, u, 0.2, 0.8, {Scheme::CrankNicolson, 200});
    for (double t : {0.3, 0.5, 0.7}) {
        EXPECT_TRUE(evi_energy_check(s, tr, t, tr.at(t)).ok);
        for (int k = 0; k < 5; ++k) EXPECT_TRUE(evi_energy_check(s, tr, t, random_field(rng, 32)).ok);
    }
}
