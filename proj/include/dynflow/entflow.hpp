#pragma once

// Boltzmann entropy S_t(mu) = int u log u dm_t (mu = u m_t), a-priori entropy bounds
// along heat and adjoint flows, the EVI- check for the dual flow, and the dynamic
// convexity functional of condition (I_{K,N}).

#include <cmath>
#include <vector>

#include "dynflow/propagate.hpp"
#include "dynflow/transport.hpp"

namespace dynflow {

struct EntropyRecord {
    double t = 0.0;
    double S = 0.0;
    bool finite = true;
};

inline double entropy_of_masses(const Vec& mu, const Vec& m) {
    double S = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        if (mu[i] <= 0.0) continue;
        if (!(m[i] > 0.0)) return kInf;
        S += mu[i] * std::log(mu[i] / m[i]);
    }
    return S;
}

/// int v log v dm for a nonnegative density v (not necessarily normalized).
inline double entropy_of_density(const Vec& v, const Vec& m) {
    double S = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] > 0.0) S += v[i] * std::log(v[i]) * m[i];
    return S;
}

inline EntropyRecord entropy(const SpaceSpec& s, const MeasureVec& mu, double t) {
    require_probability(mu, "entropy");
    if (mu.size() != s.n()) throw ValidationError("entropy: measure size does not match the space");
    EntropyRecord r;
    r.t = t;
    r.S = entropy_of_masses(mu.masses, node_measure(s, t));
    r.finite = std::isfinite(r.S);
    return r;
}

// ---------------------------------------------------------------------------

struct EntropyBoundsReport {
    // (i) S_t(u_t) <= e^{L(t-s)} S_s(u_s)
    double forward_lhs = 0.0, forward_rhs = 0.0;
    bool forward_ok = false;
    // (ii) S_s(v_s) <= S_t(v_t) + L int_s^t int v_r dm_r dr
    double adjoint_lhs = 0.0, adjoint_rhs = 0.0;
    bool adjoint_ok = false;
    double tol = 0.0;
    bool ok = false;
};

inline void require_nonnegative(const Trajectory& tr, const char* what) {
    for (const Vec& v : tr.values)
        for (double x : v)
            if (x < -1e-12) throw ValidationError(std::string(what) + ": negative density in trajectory");
}

/// `forward` is a heat-flow trajectory starting at s, `adjoint` an adjoint trajectory
/// ending at t; both on knot grids of [s, t].
inline EntropyBoundsReport entropy_bounds_check(const SpaceSpec& spec, const Trajectory& forward,
                                                const Trajectory& adjoint, double s, double t) {
    if (!(s < t)) throw ValidationError("entropy_bounds_check: need s < t");
    require_nonnegative(forward, "entropy_bounds_check");
    require_nonnegative(adjoint, "entropy_bounds_check");
    const Vec& us = forward.at(s);
    const Vec& ut = forward.at(t);
    EntropyBoundsReport r;
    r.forward_lhs = entropy_of_density(ut, node_measure(spec, forward.times[forward.index_of(t)]));
    r.forward_rhs = std::exp(spec.L * (t - s)) * entropy_of_density(us, node_measure(spec, forward.times[forward.index_of(s)]));

    std::size_t a = adjoint.index_of(s), b = adjoint.index_of(t);
    double integral = 0.0;
    auto mass = [&](std::size_t k) {
        Vec m = node_measure(spec, adjoint.times[k]);
        double x = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) x += adjoint.values[k][i] * m[i];
        return x;
    };
    double prev = mass(a);
    for (std::size_t k = a + 1; k <= b; ++k) {
        double cur = mass(k);
        integral += 0.5 * (prev + cur) * (adjoint.times[k] - adjoint.times[k - 1]);
        prev = cur;
    }
    r.adjoint_lhs = entropy_of_density(adjoint.values[a], node_measure(spec, adjoint.times[a]));
    r.adjoint_rhs = entropy_of_density(adjoint.values[b], node_measure(spec, adjoint.times[b])) + spec.L * integral;

    std::size_t steps = std::max<std::size_t>(1, std::max(forward.size(), adjoint.size()) - 1);
    r.tol = 1e-6 + 10.0 / static_cast<double>(steps);
    r.forward_ok = r.forward_lhs <= r.forward_rhs + r.tol * std::max(1.0, std::abs(r.forward_rhs));
    r.adjoint_ok = r.adjoint_lhs <= r.adjoint_rhs + r.tol * std::max(1.0, std::abs(r.adjoint_rhs));
    r.ok = r.forward_ok && r.adjoint_ok;
    return r;
}

// ---------------------------------------------------------------------------

struct EviMinusReport {
    double t = 0.0;
    double rhs = 0.0;  // S_t(mu_t) - S_t(sigma)
    std::vector<double> deltas;
    std::vector<double> lhs;  // per delta
    double lhs_extrapolated = 0.0;
    double scale = 0.0, tol = 0.0;
    double margin = 0.0;
    bool ok = false;
};

/// 1/2 d-_s W^2_{s,t}(mu_s, sigma) at s = t- against S_t(mu_t) - S_t(sigma), with
/// mu_s the dual flow of mu from tau.  The difference quotient
/// (W_t^2(mu_t, sigma) - W_{s,t}^2(mu_s, sigma)) / (2 (t - s)) is evaluated at s = t - delta
/// and Richardson-extrapolated over the last two deltas.
inline EviMinusReport evi_minus_check(const SpaceSpec& spec, const MeasureVec& mu, double tau, const MeasureVec& sigma,
                                      double t, const std::vector<double>& deltas, const SchemeConfig& cfg = {},
                                      std::size_t k_knots = 16, std::size_t steps_per_delta = 16,
                                      double rel_tol = 1e-3) {
    if (t > tau) throw ValidationError("evi_minus_check: need t <= tau");
    if (deltas.empty()) throw ValidationError("evi_minus_check: empty delta list");
    for (double d : deltas)
        if (!(d > 0.0) || t - d < spec.t_min) throw ValidationError("evi_minus_check: delta exhausts the interval");
    EviMinusReport r;
    r.t = t;
    r.deltas = deltas;
    MeasureVec mu_t = t == tau ? mu : dual_flow(spec, mu, tau, t, cfg);
    double W2t = wasserstein(spec, mu_t, sigma, t).W2;
    r.rhs = entropy(spec, mu_t, t).S - entropy(spec, sigma, t).S;
    for (double d : deltas) {
        MeasureVec mu_s = dual_flow(spec, mu_t, t, t - d, {cfg.scheme, steps_per_delta, cfg.adjoint});
        double W2st = std::pow(w_st(spec, mu_s, sigma, t - d, t, k_knots).W_st, 2);
        r.lhs.push_back((W2t - W2st) / (2.0 * d));
    }
    std::size_t q = r.lhs.size();
    if (q >= 2) {
        double d1 = deltas[q - 2], d2 = deltas[q - 1];
        // linear extrapolation to delta = 0
        r.lhs_extrapolated = r.lhs[q - 1] + (r.lhs[q - 1] - r.lhs[q - 2]) * d2 / (d1 - d2);
    } else {
        r.lhs_extrapolated = r.lhs[0];
    }
    r.scale = 1.0 + std::abs(entropy(spec, mu_t, t).S) + std::abs(entropy(spec, sigma, t).S);
    r.tol = rel_tol * r.scale;
    r.margin = r.lhs_extrapolated - r.rhs;
    r.ok = r.margin >= -r.tol;
    return r;
}

// ---------------------------------------------------------------------------

struct ConvexityReport {
    double t = 0.0, K = 0.0, N = kInf;
    double slope0 = 0.0;  // d-_a S at a = 0+
    double slope1 = 0.0;  // d+_a S at a = 1-
    double dW2dt = 0.0;   // d-_t W^2_{t-}
    double W2 = 0.0;
    double S0 = 0.0, S1 = 0.0;
    double lhs = 0.0, rhs = 0.0, margin = 0.0;
    double scale = 0.0;
    bool ok = false;
};

/// Backward difference quotient of W_t^2 at t, Richardson-extrapolated over delta and
/// delta/2, minus the observed spread of the two levels.
inline double w2_time_derivative(const SpaceSpec& spec, const MeasureVec& a, const MeasureVec& b, double t, double delta) {
    if (t - delta < spec.t_min) throw ValidationError("dynamic convexity: time step leaves the interval");
    double w0 = wasserstein(spec, a, b, t).W2;
    double D1 = (w0 - wasserstein(spec, a, b, t - delta).W2) / delta;
    double D2 = (w0 - wasserstein(spec, a, b, t - 0.5 * delta).W2) / (0.5 * delta);
    double R = 2.0 * D2 - D1;
    return R - std::abs(R - D2);
}

/// Condition (I_{K,N}) at time t for the W_t-geodesic from mu0 to mu1:
///   d+S(1-) - d-S(0+)  >=  -1/2 d-_t W^2 + K W_t^2 + |S(mu0) - S(mu1)|^2 / N
/// One-sided a-slopes use 3-point stencils on a uniform grid of `a_points` values.
inline ConvexityReport dynamic_convexity_check(const SpaceSpec& spec, const MeasureVec& mu0, const MeasureVec& mu1,
                                               double t, double N, std::size_t a_points = 33, double delta = 0.0,
                                               double K = 0.0, double rel_tol = 1e-2) {
    if (a_points < 3) throw ValidationError("dynamic convexity: need at least 3 grid points");
    if (delta <= 0.0) delta = 1e-3 * (spec.t_max - spec.t_min);
    ConvexityReport r;
    r.t = t;
    r.K = K;
    r.N = N;
    Vec m = node_measure(spec, t);
    double ha = 1.0 / static_cast<double>(a_points - 1);
    auto S_at = [&](double a) { return entropy_of_masses(displacement_geodesic(spec, mu0, mu1, t, a).masses, m); };
    double s0 = S_at(0.0), s1 = S_at(ha), s2 = S_at(2 * ha);
    double e0 = S_at(1.0), e1 = S_at(1.0 - ha), e2 = S_at(1.0 - 2 * ha);
    if (!std::isfinite(s0) || !std::isfinite(e0)) throw ValidationError("dynamic convexity: infinite entropy at an endpoint");
    r.S0 = s0;
    r.S1 = e0;
    r.slope0 = (-3.0 * s0 + 4.0 * s1 - s2) / (2.0 * ha);
    r.slope1 = (3.0 * e0 - 4.0 * e1 + e2) / (2.0 * ha);
    r.W2 = wasserstein(spec, mu0, mu1, t).W2;
    r.dW2dt = w2_time_derivative(spec, mu0, mu1, t, delta);
    double dS = s0 - e0;
    double nterm = std::isinf(N) ? 0.0 : dS * dS / N;
    r.lhs = r.slope1 - r.slope0;
    r.rhs = -0.5 * r.dW2dt + K * r.W2 + nterm;
    r.margin = r.lhs - r.rhs;
    r.scale = std::abs(r.slope0) + std::abs(r.slope1) + 0.5 * std::abs(r.dW2dt) + std::abs(K) * r.W2 + nterm;
    r.ok = r.margin >= -rel_tol * std::max(r.scale, 1e-12);
    return r;
}

} // namespace dynflow
