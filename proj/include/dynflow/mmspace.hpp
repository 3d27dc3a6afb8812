#pragma once

// Time-dependent metric measure spaces discretized on a path or cycle graph.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dynflow/core.hpp"
#include "json.hpp"

namespace dynflow {

enum class TopologyKind { Path, Cycle };

struct Topology {
    TopologyKind kind = TopologyKind::Path;
    std::size_t n = 0;

    static Topology path(std::size_t n) { return {TopologyKind::Path, n}; }
    static Topology cycle(std::size_t n) { return {TopologyKind::Cycle, n}; }

    bool is_cycle() const { return kind == TopologyKind::Cycle; }
    std::size_t edge_count() const { return is_cycle() ? n : (n == 0 ? 0 : n - 1); }
    std::size_t head(std::size_t e) const { return e; }
    std::size_t tail(std::size_t e) const { return (e + 1) % n; }
    std::string name() const { return is_cycle() ? "cycle" : "path"; }
};

using EdgeLengthFn = std::function<double(double t, std::size_t edge)>;
using LogDensityFn = std::function<double(double t, std::size_t node)>;

struct SpaceSpec;
using RefineFn = std::function<SpaceSpec(std::size_t n)>;

/// Everything needed to evaluate the space at any time in [t_min, t_max].
/// L bounds the time log-Lipschitz constant of the edge lengths and of the
/// log-density, C bounds |f|.  K and N are the parameters the space is claimed
/// (or tested) to satisfy; N may be +inf.
struct SpaceSpec {
    std::string name;
    Topology topology;
    double t_min = 0.0;
    double t_max = 1.0;
    EdgeLengthFn edge_length;
    LogDensityFn log_density;
    double L = 0.0;
    double C = 0.0;
    double K = 0.0;
    double N = kInf;
    /// Same space at a different node count; empty when not refinable.
    RefineFn refine;
    /// Config record that rebuilds this space.
    nlohmann::json source;

    std::size_t n() const { return topology.n; }
    double span() const { return t_max - t_min; }
};

inline void check_spec(const SpaceSpec& s) {
    if (s.topology.kind == TopologyKind::Path && s.topology.n < 2)
        throw ValidationError("path graph needs at least 2 nodes");
    if (s.topology.kind == TopologyKind::Cycle && s.topology.n < 3)
        throw ValidationError("cycle graph needs at least 3 nodes");
    if (!(s.t_min > 0.0 && s.t_min < s.t_max) || !std::isfinite(s.t_max))
        throw ValidationError("time interval must satisfy 0 < t_min < t_max < inf");
    if (!s.edge_length || !s.log_density) throw ValidationError("space is missing edge_length or log_density");
    if (!(s.L >= 0.0) || !(s.C >= 0.0)) throw ValidationError("L and C must be nonnegative");
    if (!(s.N > 0.0)) throw ValidationError("N must be positive (use inf for N = infinity)");
}

inline void check_time(const SpaceSpec& s, double t) {
    double slack = 1e-12 * std::max(1.0, std::abs(s.t_max));
    if (!(t >= s.t_min - slack && t <= s.t_max + slack))
        throw ValidationError("time " + std::to_string(t) + " outside [" + std::to_string(s.t_min) + ", " +
                              std::to_string(s.t_max) + "]");
}

inline Vec edge_lengths(const SpaceSpec& s, double t) {
    std::size_t ne = s.topology.edge_count();
    Vec l(ne);
    for (std::size_t e = 0; e < ne; ++e) {
        double v = s.edge_length(t, e);
        if (!std::isfinite(v)) throw ValidationError("non-finite edge length at edge " + std::to_string(e));
        if (!(v > 0.0)) throw ValidationError("non-positive edge length at edge " + std::to_string(e));
        l[e] = v;
    }
    return l;
}

inline Vec log_density(const SpaceSpec& s, double t) {
    Vec f(s.n());
    for (std::size_t i = 0; i < s.n(); ++i) {
        double v = s.log_density(t, i);
        if (!std::isfinite(v)) throw ValidationError("non-finite log-density at node " + std::to_string(i));
        f[i] = v;
    }
    return f;
}

/// Node volume: half the summed length of the incident edges.
inline Vec node_volumes(const Topology& top, const Vec& len) {
    Vec vol(top.n, 0.0);
    for (std::size_t e = 0; e < top.edge_count(); ++e) {
        vol[top.head(e)] += 0.5 * len[e];
        vol[top.tail(e)] += 0.5 * len[e];
    }
    return vol;
}

inline Vec node_measure(const SpaceSpec& s, double t) {
    Vec vol = node_volumes(s.topology, edge_lengths(s, t));
    Vec f = log_density(s, t);
    for (std::size_t i = 0; i < vol.size(); ++i) vol[i] *= std::exp(-f[i]);
    return vol;
}

/// Arc-length position of every node, starting at node 0.  For a cycle the
/// second member is the circumference, for a path the total length.
inline std::pair<Vec, double> node_positions(const Topology& top, const Vec& len) {
    Vec pos(top.n, 0.0);
    for (std::size_t i = 1; i < top.n; ++i) pos[i] = pos[i - 1] + len[i - 1];
    double total = top.is_cycle() ? pos[top.n - 1] + len[top.n - 1] : pos[top.n - 1];
    return {pos, total};
}

struct MetricSnapshot {
    double t = 0.0;
    Topology topology;
    Vec length;     // per edge
    Vec f;          // log-density per node
    Vec vol;        // per node
    Vec m;          // node measure e^{-f} vol
    Vec pos;        // arc-length coordinate
    double total_length = 0.0;
    Eigen::MatrixXd dist;

    double d(std::size_t i, std::size_t j) const { return dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); }
};

inline Eigen::MatrixXd distance_matrix(const Topology& top, const Vec& pos, double total) {
    auto n = static_cast<Eigen::Index>(top.n);
    Eigen::MatrixXd d(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            double a = std::abs(pos[static_cast<std::size_t>(i)] - pos[static_cast<std::size_t>(j)]);
            if (top.is_cycle()) a = std::min(a, total - a);
            d(i, j) = a;
        }
    }
    return d;
}

inline MetricSnapshot metric_at(const SpaceSpec& s, double t) {
    check_time(s, t);
    MetricSnapshot snap;
    snap.t = t;
    snap.topology = s.topology;
    snap.length = edge_lengths(s, t);
    snap.f = log_density(s, t);
    snap.vol = node_volumes(s.topology, snap.length);
    snap.m.resize(s.n());
    for (std::size_t i = 0; i < s.n(); ++i) snap.m[i] = std::exp(-snap.f[i]) * snap.vol[i];
    auto [pos, total] = node_positions(s.topology, snap.length);
    snap.pos = std::move(pos);
    snap.total_length = total;
    snap.dist = distance_matrix(s.topology, snap.pos, total);
    return snap;
}

struct RegularityReport {
    double L_observed = 0.0;
    double C_observed = 0.0;
    /// max |f(x) - f(y)| / d(x, y) over edges, informational
    double spatial_lip_observed = 0.0;
    std::size_t samples = 0;
    bool ok = false;
    std::vector<std::string> problems;
};

/// Empirical regularity constants from the given sample times (sorted internally).
/// Chord slopes between consecutive samples dominate those of any coarser pair,
/// so adding samples never lowers L_observed.
inline RegularityReport validate_regularity(const SpaceSpec& s, std::vector<double> times) {
    RegularityReport r;
    std::sort(times.begin(), times.end());
    r.samples = times.size();
    std::vector<Vec> loglen, f;
    try {
        for (double t : times) {
            check_time(s, t);
            Vec l = edge_lengths(s, t);
            for (double& x : l) x = std::log(x);
            loglen.push_back(std::move(l));
            f.push_back(log_density(s, t));
        }
    } catch (const ValidationError& e) {
        r.problems.push_back(e.what());
        r.ok = false;
        return r;
    }
    for (std::size_t k = 0; k < times.size(); ++k) {
        for (double v : f[k]) r.C_observed = std::max(r.C_observed, std::abs(v));
        for (std::size_t e = 0; e < s.topology.edge_count(); ++e) {
            double df = std::abs(f[k][s.topology.head(e)] - f[k][s.topology.tail(e)]);
            r.spatial_lip_observed = std::max(r.spatial_lip_observed, df / std::exp(loglen[k][e]));
        }
        if (k == 0) continue;
        double dt = times[k] - times[k - 1];
        if (dt <= 0.0) continue;
        for (std::size_t e = 0; e < loglen[k].size(); ++e)
            r.L_observed = std::max(r.L_observed, std::abs(loglen[k][e] - loglen[k - 1][e]) / dt);
        for (std::size_t i = 0; i < f[k].size(); ++i)
            r.L_observed = std::max(r.L_observed, std::abs(f[k][i] - f[k - 1][i]) / dt);
    }
    if (r.L_observed > s.L * (1.0 + 1e-9))
        r.problems.push_back("observed time log-Lipschitz constant " + std::to_string(r.L_observed) +
                             " exceeds declared L = " + std::to_string(s.L));
    if (r.C_observed > s.C * (1.0 + 1e-9))
        r.problems.push_back("observed sup |f| " + std::to_string(r.C_observed) + " exceeds declared C = " +
                             std::to_string(s.C));
    r.ok = r.problems.empty();
    return r;
}

inline std::vector<double> uniform_times(double a, double b, std::size_t count) {
    if (count < 2) throw ValidationError("need at least two sample times");
    std::vector<double> t(count);
    for (std::size_t k = 0; k < count; ++k)
        t[k] = a + (b - a) * static_cast<double>(k) / static_cast<double>(count - 1);
    t.back() = b;
    return t;
}

inline RegularityReport validate_regularity(const SpaceSpec& s, std::size_t samples = 64) {
    return validate_regularity(s, uniform_times(s.t_min, s.t_max, samples));
}

/// Default step for time central differences.
inline double default_time_step(const SpaceSpec& s) { return 1e-4 * s.span(); }

/// Central difference of the log-density in time.
inline Vec fdot(const SpaceSpec& s, double t, double delta = 0.0) {
    if (delta <= 0.0) delta = default_time_step(s);
    if (t - delta < s.t_min || t + delta > s.t_max)
        throw ValidationError("fdot: stencil [t - delta, t + delta] leaves the time interval");
    Vec a = log_density(s, t + delta), b = log_density(s, t - delta);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = (a[i] - b[i]) / (2.0 * delta);
    return a;
}

/// -d/dt log m_t at each node by central differences (one-sided at the interval ends).
/// With static node volumes this equals fdot.
inline Vec log_measure_rate(const SpaceSpec& s, double t, double delta = 0.0) {
    if (delta <= 0.0) delta = default_time_step(s);
    double lo = std::max(s.t_min, t - delta), hi = std::min(s.t_max, t + delta);
    Vec a = node_measure(s, hi), b = node_measure(s, lo);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = -(std::log(a[i]) - std::log(b[i])) / (hi - lo);
    return a;
}

// ---------------------------------------------------------------------------
// K-transform: new time t~ with tau(t~) = -log(C - 2 K t~) / (2K),
// d~_{t~} = e^{-K tau} d_tau and m~_{t~} = m_tau.

inline double k_time_map(double K, double C, double t) {
    if (std::abs(K) < 1e-14) return t;
    double arg = C - 2.0 * K * t;
    if (!(arg > 0.0)) throw ValidationError("k-transform: C - 2 K t must be positive");
    return -std::log(arg) / (2.0 * K);
}

inline double k_time_inverse(double K, double C, double tau) {
    if (std::abs(K) < 1e-14) return tau;
    return (C - std::exp(-2.0 * K * tau)) / (2.0 * K);
}

inline SpaceSpec k_transform(const SpaceSpec& s, double K, double C) {
    check_spec(s);
    if (std::abs(K) < 1e-14) return s;
    double a = k_time_inverse(K, C, s.t_min), b = k_time_inverse(K, C, s.t_max);
    if (!(b > 0.0)) throw ValidationError("k-transform: empty transformed interval");
    // Times t~ <= 0 are not admissible; keep the positive part of the window.
    if (a <= 0.0) a = 1e-3 * b;
    SpaceSpec out;
    out.name = s.name + "~K";
    out.topology = s.topology;
    out.t_min = a;
    out.t_max = b;
    auto len = s.edge_length;
    auto f = s.log_density;
    out.edge_length = [len, K, C](double t, std::size_t e) {
        double tau = k_time_map(K, C, t);
        return std::exp(-K * tau) * len(tau, e);
    };
    // The density keeps m~ = m_tau; the factor e^{-K tau} on lengths also scales
    // node volumes, which the shift of f by -K tau undoes.
    out.log_density = [f, K, C](double t, std::size_t i) {
        double tau = k_time_map(K, C, t);
        return f(tau, i) - K * tau;
    };
    double tau_lo = k_time_map(K, C, a), tau_hi = s.t_max;
    double growth = std::max(std::exp(2.0 * K * tau_lo), std::exp(2.0 * K * tau_hi));
    out.L = growth * (s.L + std::abs(K));
    out.C = s.C + std::abs(K) * std::max(std::abs(tau_lo), std::abs(tau_hi));
    out.K = s.K - K;
    out.N = s.N;
    if (s.refine) {
        auto ref = s.refine;
        out.refine = [ref, K, C](std::size_t n) { return k_transform(ref(n), K, C); };
    }
    out.source = s.source;
    out.source["transforms"].push_back({{"K", K}, {"C", C}});
    return out;
}

} // namespace dynflow
