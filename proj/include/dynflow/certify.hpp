#pragma once

// Numerical checks of the transport (II), gradient (III) and Bochner (IV) estimates,
// with (K, N) weights, plus the dynamic convexity check (I), aggregated into a
// certificate or a refinement-stable counterexample.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dynflow/entflow.hpp"
#include "dynflow/operators.hpp"
#include "dynflow/propagate.hpp"
#include "dynflow/scenarios.hpp"
#include "dynflow/transport.hpp"

namespace dynflow {

using json = nlohmann::json;

inline json number_or_inf(double x) {
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    return x;
}

inline double parse_n(const json& j) {
    if (j.is_string()) {
        std::string s = j.get<std::string>();
        if (s == "inf" || s == "infinity") return kInf;
        throw ValidationError("N must be a number or \"inf\"");
    }
    return j.get<double>();
}

// ---------------------------------------------------------------------------
// tolerance

struct Tolerance {
    double machine = 0.0, space = 0.0, time = 0.0;
    double total() const { return machine + space + time; }
    json to_json() const {
        return {{"machine", machine}, {"space", space}, {"time", time}, {"total", total()}};
    }
};

inline constexpr double kTolMachine = 1e2;
inline constexpr double kTolSpace = 10.0;
inline constexpr double kTolTime = 10.0;
inline constexpr double kRefuteFactor = 3.0;
inline constexpr std::size_t kIIIQuadratureNodes = 64;

/// tol = 1e2 eps + 10 scale / n + 10 scale / n_steps, with scale from side_scale.
inline Tolerance tolerance(double scale, std::size_t n, std::size_t n_steps) {
    Tolerance t;
    t.machine = kTolMachine * kEps;
    t.space = kTolSpace * scale / static_cast<double>(std::max<std::size_t>(n, 1));
    t.time = kTolTime * scale / static_cast<double>(std::max<std::size_t>(n_steps, 1));
    return t;
}

// ---------------------------------------------------------------------------
// probes: fields and measures described in the normalized node coordinate, so that
// the same probe can be evaluated on a refined grid

inline double node_coordinate(const SpaceSpec& s, std::size_t i) {
    double span = s.topology.is_cycle() ? static_cast<double>(s.n()) : static_cast<double>(s.n() - 1);
    return static_cast<double>(i) / span;
}

inline double coordinate_offset(const SpaceSpec& s, double x, double c) {
    double d = x - c;
    if (s.topology.is_cycle()) d -= std::round(d);
    return d;
}

/// kind: constant | mode | linear | triangle | random | bump | one_plus_mode
inline Vec eval_field(const SpaceSpec& s, const json& probe) {
    std::string kind = probe.at("kind").get<std::string>();
    std::size_t n = s.n();
    Vec u(n, 0.0);
    bool cyc = s.topology.is_cycle();
    // trigonometric modes compatible with the boundary behaviour of the graph
    auto mode = [cyc](double k, double phase, double x) {
        return cyc ? std::sin(2.0 * M_PI * k * x + phase) : std::cos(M_PI * k * x + phase);
    };
    if (kind == "constant") {
        double c = probe.value("value", 1.0);
        std::fill(u.begin(), u.end(), c);
    } else if (kind == "mode") {
        double k = probe.at("k").get<double>(), ph = probe.value("phase", 0.0);
        for (std::size_t i = 0; i < n; ++i) u[i] = mode(k, ph, node_coordinate(s, i));
    } else if (kind == "linear") {
        // sawtooth on cycles
        for (std::size_t i = 0; i < n; ++i) u[i] = node_coordinate(s, i);
    } else if (kind == "triangle") {
        for (std::size_t i = 0; i < n; ++i) u[i] = std::abs(2.0 * node_coordinate(s, i) - 1.0);
    } else if (kind == "random") {
        Rng rng(probe.at("seed").get<std::uint64_t>());
        int modes = probe.value("modes", 6);
        std::vector<double> amp(static_cast<std::size_t>(modes)), ph(static_cast<std::size_t>(modes));
        for (int j = 0; j < modes; ++j) {
            amp[static_cast<std::size_t>(j)] = rng.normal() / (1.0 + j);
            ph[static_cast<std::size_t>(j)] = rng.uniform(0.0, 2.0 * M_PI);
        }
        for (std::size_t i = 0; i < n; ++i) {
            double x = node_coordinate(s, i);
            for (int j = 0; j < modes; ++j)
                u[i] += amp[static_cast<std::size_t>(j)] * mode(j + 1, ph[static_cast<std::size_t>(j)], x);
        }
    } else if (kind == "bump") {
        double c = probe.at("center").get<double>(), w = probe.at("width").get<double>();
        for (std::size_t i = 0; i < n; ++i) {
            double d = coordinate_offset(s, node_coordinate(s, i), c);
            u[i] = std::exp(-d * d / (2.0 * w * w));
        }
    } else if (kind == "one_plus_mode") {
        double k = probe.at("k").get<double>(), ph = probe.value("phase", 0.0), a = probe.value("amplitude", 0.9);
        for (std::size_t i = 0; i < n; ++i) u[i] = 1.0 + a * mode(k, ph, node_coordinate(s, i));
    } else {
        throw ValidationError("unknown field probe '" + kind + "'");
    }
    return u;
}

/// kind: dirac | bump
inline MeasureVec eval_measure(const SpaceSpec& s, const json& probe, double t) {
    std::string kind = probe.at("kind").get<std::string>();
    MeasureVec mu;
    mu.t = t;
    mu.masses.assign(s.n(), 0.0);
    double c = probe.at("center").get<double>();
    if (kind == "dirac") {
        double span = s.topology.is_cycle() ? static_cast<double>(s.n()) : static_cast<double>(s.n() - 1);
        auto i = static_cast<std::size_t>(std::llround(c * span)) % s.n();
        mu.masses[i] = 1.0;
    } else if (kind == "bump") {
        Vec m = node_measure(s, t);
        Vec b = eval_field(s, probe);
        double tot = 0.0;
        for (std::size_t i = 0; i < s.n(); ++i) tot += (mu.masses[i] = b[i] * m[i]);
        for (double& x : mu.masses) x /= tot;
    } else {
        throw ValidationError("unknown measure probe '" + kind + "'");
    }
    return mu;
}

/// Nonnegative test density normalized to int g dm_t = 1.
inline Vec eval_density(const SpaceSpec& s, const json& probe, double t) {
    Vec g = eval_field(s, probe);
    for (double x : g)
        if (x < -1e-12) throw ValidationError("Bochner check: test density g_t is negative");
    Vec m = node_measure(s, t);
    double tot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = std::max(g[i], 0.0);
        tot += g[i] * m[i];
    }
    if (!(tot > 0.0)) throw ValidationError("Bochner check: test density g_t vanishes");
    for (double& x : g) x /= tot;
    return g;
}

// ---------------------------------------------------------------------------
// single-cell margins

struct CellResult {
    double margin = 0.0;
    double scale = 0.0;
    Tolerance tol;
    json detail = json::object();
};

/// Magnitude of the quantities compared: the larger of the two sides, each side the
/// sum of the absolute values of its terms.
inline double side_scale(double lhs, double rhs) { return std::max(lhs, rhs); }

inline double weight(double K, double x) { return K == 0.0 ? 1.0 : std::exp(K * x); }

inline double trapezoid(const std::vector<double>& t, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t k = 1; k < t.size(); ++k) s += 0.5 * (y[k - 1] + y[k]) * (t[k] - t[k - 1]);
    return s;
}

/// (II_{K,N}): margin = e^{-2Kt} W_t^2(mu, nu) - (2/N) int e^{-2Kr} [S_r(mu_r) - S_r(nu_r)]^2 dr
///                      - e^{-2Ks} W_s^2(mu_s, nu_s), with mu_r, nu_r the dual flows from t.
inline CellResult verify_II(const SpaceSpec& spec, double K, double N, const MeasureVec& mu, const MeasureVec& nu,
                            double s, double t, const SchemeConfig& cfg) {
    if (!(s < t)) throw ValidationError("verify_II: need s < t");
    require_probability(mu, "verify_II");
    require_probability(nu, "verify_II");
    Propagator P(spec, s, t, cfg);
    Trajectory a = P.dual_trajectory(mu.masses), b = P.dual_trajectory(nu.masses);
    MeasureVec ms{a.values.front(), s}, ns{b.values.front(), s};
    double W2t = wasserstein(spec, mu, nu, t).W2;
    double W2s = wasserstein(spec, ms, ns, s).W2;
    double integral = 0.0;
    if (!std::isinf(N)) {
        std::vector<double> y(P.knots().size());
        for (std::size_t k = 0; k < y.size(); ++k) {
            const Vec& m = P.knot_measure(k);
            double d = entropy_of_masses(a.values[k], m) - entropy_of_masses(b.values[k], m);
            y[k] = weight(-2.0 * K, P.knots()[k]) * d * d;
        }
        integral = trapezoid(P.knots(), y);
    }
    double lhs = weight(-2.0 * K, s) * W2s;
    double first = weight(-2.0 * K, t) * W2t;
    double nterm = std::isinf(N) ? 0.0 : 2.0 / N * integral;
    CellResult r;
    r.margin = first - nterm - lhs;
    r.scale = side_scale(std::abs(lhs), std::abs(first) + std::abs(nterm));
    r.detail = {{"W2_t", W2t}, {"W2_s", W2s}, {"entropy_term", nterm}};
    return r;
}

/// (III_{K,N}) divided by e^{2Ks}, pointwise:
///   P(Gamma_s u) - e^{2K(t-s)} Gamma_t(P u) - (2/N) int e^{2K(r-s)} (P_{t,r} Delta_r P_{r,s} u)^2 dr
/// The reported margin is the minimum over nodes, the scale the maximum of the summed |terms|.
inline CellResult verify_III(const SpaceSpec& spec, double K, double N, const Vec& u, double s, double t,
                             const SchemeConfig& cfg, Vec* field = nullptr) {
    if (!(s < t)) throw ValidationError("verify_III: need s < t");
    Propagator P(spec, s, t, cfg);
    std::size_t n = u.size();
    Vec pg = P.forward(gamma(assemble_generator(spec, s), u));
    Vec integral(n, 0.0);
    Vec pu;
    if (std::isinf(N)) {
        pu = P.forward(u);
    } else {
        // trapezoid over a uniform subset of the knots; P_{t,r} is applied per node
        const auto& knots = P.knots();
        std::size_t q = std::min(P.steps(), kIIIQuadratureNodes);
        std::vector<std::size_t> idx(q + 1);
        for (std::size_t j = 0; j <= q; ++j) idx[j] = j * P.steps() / q;
        Vec cur = u, prev;
        double prev_t = 0.0;
        for (std::size_t j = 0; j <= q; ++j) {
            if (j > 0) cur = P.forward(std::move(cur), idx[j - 1], idx[j]);
            double r = knots[idx[j]];
            Vec v = laplacian_apply(assemble_generator(spec, r), cur);
            v = P.forward(std::move(v), idx[j], P.steps());
            double c = weight(2.0 * K, r - s);
            for (double& x : v) x = c * x * x;
            if (j > 0)
                for (std::size_t i = 0; i < n; ++i) integral[i] += 0.5 * (r - prev_t) * (prev[i] + v[i]);
            prev = std::move(v);
            prev_t = r;
        }
        pu = std::move(cur);
    }
    Vec gt = gamma(assemble_generator(spec, t), pu);
    double wt = weight(2.0 * K, t - s);
    // the node reported is the one closest to violating its own tolerance
    CellResult r;
    std::size_t arg = 0;
    double best = kInf, lowest = kInf;
    if (field) field->assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double nterm = std::isinf(N) ? 0.0 : 2.0 / N * integral[i];
        double m = pg[i] - wt * gt[i] - nterm;
        double sc = side_scale(std::abs(wt * gt[i]), std::abs(pg[i]) + std::abs(nterm));
        if (field) (*field)[i] = m;
        lowest = std::min(lowest, m);
        double ratio = m / tolerance(sc, n, cfg.n_steps).total();
        if (ratio < best) {
            best = ratio;
            arg = i;
            r.margin = m;
            r.scale = sc;
        }
    }
    r.detail = {{"node", arg},
                {"min_margin", lowest},
                {"P_gamma_s", pg[arg]},
                {"gamma_t", gt[arg]},
                {"entropy_term", std::isinf(N) ? 0.0 : 2.0 / N * integral[arg]}};
    return r;
}

/// (IV_{K,N}) at knot time r of [s, t]:
///   Gamma_2(u_r)(g_r) - 1/2 int Gammadot_r(u_r) g_r dm - K int Gamma_r(u_r) g_r dm - (1/N)(int Delta u_r g_r dm)^2
/// with u_r = P_{r,s} u_s, g_r = P*_{t,r} g_t and g_t normalized to unit integral.
inline CellResult verify_IV(const SpaceSpec& spec, double K, double N, const Vec& u_s, const Vec& g_t, double s,
                            double t, double r_frac, const SchemeConfig& cfg) {
    if (!(s < t)) throw ValidationError("verify_IV: need s < t");
    for (double x : g_t)
        if (x < -1e-12) throw ValidationError("verify_IV: negative test density g_t");
    Propagator P(spec, s, t, cfg);
    auto k = static_cast<std::size_t>(std::llround(r_frac * static_cast<double>(P.steps())));
    double delta = default_time_step(spec);
    const auto& knots = P.knots();
    if (k == 0 || k >= P.steps() || knots[k] - s < 2 * delta || t - knots[k] < 2 * delta)
        throw ValidationError("verify_IV: r must lie in the interior collar of (s, t)");
    double r = knots[k];
    Vec ur = P.forward(u_s, 0, k);
    Vec gr = P.adjoint_trajectory(g_t).values[k];
    Generator gen = assemble_generator(spec, r);
    double g2 = gamma2_dist(gen, ur, gr);
    Vec gd = gamma_dot(spec, ur, r, delta);
    Vec gam = gamma(gen, ur);
    Vec lu = laplacian_apply(gen, ur);
    double dot = 0.0, gg = 0.0, lg = 0.0, lip = 0.0;
    for (std::size_t i = 0; i < ur.size(); ++i) {
        dot += gd[i] * gr[i] * gen.m[i];
        gg += gam[i] * gr[i] * gen.m[i];
        lg += lu[i] * gr[i] * gen.m[i];
        lip = std::max(lip, std::sqrt(gam[i]));
    }
    double nterm = std::isinf(N) ? 0.0 : lg * lg / N;
    CellResult res;
    res.margin = g2 - 0.5 * dot - K * gg - nterm;
    res.scale = side_scale(std::abs(g2), 0.5 * std::abs(dot) + std::abs(K * gg) + nterm);
    res.detail = {{"r", r}, {"gamma2", g2}, {"gamma_dot_term", 0.5 * dot}, {"entropy_term", nterm},
                  {"lip_u_r", lip}};
    return res;
}

/// (I_{K,N}) at time t; margin and scale as in dynamic_convexity_check.
inline CellResult verify_I(const SpaceSpec& spec, double K, double N, const MeasureVec& mu0, const MeasureVec& mu1,
                           double t) {
    ConvexityReport c = dynamic_convexity_check(spec, mu0, mu1, t, N, 33, 0.0, K);
    CellResult r;
    r.margin = c.margin;
    r.scale = side_scale(std::abs(c.slope0) + std::abs(c.slope1),
                         0.5 * std::abs(c.dW2dt) + std::abs(K) * c.W2 + (std::isinf(N) ? 0.0 : (c.S0 - c.S1) * (c.S0 - c.S1) / N));
    r.detail = {{"slope0", c.slope0}, {"slope1", c.slope1}, {"dW2dt", c.dW2dt}, {"W2", c.W2}};
    return r;
}

// ---------------------------------------------------------------------------
// plans

struct CertBudget {
    std::size_t cells = 48;  // per condition; 0 evaluates nothing
    std::size_t n = 0;       // 0 keeps the node count of the spec
    std::size_t n_steps = 2048;
    double max_seconds = 900.0;
    std::uint64_t seed = 1;
    std::size_t threads = 0;  // 0: DYNFLOW_THREADS or hardware concurrency
    Scheme scheme = Scheme::ImplicitEuler;

    json to_json() const {
        return {{"cells", cells}, {"n", n}, {"n_steps", n_steps}, {"max_seconds", max_seconds},
                {"seed", seed}, {"scheme", scheme_name(scheme)}};
    }
};

struct Cell {
    std::string condition;  // I, II, III, IV
    json probe;             // inputs, in normalized coordinates
    double s = 0.0, t = 0.0;
};

inline std::vector<std::pair<double, double>> time_pairs(const SpaceSpec& spec) {
    double a = spec.t_min, L = spec.span();
    std::vector<std::pair<double, double>> fr = {{0.0, 1.0}, {0.0, 0.25}, {0.0, 0.1}, {0.5, 1.0}, {0.25, 0.5}, {0.9, 1.0}};
    std::vector<std::pair<double, double>> out;
    for (auto [x, y] : fr) out.emplace_back(a + x * L, a + y * L);
    return out;
}

inline double clamp_center(const SpaceSpec& spec, double c) {
    return spec.topology.is_cycle() ? c - std::floor(c) : std::clamp(c, 0.1, 0.9);
}

/// Deterministic probes first, then seeded random ones; the list is cut at `cells`.
inline std::vector<Cell> make_plan(const SpaceSpec& spec, const std::string& cond, const CertBudget& b) {
    std::vector<Cell> out;
    if (b.cells == 0) return out;
    auto pairs = time_pairs(spec);
    bool cyc = spec.topology.is_cycle();
    std::uint64_t salt = cond == "I" ? 1 : cond == "II" ? 2 : cond == "III" ? 3 : 4;
    Rng rng(mix_seed(b.seed, salt));
    auto push = [&](json probe, double s, double t) {
        if (out.size() < b.cells) out.push_back({cond, std::move(probe), s, t});
    };
    auto measure = [&](bool dirac, double c, double w) {
        c = clamp_center(spec, c);
        if (dirac) return json{{"kind", "dirac"}, {"center", c}};
        return json{{"kind", "bump"}, {"center", c}, {"width", w}};
    };
    double hi = spec.n() > 0 ? std::max(1.0, std::floor(static_cast<double>(spec.n()) / 8.0)) : 1.0;

    if (cond == "II" || cond == "I") {
        std::vector<std::pair<json, json>> fixed = {
            {measure(false, 0.3, 0.05), measure(false, 0.55, 0.05)},
            {measure(true, 0.3, 0), measure(true, 0.35, 0)},
            {measure(false, 0.4, 0.04), measure(false, 0.6, 0.08)},
            {measure(false, 0.2, 0.1), measure(false, 0.8, 0.1)},
        };
        if (cond == "I") {
            // small t first: dimension defects of drifting densities are strongest there
            std::vector<double> ts = {spec.t_min + 0.05 * spec.span(), spec.t_min + 0.5 * spec.span(), spec.t_max};
            for (double t : ts)
                for (auto& [m0, m1] : fixed)
                    if (m0["kind"] == "bump" && m1["kind"] == "bump") push({{"mu", m0}, {"nu", m1}}, t, t);
        } else {
            for (auto [s, t] : pairs)
                for (auto& [m0, m1] : fixed) push({{"mu", m0}, {"nu", m1}}, s, t);
        }
        while (out.size() < b.cells) {
            double c0 = rng.uniform(), c1 = c0 + rng.uniform(0.05, 0.4), w0 = rng.uniform(0.03, 0.1),
                   w1 = rng.uniform(0.03, 0.1);
            std::size_t p = rng.index(pairs.size());
            json probe = {{"mu", measure(false, c0, w0)}, {"nu", measure(false, c1, w1)}};
            if (cond == "I") {
                double t = spec.t_min + rng.uniform(0.05, 1.0) * spec.span();
                push(probe, t, t);
            } else {
                push(probe, pairs[p].first, pairs[p].second);
            }
        }
    } else if (cond == "III") {
        std::vector<json> fixed = {{{"kind", "triangle"}}, {{"kind", "linear"}}, {{"kind", "mode"}, {"k", 1}},
                                   {{"kind", "mode"}, {"k", 2}, {"phase", 0.3}}, {{"kind", "constant"}}};
        if (!cyc) fixed.push_back({{"kind", "mode"}, {"k", 1}, {"phase", M_PI / 2}});
        for (auto [s, t] : pairs)
            for (auto& f : fixed) push({{"u", f}}, s, t);
        while (out.size() < b.cells) {
            std::size_t p = rng.index(pairs.size());
            json u;
            if (rng.uniform() < 0.5)
                u = {{"kind", "mode"}, {"k", 1 + static_cast<int>(rng.index(static_cast<std::size_t>(hi)))},
                     {"phase", rng.uniform(0.0, 2.0 * M_PI)}};
            else
                u = {{"kind", "random"}, {"seed", rng.next()}, {"modes", static_cast<int>(std::min(6.0, hi))}};
            push({{"u", u}}, pairs[p].first, pairs[p].second);
        }
    } else if (cond == "IV") {
        std::vector<json> us = {{{"kind", "mode"}, {"k", 1}}, {{"kind", "linear"}}};
        std::vector<json> gs;
        for (double c : {0.25, 0.5}) gs.push_back({{"kind", "bump"}, {"center", clamp_center(spec, c)},
                                                              {"width", 0.03}});
        gs.push_back({{"kind", "constant"}});
        for (auto [s, t] : pairs)
            for (auto& u : us)
                for (auto& g : gs) push({{"u", u}, {"g", g}, {"r", 0.5}}, s, t);
        while (out.size() < b.cells) {
            std::size_t p = rng.index(pairs.size());
            json u = {{"kind", "random"}, {"seed", rng.next()}, {"modes", static_cast<int>(std::min(6.0, hi))}};
            json g = {{"kind", "bump"}, {"center", clamp_center(spec, rng.uniform())}, {"width", rng.uniform(0.02, 0.2)}};
            push({{"u", u}, {"g", g}, {"r", rng.uniform(0.2, 0.8)}}, pairs[p].first, pairs[p].second);
        }
    } else {
        throw ValidationError("unknown condition '" + cond + "'");
    }
    return out;
}

inline CellResult evaluate_cell(const SpaceSpec& spec, double K, double N, const Cell& c, std::size_t n_steps,
                                Scheme scheme) {
    SchemeConfig cfg{scheme, n_steps, AdjointMode::DiscreteAdjoint};
    CellResult r;
    if (c.condition == "II") {
        r = verify_II(spec, K, N, eval_measure(spec, c.probe.at("mu"), c.t), eval_measure(spec, c.probe.at("nu"), c.t),
                      c.s, c.t, cfg);
    } else if (c.condition == "III") {
        r = verify_III(spec, K, N, eval_field(spec, c.probe.at("u")), c.s, c.t, cfg);
    } else if (c.condition == "IV") {
        r = verify_IV(spec, K, N, eval_field(spec, c.probe.at("u")), eval_density(spec, c.probe.at("g"), c.t), c.s, c.t,
                      c.probe.at("r").get<double>(), cfg);
    } else if (c.condition == "I") {
        r = verify_I(spec, K, N, eval_measure(spec, c.probe.at("mu"), c.t), eval_measure(spec, c.probe.at("nu"), c.t),
                     c.t);
    } else {
        throw ValidationError("unknown condition '" + c.condition + "'");
    }
    std::size_t steps = c.condition == "I" ? static_cast<std::size_t>(std::llround(1e3)) : n_steps;
    r.tol = tolerance(r.scale, spec.n(), steps);
    return r;
}

// ---------------------------------------------------------------------------
// parallel execution

inline std::size_t thread_count(std::size_t requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("DYNFLOW_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i < count on a bounded pool.  Results are written by index, so the
/// outcome does not depend on scheduling.  The first exception is rethrown.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::min(threads, count);
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!err) err = std::current_exception();
                    next = count;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// report

struct Witness {
    std::size_t cell = 0;
    Cell input;
    CellResult coarse;
    std::size_t refined_n = 0, refined_steps = 0;
    std::optional<CellResult> refined;
    bool stable = false;
};

struct ConditionEntry {
    std::string condition;
    double K = 0.0, N = kInf;
    std::vector<Cell> cells;
    std::vector<std::optional<CellResult>> results;  // empty when skipped
    double min_margin = kInf;
    double min_ratio = kInf;  // margin / tol
    std::optional<Witness> witness;
    Verdict verdict = Verdict::Inconclusive;
    bool ok = false;  // all evaluated margins >= -tol
    std::size_t evaluated = 0;
};

struct CertReport {
    std::string scenario;
    json space;
    double K = 0.0, N = kInf;
    CertBudget budget;
    std::size_t n = 0;
    std::vector<ConditionEntry> conditions;
    Verdict verdict = Verdict::Inconclusive;
    bool exhausted = false;

    const ConditionEntry& get(const std::string& c) const {
        for (const auto& e : conditions)
            if (e.condition == c) return e;
        throw ValidationError("report has no condition " + c);
    }
    json to_json() const;
};

inline json cell_json(const Cell& c, const std::optional<CellResult>& r) {
    json j = {{"condition", c.condition}, {"probe", c.probe}, {"s", c.s}, {"t", c.t}};
    if (r) {
        j["margin"] = r->margin;
        j["scale"] = r->scale;
        j["tol"] = r->tol.to_json();
        j["detail"] = r->detail;
    } else {
        j["skipped"] = true;
    }
    return j;
}

inline json CertReport::to_json() const {
    json j;
    j["scenario"] = scenario;
    j["space"] = space;
    j["K"] = K;
    j["N"] = number_or_inf(N);
    j["n"] = n;
    j["budget"] = budget.to_json();
    j["tolerance_policy"] = {{"machine", kTolMachine}, {"space", kTolSpace}, {"time", kTolTime},
                             {"refute_factor", kRefuteFactor},
                             {"formula", "tol = machine*eps + space*scale/n + time*scale/n_steps"}};
    j["verdict"] = verdict_name(verdict);
    j["exhausted"] = exhausted;
    j["conditions"] = json::array();
    for (const auto& e : conditions) {
        json c = {{"condition", e.condition}, {"K", e.K}, {"N", number_or_inf(e.N)},
                  {"verdict", verdict_name(e.verdict)}, {"ok", e.ok}, {"evaluated", e.evaluated},
                  {"min_margin", number_or_inf(e.min_margin)}, {"min_ratio", number_or_inf(e.min_ratio)}};
        if (e.witness) {
            const Witness& w = *e.witness;
            json wj = {{"cell", w.cell}, {"seed", budget.seed}, {"input", cell_json(w.input, w.coarse)},
                       {"refined_n", w.refined_n}, {"refined_steps", w.refined_steps}, {"stable", w.stable}};
            if (w.refined) wj["refined"] = {{"margin", w.refined->margin}, {"tol", w.refined->tol.to_json()}};
            c["witness"] = wj;
        }
        c["cells"] = json::array();
        for (std::size_t i = 0; i < e.cells.size(); ++i) c["cells"].push_back(cell_json(e.cells[i], e.results[i]));
        j["conditions"].push_back(c);
    }
    return j;
}

inline std::size_t refined_size(const SpaceSpec& s) { return s.topology.is_cycle() ? 2 * s.n() : 2 * s.n() - 1; }

/// Re-evaluates the most negative cells (relative to tol) on a grid refined in space and
/// time; the first one that stays below -3 tol becomes the witness.
inline void confirm_witness(const SpaceSpec& spec, double K, double N, const CertBudget& b, ConditionEntry& e) {
    std::vector<std::size_t> cand;
    for (std::size_t i = 0; i < e.results.size(); ++i)
        if (e.results[i] && e.results[i]->margin < -kRefuteFactor * e.results[i]->tol.total()) cand.push_back(i);
    std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t c) {
        return e.results[a]->margin / e.results[a]->tol.total() < e.results[c]->margin / e.results[c]->tol.total();
    });
    if (cand.size() > 3) cand.resize(3);
    std::optional<SpaceSpec> fine;
    if (spec.refine) fine = spec.refine(refined_size(spec));
    for (std::size_t i : cand) {
        Witness w;
        w.cell = i;
        w.input = e.cells[i];
        w.coarse = *e.results[i];
        w.refined_steps = 2 * b.n_steps;
        if (fine) {
            w.refined_n = fine->n();
            w.refined = evaluate_cell(*fine, K, N, e.cells[i], w.refined_steps, b.scheme);
            w.stable = w.refined->margin < -kRefuteFactor * w.refined->tol.total();
        }
        bool first = !e.witness;
        if (first || w.stable) e.witness = w;
        if (w.stable) return;
    }
}

/// Runs the condition checks (I)-(IV) with parameters (K, N) and aggregates a verdict.
inline CertReport certify(const SpaceSpec& spec_in, double K, double N, const CertBudget& budget,
                          const std::vector<std::string>& conditions = {"I", "II", "III", "IV"}) {
    check_spec(spec_in);
    if (!(N > 0.0)) throw ValidationError("certify: N must be positive");
    SpaceSpec spec = spec_in;
    if (budget.n > 0 && budget.n != spec.n()) {
        if (!spec.refine) throw ValidationError("certify: space cannot be rebuilt at n = " + std::to_string(budget.n));
        spec = spec.refine(budget.n);
    }
    CertReport rep;
    rep.scenario = spec.name;
    rep.space = spec.source;
    rep.K = K;
    rep.N = N;
    rep.budget = budget;
    rep.n = spec.n();

    struct Job {
        std::size_t cond, cell;
    };
    std::vector<Job> jobs;
    for (const std::string& c : conditions) {
        ConditionEntry e;
        e.condition = c;
        e.K = K;
        e.N = N;
        e.cells = make_plan(spec, c, budget);
        e.results.resize(e.cells.size());
        for (std::size_t i = 0; i < e.cells.size(); ++i) jobs.push_back({rep.conditions.size(), i});
        rep.conditions.push_back(std::move(e));
    }

    auto start = std::chrono::steady_clock::now();
    std::atomic<bool> exhausted{false};
    parallel_for(jobs.size(), thread_count(budget.threads), [&](std::size_t j) {
        if (budget.max_seconds > 0) {
            double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (el > budget.max_seconds) {
                exhausted = true;
                return;
            }
        }
        ConditionEntry& e = rep.conditions[jobs[j].cond];
        e.results[jobs[j].cell] = evaluate_cell(spec, K, N, e.cells[jobs[j].cell], budget.n_steps, budget.scheme);
    });
    rep.exhausted = exhausted;

    // single-threaded, ordered assembly
    bool any_refuted = false, all_certified = !rep.conditions.empty();
    for (ConditionEntry& e : rep.conditions) {
        bool all_ok = true;
        for (const auto& r : e.results) {
            if (!r) continue;
            ++e.evaluated;
            e.min_margin = std::min(e.min_margin, r->margin);
            e.min_ratio = std::min(e.min_ratio, r->margin / r->tol.total());
            if (r->margin < -r->tol.total()) all_ok = false;
        }
        e.ok = all_ok && e.evaluated > 0;
        confirm_witness(spec, K, N, budget, e);
        if (e.witness && e.witness->stable)
            e.verdict = Verdict::Refuted;
        else if (e.ok && e.evaluated == e.cells.size() && !rep.exhausted)
            e.verdict = Verdict::Certified;
        else
            e.verdict = Verdict::Inconclusive;
        any_refuted = any_refuted || e.verdict == Verdict::Refuted;
        all_certified = all_certified && e.verdict == Verdict::Certified;
    }
    rep.verdict = any_refuted ? Verdict::Refuted : all_certified ? Verdict::Certified : Verdict::Inconclusive;
    return rep;
}

inline int exit_code(Verdict v) {
    switch (v) {
    case Verdict::Certified: return 0;
    case Verdict::Refuted: return 1;
    case Verdict::Inconclusive: return 2;
    }
    return 3;
}

} // namespace dynflow
