#pragma once

// Built-in example spaces.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dynflow/expr.hpp"
#include "dynflow/mmspace.hpp"

namespace dynflow {

namespace detail {

/// Sampled sup of |d/dt f| and |f| over the node grid, with a small margin so the
/// declared constants dominate the observed ones.
inline std::pair<double, double> sampled_bounds(const std::function<double(double, double)>& V, double t0, double t1,
                                                const std::vector<double>& xs) {
    const int steps = 400;
    double lip = 0.0, sup = 0.0;
    for (int k = 0; k <= steps; ++k) {
        double t = t0 + (t1 - t0) * k / steps;
        for (double x : xs) {
            sup = std::max(sup, std::abs(V(t, x)));
            if (k > 0) {
                double tp = t0 + (t1 - t0) * (k - 1) / steps;
                lip = std::max(lip, std::abs(V(t, x) - V(tp, x)) / (t - tp));
            }
        }
    }
    return {lip * 1.05 + 1e-12, sup * 1.05 + 1e-12};
}

inline std::vector<double> grid(double a, double b, std::size_t n) {
    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i) xs[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    return xs;
}

} // namespace detail

inline SpaceSpec static_interval(std::size_t n, const std::string& V = "0", double length = 2.0 * M_PI,
                                 double T = 1.0) {
    if (n < 2) throw ValidationError("static_interval: need n >= 2");
    if (!(length > 0.0) || !(T > 0.0)) throw ValidationError("static_interval: length and T must be positive");
    Expr v = Expr::compile(V, {"x"});
    double h = length / static_cast<double>(n - 1);
    auto xs = detail::grid(0.0, length, n);
    SpaceSpec s;
    s.name = "static_interval";
    s.topology = Topology::path(n);
    s.t_min = 0.1 * T;
    s.t_max = T;
    s.edge_length = [h](double, std::size_t) { return h; };
    s.log_density = [v, xs](double, std::size_t i) { return v({xs[i]}); };
    s.L = 0.0;
    double sup = 0.0;
    for (double x : xs) sup = std::max(sup, std::abs(v({x})));
    s.C = sup * 1.05 + 1e-12;
    s.source = {{"scenario", "static_interval"}, {"n", n}, {"params", {{"V", V}, {"length", length}, {"T", T}}}};
    s.refine = [V, length, T](std::size_t m) { return static_interval(m, V, length, T); };
    return s;
}

/// l_t = e^{c t} l_0 on a cycle of circumference `circumference` at t = 0, f = 0.
inline SpaceSpec scaling_circle(std::size_t n, double c, double T = 1.0, double circumference = 2.0 * M_PI) {
    if (n < 3) throw ValidationError("scaling_circle: need n >= 3");
    if (!(T > 0.0) || !(circumference > 0.0)) throw ValidationError("scaling_circle: T and circumference must be positive");
    double l0 = circumference / static_cast<double>(n);
    SpaceSpec s;
    s.name = "scaling_circle";
    s.topology = Topology::cycle(n);
    s.t_min = 0.1 * T;
    s.t_max = T;
    s.edge_length = [l0, c](double t, std::size_t) { return l0 * std::exp(c * t); };
    s.log_density = [](double, std::size_t) { return 0.0; };
    s.L = std::abs(c);
    s.C = 0.0;
    s.source = {{"scenario", "scaling_circle"},
                {"n", n},
                {"params", {{"c", c}, {"T", T}, {"circumference", circumference}}}};
    s.refine = [c, T, circumference](std::size_t m) { return scaling_circle(m, c, T, circumference); };
    return s;
}

/// Euclidean window [-R, R] with m_t = e^{-V_t}, V_t(x) = (alpha_t x)^2 + beta_t x + gamma_t.
inline SpaceSpec wandering_gaussian(std::size_t n, double T = 2.0, const std::string& alpha = "sin(t)",
                                    const std::string& beta = "cos(t)", const std::string& gamma = "0",
                                    double R = 2.0) {
    if (n < 2) throw ValidationError("wandering_gaussian: need n >= 2");
    if (!(R > 0.0) || !std::isfinite(R)) throw ValidationError("wandering_gaussian: invalid window");
    if (!(T > 0.0)) throw ValidationError("wandering_gaussian: T must be positive");
    Expr a = Expr::compile(alpha, {"t"}), b = Expr::compile(beta, {"t"}), g = Expr::compile(gamma, {"t"});
    auto V = [a, b, g](double t, double x) {
        double al = a({t});
        return al * al * x * x + b({t}) * x + g({t});
    };
    auto xs = detail::grid(-R, R, n);
    double h = 2.0 * R / static_cast<double>(n - 1);
    SpaceSpec s;
    s.name = "wandering_gaussian";
    s.topology = Topology::path(n);
    s.t_min = 0.1 * T;
    s.t_max = T;
    s.edge_length = [h](double, std::size_t) { return h; };
    s.log_density = [V, xs](double t, std::size_t i) { return V(t, xs[i]); };
    auto [lip, sup] = detail::sampled_bounds(V, s.t_min, s.t_max, xs);
    s.L = lip;
    s.C = sup;
    s.source = {{"scenario", "wandering_gaussian"},
                {"n", n},
                {"params", {{"T", T}, {"alpha", alpha}, {"beta", beta}, {"gamma", gamma}, {"R", R}}}};
    s.refine = [T, alpha, beta, gamma, R](std::size_t m) { return wandering_gaussian(m, T, alpha, beta, gamma, R); };
    return s;
}

/// Interval [-length/2, length/2]; edges right of 0 have l_t = l_0 / sqrt(1 + t), so
/// Gamma_t(u) = (1 + t 1_{x>0}) |u'|^2.  f_t = log(vol_t / vol_0) keeps m_t = vol_0.
inline SpaceSpec piecewise_diffusivity(std::size_t n, double T = 1.0, double length = 2.0 * M_PI) {
    if (n < 4) throw ValidationError("piecewise_diffusivity: need n >= 4");
    if (!(T > 0.0) || !(length > 0.0)) throw ValidationError("piecewise_diffusivity: T and length must be positive");
    double l0 = length / static_cast<double>(n - 1);
    std::size_t ne = n - 1;
    // Edge midpoints x_e = -length/2 + (e + 1/2) l0; the right half is x_e > 0.
    // For odd n node (n-1)/2 sits at x = 0.
    auto right = [n](std::size_t e) { return 2 * e + 1 > n - 1; };
    auto len = [l0, right](double t, std::size_t e) { return right(e) ? l0 / std::sqrt(1.0 + t) : l0; };
    auto vol = [len, ne](double t, std::size_t i) {
        double v = 0.0;
        if (i > 0) v += 0.5 * len(t, i - 1);
        if (i < ne) v += 0.5 * len(t, i);
        return v;
    };
    SpaceSpec s;
    s.name = "piecewise_diffusivity";
    s.topology = Topology::path(n);
    s.t_min = 0.1 * T;
    s.t_max = T;
    s.edge_length = len;
    s.log_density = [vol](double t, std::size_t i) { return std::log(vol(t, i) / vol(0.0, i)); };
    s.L = 0.5 / (1.0 + s.t_min);
    s.C = 0.5 * std::log(1.0 + T);
    s.source = {{"scenario", "piecewise_diffusivity"}, {"n", n}, {"params", {{"T", T}, {"length", length}}}};
    s.refine = [T, length](std::size_t m) { return piecewise_diffusivity(m, T, length); };
    return s;
}

// ---------------------------------------------------------------------------

enum class Verdict { Certified, Refuted, Inconclusive };

inline std::string verdict_name(Verdict v) {
    switch (v) {
    case Verdict::Certified: return "certified-at-tolerance";
    case Verdict::Refuted: return "refuted-with-witness";
    case Verdict::Inconclusive: return "inconclusive";
    }
    return "?";
}

struct ExpectedVerdict {
    double K = 0.0;
    double N = kInf;
    Verdict verdict = Verdict::Certified;
    std::string provenance;  // "paper" or "derived"
};

struct ScenarioCatalogEntry {
    std::string name;
    std::string description;
    nlohmann::json params;
    std::function<SpaceSpec(std::size_t n)> build;
    std::size_t default_n = 512;
    std::vector<ExpectedVerdict> expected;
};

inline std::vector<ScenarioCatalogEntry> scenario_catalog() {
    std::vector<ScenarioCatalogEntry> c;
    c.push_back({"static_interval", "flat interval, V = 0", {{"V", "0"}},
                 [](std::size_t n) { return static_interval(n); }, 513,
                 {{0.0, kInf, Verdict::Certified, "derived"}}});
    c.push_back({"wandering_gaussian", "window [-2, 2], V_t = (x sin t)^2 + x cos t",
                 {{"alpha", "sin(t)"}, {"beta", "cos(t)"}, {"gamma", "0"}},
                 [](std::size_t n) { return wandering_gaussian(n); }, 513,
                 {{0.0, kInf, Verdict::Certified, "paper"},
                  {0.0, 1.0, Verdict::Refuted, "paper"},
                  {0.0, 2.0, Verdict::Refuted, "paper"}}});
    c.push_back({"expanding_circle", "circle, l_t = e^{t/2} l_0", {{"c", 0.5}},
                 [](std::size_t n) { return scaling_circle(n, 0.5); }, 512,
                 {{0.0, kInf, Verdict::Certified, "derived"}}});
    c.push_back({"shrinking_circle", "circle, l_t = e^{-t/2} l_0", {{"c", -0.5}},
                 [](std::size_t n) { return scaling_circle(n, -0.5); }, 512,
                 {{0.0, kInf, Verdict::Refuted, "derived"}}});
    c.push_back({"static_circle", "flat circle", {{"c", 0.0}},
                 [](std::size_t n) { return scaling_circle(n, 0.0); }, 512,
                 {{0.0, kInf, Verdict::Certified, "derived"}, {0.0, 1.0, Verdict::Certified, "derived"}}});
    c.push_back({"piecewise_diffusivity", "Gamma_t(u) = (1 + t 1_{x>0}) |u'|^2", {},
                 [](std::size_t n) { return piecewise_diffusivity(n); }, 513, {}});
    return c;
}

inline std::optional<ScenarioCatalogEntry> find_scenario(const std::string& name) {
    for (auto& e : scenario_catalog())
        if (e.name == name) return e;
    return std::nullopt;
}

} // namespace dynflow
