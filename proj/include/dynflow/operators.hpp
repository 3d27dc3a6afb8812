#pragma once

// Weighted graph Laplacian, Dirichlet form, carre du champ and the distributional
// Gamma_2 at a fixed time.  The conductance of edge xy is e^{-(f_x+f_y)/2} / l_xy,
// so that Delta is symmetric in L^2(m_t) with m_t = e^{-f_t} vol_t.

#include <Eigen/Sparse>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "dynflow/mmspace.hpp"

namespace dynflow {

struct Generator {
    double t = 0.0;
    Topology topology;
    Vec w;  // conductance per edge
    Vec m;  // node measure

    std::size_t n() const { return topology.n; }
};

inline Generator assemble_generator(const SpaceSpec& s, double t) {
    check_time(s, t);
    Generator g;
    g.t = t;
    g.topology = s.topology;
    Vec len = edge_lengths(s, t);
    Vec f = log_density(s, t);
    g.w.resize(len.size());
    for (std::size_t e = 0; e < len.size(); ++e)
        g.w[e] = std::exp(-0.5 * (f[s.topology.head(e)] + f[s.topology.tail(e)])) / len[e];
    g.m = node_volumes(s.topology, len);
    for (std::size_t i = 0; i < g.m.size(); ++i) g.m[i] *= std::exp(-f[i]);
    return g;
}

inline void check_size(const Generator& g, const Vec& u, const char* what) {
    if (u.size() != g.n())
        throw ValidationError(std::string(what) + ": field has " + std::to_string(u.size()) + " entries, space has " +
                              std::to_string(g.n()));
}

/// A u = sum_y w_xy (u_y - u_x), the symmetric (unweighted-by-m) part of Delta.
inline Vec stiffness_apply(const Generator& g, const Vec& u) {
    check_size(g, u, "laplacian");
    Vec out(g.n(), 0.0);
    for (std::size_t e = 0; e < g.w.size(); ++e) {
        std::size_t a = g.topology.head(e), b = g.topology.tail(e);
        double flux = g.w[e] * (u[b] - u[a]);
        out[a] += flux;
        out[b] -= flux;
    }
    return out;
}

inline Vec laplacian_apply(const Generator& g, const Vec& u) {
    Vec out = stiffness_apply(g, u);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= g.m[i];
    return out;
}

inline double dirichlet_energy(const Generator& g, const Vec& u, const Vec& v) {
    check_size(g, u, "energy");
    check_size(g, v, "energy");
    double s = 0.0;
    for (std::size_t e = 0; e < g.w.size(); ++e) {
        std::size_t a = g.topology.head(e), b = g.topology.tail(e);
        s += g.w[e] * (u[b] - u[a]) * (v[b] - v[a]);
    }
    return s;
}

inline double dirichlet_energy(const Generator& g, const Vec& u) { return dirichlet_energy(g, u, u); }

/// Gamma(u, v)(x) = 1/(2 m_x) sum_y w_xy (u_y - u_x)(v_y - v_x)
inline Vec gamma(const Generator& g, const Vec& u, const Vec& v) {
    check_size(g, u, "gamma");
    check_size(g, v, "gamma");
    Vec out(g.n(), 0.0);
    for (std::size_t e = 0; e < g.w.size(); ++e) {
        std::size_t a = g.topology.head(e), b = g.topology.tail(e);
        double c = 0.5 * g.w[e] * (u[b] - u[a]) * (v[b] - v[a]);
        out[a] += c;
        out[b] += c;
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= g.m[i];
    return out;
}

inline Vec gamma(const Generator& g, const Vec& u) { return gamma(g, u, u); }

inline double integrate(const Generator& g, const Vec& u) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * g.m[i];
    return s;
}

inline Vec laplacian_apply(const SpaceSpec& s, const Vec& u, double t) { return laplacian_apply(assemble_generator(s, t), u); }
inline Vec gamma(const SpaceSpec& s, const Vec& u, double t) { return gamma(assemble_generator(s, t), u); }
inline double dirichlet_energy(const SpaceSpec& s, const Vec& u, double t) {
    return dirichlet_energy(assemble_generator(s, t), u);
}

/// d/dr Gamma_r(u) by central differences with u held fixed.
inline Vec gamma_dot(const SpaceSpec& s, const Vec& u, double r, double delta = 0.0) {
    if (delta <= 0.0) delta = default_time_step(s);
    if (r - delta < s.t_min || r + delta > s.t_max)
        throw ValidationError("gamma_dot: stencil [r - delta, r + delta] leaves the time interval");
    Vec a = gamma(assemble_generator(s, r + delta), u);
    Vec b = gamma(assemble_generator(s, r - delta), u);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = (a[i] - b[i]) / (2.0 * delta);
    return a;
}

/// Distributional Gamma_2(u)(g) = int [ -1/2 Gamma(Gamma u, g) + (Delta u)^2 g + Gamma(u, g) Delta u ] dm.
inline double gamma2_dist(const Generator& gen, const Vec& u, const Vec& g) {
    Vec lu = laplacian_apply(gen, u);
    Vec gu = gamma(gen, u);
    Vec a = gamma(gen, gu, g);
    Vec b = gamma(gen, u, g);
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += (-0.5 * a[i] + lu[i] * lu[i] * g[i] + b[i] * lu[i]) * gen.m[i];
    return s;
}

/// Same quantity with the first term integrated by parts: 1/2 Gamma(u) Delta g.
inline double gamma2_dist_alt(const Generator& gen, const Vec& u, const Vec& g) {
    Vec lu = laplacian_apply(gen, u);
    Vec lg = laplacian_apply(gen, g);
    Vec gu = gamma(gen, u);
    Vec b = gamma(gen, u, g);
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += (0.5 * gu[i] * lg[i] + lu[i] * lu[i] * g[i] + b[i] * lu[i]) * gen.m[i];
    return s;
}

inline double gamma2_dist(const SpaceSpec& s, const Vec& u, const Vec& g, double t) {
    return gamma2_dist(assemble_generator(s, t), u, g);
}

/// Delta as a sparse matrix (row x holds (1/m_x) w_xy).
inline Eigen::SparseMatrix<double> laplacian_matrix(const Generator& g) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(4 * g.w.size());
    for (std::size_t e = 0; e < g.w.size(); ++e) {
        auto a = static_cast<int>(g.topology.head(e)), b = static_cast<int>(g.topology.tail(e));
        double w = g.w[e];
        trip.emplace_back(a, b, w / g.m[static_cast<std::size_t>(a)]);
        trip.emplace_back(b, a, w / g.m[static_cast<std::size_t>(b)]);
        trip.emplace_back(a, a, -w / g.m[static_cast<std::size_t>(a)]);
        trip.emplace_back(b, b, -w / g.m[static_cast<std::size_t>(b)]);
    }
    auto n = static_cast<int>(g.n());
    Eigen::SparseMatrix<double> L(n, n);
    L.setFromTriplets(trip.begin(), trip.end());
    return L;
}

/// Coordinate-list text, one "row col value" line per stored entry of Delta.
inline std::string export_coo(const Generator& g) {
    Eigen::SparseMatrix<double> L = laplacian_matrix(g);
    std::string out;
    char buf[96];
    for (int k = 0; k < L.outerSize(); ++k) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(L, k); it; ++it) {
            std::snprintf(buf, sizeof buf, "%d %d %.17g\n", static_cast<int>(it.row()), static_cast<int>(it.col()),
                          it.value());
            out += buf;
        }
    }
    return out;
}

} // namespace dynflow
