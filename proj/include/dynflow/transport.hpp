#pragma once

// Optimal transport on the discretized spaces: W_t by exact 1-D quantile matching,
// a transportation simplex, or entropic Sinkhorn; Kantorovich potentials; the
// Hopf-Lax semigroup; displacement geodesics; and the time-dependent action and
// distance W_{s,t}.
//
// On a cycle of length C the quantile method uses the lifted representation
//   W^2 = min_alpha int_0^1 |F_mu^{-1}(p) - F~_nu^{-1}(p + alpha)|^2 dp,
// F~ the periodic extension with F~(x + C) = F~(x) + 1.  The objective is convex and
// piecewise linear in alpha with breakpoints where jumps of both quantile functions
// align, so the minimum is found exactly among those breakpoints.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dynflow/mmspace.hpp"

namespace dynflow {

enum class TransportMethod { Auto, Quantile1D, ExactLP, Sinkhorn };

inline std::string method_name(TransportMethod m) {
    switch (m) {
    case TransportMethod::Auto: return "auto";
    case TransportMethod::Quantile1D: return "quantile1d";
    case TransportMethod::ExactLP: return "exact_lp";
    case TransportMethod::Sinkhorn: return "sinkhorn";
    }
    return "?";
}

inline constexpr std::size_t kExactLpMaxNodes = 64;

/// Coupling q(x, y) on node pairs.
struct Coupling {
    Eigen::MatrixXd q;
};

struct TransportResult {
    double W2 = 0.0;
    double W = 0.0;
    TransportMethod method = TransportMethod::Auto;
    std::optional<Coupling> coupling;
    // Sinkhorn only
    double epsilon = 0.0;
    double eps_gap = 0.0;  // epsilon log(m n): W2 - eps_gap is a lower bound
    std::size_t iterations = 0;
};

/// Arc-length layout of the nodes at one time.
struct LineGeometry {
    Topology topology;
    Vec length;
    Vec pos;
    double total = 0.0;

    static LineGeometry at(const SpaceSpec& s, double t) {
        check_time(s, t);
        LineGeometry g;
        g.topology = s.topology;
        g.length = edge_lengths(s, t);
        auto [p, tot] = node_positions(s.topology, g.length);
        g.pos = std::move(p);
        g.total = tot;
        return g;
    }

    double dist(std::size_t i, std::size_t j) const {
        double a = std::abs(pos[i] - pos[j]);
        return topology.is_cycle() ? std::min(a, total - a) : a;
    }

    /// Position of the continuous node coordinate xi (periodic for cycles).
    double phi(double xi) const {
        std::size_t n = topology.n;
        if (topology.is_cycle()) {
            double c = std::floor(xi);
            double q = std::floor(c / static_cast<double>(n));
            auto r = static_cast<std::size_t>(c - q * static_cast<double>(n));
            return q * total + pos[r] + (xi - c) * length[r];
        }
        if (xi <= 0.0) return xi * length[0];
        auto c = static_cast<std::size_t>(std::min(std::floor(xi), static_cast<double>(n - 2)));
        return pos[c] + (xi - static_cast<double>(c)) * length[c];
    }

    double phi_inverse(double z) const {
        std::size_t n = topology.n;
        double base = 0.0;
        if (topology.is_cycle()) {
            double q = std::floor(z / total);
            base = q * static_cast<double>(n);
            z -= q * total;
            if (z >= total) z = std::nextafter(total, 0.0);
        }
        std::size_t last_edge = topology.is_cycle() ? n - 1 : n - 2;
        auto it = std::upper_bound(pos.begin(), pos.end(), z);
        std::size_t r = it == pos.begin() ? 0 : static_cast<std::size_t>(it - pos.begin()) - 1;
        r = std::min(r, last_edge);
        return base + static_cast<double>(r) + (z - pos[r]) / length[r];
    }
};

namespace detail {

struct Atom {
    double pos;
    double mass;
    std::size_t id;
};

struct Match {
    double mass;
    std::size_t a, b;  // atom ids
    double xa, xb;     // xb lifted on cycles
};

struct Segment {
    double len;
    double pos;
    std::size_t id;
};

inline std::vector<Match> merge_segments(const std::vector<Segment>& A, const std::vector<Segment>& B) {
    std::vector<Match> out;
    std::size_t i = 0, j = 0;
    double ra = A.empty() ? 0.0 : A[0].len, rb = B.empty() ? 0.0 : B[0].len;
    while (i < A.size() && j < B.size()) {
        double l = std::min(ra, rb);
        if (l > 0.0) out.push_back({l, A[i].id, B[j].id, A[i].pos, B[j].pos});
        ra -= l;
        rb -= l;
        if (ra <= 0.0) {
            if (++i < A.size()) ra = A[i].len;
        }
        if (rb <= 0.0) {
            if (++j < B.size()) rb = B[j].len;
        }
    }
    return out;
}

inline std::vector<Segment> segments(const std::vector<Atom>& a) {
    std::vector<Segment> s;
    s.reserve(a.size());
    for (const Atom& x : a) s.push_back({x.mass, x.pos, x.id});
    return s;
}

/// Segments of the lifted quantile function of b over [alpha, alpha + P_a).
inline std::vector<Segment> lifted_segments(const std::vector<Atom>& b, const Vec& cum, double C, double alpha,
                                            double length) {
    double P = cum.back();
    double k = std::floor(alpha / P);
    double r = alpha - k * P;
    std::size_t j = static_cast<std::size_t>(std::upper_bound(cum.begin() + 1, cum.end(), r) - (cum.begin() + 1));
    if (j >= b.size()) {
        j = 0;
        k += 1.0;
        r = 0.0;
    }
    std::vector<Segment> s;
    double acc = 0.0;
    double first = cum[j + 1] - r;
    s.push_back({first, b[j].pos + k * C, b[j].id});
    acc += first;
    while (acc < length) {
        if (++j == b.size()) {
            j = 0;
            k += 1.0;
        }
        s.push_back({b[j].mass, b[j].pos + k * C, b[j].id});
        acc += b[j].mass;
    }
    return s;
}

inline double match_cost(const std::vector<Match>& m) {
    double c = 0.0;
    for (const Match& x : m) c += x.mass * (x.xa - x.xb) * (x.xa - x.xb);
    return c;
}

inline void sort_atoms(std::vector<Atom>& a) {
    std::stable_sort(a.begin(), a.end(), [](const Atom& x, const Atom& y) { return x.pos < y.pos; });
}

/// Exact W^2 between atom lists on a line.
inline double line_w2(std::vector<Atom> a, std::vector<Atom> b, std::vector<Match>* matches = nullptr) {
    sort_atoms(a);
    sort_atoms(b);
    auto m = merge_segments(segments(a), segments(b));
    if (matches) *matches = m;
    return match_cost(m);
}

/// Exact W^2 between atom lists on a circle of length C (positions in [0, C)).
inline double circle_w2(std::vector<Atom> a, std::vector<Atom> b, double C, std::vector<Match>* matches = nullptr) {
    sort_atoms(a);
    sort_atoms(b);
    Vec ca(a.size() + 1, 0.0), cb(b.size() + 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) ca[i + 1] = ca[i] + a[i].mass;
    for (std::size_t j = 0; j < b.size(); ++j) cb[j + 1] = cb[j] + b[j].mass;
    double P = cb.back();
    Vec cand;
    cand.reserve(3 * a.size() * b.size());
    for (std::size_t j = 0; j < b.size(); ++j)
        for (std::size_t i = 0; i < a.size(); ++i)
            for (double k : {-1.0, 0.0, 1.0}) cand.push_back(cb[j] - ca[i] + k * P);
    std::sort(cand.begin(), cand.end());
    // breakpoints that differ by rounding only would make the sampled slopes noisy
    cand.erase(std::unique(cand.begin(), cand.end(), [](double x, double y) { return y - x < 1e-11; }), cand.end());
    auto segA = segments(a);
    auto eval = [&](double alpha, std::vector<Match>* out) {
        auto m = merge_segments(segA, lifted_segments(b, cb, C, alpha, ca.back()));
        double c = match_cost(m);
        if (out) *out = std::move(m);
        return c;
    };
    // Convex in alpha: bisect on the sign of the forward difference.
    std::size_t lo = 0, hi = cand.size() - 1;
    while (hi - lo > 2) {
        std::size_t mid = lo + (hi - lo) / 2;
        if (eval(cand[mid], nullptr) <= eval(cand[mid + 1], nullptr)) hi = mid + 1;
        else lo = mid;
    }
    double best = kInf;
    std::size_t arg = lo;
    for (std::size_t k = lo; k <= hi; ++k) {
        double c = eval(cand[k], nullptr);
        if (c < best) {
            best = c;
            arg = k;
        }
    }
    // descend to a local, hence global, minimum in case rounding misled the bisection
    for (;;) {
        if (arg > 0) {
            double c = eval(cand[arg - 1], nullptr);
            if (c < best) {
                best = c;
                --arg;
                continue;
            }
        }
        if (arg + 1 < cand.size()) {
            double c = eval(cand[arg + 1], nullptr);
            if (c < best) {
                best = c;
                ++arg;
                continue;
            }
        }
        break;
    }
    return eval(cand[arg], matches);
}

inline std::vector<Atom> node_atoms(const MeasureVec& mu, const Vec& pos) {
    std::vector<Atom> a;
    for (std::size_t i = 0; i < mu.masses.size(); ++i)
        if (mu.masses[i] > 0.0) a.push_back({pos[i], mu.masses[i], i});
    return a;
}

} // namespace detail

/// Monotone (lifted on cycles) quantile coupling between node measures.
inline std::vector<detail::Match> quantile_matches(const LineGeometry& g, const MeasureVec& mu, const MeasureVec& nu,
                                                   double* w2 = nullptr) {
    auto a = detail::node_atoms(mu, g.pos), b = detail::node_atoms(nu, g.pos);
    std::vector<detail::Match> m;
    double c = g.topology.is_cycle() ? detail::circle_w2(a, b, g.total, &m) : detail::line_w2(a, b, &m);
    if (w2) *w2 = c;
    return m;
}

// ---------------------------------------------------------------------------
// Transportation simplex (MODI method) for small dense instances.

struct LpSolution {
    Eigen::MatrixXd flow;
    Vec u, v;  // duals: u_i + v_j <= c_ij with equality on the basis
    double value = 0.0;
    std::size_t iterations = 0;
};

inline LpSolution solve_transportation(const Vec& a, Vec b, const Eigen::MatrixXd& C) {
    std::size_t m = a.size(), n = b.size();
    if (m == 0 || n == 0) throw ValidationError("transportation problem with empty side");
    double sa = std::accumulate(a.begin(), a.end(), 0.0), sb = std::accumulate(b.begin(), b.end(), 0.0);
    // absorb rounding differences in the largest demand
    auto jmax = static_cast<std::size_t>(std::max_element(b.begin(), b.end()) - b.begin());
    b[jmax] += sa - sb;

    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    std::vector<std::vector<char>> basic(m, std::vector<char>(n, 0));
    std::vector<std::pair<std::size_t, std::size_t>> cells;

    {  // north-west corner start, m + n - 1 basic cells
        Vec ra = a, rb = b;
        std::size_t i = 0, j = 0;
        for (;;) {
            double x = std::min(ra[i], rb[j]);
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x;
            basic[i][j] = 1;
            cells.emplace_back(i, j);
            bool row_done = ra[i] < rb[j] || (ra[i] == rb[j] && i + 1 < m);
            ra[i] -= x;
            rb[j] -= x;
            if (i == m - 1 && j == n - 1) break;
            if (i == m - 1) ++j;
            else if (j == n - 1) ++i;
            else if (row_done) ++i;
            else ++j;
        }
    }

    double cscale = std::max(1.0, C.cwiseAbs().maxCoeff());
    double rtol = 1e-13 * cscale;
    Vec u(m), v(n);
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(m + n);  // node -> (other node, cell index)

    auto rebuild = [&]() {
        for (auto& l : adj) l.clear();
        for (std::size_t c = 0; c < cells.size(); ++c) {
            auto [i, j] = cells[c];
            adj[i].emplace_back(m + j, c);
            adj[m + j].emplace_back(i, c);
        }
    };
    auto potentials = [&]() {
        std::vector<char> seen(m + n, 0);
        std::vector<std::size_t> stack = {0};
        seen[0] = 1;
        u[0] = 0.0;
        while (!stack.empty()) {
            std::size_t x = stack.back();
            stack.pop_back();
            for (auto [y, c] : adj[x]) {
                if (seen[y]) continue;
                seen[y] = 1;
                auto [i, j] = cells[c];
                double cij = C(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                if (y >= m) v[y - m] = cij - u[i];
                else u[y] = cij - v[j];
                stack.push_back(y);
            }
        }
    };

    LpSolution sol;
    std::size_t degenerate_run = 0;
    const std::size_t cap = 200 * (m + n) * (m + n) + 1000;
    for (;;) {
        rebuild();
        potentials();
        bool bland = degenerate_run > 50;
        double best = -rtol;
        std::size_t ei = m, ej = n;
        for (std::size_t i = 0; i < m && !(bland && ei < m); ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (basic[i][j]) continue;
                double r = C(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - u[i] - v[j];
                if (r < best) {
                    best = r;
                    ei = i;
                    ej = j;
                    if (bland) break;
                }
            }
        }
        if (ei == m) break;
        if (++sol.iterations > cap) throw Error("transportation simplex: iteration cap exceeded");

        // Tree path from column ej to row ei.
        std::vector<std::ptrdiff_t> parent(m + n, -1), pcell(m + n, -1);
        std::vector<std::size_t> queue = {m + ej};
        parent[m + ej] = static_cast<std::ptrdiff_t>(m + ej);
        for (std::size_t q = 0; q < queue.size() && parent[ei] < 0; ++q) {
            std::size_t x = queue[q];
            for (auto [y, c] : adj[x]) {
                if (parent[y] >= 0) continue;
                parent[y] = static_cast<std::ptrdiff_t>(x);
                pcell[y] = static_cast<std::ptrdiff_t>(c);
                queue.push_back(y);
            }
        }
        // Walk back from the row: cells alternate -, +, -, ... starting next to the entering cell.
        std::vector<std::size_t> path;
        for (std::size_t x = ei; x != m + ej; x = static_cast<std::size_t>(parent[x])) path.push_back(static_cast<std::size_t>(pcell[x]));
        double theta = kInf;
        std::size_t leave = path.size();
        for (std::size_t k = 0; k < path.size(); k += 2) {
            auto [i, j] = cells[path[k]];
            double f = X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            if (f < theta || (f == theta && cells[path[k]] < cells[path[leave]])) {
                theta = f;
                leave = k;
            }
        }
        degenerate_run = theta > 0.0 ? 0 : degenerate_run + 1;
        for (std::size_t k = 0; k < path.size(); ++k) {
            auto [i, j] = cells[path[k]];
            double& f = X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            f += (k % 2 == 0) ? -theta : theta;
            if (f < 0.0) f = 0.0;
        }
        X(static_cast<Eigen::Index>(ei), static_cast<Eigen::Index>(ej)) = theta;
        auto [li, lj] = cells[path[leave]];
        X(static_cast<Eigen::Index>(li), static_cast<Eigen::Index>(lj)) = 0.0;
        basic[li][lj] = 0;
        basic[ei][ej] = 1;
        cells[path[leave]] = {ei, ej};
    }
    sol.flow = X;
    sol.u = u;
    sol.v = v;
    sol.value = (X.array() * C.array()).sum();
    return sol;
}

// ---------------------------------------------------------------------------

namespace detail {

struct Support {
    std::vector<std::size_t> idx;
    Vec mass;
};

inline Support support_of(const MeasureVec& mu) {
    Support s;
    for (std::size_t i = 0; i < mu.masses.size(); ++i)
        if (mu.masses[i] > 0.0) {
            s.idx.push_back(i);
            s.mass.push_back(mu.masses[i]);
        }
    return s;
}

inline Eigen::MatrixXd half_sq_cost(const LineGeometry& g, const Support& a, const Support& b) {
    Eigen::MatrixXd C(static_cast<Eigen::Index>(a.idx.size()), static_cast<Eigen::Index>(b.idx.size()));
    for (std::size_t i = 0; i < a.idx.size(); ++i)
        for (std::size_t j = 0; j < b.idx.size(); ++j) {
            double d = g.dist(a.idx[i], b.idx[j]);
            C(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 0.5 * d * d;
        }
    return C;
}

inline double logsumexp(const Vec& x) {
    double mx = *std::max_element(x.begin(), x.end());
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double v : x) s += std::exp(v - mx);
    return mx + std::log(s);
}

} // namespace detail

struct SinkhornOptions {
    double epsilon = 0.0;  // 0: 1e-3 max d^2
    std::size_t max_iter = 10000;
    double tol = 1e-12;
};

inline TransportResult wasserstein(const LineGeometry& g, const MeasureVec& mu, const MeasureVec& nu,
                                   TransportMethod method = TransportMethod::Auto, bool want_coupling = false,
                                   const SinkhornOptions& sk = {}) {
    require_probability(mu, "wasserstein");
    require_probability(nu, "wasserstein");
    std::size_t n = g.topology.n;
    if (mu.size() != n || nu.size() != n) throw ValidationError("wasserstein: measure size does not match the space");
    if (method == TransportMethod::Auto) method = TransportMethod::Quantile1D;
    TransportResult r;
    r.method = method;
    auto nn = static_cast<Eigen::Index>(n);

    if (method == TransportMethod::Quantile1D && mu.masses == nu.masses) {
        // identical inputs: the circle search would only return roundoff
        r.W2 = 0.0;
        if (want_coupling) {
            Coupling c{Eigen::MatrixXd::Zero(nn, nn)};
            for (Eigen::Index i = 0; i < nn; ++i) c.q(i, i) = mu.masses[static_cast<std::size_t>(i)];
            r.coupling = std::move(c);
        }
    } else if (method == TransportMethod::Quantile1D) {
        auto m = quantile_matches(g, mu, nu, &r.W2);
        if (want_coupling) {
            Coupling c{Eigen::MatrixXd::Zero(nn, nn)};
            for (const auto& x : m) c.q(static_cast<Eigen::Index>(x.a), static_cast<Eigen::Index>(x.b)) += x.mass;
            r.coupling = std::move(c);
        }
    } else if (method == TransportMethod::ExactLP) {
        if (n > kExactLpMaxNodes)
            throw ValidationError("exact LP transport is limited to " + std::to_string(kExactLpMaxNodes) + " nodes");
        auto A = detail::support_of(mu), B = detail::support_of(nu);
        LpSolution sol = solve_transportation(A.mass, B.mass, detail::half_sq_cost(g, A, B));
        r.W2 = 2.0 * sol.value;
        r.iterations = sol.iterations;
        if (want_coupling) {
            Coupling c{Eigen::MatrixXd::Zero(nn, nn)};
            for (std::size_t i = 0; i < A.idx.size(); ++i)
                for (std::size_t j = 0; j < B.idx.size(); ++j)
                    c.q(static_cast<Eigen::Index>(A.idx[i]), static_cast<Eigen::Index>(B.idx[j])) =
                        sol.flow(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            r.coupling = std::move(c);
        }
    } else {
        auto A = detail::support_of(mu), B = detail::support_of(nu);
        std::size_t ma = A.idx.size(), mb = B.idx.size();
        Eigen::MatrixXd C = 2.0 * detail::half_sq_cost(g, A, B);
        double dmax = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) dmax = std::max(dmax, g.dist(i, j));
        double eps = sk.epsilon > 0.0 ? sk.epsilon : 1e-3 * dmax * dmax;
        if (!(eps > 0.0)) eps = 1e-12;
        Vec f(ma, 0.0), gpot(mb, 0.0), la(ma), lb(mb), tmpa(mb), tmpb(ma);
        for (std::size_t i = 0; i < ma; ++i) la[i] = std::log(A.mass[i]);
        for (std::size_t j = 0; j < mb; ++j) lb[j] = std::log(B.mass[j]);
        auto plan = [&](std::size_t i, std::size_t j) {
            return std::exp((f[i] + gpot[j] - C(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) / eps + la[i] + lb[j]);
        };
        std::size_t it = 0;
        for (; it < sk.max_iter; ++it) {
            for (std::size_t i = 0; i < ma; ++i) {
                for (std::size_t j = 0; j < mb; ++j) tmpa[j] = (gpot[j] - C(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) / eps + lb[j];
                f[i] = -eps * detail::logsumexp(tmpa);
            }
            for (std::size_t j = 0; j < mb; ++j) {
                for (std::size_t i = 0; i < ma; ++i) tmpb[i] = (f[i] - C(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) / eps + la[i];
                gpot[j] = -eps * detail::logsumexp(tmpb);
            }
            // columns are exact after the g-update; check rows
            double err = 0.0;
            for (std::size_t i = 0; i < ma; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < mb; ++j) s += plan(i, j);
                err += std::abs(s - A.mass[i]);
            }
            if (err < sk.tol) {
                ++it;
                break;
            }
        }
        // Round onto the exact coupling polytope so the cost is a true upper bound.
        Eigen::MatrixXd P(static_cast<Eigen::Index>(ma), static_cast<Eigen::Index>(mb));
        for (std::size_t i = 0; i < ma; ++i)
            for (std::size_t j = 0; j < mb; ++j) P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = plan(i, j);
        for (std::size_t i = 0; i < ma; ++i) {
            double s = P.row(static_cast<Eigen::Index>(i)).sum();
            if (s > A.mass[i]) P.row(static_cast<Eigen::Index>(i)) *= A.mass[i] / s;
        }
        for (std::size_t j = 0; j < mb; ++j) {
            double s = P.col(static_cast<Eigen::Index>(j)).sum();
            if (s > B.mass[j]) P.col(static_cast<Eigen::Index>(j)) *= B.mass[j] / s;
        }
        Vec er(ma), ec(mb);
        double norm = 0.0;
        for (std::size_t i = 0; i < ma; ++i) norm += (er[i] = A.mass[i] - P.row(static_cast<Eigen::Index>(i)).sum());
        for (std::size_t j = 0; j < mb; ++j) ec[j] = B.mass[j] - P.col(static_cast<Eigen::Index>(j)).sum();
        if (norm > 0.0)
            for (std::size_t i = 0; i < ma; ++i)
                for (std::size_t j = 0; j < mb; ++j) P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += er[i] * ec[j] / norm;
        P = P.cwiseMax(0.0);
        r.W2 = (P.array() * C.array()).sum();
        r.epsilon = eps;
        r.eps_gap = eps * std::log(static_cast<double>(std::max<std::size_t>(2, ma * mb)));
        r.iterations = it;
        if (want_coupling) {
            Coupling c{Eigen::MatrixXd::Zero(nn, nn)};
            for (std::size_t i = 0; i < ma; ++i)
                for (std::size_t j = 0; j < mb; ++j)
                    c.q(static_cast<Eigen::Index>(A.idx[i]), static_cast<Eigen::Index>(B.idx[j])) =
                        P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            r.coupling = std::move(c);
        }
    }
    r.W2 = std::max(r.W2, 0.0);
    r.W = std::sqrt(r.W2);
    return r;
}

inline TransportResult wasserstein(const SpaceSpec& s, const MeasureVec& mu, const MeasureVec& nu, double t,
                                   TransportMethod method = TransportMethod::Auto, bool want_coupling = false) {
    return wasserstein(LineGeometry::at(s, t), mu, nu, method, want_coupling);
}

/// Kantorovich potentials for the cost d_t^2 / 2 from the LP duals, extended to
/// every node by c-transforms.
inline std::pair<Vec, Vec> kantorovich_potentials(const SpaceSpec& s, const MeasureVec& mu, const MeasureVec& nu,
                                                  double t) {
    require_probability(mu, "kantorovich_potentials");
    require_probability(nu, "kantorovich_potentials");
    if (s.n() > kExactLpMaxNodes)
        throw ValidationError("kantorovich potentials are limited to " + std::to_string(kExactLpMaxNodes) + " nodes");
    LineGeometry g = LineGeometry::at(s, t);
    auto A = detail::support_of(mu), B = detail::support_of(nu);
    LpSolution sol = solve_transportation(A.mass, B.mass, detail::half_sq_cost(g, A, B));
    std::size_t n = s.n();
    auto c = [&](std::size_t x, std::size_t y) {
        double d = g.dist(x, y);
        return 0.5 * d * d;
    };
    Vec phi(n), psi(n);
    for (std::size_t x = 0; x < n; ++x) {
        double best = kInf;
        for (std::size_t j = 0; j < B.idx.size(); ++j) best = std::min(best, c(x, B.idx[j]) - sol.v[j]);
        phi[x] = best;
    }
    for (std::size_t y = 0; y < n; ++y) {
        double best = kInf;
        for (std::size_t x = 0; x < n; ++x) best = std::min(best, c(x, y) - phi[x]);
        psi[y] = best;
    }
    return {phi, psi};
}

/// Q_a phi(x) = min_y phi(y) + d_t(x, y)^2 / (2a)
inline Vec hopf_lax(const SpaceSpec& s, const Vec& phi, double a, double t) {
    if (!(a > 0.0)) throw ValidationError("hopf_lax: a must be positive");
    if (phi.size() != s.n()) throw ValidationError("hopf_lax: field size does not match the space");
    LineGeometry g = LineGeometry::at(s, t);
    Vec out(s.n());
    for (std::size_t x = 0; x < s.n(); ++x) {
        double best = kInf;
        for (std::size_t y = 0; y < s.n(); ++y) {
            double d = g.dist(x, y);
            best = std::min(best, phi[y] + d * d / (2.0 * a));
        }
        out[x] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Geodesics and curves

/// Deposit mass at continuous node coordinate xi onto the two neighbouring nodes.
inline void deposit(const Topology& top, double xi, double mass, Vec& out) {
    std::size_t n = top.n;
    if (top.is_cycle()) {
        double c = std::floor(xi);
        double frac = xi - c;
        double q = std::floor(c / static_cast<double>(n));
        auto r = static_cast<std::size_t>(c - q * static_cast<double>(n));
        out[r] += mass * (1.0 - frac);
        if (frac > 0.0) out[(r + 1) % n] += mass * frac;
        return;
    }
    xi = std::clamp(xi, 0.0, static_cast<double>(n - 1));
    auto c = static_cast<std::size_t>(std::min(std::floor(xi), static_cast<double>(n - 2)));
    double frac = xi - static_cast<double>(c);
    out[c] += mass * (1.0 - frac);
    if (frac > 0.0) out[c + 1] += mass * frac;
}

struct CurveOnMeasures {
    std::vector<double> a;
    std::vector<MeasureVec> mu;

    std::size_t size() const { return a.size(); }
};

inline MeasureVec displacement_geodesic(const SpaceSpec& s, const MeasureVec& mu, const MeasureVec& nu, double t,
                                        double a) {
    if (!(a >= 0.0 && a <= 1.0)) throw ValidationError("displacement_geodesic: a must lie in [0, 1]");
    require_probability(mu, "displacement_geodesic");
    require_probability(nu, "displacement_geodesic");
    MeasureVec out;
    out.t = t;
    if (a == 0.0) {
        out.masses = mu.masses;
        return out;
    }
    if (a == 1.0) {
        out.masses = nu.masses;
        return out;
    }
    LineGeometry g = LineGeometry::at(s, t);
    auto m = quantile_matches(g, mu, nu);
    out.masses.assign(s.n(), 0.0);
    for (const auto& x : m) deposit(s.topology, g.phi_inverse((1.0 - a) * x.xa + a * x.xb), x.mass, out.masses);
    return out;
}

/// Partition sum  sum_i (a_i - a_{i-1})^{-1} W^2_{theta(a_{i-1})}(mu^{a_{i-1}}, mu^{a_i}),
/// theta(a) = s + a (t - s).
inline double action_st(const SpaceSpec& s, const CurveOnMeasures& curve, double s0, double t0) {
    if (curve.size() < 2 || curve.a.size() != curve.mu.size()) throw ValidationError("action_st: need at least two knots");
    double A = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        double da = curve.a[i] - curve.a[i - 1];
        if (!(da > 0.0)) throw ValidationError("action_st: knot parameters must increase");
        double th = s0 + curve.a[i - 1] * (t0 - s0);
        A += wasserstein(s, curve.mu[i - 1], curve.mu[i], th).W2 / da;
    }
    return A;
}

struct WstResult {
    double W_st = 0.0;
    double action = 0.0;          // partition sum with exact W between knots
    double particle_action = 0.0; // the optimized per-atom objective (>= action)
    double W_s = 0.0, W_t = 0.0;
    double lower = 0.0, upper = 0.0;  // sandwich factors for W_st / W_s
    bool sandwich_ok = false;
    std::size_t rounds = 0;
    CurveOnMeasures curve;
};

inline constexpr double kSandwichSlack = 0.05;

/// W_{s,t} by minimizing the discretized action over curves given by k interior
/// knots; each quantile atom of the W_t-optimal coupling follows its own path.
inline WstResult w_st(const SpaceSpec& spec, const MeasureVec& mu, const MeasureVec& nu, double s, double t,
                      std::size_t k_knots = 16, std::size_t n_outer = 500) {
    require_probability(mu, "w_st");
    require_probability(nu, "w_st");
    std::size_t K = k_knots + 1;  // number of segments
    std::vector<double> as(K + 1);
    for (std::size_t i = 0; i <= K; ++i) as[i] = static_cast<double>(i) / static_cast<double>(K);
    as[K] = 1.0;
    std::vector<LineGeometry> geo;  // geometry of segment i (time theta(a_{i-1}))
    for (std::size_t i = 0; i < K; ++i) geo.push_back(LineGeometry::at(spec, s + as[i] * (t - s)));
    LineGeometry gt = LineGeometry::at(spec, t);

    auto matches = quantile_matches(gt, mu, nu);
    std::size_t P = matches.size();
    std::vector<Vec> xi(P, Vec(K + 1));
    for (std::size_t p = 0; p < P; ++p) {
        xi[p][0] = static_cast<double>(matches[p].a);
        for (std::size_t i = 1; i < K; ++i) xi[p][i] = gt.phi_inverse(matches[p].xa + as[i] * (matches[p].xb - matches[p].xa));
        // lifted node coordinate of the target
        xi[p][K] = std::round(gt.phi_inverse(matches[p].xb));
    }

    auto seg_cost = [&](std::size_t i, double a0, double a1) {  // segment i spans knots i-1 .. i
        double d = geo[i - 1].phi(a1) - geo[i - 1].phi(a0);
        return d * d / (as[i] - as[i - 1]);
    };
    auto particle = [&]() {
        double A = 0.0;
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t i = 1; i <= K; ++i) A += matches[p].mass * seg_cost(i, xi[p][i - 1], xi[p][i]);
        return A;
    };

    WstResult res;
    double prev = particle();
    for (std::size_t round = 0; round < n_outer && K > 1; ++round) {
        for (std::size_t p = 0; p < P; ++p) {
            for (std::size_t i = 1; i < K; ++i) {
                double l = xi[p][i - 1], r = xi[p][i + 1];
                double lo = std::min(l, r), hi = std::max(l, r);
                const LineGeometry& g1 = geo[i - 1];
                const LineGeometry& g2 = geo[i];
                double w1 = 1.0 / (as[i] - as[i - 1]), w2 = 1.0 / (as[i + 1] - as[i]);
                double p1 = g1.phi(l), p2 = g2.phi(r);
                double best = xi[p][i];
                double bestJ = w1 * std::pow(g1.phi(best) - p1, 2) + w2 * std::pow(p2 - g2.phi(best), 2);
                for (double c = std::floor(lo); c < hi; c += 1.0) {
                    double a = std::max(lo, c), b = std::min(hi, c + 1.0);
                    double mid = 0.5 * (a + b);
                    // on [a, b] both phi are affine: phi(x) = v + slope (x - mid)
                    double v1 = g1.phi(mid), v2 = g2.phi(mid);
                    double s1 = (b > a) ? (g1.phi(b) - g1.phi(a)) / (b - a) : 0.0;
                    double s2 = (b > a) ? (g2.phi(b) - g2.phi(a)) / (b - a) : 0.0;
                    double den = w1 * s1 * s1 + w2 * s2 * s2;
                    double x = mid;
                    if (den > 0.0) x = mid - (w1 * s1 * (v1 - p1) + w2 * s2 * (v2 - p2)) / den;
                    x = std::clamp(x, a, b);
                    double J = w1 * std::pow(g1.phi(x) - p1, 2) + w2 * std::pow(p2 - g2.phi(x), 2);
                    if (J < bestJ) {
                        bestJ = J;
                        best = x;
                    }
                }
                xi[p][i] = best;
            }
        }
        res.rounds = round + 1;
        double cur = particle();
        if (prev - cur <= 1e-15 * std::max(1.0, prev)) break;
        prev = cur;
    }
    res.particle_action = particle();

    // Exact W between consecutive knot measures.
    double A = 0.0;
    for (std::size_t i = 1; i <= K; ++i) {
        const LineGeometry& g = geo[i - 1];
        std::vector<detail::Atom> a0, a1;
        for (std::size_t p = 0; p < P; ++p) {
            double z0 = g.phi(xi[p][i - 1]), z1 = g.phi(xi[p][i]);
            if (g.topology.is_cycle()) {
                z0 -= std::floor(z0 / g.total) * g.total;
                z1 -= std::floor(z1 / g.total) * g.total;
            }
            a0.push_back({z0, matches[p].mass, p});
            a1.push_back({z1, matches[p].mass, p});
        }
        double w2 = g.topology.is_cycle() ? detail::circle_w2(a0, a1, g.total) : detail::line_w2(a0, a1);
        A += w2 / (as[i] - as[i - 1]);
    }
    res.action = std::min(A, res.particle_action);
    res.W_st = std::sqrt(res.action);

    for (std::size_t i = 0; i <= K; ++i) {
        MeasureVec m;
        m.t = s + as[i] * (t - s);
        m.masses.assign(spec.n(), 0.0);
        if (i == 0) m.masses = mu.masses;
        else if (i == K) m.masses = nu.masses;
        else
            for (std::size_t p = 0; p < P; ++p) deposit(spec.topology, xi[p][i], matches[p].mass, m.masses);
        res.curve.a.push_back(as[i]);
        res.curve.mu.push_back(std::move(m));
    }

    res.W_s = wasserstein(spec, mu, nu, s).W;
    res.W_t = wasserstein(spec, mu, nu, t).W;
    double x = spec.L * std::abs(t - s);
    res.lower = x > 0.0 ? (1.0 - std::exp(-x)) / x : 1.0;
    res.upper = x > 0.0 ? (std::exp(x) - 1.0) / x : 1.0;
    if (res.W_s > 0.0) {
        double ratio = res.W_st / res.W_s;
        res.sandwich_ok = ratio >= res.lower * (1.0 - kSandwichSlack) && ratio <= res.upper * (1.0 + kSandwichSlack);
    } else {
        res.sandwich_ok = res.W_st <= 1e-12;
    }
    return res;
}

/// "x,y,mass" lines for the nonzero entries of a coupling.
inline std::string coupling_csv(const Coupling& c) {
    std::string out = "x,y,mass\n";
    char buf[96];
    for (Eigen::Index i = 0; i < c.q.rows(); ++i)
        for (Eigen::Index j = 0; j < c.q.cols(); ++j)
            if (c.q(i, j) != 0.0) {
                std::snprintf(buf, sizeof buf, "%ld,%ld,%.17g\n", static_cast<long>(i), static_cast<long>(j), c.q(i, j));
                out += buf;
            }
    return out;
}

struct DistanceRow {
    double t;
    std::size_t pair;
    double W;
};

inline std::string distance_table_csv(const std::vector<DistanceRow>& rows) {
    std::string out = "t,pair,W\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%zu,%.17g\n", r.t, r.pair, r.W);
        out += buf;
    }
    return out;
}

} // namespace dynflow
