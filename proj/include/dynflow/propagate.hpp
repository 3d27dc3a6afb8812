#pragma once

// Heat propagator P_{t,s} on a time-dependent graph, its adjoint P*_{t,s} and the
// dual flow on measures, with the a-priori estimate checks built on them.
//
// Each step [a, b] freezes the generator at (a + b)/2 and applies the theta-scheme
//   (M - theta dt A) u_{k+1} = (M + (1 - theta) dt A) u_k
// with A the stiffness matrix and M the node measure at the midpoint.  A kills
// constants, so P 1 = 1 exactly; for theta = 1 the system matrix is an M-matrix and
// P is entrywise nonnegative.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dynflow/operators.hpp"
#include "dynflow/tridiag.hpp"

namespace dynflow {

enum class Scheme { ImplicitEuler, CrankNicolson };
enum class AdjointMode { DiscreteAdjoint, DirectPDE };

struct SchemeConfig {
    Scheme scheme = Scheme::CrankNicolson;
    std::size_t n_steps = 64;
    AdjointMode adjoint = AdjointMode::DiscreteAdjoint;

    double theta() const { return scheme == Scheme::ImplicitEuler ? 1.0 : 0.5; }
};

inline std::string scheme_name(Scheme s) { return s == Scheme::ImplicitEuler ? "implicit_euler" : "crank_nicolson"; }

/// Field values at increasing knot times.
struct Trajectory {
    std::vector<double> times;
    std::vector<Vec> values;

    std::size_t size() const { return times.size(); }
    std::size_t index_of(double t) const {
        std::size_t best = 0;
        for (std::size_t k = 1; k < times.size(); ++k)
            if (std::abs(times[k] - t) < std::abs(times[best] - t)) best = k;
        return best;
    }
    const Vec& at(double t) const { return values[index_of(t)]; }
};

/// Precomputed steps of the scheme on a uniform grid of [s, t].
class Propagator {
public:
    Propagator(const SpaceSpec& spec, double s, double t, const SchemeConfig& cfg)
        : spec_(&spec), s_(s), t_(t), cfg_(cfg) {
        if (s > t) throw ValidationError("propagator: s > t");
        check_time(spec, s);
        check_time(spec, t);
        if (cfg.n_steps == 0) throw ValidationError("propagator: step count must be positive");
        std::size_t steps = (s == t) ? 0 : cfg.n_steps;
        knots_.resize(steps + 1);
        for (std::size_t k = 0; k <= steps; ++k)
            knots_[k] = (k == steps) ? t : s + (t - s) * static_cast<double>(k) / static_cast<double>(steps);
        steps_.reserve(steps);
        for (std::size_t k = 0; k < steps; ++k) {
            double mid = 0.5 * (knots_[k] + knots_[k + 1]);
            steps_.push_back(assemble_generator(spec, mid));
        }
        knot_m_.reserve(steps + 1);
        for (double tk : knots_) knot_m_.push_back(node_measure(spec, tk));
    }

    std::size_t steps() const { return steps_.size(); }
    const std::vector<double>& knots() const { return knots_; }
    const Vec& knot_measure(std::size_t k) const { return knot_m_[k]; }
    const SchemeConfig& config() const { return cfg_; }
    const SpaceSpec& spec() const { return *spec_; }

    /// P_{knot j, knot i} u for i <= j.
    Vec forward(Vec u, std::size_t i, std::size_t j) const {
        check_field(u);
        for (std::size_t k = i; k < j; ++k) u = step_forward(k, u);
        return u;
    }
    Vec forward(Vec u) const { return forward(std::move(u), 0, steps()); }

    Trajectory forward_trajectory(Vec u, std::size_t i = 0) const {
        check_field(u);
        Trajectory tr;
        tr.times.push_back(knots_[i]);
        tr.values.push_back(u);
        for (std::size_t k = i; k < steps(); ++k) {
            u = step_forward(k, u);
            tr.times.push_back(knots_[k + 1]);
            tr.values.push_back(u);
        }
        return tr;
    }

    /// Dual flow of masses from knot j back to knot i (the transpose of P).
    Vec dual_masses(Vec mu, std::size_t i, std::size_t j) const {
        check_field(mu);
        for (std::size_t k = j; k-- > i;) mu = step_transpose(k, mu);
        return mu;
    }

    /// Masses of the dual flow at every knot, times increasing.
    Trajectory dual_trajectory(Vec mu) const {
        check_field(mu);
        Trajectory tr;
        tr.times.resize(knots_.size());
        tr.values.resize(knots_.size());
        tr.times.back() = knots_.back();
        tr.values.back() = mu;
        for (std::size_t k = steps(); k-- > 0;) {
            mu = step_transpose(k, mu);
            tr.times[k] = knots_[k];
            tr.values[k] = mu;
        }
        return tr;
    }

    /// Densities P*_{t, knot k} g for every knot, times increasing.
    Trajectory adjoint_trajectory(const Vec& g) const {
        check_field(g);
        if (cfg_.adjoint == AdjointMode::DirectPDE) return adjoint_pde(g);
        Vec mu(g.size());
        for (std::size_t x = 0; x < g.size(); ++x) mu[x] = g[x] * knot_m_.back()[x];
        Trajectory tr = dual_trajectory(std::move(mu));
        for (std::size_t k = 0; k < tr.size(); ++k)
            for (std::size_t x = 0; x < g.size(); ++x) tr.values[k][x] /= knot_m_[k][x];
        return tr;
    }

    Vec adjoint(const Vec& g) const { return adjoint_trajectory(g).values.front(); }

    /// P as a dense matrix (column y is P e_y).
    Eigen::MatrixXd matrix() const {
        auto n = static_cast<Eigen::Index>(spec_->n());
        Eigen::MatrixXd P(n, n);
        for (Eigen::Index y = 0; y < n; ++y) {
            Vec e(spec_->n(), 0.0);
            e[static_cast<std::size_t>(y)] = 1.0;
            Vec c = forward(std::move(e));
            for (Eigen::Index x = 0; x < n; ++x) P(x, y) = c[static_cast<std::size_t>(x)];
        }
        return P;
    }

private:
    void check_field(const Vec& u) const {
        if (u.size() != spec_->n())
            throw ValidationError("propagator: field has " + std::to_string(u.size()) + " entries, space has " +
                                  std::to_string(spec_->n()));
    }

    double dt(std::size_t k) const { return knots_[k + 1] - knots_[k]; }

    /// (M - theta dt A + theta dt diag(extra)) x = rhs
    Vec solve(const Generator& g, double cdt, const Vec& rhs, const Vec* extra = nullptr) const {
        std::size_t n = g.n();
        Vec lo(n, 0.0), diag(g.m), up(n, 0.0);
        if (extra)
            for (std::size_t i = 0; i < n; ++i) diag[i] += cdt * (*extra)[i];
        for (std::size_t e = 0; e < g.w.size(); ++e) {
            std::size_t a = g.topology.head(e), b = g.topology.tail(e);
            double c = cdt * g.w[e];
            diag[a] += c;
            diag[b] += c;
            up[a] -= c;
            lo[b] -= c;
        }
        return g.topology.is_cycle() ? solve_cyclic_tridiagonal(lo, diag, up, rhs)
                                     : solve_tridiagonal(lo, diag, up, rhs);
    }

    /// (M + c A - c diag(extra)) u
    static Vec explicit_part(const Generator& g, double c, const Vec& u, const Vec* extra = nullptr) {
        Vec out(u.size());
        if (c == 0.0) {
            for (std::size_t i = 0; i < u.size(); ++i) out[i] = g.m[i] * u[i];
            return out;
        }
        Vec au = stiffness_apply(g, u);
        for (std::size_t i = 0; i < u.size(); ++i) {
            out[i] = g.m[i] * u[i] + c * au[i];
            if (extra) out[i] -= c * (*extra)[i] * u[i];
        }
        return out;
    }

    Vec step_forward(std::size_t k, const Vec& u) const {
        const Generator& g = steps_[k];
        double th = cfg_.theta(), h = dt(k);
        return solve(g, th * h, explicit_part(g, (1.0 - th) * h, u));
    }

    Vec step_transpose(std::size_t k, const Vec& mu) const {
        const Generator& g = steps_[k];
        double th = cfg_.theta(), h = dt(k);
        return explicit_part(g, (1.0 - th) * h, solve(g, th * h, mu));
    }

    /// Backward steps of  d_s v = -Delta_s v + fdot_s v,  fdot = -d_s log m_s.
    Trajectory adjoint_pde(Vec v) const {
        Trajectory tr;
        tr.times = knots_;
        tr.values.resize(knots_.size());
        tr.values.back() = v;
        double th = cfg_.theta();
        for (std::size_t k = steps(); k-- > 0;) {
            const Generator& g = steps_[k];
            double mid = 0.5 * (knots_[k] + knots_[k + 1]);
            Vec rate = log_measure_rate(*spec_, mid);
            Vec mrate(rate.size());
            for (std::size_t i = 0; i < rate.size(); ++i) mrate[i] = g.m[i] * rate[i];
            double h = dt(k);
            v = solve(g, th * h, explicit_part(g, (1.0 - th) * h, v, &mrate), &mrate);
            tr.values[k] = v;
        }
        return tr;
    }

    const SpaceSpec* spec_;
    double s_, t_;
    SchemeConfig cfg_;
    std::vector<double> knots_;
    std::vector<Generator> steps_;
    std::vector<Vec> knot_m_;
};

inline Vec heat_forward(const SpaceSpec& spec, const Vec& u_s, double s, double t, const SchemeConfig& cfg = {}) {
    return Propagator(spec, s, t, cfg).forward(u_s);
}

inline Trajectory heat_trajectory(const SpaceSpec& spec, const Vec& u_s, double s, double t,
                                  const SchemeConfig& cfg = {}) {
    return Propagator(spec, s, t, cfg).forward_trajectory(u_s);
}

/// P*_{t,s} g for a density g at time t; result is a density at time s <= t.
inline Vec adjoint_backward(const SpaceSpec& spec, const Vec& g_t, double t, double s, const SchemeConfig& cfg = {}) {
    return Propagator(spec, s, t, cfg).adjoint(g_t);
}

/// Dual heat flow of a probability measure from time t back to time s.
inline MeasureVec dual_flow(const SpaceSpec& spec, const MeasureVec& mu_t, double t, double s,
                            const SchemeConfig& cfg = {}) {
    require_probability(mu_t, "dual_flow");
    Propagator P(spec, s, t, cfg);
    MeasureVec out;
    out.t = s;
    out.masses = P.dual_masses(mu_t.masses, 0, P.steps());
    return out;
}

/// p_{t,s}(x, y) with P_{t,s} h(x) = sum_y p(x, y) h(y) m_s(y).
inline Eigen::MatrixXd heat_kernel(const SpaceSpec& spec, double t, double s, const SchemeConfig& cfg = {}) {
    Propagator P(spec, s, t, cfg);
    Eigen::MatrixXd K = P.matrix();
    const Vec& ms = P.knot_measure(0);
    for (Eigen::Index y = 0; y < K.cols(); ++y) K.col(y) /= ms[static_cast<std::size_t>(y)];
    return K;
}

// ---------------------------------------------------------------------------
// L^p operator bounds

struct NormEntry {
    std::string name;
    double empirical = 0.0;  // max ratio over the sampled fields
    double exact = 0.0;      // operator norm of the discrete matrix
    double bound = 0.0;
    bool ok = false;
    Vec witness;
};

struct NormReport {
    double s = 0.0, t = 0.0;
    std::vector<NormEntry> entries;
    bool ok = false;

    const NormEntry& get(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e;
        throw Error("no norm entry " + name);
    }
};

namespace detail {

inline double lp_norm(const Vec& u, const Vec& m, double p) {
    if (std::isinf(p)) return max_abs(u);
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += std::pow(std::abs(u[i]), p) * m[i];
    return std::pow(s, 1.0 / p);
}

inline Vec apply(const Eigen::MatrixXd& A, const Vec& u) {
    Eigen::Map<const Eigen::VectorXd> x(u.data(), static_cast<Eigen::Index>(u.size()));
    Eigen::VectorXd y = A * x;
    return Vec(y.data(), y.data() + y.size());
}

} // namespace detail

inline constexpr double kNormSlack = 1e-9;

/// Empirical and exact operator norms of P_{t,s} and P*_{t,s} against the bounds
/// |P|_{inf} <= 1, |P*|_1 <= 1, |P|_1 <= e^{L(t-s)}, |P*|_inf <= e^{L(t-s)},
/// and e^{L(t-s)/2} for both in L^2.
inline NormReport lp_norm_report(const SpaceSpec& spec, double t, double s, const SchemeConfig& cfg = {},
                                 std::size_t trials = 64, std::uint64_t seed = 1) {
    Propagator prop(spec, s, t, cfg);
    Eigen::MatrixXd P = prop.matrix();
    const Vec& ms = prop.knot_measure(0);
    const Vec& mt = prop.knot_measure(prop.steps());
    auto n = static_cast<Eigen::Index>(spec.n());
    Eigen::MatrixXd Pstar(n, n);  // M_s^{-1} P^T M_t
    for (Eigen::Index y = 0; y < n; ++y)
        for (Eigen::Index x = 0; x < n; ++x)
            Pstar(y, x) = P(x, y) * mt[static_cast<std::size_t>(x)] / ms[static_cast<std::size_t>(y)];

    // Candidates: random signed fields, indicators and sign patterns.
    std::vector<Vec> cands;
    Rng rng(seed);
    for (std::size_t k = 0; k < trials; ++k) {
        Vec u(spec.n());
        for (double& x : u) x = rng.normal();
        cands.push_back(u);
    }
    for (std::size_t y = 0; y < spec.n(); ++y) {
        Vec e(spec.n(), 0.0);
        e[y] = 1.0;
        cands.push_back(e);
    }
    for (Eigen::Index x = 0; x < n; ++x) {
        Vec sp(spec.n()), ss(spec.n());
        for (Eigen::Index y = 0; y < n; ++y) {
            sp[static_cast<std::size_t>(y)] = P(x, y) >= 0.0 ? 1.0 : -1.0;
            ss[static_cast<std::size_t>(y)] = Pstar(x, y) >= 0.0 ? 1.0 : -1.0;
        }
        cands.push_back(sp);
        cands.push_back(ss);
    }

    double dt = t - s;
    struct Def {
        const char* name;
        bool adjoint;
        double p;
        double bound;
    };
    const Def defs[] = {
        {"P_inf", false, kInf, 1.0},
        {"P_1", false, 1.0, std::exp(spec.L * dt)},
        {"P_2", false, 2.0, std::exp(0.5 * spec.L * dt)},
        {"Pstar_1", true, 1.0, 1.0},
        {"Pstar_inf", true, kInf, std::exp(spec.L * dt)},
        {"Pstar_2", true, 2.0, std::exp(0.5 * spec.L * dt)},
    };

    NormReport rep;
    rep.s = s;
    rep.t = t;
    rep.ok = true;
    for (const Def& d : defs) {
        const Eigen::MatrixXd& A = d.adjoint ? Pstar : P;
        const Vec& min = d.adjoint ? mt : ms;
        const Vec& mout = d.adjoint ? ms : mt;
        NormEntry e;
        e.name = d.name;
        e.bound = d.bound;
        for (const Vec& u : cands) {
            double den = detail::lp_norm(u, min, d.p);
            if (den <= 0.0) continue;
            double r = detail::lp_norm(detail::apply(A, u), mout, d.p) / den;
            if (r > e.empirical) {
                e.empirical = r;
                e.witness = u;
            }
        }
        if (std::isinf(d.p)) {
            e.exact = A.cwiseAbs().rowwise().sum().maxCoeff();
        } else if (d.p == 1.0) {
            for (Eigen::Index y = 0; y < n; ++y) {
                double c = 0.0;
                for (Eigen::Index x = 0; x < n; ++x) c += std::abs(A(x, y)) * mout[static_cast<std::size_t>(x)];
                e.exact = std::max(e.exact, c / min[static_cast<std::size_t>(y)]);
            }
        } else {
            Eigen::MatrixXd B(n, n);
            for (Eigen::Index x = 0; x < n; ++x)
                for (Eigen::Index y = 0; y < n; ++y)
                    B(x, y) = std::sqrt(mout[static_cast<std::size_t>(x)]) * A(x, y) /
                              std::sqrt(min[static_cast<std::size_t>(y)]);
            e.exact = Eigen::JacobiSVD<Eigen::MatrixXd>(B).singularValues()(0);
        }
        e.ok = e.empirical <= e.bound * (1.0 + kNormSlack);
        rep.ok = rep.ok && e.ok;
        rep.entries.push_back(std::move(e));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Energy estimate, commutator lemma, EVI for the Dirichlet energy

inline double l2_norm_sq(const Vec& u, const Vec& m) { return dot_weighted(u, u, m); }

struct EnergyReport {
    double lhs = 0.0, rhs = 0.0;
    double tol = 0.0;
    bool ok = false;
};

/// e^{-3L tau} E_tau(u_tau) + 2 int_s^tau e^{-3Lt} |Delta_t u_t|^2 dt <= e^{-3Ls} E_s(u_s)
inline EnergyReport energy_decay_check(const SpaceSpec& spec, const Vec& u_s, double s, double tau,
                                       const SchemeConfig& cfg = {}) {
    Propagator prop(spec, s, tau, cfg);
    Trajectory tr = prop.forward_trajectory(u_s);
    double L = spec.L, th = cfg.theta();
    // Dissipation quadrature matched to the scheme: per step, Delta at the midpoint
    // applied to theta u_{k+1} + (1 - theta) u_k, which makes the static
    // Crank-Nicolson energy identity exact.
    double integral = 0.0;
    for (std::size_t k = 1; k < tr.size(); ++k) {
        double mid = 0.5 * (tr.times[k] + tr.times[k - 1]);
        Generator g = assemble_generator(spec, mid);
        Vec ut(u_s.size());
        for (std::size_t i = 0; i < ut.size(); ++i) ut[i] = th * tr.values[k][i] + (1.0 - th) * tr.values[k - 1][i];
        integral += std::exp(-3.0 * L * mid) * l2_norm_sq(laplacian_apply(g, ut), g.m) * (tr.times[k] - tr.times[k - 1]);
    }
    EnergyReport r;
    r.lhs = std::exp(-3.0 * L * tau) * dirichlet_energy(assemble_generator(spec, tau), tr.values.back()) + 2.0 * integral;
    r.rhs = std::exp(-3.0 * L * s) * dirichlet_energy(assemble_generator(spec, s), u_s);
    r.tol = 1e-6 + 10.0 / static_cast<double>(prop.steps() ? prop.steps() : 1);
    r.ok = r.lhs <= r.rhs * (1.0 + r.tol) + 1e-12;
    return r;
}

struct CommutatorReport {
    double s = 0.0, t = 0.0;  // knot times actually used
    double residual = 0.0;
    double bound = 0.0;
    bool ok = false;
};

/// |E_t(u_t, v_t) - E_s(u_s, v_s)| against L e^{3(L+1)T} [E_s(u_s) + E_t(v_t) + |v_t|^2] sqrt(t - s),
/// with u a forward solution started at sigma and v an adjoint solution ending at tau.
/// s and t are snapped to the uniform grid of [sigma, tau] with cfg.n_steps steps.
inline CommutatorReport commutator_residual(const SpaceSpec& spec, const Vec& u_sigma, const Vec& g_tau,
                                            double sigma, double tau, double s, double t,
                                            const SchemeConfig& cfg = {}) {
    if (!(sigma <= s && s < t && t <= tau)) throw ValidationError("commutator: need sigma <= s < t <= tau");
    Propagator prop(spec, sigma, tau, cfg);
    Trajectory u = prop.forward_trajectory(u_sigma);
    Trajectory v = prop.adjoint_trajectory(g_tau);
    std::size_t is = u.index_of(s), it = u.index_of(t);
    if (it <= is) throw ValidationError("commutator: s and t snap to the same knot");
    Generator gs = assemble_generator(spec, u.times[is]);
    Generator gt = assemble_generator(spec, u.times[it]);
    CommutatorReport r;
    r.s = u.times[is];
    r.t = u.times[it];
    r.residual = std::abs(dirichlet_energy(gt, u.values[it], v.values[it]) - dirichlet_energy(gs, u.values[is], v.values[is]));
    double L = spec.L;
    double c = L * std::exp(3.0 * (L + 1.0) * spec.t_max);
    r.bound = c * (dirichlet_energy(gs, u.values[is]) + dirichlet_energy(gt, v.values[it]) + l2_norm_sq(v.values[it], gt.m)) *
              std::sqrt(r.t - r.s);
    r.ok = r.residual <= r.bound * (1.0 + 1e-9) + 1e-12;
    return r;
}

struct EviReport {
    double lhs = 0.0, rhs = 0.0;
    double tol = 0.0;
    bool ok = false;
};

/// -1/2 d+_s |u_s - w|^2_{s,t} at s = t  + L/4 |u_t - w|^2  >=  1/2 E_t(u_t) - 1/2 E_t(w)
/// along a recorded forward trajectory; the right derivative uses the next knot and
/// the L^2 norm of the midpoint measure.
inline EviReport evi_energy_check(const SpaceSpec& spec, const Trajectory& u, double t, const Vec& w) {
    std::size_t k = u.index_of(t);
    if (k + 1 >= u.size()) throw ValidationError("evi_energy_check: t must leave room for a forward step");
    double t0 = u.times[k], t1 = u.times[k + 1], h = t1 - t0;
    Vec m0 = node_measure(spec, t0), mh = node_measure(spec, 0.5 * (t0 + t1));
    Vec d0(w.size()), d1(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        d0[i] = u.values[k][i] - w[i];
        d1[i] = u.values[k + 1][i] - w[i];
    }
    double deriv = (l2_norm_sq(d1, mh) - l2_norm_sq(d0, m0)) / h;
    Generator g = assemble_generator(spec, t0);
    EviReport r;
    r.lhs = -0.5 * deriv + 0.25 * spec.L * l2_norm_sq(d0, m0);
    r.rhs = 0.5 * dirichlet_energy(g, u.values[k]) - 0.5 * dirichlet_energy(g, w);
    // The one-sided difference quotient is off by O(h |Delta u|^2).
    double lap = l2_norm_sq(laplacian_apply(g, u.values[k]), g.m);
    r.tol = (1e-4 + 10.0 * h) * std::max({1.0, std::abs(r.lhs), std::abs(r.rhs), lap});
    r.ok = r.lhs >= r.rhs - r.tol;
    return r;
}

} // namespace dynflow
