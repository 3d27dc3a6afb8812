// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Optional arguments select criteria by number.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "dynflow/certify.hpp"
#include "dynflow/config.hpp"
#include "dynflow/entflow.hpp"

using namespace dynflow;
namespace fs = std::filesystem;

namespace {

// pinned tolerances
constexpr double kDualityTol = 1e-11;       // relative to |h| |g|
constexpr double kCompositionTol = 1e-10;   // max kernel entry
constexpr double kMaxPrincipleTol = 1e-12;
constexpr double kMassDriftTol = 1e-11;
constexpr double kMinOrder = 1.9;
constexpr double kOtTol = 1e-8;
constexpr double kBakryLedouxFloor = 10.0;  // margin >= -kBakryLedouxFloor / n
constexpr double kKTransformFactor = 2.0;   // x solver tolerance
constexpr double kCommutatorExponent = 0.4;
constexpr double kSandwichRel = 0.05;

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0, ran = 0;
std::vector<int> selected;  // empty: all

void criterion(int id, const std::string& name, double limit_seconds, const std::function<Outcome()>& body) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), id) == selected.end()) return;
    ++ran;
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (el > limit_seconds) {
        o.pass = false;
        o.detail += " (over time limit)";
    }
    if (!o.pass) ++failures;
    std::printf("[%s] %2d %-34s %8.2fs / %4.0fs  %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), el, limit_seconds,
                o.detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

Vec normal_field(Rng& rng, std::size_t n) {
    Vec u(n);
    for (double& x : u) x = rng.normal();
    return u;
}

MeasureVec random_measure(Rng& rng, std::size_t n) {
    MeasureVec m;
    m.masses.assign(n, 0.0);
    for (double& x : m.masses)
        if (rng.uniform() >= 0.3) x = rng.uniform();
    m.masses[rng.index(n)] += 0.1;
    double s = m.total();
    for (double& x : m.masses) x /= s;
    return m;
}

MeasureVec dirac(std::size_t n, std::size_t i) {
    MeasureVec m;
    m.masses.assign(n, 0.0);
    m.masses[i] = 1.0;
    return m;
}

SpaceSpec random_path(Rng& rng, std::size_t n) {
    Vec len(n - 1);
    for (double& l : len) l = rng.uniform(0.2, 1.5);
    SpaceSpec s;
    s.topology = Topology::path(n);
    s.t_min = 0.1;
    s.t_max = 1.0;
    s.edge_length = [len](double, std::size_t e) { return len[e]; };
    s.log_density = [](double, std::size_t) { return 0.0; };
    return s;
}

// classical RK4 on du/dt = Delta_t u
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

double slope(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (std::size_t k = 0; k < x.size(); ++k) mx += x[k] / x.size(), my += y[k] / y.size();
    double sxy = 0, sxx = 0;
    for (std::size_t k = 0; k < x.size(); ++k) sxy += (x[k] - mx) * (y[k] - my), sxx += (x[k] - mx) * (x[k] - mx);
    return sxy / sxx;
}

int run_cli(const std::string& args) {
    std::string cmd = std::string(DYNFLOW_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

int main(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
    std::printf("dynflow acceptance\n");

    criterion(1, "duality identity", 5, [] {
        Rng rng(101);
        double worst = 0.0;
        for (const SpaceSpec& s : {scaling_circle(32, -0.5), wandering_gaussian(33), piecewise_diffusivity(33)}) {
            Propagator P(s, s.t_min, s.t_max, {Scheme::CrankNicolson, 64, AdjointMode::DiscreteAdjoint});
            const Vec& ms = P.knot_measure(0);
            const Vec& mt = P.knot_measure(P.steps());
            for (int k = 0; k < 100; ++k) {
                Vec h = normal_field(rng, s.n()), g = normal_field(rng, s.n());
                double gap = std::abs(dot_weighted(P.forward(h), g, mt) - dot_weighted(h, P.adjoint(g), ms));
                double scale = std::sqrt(dot_weighted(h, h, ms) * dot_weighted(g, g, mt));
                worst = std::max(worst, gap / scale);
            }
        }
        return Outcome{worst <= kDualityTol, fmt("max relative gap %.2e", worst)};
    });

    criterion(2, "propagator property", 5, [] {
        SpaceSpec s = scaling_circle(32, 0.7);
        double worst = 0.0;
        for (Scheme sc : {Scheme::ImplicitEuler, Scheme::CrankNicolson}) {
            // p_{t,r}(x,z) = sum_y p_{t,s}(x,y) p_{s,r}(y,z) m_s(y), grids aligned at s
            double r = 0.2, mid = 0.5, t = 0.8;
            Eigen::MatrixXd A = heat_kernel(s, t, mid, {sc, 30}), B = heat_kernel(s, mid, r, {sc, 30});
            Eigen::MatrixXd D = heat_kernel(s, t, r, {sc, 60});
            Vec m = node_measure(s, mid);
            Eigen::VectorXd mv = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
            Eigen::MatrixXd C = A * mv.asDiagonal() * B;
            worst = std::max(worst, (C - D).cwiseAbs().maxCoeff());
        }
        return Outcome{worst <= kCompositionTol, fmt("max kernel entry difference %.2e", worst)};
    });

    criterion(3, "maximum principle and mass", 5, [] {
        Rng rng(103);
        double below = 0.0, above = 0.0, drift = 0.0;
        for (const SpaceSpec& s : {wandering_gaussian(41), scaling_circle(40, -0.5), piecewise_diffusivity(41)}) {
            SchemeConfig cfg{Scheme::ImplicitEuler, 40};
            Propagator P(s, s.t_min, s.t_max, cfg);
            for (int k = 0; k < 50; ++k) {
                Vec h(s.n());
                for (double& x : h) x = rng.uniform();
                if (k == 0) std::fill(h.begin(), h.end(), 1.0);
                if (k == 1) std::fill(h.begin(), h.end(), 0.0);
                for (double x : P.forward(h)) below = std::max(below, -x), above = std::max(above, x - 1.0);
                MeasureVec mu = random_measure(rng, s.n());
                Trajectory tr = P.dual_trajectory(mu.masses);
                for (const Vec& v : tr.values) {
                    double tot = 0.0;
                    for (double x : v) tot += x;
                    drift = std::max(drift, std::abs(tot - 1.0));
                }
            }
        }
        bool ok = below <= kMaxPrincipleTol && above <= kMaxPrincipleTol && drift <= kMassDriftTol;
        return Outcome{ok, fmt("undershoot %.1e, overshoot %.1e, mass drift %.1e", below, above, drift)};
    });

    criterion(4, "Crank-Nicolson order vs RK4", 30, [] {
        SpaceSpec s = scaling_circle(32, 1.0);
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
        double worst = kInf;
        for (std::size_t j = 1; j < err.size(); ++j) worst = std::min(worst, std::log2(err[j - 1] / err[j]));
        return Outcome{worst >= kMinOrder, fmt("min observed order %.3f over 3 refinements", worst)};
    });

    criterion(5, "OT oracle equivalence", 60, [] {
        Rng rng(105);
        double dw = 0.0, gap = 0.0, infeas = 0.0;
        for (int trial = 0; trial < 50; ++trial) {
            std::size_t n = 2 + rng.index(31);
            SpaceSpec s = random_path(rng, n);
            MeasureVec mu = random_measure(rng, n), nu = random_measure(rng, n);
            auto q = wasserstein(s, mu, nu, 0.5, TransportMethod::Quantile1D);
            auto lp = wasserstein(s, mu, nu, 0.5, TransportMethod::ExactLP);
            dw = std::max(dw, std::abs(q.W - lp.W));
            auto [phi, psi] = kantorovich_potentials(s, mu, nu, 0.5);
            LineGeometry g = LineGeometry::at(s, 0.5);
            double dual = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                dual += phi[i] * mu.masses[i] + psi[i] * nu.masses[i];
                for (std::size_t j = 0; j < n; ++j)
                    infeas = std::max(infeas, phi[i] + psi[j] - 0.5 * g.dist(i, j) * g.dist(i, j));
            }
            gap = std::max(gap, std::abs(0.5 * lp.W2 - dual));
        }
        bool ok = dw <= kOtTol && gap <= kOtTol && infeas <= kOtTol;
        return Outcome{ok, fmt("|W_quantile - W_lp| %.1e, duality gap %.1e, infeasibility %.1e", dw, gap, infeas)};
    });

    criterion(6, "static Bakry-Ledoux, N = 1", 60, [] {
        // continuum minimum of the margin field: 1/2 (1 - e^{-4D}) - 2 D e^{-2D}
        double s0 = 0.1, t0 = 0.2, D = t0 - s0;
        double exact = 0.5 * (1.0 - std::exp(-4 * D)) - 2 * D * std::exp(-2 * D);
        bool ok = true;
        double prev = kInf;
        std::string d;
        for (std::size_t n : {32u, 64u, 128u}) {
            SpaceSpec s = scaling_circle(n, 0.0);
            Vec field;
            verify_III(s, 0.0, 1.0, eval_field(s, {{"kind", "mode"}, {"k", 1}}), s0, t0,
                       {Scheme::ImplicitEuler, 256, AdjointMode::DiscreteAdjoint}, &field);
            double m = *std::min_element(field.begin(), field.end());
            double err = std::abs(m - exact);
            ok = ok && m >= -kBakryLedouxFloor / static_cast<double>(n) && err < prev;
            prev = err;
            d += fmt("n=%.0f min %.2e; ", static_cast<double>(n), m);
        }
        return Outcome{ok, d + fmt("continuum %.2e", exact)};
    });

    criterion(7, "catalog super-Ricci verdicts", 600, [] {
        CertBudget b;
        auto wg = find_scenario("wandering_gaussian");
        CertReport w = certify(wg->build(wg->default_n), 0.0, kInf, b);
        auto ex = find_scenario("expanding_circle");
        CertReport e = certify(ex->build(ex->default_n), 0.0, kInf, b);
        auto sh = find_scenario("shrinking_circle");
        CertReport r = certify(sh->build(sh->default_n), 0.0, kInf, b);
        bool stable = false;
        std::string wit;
        for (const auto& c : r.conditions) {
            if (c.witness && c.witness->stable && c.witness->refined &&
                c.witness->coarse.margin < -kRefuteFactor * c.witness->coarse.tol.total() &&
                c.witness->refined->margin < -kRefuteFactor * c.witness->refined->tol.total()) {
                stable = true;
                wit += c.condition + fmt(" (%.1f tol, refined %.1f tol) ",
                                         c.witness->coarse.margin / c.witness->coarse.tol.total(),
                                         c.witness->refined->margin / c.witness->refined->tol.total());
            }
        }
        bool ok = w.verdict == Verdict::Certified && e.verdict == Verdict::Certified &&
                  r.verdict == Verdict::Refuted && stable;
        return Outcome{ok, "wandering " + verdict_name(w.verdict) + ", expanding " + verdict_name(e.verdict) +
                               ", shrinking " + verdict_name(r.verdict) + " witnesses: " + wit};
    });

    criterion(8, "(II)/(III) coherence", 600, [] {
        CertBudget b;
        bool ok = true;
        std::string d;
        for (const auto& entry : scenario_catalog()) {
            CertReport r = certify(entry.build(entry.default_n), 0.0, kInf, b, {"II", "III"});
            Verdict a = r.get("II").verdict, c = r.get("III").verdict;
            ok = ok && a == c && a != Verdict::Inconclusive;
            d += entry.name + "=" + (a == c ? verdict_name(a) : "DISAGREE") + " ";
        }
        return Outcome{ok, d};
    });

    criterion(9, "K-transform consistency", 120, [] {
        SpaceSpec s = scaling_circle(128, 0.3);
        SchemeConfig cfg{Scheme::ImplicitEuler, 1024, AdjointMode::DiscreteAdjoint};
        MeasureVec mu = eval_measure(s, {{"kind", "bump"}, {"center", 0.3}, {"width", 0.05}}, 0.0);
        MeasureVec nu = eval_measure(s, {{"kind", "bump"}, {"center", 0.5}, {"width", 0.08}}, 0.0);
        double worst = 0.0;
        for (double K : {0.5, -0.5}) {
            double C = 1.0;
            SpaceSpec st = k_transform(s, K, C);
            for (auto [a, b] : std::vector<std::pair<double, double>>{
                     {0.15, 0.3}, {0.2, 0.6}, {0.3, 0.9}, {0.5, 1.0}, {0.15, 1.0}}) {
                for (double N : {kInf, 2.0}) {
                    auto r = verify_II(s, K, N, mu, nu, a, b, cfg);
                    auto q = verify_II(st, 0.0, N, mu, nu, k_time_inverse(K, C, a), k_time_inverse(K, C, b), cfg);
                    double tol = tolerance(r.scale, s.n(), cfg.n_steps).total();
                    worst = std::max(worst, std::abs(r.margin - q.margin) / tol);
                }
            }
        }
        return Outcome{worst <= kKTransformFactor, fmt("max |margin difference| / tol %.2e", worst)};
    });

    criterion(10, "a-priori estimate suite", 300, [] {
        Rng rng(110);
        bool energy = true, entropy = true, lp = true, comm = true;
        double min_exp = kInf;
        std::string d;
        for (const auto& entry : scenario_catalog()) {
            SpaceSpec s = entry.build(33);
            std::size_t n = s.n();
            Vec u = normal_field(rng, n);
            energy = energy && energy_decay_check(s, u, s.t_min, s.t_max, {Scheme::CrankNicolson, 128}).ok;

            Vec pos(n), g(n);
            for (std::size_t i = 0; i < n; ++i) pos[i] = 1.0 + rng.uniform(0, 3), g[i] = rng.uniform(0, 2);
            Propagator P(s, s.t_min, s.t_max, {Scheme::ImplicitEuler, 64});
            entropy = entropy &&
                      entropy_bounds_check(s, P.forward_trajectory(pos), P.adjoint_trajectory(g), s.t_min, s.t_max).ok;

            lp = lp && lp_norm_report(s, s.t_max, s.t_min, {Scheme::ImplicitEuler, 32}, 32, 9).ok;

            // commutator: residual within the bound, and ~ (t - s)^{1/2} or faster where it is nonzero
            Vec cu(n), cg(n);
            for (std::size_t i = 0; i < n; ++i) {
                double x = static_cast<double>(i) / static_cast<double>(n);
                cu[i] = std::sin(2 * M_PI * x);
                cg[i] = 1.0 + 0.5 * std::sin(2 * M_PI * x) + 0.3 * std::cos(4 * M_PI * x);
            }
            double a = s.t_min, b = s.t_max, span = b - a;
            std::vector<double> lx, ly;
            bool bounded = true, vanishing = true;
            for (int k = 0; k < 4; ++k) {
                double dd = 0.2 * span / std::pow(2.0, k);
                auto r = commutator_residual(s, cu, cg, a, b, a + 0.3 * span, a + 0.3 * span + dd,
                                             {Scheme::CrankNicolson, 160});
                bounded = bounded && r.ok;
                vanishing = vanishing && r.residual <= 1e-12;
                lx.push_back(std::log(r.t - r.s));
                ly.push_back(std::log(std::max(r.residual, 1e-300)));
            }
            double e = vanishing ? kInf : slope(lx, ly);
            min_exp = std::min(min_exp, e);
            comm = comm && bounded && e >= kCommutatorExponent;
            d += entry.name + (vanishing ? "=0 " : fmt("=%.2f ", e));
        }
        bool ok = energy && entropy && lp && comm;
        std::string flags = std::string("energy ") + (energy ? "ok" : "FAIL") + ", entropy " + (entropy ? "ok" : "FAIL") +
                            ", Lp " + (lp ? "ok" : "FAIL") + ", commutator exponents ";
        return Outcome{ok, flags + d};
    });

    criterion(11, "W_{s,t} sandwich", 60, [] {
        bool ok = true;
        double worst = 0.0;
        for (double c : {0.5, -0.5}) {
            std::size_t n = 32;
            SpaceSpec s = scaling_circle(n, c);
            Rng rng(111);
            for (int trial = 0; trial < 8; ++trial) {
                std::size_t i = rng.index(n), j = rng.index(n);
                if (i == j) j = (i + 5) % n;
                auto r = w_st(s, dirac(n, i), dirac(n, j), s.t_min, s.t_max);
                double ratio = r.W_st / r.W_s;
                double excess = std::max(r.lower / ratio - 1.0, ratio / r.upper - 1.0);
                worst = std::max(worst, excess);
                ok = ok && ratio >= r.lower * (1.0 - kSandwichRel) && ratio <= r.upper * (1.0 + kSandwichRel);
            }
        }
        return Outcome{ok, fmt("largest relative excursion outside the bounds %.2e", std::max(worst, 0.0))};
    });

    criterion(12, "determinism of certify reports", 120, [] {
        fs::path dir = fs::temp_directory_path() / ("dynflow_acceptance_" + std::to_string(getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        write_text_file(dir / "space.json",
                        dump({{"scenario", "scaling_circle"}, {"n", 64}, {"params", {{"c", -0.5}}}}));
        std::string base = "certify " + (dir / "space.json").string() + " --K 0 --N inf --budget 24 --steps 512 --seed 3";
        int a = run_cli(base + " --threads 1 --out " + (dir / "a").string());
        int b = run_cli(base + " --out " + (dir / "b").string());
        bool same = true;
        for (const char* f : {"report.json", "summary.csv"}) {
            std::string x = slurp(dir / "a" / f), y = slurp(dir / "b" / f);
            same = same && !x.empty() && x == y;
        }
        fs::remove_all(dir);
        return Outcome{same && a == b && a <= 2, fmt("exit codes %.0f/%.0f, reports ", a, b) +
                                                   (same ? "byte-identical" : "DIFFER")};
    });

    std::printf("%s: %d of %d criteria failed\n", failures ? "FAIL" : "PASS", failures, ran);
    return failures ? 1 : 0;
}
