// dynflow: command-line driver for scenarios, flows and certification.
//
// Exit codes: 0 certified/ok, 1 refuted/validation failed, 2 inconclusive,
// 3 usage or input error, 4 other failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "dynflow/certify.hpp"
#include "dynflow/config.hpp"

using namespace dynflow;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 3;
constexpr int kExitFailure = 4;

std::string num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

double parse_number(const std::string& s) {
    if (s == "inf" || s == "infinity") return kInf;
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw ValidationError("not a number: " + s);
    return v;
}

struct Loaded {
    json config;
    SpaceSpec space;
};

Loaded load(const std::string& path) {
    Loaded l;
    l.config = read_json_file(path);
    l.space = build_space(l.config);
    return l;
}

double node_x(const SpaceSpec& s, std::size_t i) {
    double den = s.topology.is_cycle() ? static_cast<double>(s.n()) : static_cast<double>(s.n() - 1);
    return static_cast<double>(i) / den;
}

// --field: a probe object ({"kind": "mode", "k": 1}) or an expression in x in [0, 1].
Vec field_from_arg(const SpaceSpec& s, const std::string& arg) {
    if (!arg.empty() && arg.front() == '{') return eval_field(s, json::parse(arg));
    Expr e = Expr::compile(arg, {"x"});
    Vec u(s.n());
    for (std::size_t i = 0; i < s.n(); ++i) u[i] = e({node_x(s, i)});
    return u;
}

// --measure: a probe object, "dirac:c" or "bump:c:w" with c, w in normalized coordinates.
MeasureVec measure_from_arg(const SpaceSpec& s, const std::string& arg, double t) {
    json probe;
    if (!arg.empty() && arg.front() == '{') {
        probe = json::parse(arg);
    } else {
        std::vector<std::string> parts;
        std::stringstream ss(arg);
        for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
        if (parts.size() == 2 && parts[0] == "dirac")
            probe = {{"kind", "dirac"}, {"center", parse_number(parts[1])}};
        else if (parts.size() == 3 && parts[0] == "bump")
            probe = {{"kind", "bump"}, {"center", parse_number(parts[1])}, {"width", parse_number(parts[2])}};
        else
            throw ValidationError("measure must be dirac:c, bump:c:w or a JSON probe");
    }
    return eval_measure(s, probe, t);
}

std::string trajectory_csv(const Trajectory& tr, std::size_t every) {
    std::ostringstream o;
    o << "t";
    std::size_t n = tr.values.empty() ? 0 : tr.values[0].size();
    for (std::size_t i = 0; i < n; ++i) o << ",u" << i;
    o << "\n";
    for (std::size_t k = 0; k < tr.size(); ++k) {
        if (k % every != 0 && k + 1 != tr.size()) continue;
        o << num(tr.times[k]);
        for (double v : tr.values[k]) o << "," << num(v);
        o << "\n";
    }
    return o.str();
}

std::string summary_csv(const json& report) {
    std::ostringstream o;
    o << "condition,K,N,verdict,evaluated,cells,min_margin,min_ratio,witness_stable\n";
    for (const auto& c : report.at("conditions")) {
        auto numeric = [](const json& v) { return v.is_number() ? num(v.get<double>()) : v.get<std::string>(); };
        o << c.at("condition").get<std::string>() << "," << numeric(c.at("K")) << "," << numeric(c.at("N")) << ","
          << c.at("verdict").get<std::string>() << "," << c.at("evaluated").get<std::size_t>() << ","
          << c.at("cells").size() << "," << numeric(c.at("min_margin")) << "," << numeric(c.at("min_ratio")) << ","
          << (c.contains("witness") ? (c["witness"].at("stable").get<bool>() ? "true" : "false") : "") << "\n";
    }
    return o.str();
}

std::string space_csv(const SpaceSpec& s, const std::vector<double>& times) {
    std::ostringstream o;
    o << "t,node,x,edge_length,log_density,measure\n";
    for (double t : times) {
        Vec len = edge_lengths(s, t), f = log_density(s, t), m = node_measure(s, t);
        for (std::size_t i = 0; i < s.n(); ++i) {
            double l = i < len.size() ? len[i] : 0.0;
            o << num(t) << "," << i << "," << num(node_x(s, i)) << "," << num(l) << "," << num(f[i]) << ","
              << num(m[i]) << "\n";
        }
    }
    return o.str();
}

json regularity_json(const SpaceSpec& s, const RegularityReport& r) {
    return {{"ok", r.ok},           {"L_declared", s.L},      {"C_declared", s.C},
            {"L_observed", r.L_observed}, {"C_observed", r.C_observed},
            {"spatial_lip_observed", r.spatial_lip_observed}, {"samples", r.samples},
            {"problems", r.problems}, {"t_min", s.t_min},     {"t_max", s.t_max}};
}

Scheme parse_scheme(const std::string& s) {
    if (s == "ie" || s == "implicit_euler") return Scheme::ImplicitEuler;
    if (s == "cn" || s == "crank_nicolson") return Scheme::CrankNicolson;
    throw ValidationError("unknown scheme " + s);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynflow: heat flows and curvature conditions on time-dependent graph spaces"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    // catalog
    auto* cat = app.add_subcommand("catalog", "List built-in scenarios and their expected verdicts");
    bool cat_json = false;
    cat->add_flag("--json", cat_json, "Print JSON");

    // export
    auto* exp = app.add_subcommand("export", "Write a scenario config file");
    std::string exp_name, exp_out;
    std::size_t exp_n = 0;
    exp->add_option("scenario", exp_name, "Catalog name")->required();
    exp->add_option("--n", exp_n, "Node count (default: catalog default)");
    exp->add_option("--out", exp_out, "Output file (default: stdout)");

    // validate
    auto* val = app.add_subcommand("validate", "Check the declared regularity constants of a config");
    std::string val_cfg;
    std::size_t val_samples = 64;
    val->add_option("config", val_cfg)->required();
    val->add_option("--samples", val_samples, "Sample times")->check(CLI::Range(2, 1000000));

    // simulate
    auto* sim = app.add_subcommand("simulate", "Run the heat flow (--field) or the dual flow (--measure)");
    std::string sim_cfg, sim_field, sim_measure, sim_scheme = "cn", sim_out;
    std::string sim_from, sim_to;
    std::size_t sim_steps = 64, sim_every = 1;
    sim->add_option("config", sim_cfg)->required();
    sim->add_option("--from", sim_from, "Start time (default t_min for fields, t_max for measures)");
    sim->add_option("--to", sim_to, "End time (default t_max for fields, t_min for measures)");
    auto* o_field = sim->add_option("--field", sim_field, "Initial field: expression in x or JSON probe");
    auto* o_meas = sim->add_option("--measure", sim_measure, "Terminal measure: dirac:c, bump:c:w or JSON probe");
    o_field->excludes(o_meas);
    sim->add_option("--scheme", sim_scheme, "ie or cn");
    sim->add_option("--steps", sim_steps)->check(CLI::PositiveNumber);
    sim->add_option("--every", sim_every, "Write every k-th knot")->check(CLI::PositiveNumber);
    sim->add_option("--out", sim_out, "Output directory")->required();

    // certify
    auto* cer = app.add_subcommand("certify", "Certify or refute conditions (I)-(IV)");
    std::string cer_cfg, cer_out, cer_N = "inf", cer_scheme = "ie";
    double cer_K = 0.0, cer_seconds = 900.0;
    std::size_t cer_budget = 48, cer_n = 0, cer_steps = 2048, cer_threads = 0;
    std::uint64_t cer_seed = 1;
    std::vector<std::string> cer_conditions{"I", "II", "III", "IV"};
    cer->add_option("config", cer_cfg)->required();
    cer->add_option("--K", cer_K);
    cer->add_option("--N", cer_N, "Dimension bound, or inf");
    cer->add_option("--budget", cer_budget, "Cells per condition");
    cer->add_option("--seed", cer_seed);
    cer->add_option("--n", cer_n, "Rebuild the space at this node count");
    cer->add_option("--steps", cer_steps, "Time steps per flow")->check(CLI::PositiveNumber);
    cer->add_option("--max-seconds", cer_seconds);
    cer->add_option("--threads", cer_threads, "Worker threads (default DYNFLOW_THREADS or all cores)");
    cer->add_option("--scheme", cer_scheme, "ie or cn");
    cer->add_option("--conditions", cer_conditions)->delimiter(',');
    cer->add_option("--out", cer_out, "Output directory")->required();

    // transform
    auto* tra = app.add_subcommand("transform", "Apply the K-transform to a config");
    std::string tra_cfg, tra_out;
    double tra_K = 0.0, tra_C = 1.0;
    tra->add_option("config", tra_cfg)->required();
    tra->add_option("--K", tra_K)->required();
    tra->add_option("--C", tra_C);
    tra->add_option("--out", tra_out, "Output file (default: stdout)");

    // report
    auto* rep = app.add_subcommand("report", "Summarize a run directory");
    std::string rep_dir, rep_csv;
    rep->add_option("dir", rep_dir)->required();
    rep->add_option("--csv", rep_csv, "Also write the summary table here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (cat->parsed()) {
            json out = json::array();
            for (const auto& e : scenario_catalog()) {
                json ev = json::array();
                for (const auto& x : e.expected)
                    ev.push_back({{"K", x.K}, {"N", number_or_inf(x.N)}, {"verdict", verdict_name(x.verdict)},
                                  {"provenance", x.provenance}});
                out.push_back({{"name", e.name}, {"description", e.description}, {"params", e.params},
                               {"default_n", e.default_n}, {"expected", ev}});
            }
            if (cat_json) {
                std::cout << dump(out);
            } else {
                for (const auto& e : out) {
                    std::cout << e["name"].get<std::string>() << "  (n=" << e["default_n"] << ")  "
                              << e["description"].get<std::string>() << "\n";
                    for (const auto& x : e["expected"])
                        std::cout << "    K=" << num(x["K"].get<double>()) << " N="
                                  << (x["N"].is_string() ? x["N"].get<std::string>() : num(x["N"].get<double>())) << ": " << x["verdict"].get<std::string>()
                                  << " [" << x["provenance"].get<std::string>() << "]\n";
                }
            }
            return 0;
        }

        if (exp->parsed()) {
            auto entry = find_scenario(exp_name);
            if (!entry) throw ValidationError("unknown scenario " + exp_name);
            SpaceSpec s = entry->build(exp_n ? exp_n : entry->default_n);
            std::string text = dump(space_config(s));
            if (exp_out.empty()) std::cout << text;
            else write_text_file(exp_out, text);
            return 0;
        }

        if (val->parsed()) {
            Loaded l = load(val_cfg);
            RegularityReport r = validate_regularity(l.space, val_samples);
            std::cout << dump(regularity_json(l.space, r));
            return r.ok ? 0 : 1;
        }

        if (sim->parsed()) {
            Loaded l = load(sim_cfg);
            const SpaceSpec& s = l.space;
            if (sim_field.empty() == sim_measure.empty()) throw ValidationError("give exactly one of --field, --measure");
            bool forward = !sim_field.empty();
            double from = sim_from.empty() ? (forward ? s.t_min : s.t_max) : parse_number(sim_from);
            double to = sim_to.empty() ? (forward ? s.t_max : s.t_min) : parse_number(sim_to);
            SchemeConfig cfg;
            cfg.scheme = parse_scheme(sim_scheme);
            cfg.n_steps = sim_steps;

            RunManifest m;
            m.command = "simulate";
            m.config_path = sim_cfg;
            m.config = l.config;
            m.arguments = {{"from", from}, {"to", to}, {"scheme", scheme_name(cfg.scheme)}, {"steps", sim_steps},
                           {"every", sim_every}};
            m.output_dir = sim_out;
            m.started = utc_timestamp();

            Trajectory tr;
            json summary;
            if (forward) {
                if (!(from < to)) throw ValidationError("heat flow runs forward: need --from < --to");
                m.arguments["field"] = sim_field;
                Vec u = field_from_arg(s, sim_field);
                tr = Propagator(s, from, to, cfg).forward_trajectory(u);
                summary = {{"kind", "heat"}, {"final", tr.values.back()}};
            } else {
                if (!(to < from)) throw ValidationError("dual flow runs backward: need --to < --from");
                m.arguments["measure"] = sim_measure;
                MeasureVec mu = measure_from_arg(s, sim_measure, from);
                tr = Propagator(s, to, from, cfg).dual_trajectory(mu.masses);
                double drift = 0.0;
                for (const Vec& v : tr.values) {
                    double tot = 0.0;
                    for (double x : v) tot += x;
                    drift = std::max(drift, std::abs(tot - 1.0));
                }
                summary = {{"kind", "dual"}, {"final", tr.values.front()}, {"mass_drift", drift}};
            }
            m.write_output("trajectory.csv", trajectory_csv(tr, sim_every));
            m.write_output("space.csv", space_csv(s, {std::min(from, to), std::max(from, to)}));
            m.write_output("summary.json", dump(summary));
            m.finished = utc_timestamp();
            m.save();
            return 0;
        }

        if (cer->parsed()) {
            Loaded l = load(cer_cfg);
            CertBudget b;
            b.cells = cer_budget;
            b.n = cer_n;
            b.n_steps = cer_steps;
            b.max_seconds = cer_seconds;
            b.seed = cer_seed;
            b.threads = cer_threads;
            b.scheme = parse_scheme(cer_scheme);
            double N = parse_number(cer_N);

            RunManifest m;
            m.command = "certify";
            m.config_path = cer_cfg;
            m.config = l.config;
            m.arguments = {{"K", cer_K}, {"N", number_or_inf(N)}, {"conditions", cer_conditions}};
            m.seed = cer_seed;
            m.budget = b.to_json();
            m.output_dir = cer_out;
            m.started = utc_timestamp();

            CertReport r = certify(l.space, cer_K, N, b, cer_conditions);
            json j = r.to_json();
            m.write_output("report.json", dump(j));
            m.write_output("summary.csv", summary_csv(j));
            m.exit_code = exit_code(r.verdict);
            m.finished = utc_timestamp();
            m.save();
            std::cout << verdict_name(r.verdict) << "\n";
            for (const auto& e : r.conditions)
                std::cout << "  " << e.condition << ": " << verdict_name(e.verdict) << "  min margin/tol "
                          << num(e.min_ratio) << "\n";
            return m.exit_code;
        }

        if (tra->parsed()) {
            Loaded l = load(tra_cfg);
            SpaceSpec t = k_transform(l.space, tra_K, tra_C);
            json out = l.config;
            if (std::abs(tra_K) >= 1e-14) out["transforms"].push_back({{"K", tra_K}, {"C", tra_C}});
            build_space(out);  // must reload
            std::string text = dump(out);
            if (tra_out.empty()) std::cout << text;
            else write_text_file(tra_out, text);
            std::cerr << "window [" << num(t.t_min) << ", " << num(t.t_max) << "]\n";
            return 0;
        }

        if (rep->parsed()) {
            fs::path dir(rep_dir);
            if (!fs::is_directory(dir)) throw ValidationError(rep_dir + " is not a directory");
            if (!fs::exists(dir / "manifest.json")) throw ValidationError(rep_dir + " has no manifest.json");
            RunManifest m = RunManifest::from_json(read_json_file(dir / "manifest.json"));
            for (const auto& f : m.outputs)
                if (!fs::exists(dir / f)) throw ValidationError("manifest lists missing output " + f);
            std::cout << "command   " << m.command << "\nconfig    " << m.config_path << "\nversion   "
                      << m.tool_version << "\nstarted   " << m.started << "\nfinished  " << m.finished << "\n";
            if (m.command == "certify") {
                json r = read_json_file(dir / "report.json");
                std::cout << "scenario  " << r.at("scenario").get<std::string>() << "  n=" << r.at("n")
                          << "  K=" << r.at("K") << "  N=" << r.at("N") << "\nverdict   "
                          << r.at("verdict").get<std::string>() << "\n\n";
                std::string table = summary_csv(r);
                std::cout << table;
                if (!rep_csv.empty()) write_text_file(rep_csv, table);
            } else if (m.command == "simulate") {
                json s = read_json_file(dir / "summary.json");
                std::cout << "flow      " << s.at("kind").get<std::string>() << "\n";
                if (s.contains("mass_drift")) std::cout << "mass drift " << num(s["mass_drift"].get<double>()) << "\n";
            }
            return 0;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
