#pragma once

// JSON configs for spaces, and the run manifest written next to CLI outputs.
//
// A config names a builder or catalog entry:
//   {"scenario": "scaling_circle", "n": 64, "params": {"c": 0.5}, "transforms": [{"K": 1, "C": 1}]}
// or describes a space directly with expressions in (t, x), x in [0, 1]:
//   {"scenario": "custom", "topology": "cycle", "n": 64, "t_min": 0, "t_max": 1,
//    "edge_length": "exp(t)", "log_density": "0", "L": 1, "C": 0}
// For custom spaces an edge gets length edge_length(t, x_e) / (number of edges).
// Top-level "L", "C", "K", "N" override the declared constants of the built space;
// transforms are applied after the overrides.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dynflow/scenarios.hpp"

namespace dynflow {

using json = nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";

namespace detail {

inline double get_number(const json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        std::string s = v.get<std::string>();
        if (s == "inf" || s == "infinity") return kInf;
        if (s == "-inf") return -kInf;
    }
    throw ValidationError(std::string("config: '") + key + "' must be a number");
}

inline std::string get_string(const json& j, const char* key, const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_string()) throw ValidationError(std::string("config: '") + key + "' must be a string");
    return j.at(key).get<std::string>();
}

} // namespace detail

inline SpaceSpec custom_space(std::size_t n, const json& cfg) {
    std::string topo = detail::get_string(cfg, "topology", "path");
    if (topo != "path" && topo != "cycle") throw ValidationError("config: topology must be 'path' or 'cycle'");
    bool cycle = topo == "cycle";
    if (n < (cycle ? 3u : 2u)) throw ValidationError("config: too few nodes");
    double t0 = detail::get_number(cfg, "t_min", 0.0), t1 = detail::get_number(cfg, "t_max", 1.0);
    if (!(t1 > t0)) throw ValidationError("config: need t_min < t_max");
    std::string len_src = detail::get_string(cfg, "edge_length", "1");
    std::string f_src = detail::get_string(cfg, "log_density", "0");
    Expr len = Expr::compile(len_src, {"t", "x"}), f = Expr::compile(f_src, {"t", "x"});

    SpaceSpec s;
    s.name = "custom";
    s.topology = cycle ? Topology::cycle(n) : Topology::path(n);
    s.t_min = t0;
    s.t_max = t1;
    double ne = static_cast<double>(s.topology.edge_count());
    double node_den = cycle ? static_cast<double>(n) : static_cast<double>(n - 1);
    s.edge_length = [len, ne](double t, std::size_t e) { return len({t, (static_cast<double>(e) + 0.5) / ne}) / ne; };
    s.log_density = [f, node_den](double t, std::size_t i) { return f({t, static_cast<double>(i) / node_den}); };

    // Undeclared constants are estimated from samples, with the margin of the builders.
    if (!cfg.contains("L") || !cfg.contains("C")) {
        s.L = kInf;
        s.C = kInf;
        auto r = validate_regularity(s, 401);
        s.L = r.L_observed * 1.05 + 1e-12;
        s.C = r.C_observed * 1.05 + 1e-12;
    }
    s.source = {{"scenario", "custom"}, {"n", n}};
    for (const char* key : {"topology", "t_min", "t_max", "edge_length", "log_density"})
        if (cfg.contains(key)) s.source[key] = cfg.at(key);
    json keep = cfg;
    s.refine = [keep](std::size_t m) { return custom_space(m, keep); };
    return s;
}

inline bool is_builder(const std::string& name) {
    return name == "static_interval" || name == "scaling_circle" || name == "wandering_gaussian" ||
           name == "piecewise_diffusivity";
}

inline SpaceSpec build_scenario(const std::string& name, std::size_t n, const json& p) {
    using detail::get_number;
    using detail::get_string;
    if (name == "static_interval")
        return static_interval(n, get_string(p, "V", "0"), get_number(p, "length", 2.0 * M_PI), get_number(p, "T", 1.0));
    if (name == "scaling_circle")
        return scaling_circle(n, get_number(p, "c", 0.0), get_number(p, "T", 1.0),
                              get_number(p, "circumference", 2.0 * M_PI));
    if (name == "wandering_gaussian")
        return wandering_gaussian(n, get_number(p, "T", 2.0), get_string(p, "alpha", "sin(t)"),
                                  get_string(p, "beta", "cos(t)"), get_string(p, "gamma", "0"), get_number(p, "R", 2.0));
    if (name == "piecewise_diffusivity")
        return piecewise_diffusivity(n, get_number(p, "T", 1.0), get_number(p, "length", 2.0 * M_PI));
    throw ValidationError("config: unknown scenario '" + name + "'");
}

inline SpaceSpec build_space(const json& cfg) {
    if (!cfg.is_object()) throw ValidationError("config: expected a JSON object");
    std::string name = detail::get_string(cfg, "scenario", "");
    if (name.empty()) throw ValidationError("config: missing 'scenario'");
    std::size_t n = 0;
    if (cfg.contains("n")) {
        double v = detail::get_number(cfg, "n", 0.0);
        if (!(v >= 2.0) || v != std::floor(v)) throw ValidationError("config: 'n' must be an integer >= 2");
        n = static_cast<std::size_t>(v);
    }
    json params = cfg.value("params", json::object());

    SpaceSpec s;
    if (name == "custom") {
        s = custom_space(n ? n : 64, cfg);
    } else if (is_builder(name)) {
        auto entry = find_scenario(name);
        s = build_scenario(name, n ? n : (entry ? entry->default_n : 64), params);
    } else if (auto entry = find_scenario(name)) {
        if (!params.empty()) throw ValidationError("config: catalog entry '" + name + "' takes no params");
        s = entry->build(n ? n : entry->default_n);
    } else {
        throw ValidationError("config: unknown scenario '" + name + "'");
    }

    json overrides = json::object();
    for (const char* key : {"L", "C", "K", "N"}) {
        if (!cfg.contains(key)) continue;
        double v = detail::get_number(cfg, key, 0.0);
        overrides[key] = cfg.at(key);
        if (key[0] == 'L') s.L = v;
        else if (key[0] == 'C') s.C = v;
        else if (key[0] == 'K') s.K = v;
        else s.N = v;
    }
    if (!overrides.empty()) {
        // Keep overrides when the space is rebuilt at another resolution.
        auto ref = s.refine;
        if (ref)
            s.refine = [ref, overrides](std::size_t m) {
                SpaceSpec r = ref(m);
                if (overrides.contains("L")) r.L = detail::get_number(overrides, "L", 0.0);
                if (overrides.contains("C")) r.C = detail::get_number(overrides, "C", 0.0);
                if (overrides.contains("K")) r.K = detail::get_number(overrides, "K", 0.0);
                if (overrides.contains("N")) r.N = detail::get_number(overrides, "N", kInf);
                return r;
            };
        for (auto& [k, v] : overrides.items()) s.source[k] = v;
    }
    if (cfg.contains("transforms")) {
        for (const auto& tr : cfg.at("transforms")) {
            double K = detail::get_number(tr, "K", 0.0), C = detail::get_number(tr, "C", 1.0);
            s = k_transform(s, K, C);
        }
    }
    check_spec(s);
    return s;
}

/// Config that rebuilds `s` (the `source` record).
inline json space_config(const SpaceSpec& s) { return s.source; }

inline json read_json_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw Error("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(p.string() + ": " + e.what());
    }
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
    if (!out) throw Error("write failed: " + p.string());
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline std::string utc_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Inputs and outputs of one CLI run.  Timestamps live only here, so the
/// output files themselves are byte-identical across reruns.
struct RunManifest {
    std::string command;
    std::string config_path;
    json config;
    json arguments = json::object();
    std::uint64_t seed = 0;
    json budget;
    std::string output_dir;
    std::string tool_version = kToolVersion;
    std::string started;
    std::string finished;
    std::vector<std::string> outputs;
    int exit_code = 0;

    json to_json() const {
        return {{"command", command},   {"config_path", config_path}, {"config", config},
                {"arguments", arguments}, {"seed", seed},             {"budget", budget},
                {"output_dir", output_dir}, {"tool_version", tool_version}, {"started", started},
                {"finished", finished}, {"outputs", outputs},          {"exit_code", exit_code}};
    }

    static RunManifest from_json(const json& j) {
        RunManifest m;
        m.command = j.value("command", "");
        m.config_path = j.value("config_path", "");
        m.config = j.value("config", json::object());
        m.arguments = j.value("arguments", json::object());
        m.seed = j.value("seed", std::uint64_t{0});
        m.budget = j.value("budget", json());
        m.output_dir = j.value("output_dir", "");
        m.tool_version = j.value("tool_version", "");
        m.started = j.value("started", "");
        m.finished = j.value("finished", "");
        m.outputs = j.value("outputs", std::vector<std::string>{});
        m.exit_code = j.value("exit_code", 0);
        return m;
    }

    /// Writes `name` under output_dir and records it.
    void write_output(const std::string& name, const std::string& text) {
        write_text_file(std::filesystem::path(output_dir) / name, text);
        if (std::find(outputs.begin(), outputs.end(), name) == outputs.end()) outputs.push_back(name);
    }

    void save() const { write_text_file(std::filesystem::path(output_dir) / "manifest.json", dump(to_json())); }
};

} // namespace dynflow
