#pragma once

#include "netrecover/campaign.hpp"
#include "netrecover/estimator.hpp"
#include "netrecover/io.hpp"
#include "netrecover/types.hpp"

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace netrecover {

/// Parse a JSON document, reporting syntax errors as "<source>:<line>:<col>".
inline Json parse_json_text(const std::string& text, const std::string& source) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        std::size_t line = 1, col = 1;
        const std::size_t end = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
        for (std::size_t i = 0; i < end; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::string what = e.what();
        if (const auto pos = what.find("syntax error"); pos != std::string::npos) what = what.substr(pos);
        throw InputError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what);
    }
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Json read_json_file(const std::string& path) { return parse_json_text(read_text_file(path), path); }

/// Typed access to one JSON object. Every key read is recorded; finish() rejects
/// keys that were never read.
class ConfigReader {
public:
    ConfigReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw InputError("config field '" + display() + "': expected an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const Json& raw(const std::string& key) {
        if (!has(key)) throw InputError("config field '" + field(key) + "' is required");
        return j_.at(key);
    }

    double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }
    double number(const std::string& key) {
        const Json& v = raw(key);
        if (!v.is_number()) type_error(key, "a number", v);
        return v.get<double>();
    }

    std::int64_t integer(const std::string& key, std::int64_t fallback) { return has(key) ? integer(key) : fallback; }
    std::int64_t integer(const std::string& key) {
        const Json& v = raw(key);
        if (!v.is_number_integer()) type_error(key, "an integer", v);
        return v.get<std::int64_t>();
    }

    std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
        if (!has(key)) return fallback;
        const Json& v = raw(key);
        if (v.is_number_unsigned()) return v.get<std::uint64_t>();
        if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
        type_error(key, "a nonnegative integer", v);
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const Json& v = raw(key);
        if (!v.is_boolean()) type_error(key, "true or false", v);
        return v.get<bool>();
    }

    std::string string(const std::string& key, const std::string& fallback) { return has(key) ? string(key) : fallback; }
    std::string string(const std::string& key) {
        const Json& v = raw(key);
        if (!v.is_string()) type_error(key, "a string", v);
        return v.get<std::string>();
    }

    std::string choice(const std::string& key, const std::vector<std::string>& options, const std::string& fallback) {
        const std::string s = string(key, fallback);
        if (std::find(options.begin(), options.end(), s) == options.end()) {
            std::string list;
            for (const auto& o : options) list += (list.empty() ? "" : ", ") + o;
            throw InputError("config field '" + field(key) + "': '" + s + "' is not one of " + list);
        }
        return s;
    }

    std::vector<double> numbers(const std::string& key) {
        const Json& v = raw(key);
        if (!v.is_array()) type_error(key, "an array of numbers", v);
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number())
                throw InputError("config field '" + field(key) + "[" + std::to_string(i) + "]': expected a number");
            out.push_back(v[i].get<double>());
        }
        return out;
    }

    /// A scalar or an array of numbers, returned as a vector.
    std::vector<double> scalar_or_numbers(const std::string& key, std::vector<double> fallback) {
        if (!has(key)) return fallback;
        if (j_.at(key).is_number()) return {j_.at(key).get<double>()};
        return numbers(key);
    }

    ConfigReader child(const std::string& key) { return ConfigReader(raw(key), field(key)); }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw InputError("config field '" + field(k) + "' is not recognized");
    }

private:
    std::string display() const { return path_.empty() ? "<root>" : path_; }

    [[noreturn]] void type_error(const std::string& key, const char* expected, const Json& got) const {
        throw InputError("config field '" + field(key) + "': expected " + expected + ", got " + got.type_name());
    }

    const Json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline ShockConfig shock_from_config(ConfigReader r, ShockConfig s = {}) {
    s.unit_effects = r.boolean("unit_effects", s.unit_effects);
    s.unit_scale = r.number("unit_scale", s.unit_scale);
    s.time_effects = r.boolean("time_effects", s.time_effects);
    s.time_scale = r.number("time_scale", s.time_scale);
    s.noise_sd = r.number("noise_sd", s.noise_sd);
    s.noise_cross_correlation = r.number("noise_cross_correlation", s.noise_cross_correlation);
    if (r.has("covariate_shock_loading")) {
        const auto v = r.numbers("covariate_shock_loading");
        if (v.size() != 2)
            throw InputError("config field '" + r.field("covariate_shock_loading") + "': expected two numbers");
        s.covariate_shock_loading = {v[0], v[1]};
    }
    s.seed = r.seed("seed", s.seed);
    r.finish();
    if (s.noise_sd < 0) throw InputError("config field '" + r.field("noise_sd") + "': must be nonnegative");
    if (s.noise_cross_correlation < 0 || s.noise_cross_correlation > 1)
        throw InputError("config field '" + r.field("noise_cross_correlation") + "': must lie in [0, 1]");
    return s;
}

inline std::vector<PenaltyTriple> parse_penalty_grid(const std::string& text) {
    std::vector<PenaltyTriple> grid;
    std::stringstream all(text);
    std::string item;
    while (std::getline(all, item, ',')) {
        std::stringstream parts(item);
        std::string a, b, c, extra;
        if (!std::getline(parts, a, ':') || !std::getline(parts, b, ':') || !std::getline(parts, c, ':') ||
            std::getline(parts, extra, ':'))
            throw InputError("grid entry '" + item + "' must have the form p1:p1_star:p2");
        grid.push_back({detail::parse_number(a, "grid"), detail::parse_number(b, "grid"), detail::parse_number(c, "grid")});
    }
    if (grid.empty()) throw InputError("penalty grid is empty");
    return grid;
}

inline EstimatorConfig estimator_from_config(ConfigReader r, EstimatorConfig c = {}) {
    if (r.has("penalty")) {
        auto p = r.child("penalty");
        c.penalty.adaptive_exponent = p.number("adaptive_exponent", c.penalty.adaptive_exponent);
        if (p.has("axis") && p.has("grid"))
            throw InputError("config field '" + p.field("grid") + "': give either axis or grid, not both");
        if (p.has("axis")) c.penalty.grid = penalty_cube(p.numbers("axis"));
        if (p.has("grid")) {
            const Json& g = p.raw("grid");
            if (g.is_string()) {
                c.penalty.grid = parse_penalty_grid(g.get<std::string>());
            } else if (g.is_array()) {
                c.penalty.grid.clear();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (!g[i].is_array() || g[i].size() != 3 || !g[i][0].is_number() || !g[i][1].is_number() ||
                        !g[i][2].is_number())
                        throw InputError("config field '" + p.field("grid") + "[" + std::to_string(i) +
                                         "]': expected [p1, p1_star, p2]");
                    c.penalty.grid.push_back({g[i][0].get<double>(), g[i][1].get<double>(), g[i][2].get<double>()});
                }
            } else {
                throw InputError("config field '" + p.field("grid") + "': expected a string or an array of triples");
            }
        }
        p.finish();
    }
    if (r.has("gmm")) {
        auto g = r.child("gmm");
        c.gmm.moment_source =
            g.choice("moment_source", {"covariates", "instruments"}, "covariates") == "instruments"
                ? MomentSource::instruments
                : MomentSource::covariates;
        c.gmm.max_iterations = static_cast<int>(g.integer("max_iterations", c.gmm.max_iterations));
        c.gmm.gradient_tolerance = g.number("gradient_tolerance", c.gmm.gradient_tolerance);
        c.gmm.parameter_tolerance = g.number("parameter_tolerance", c.gmm.parameter_tolerance);
        c.gmm.particle_count = static_cast<int>(g.integer("particle_count", c.gmm.particle_count));
        c.gmm.swarm_iterations = static_cast<int>(g.integer("swarm_iterations", c.gmm.swarm_iterations));
        c.gmm.inertia = g.number("inertia", c.gmm.inertia);
        c.gmm.cognitive = g.number("cognitive", c.gmm.cognitive);
        c.gmm.social = g.number("social", c.gmm.social);
        c.gmm.refine_count = static_cast<int>(g.integer("refine_count", c.gmm.refine_count));
        c.gmm.seed = g.seed("seed", c.gmm.seed);
        g.finish();
        if (c.gmm.particle_count < 1 || c.gmm.swarm_iterations < 0 || c.gmm.refine_count < 1 || c.gmm.max_iterations < 1)
            throw InputError("config field 'gmm': counts must be positive");
    }
    if (r.has("transforms")) {
        auto t = r.child("transforms");
        c.transforms.demean_time = t.boolean("demean_time", c.transforms.demean_time);
        c.transforms.global_difference = t.boolean("global_difference", c.transforms.global_difference);
        t.finish();
    }
    c.normalization = r.choice("normalization", {"all_rows", "one_row"}, "all_rows") == "one_row"
                          ? RowNormalization::one_row
                          : RowNormalization::all_rows;
    c.normalized_row = static_cast<int>(r.integer("normalized_row", c.normalized_row));
    c.prune_threshold = r.number("prune_threshold", c.prune_threshold);
    c.max_prune_rounds = static_cast<int>(r.integer("max_prune_rounds", c.max_prune_rounds));
    c.local_solver = r.choice("local_solver", {"projected", "reparameterized"}, "projected") == "reparameterized"
                         ? LocalSolver::reparameterized
                         : LocalSolver::projected;
    c.rho_max = r.number("rho_max", c.rho_max);
    r.finish();
    if (!(c.rho_max > 0.0 && c.rho_max < 1.0)) throw InputError("config field 'rho_max': must lie in (0, 1)");
    c.penalty.validate();
    return c;
}

/// Network source: {"kind": "erdos_renyi"|"political_party", "n": N, "seed": s},
/// {"kind": "file", "path": p}, or {"weights": [[...]]}.
struct NetworkSource {
    NetworkSpec spec;
    std::optional<Matrix> weights;
    std::optional<std::uint64_t> seed;
};

inline NetworkSource network_from_config(ConfigReader r) {
    NetworkSource src;
    if (r.has("weights")) {
        src.weights = matrix_from_json(r.raw("weights"), r.field("weights"));
        r.finish();
        return src;
    }
    const std::string kind = r.choice("kind", {"erdos_renyi", "political_party", "file"}, "erdos_renyi");
    if (kind == "file") {
        src.spec.kind = NetworkSpec::Kind::from_file;
        src.spec.path = r.string("path");
    } else {
        src.spec.kind = kind == "erdos_renyi" ? NetworkSpec::Kind::erdos_renyi : NetworkSpec::Kind::political_party;
        src.spec.n = static_cast<int>(r.integer("n", 30));
        if (r.has("seed")) src.seed = r.seed("seed", 0);
    }
    r.finish();
    return src;
}

/// Config for the `simulate` command.
struct SimulateConfig {
    NetworkSource network;
    double rho = 0.3;
    std::vector<double> beta{0.4};
    std::vector<double> gamma{0.5};
    int t = 100;
    ShockConfig shock;
    std::uint64_t seed = 1;
};

inline SimulateConfig simulate_from_config(const Json& j) {
    ConfigReader r(j, "");
    SimulateConfig c;
    c.network = network_from_config(r.child("network"));
    c.rho = r.number("rho", c.rho);
    c.beta = r.scalar_or_numbers("beta", c.beta);
    c.gamma = r.scalar_or_numbers("gamma", c.gamma);
    c.t = static_cast<int>(r.integer("T", c.t));
    c.seed = r.seed("seed", c.seed);
    if (r.has("shock")) c.shock = shock_from_config(r.child("shock"));
    r.finish();
    if (c.beta.size() != c.gamma.size()) throw InputError("config fields 'beta' and 'gamma' must have equal length");
    if (c.beta.empty()) throw InputError("config field 'beta' must not be empty");
    if (c.t < 1) throw InputError("config field 'T': must be at least 1");
    return c;
}

inline CampaignConfig campaign_from_config(const Json& j) {
    ConfigReader r(j, "");
    CampaignConfig c;
    const auto net = network_from_config(r.child("network"));
    if (net.weights) throw InputError("config field 'network': campaigns need a generator kind or a file");
    c.network = net.spec;
    if (r.has("t_grid")) {
        c.t_grid.clear();
        for (double v : r.numbers("t_grid")) {
            if (v != std::floor(v)) throw InputError("config field 't_grid': entries must be integers");
            c.t_grid.push_back(static_cast<int>(v));
        }
    }
    c.replications = static_cast<int>(r.integer("replications", c.replications));
    c.calibration_runs = static_cast<int>(r.integer("calibration_runs", c.calibration_runs));
    c.rho = r.number("rho", c.rho);
    c.beta = r.number("beta", c.beta);
    c.gamma = r.number("gamma", c.gamma);
    if (r.has("shock")) c.shock = shock_from_config(r.child("shock"));
    if (r.has("estimator")) c.estimator = estimator_from_config(r.child("estimator"));
    c.seed = r.seed("seed", c.seed);
    r.finish();
    c.validate();
    return c;
}

/// Config for the `counterfactual` command. Networks are edge-list paths or inline
/// weight matrices; `labels` optionally names the units.
struct CounterfactualConfig {
    NetworkSource network_a;
    NetworkSource network_b;
    double rho = 0.0;
    std::string origin_unit;
    double shock_size = 0.10;
    Vector baseline_outcomes;
    std::vector<std::string> labels;
};

inline CounterfactualConfig counterfactual_from_config(const Json& j) {
    ConfigReader r(j, "");
    CounterfactualConfig c;
    c.network_a = network_from_config(r.child("network_a"));
    c.network_b = network_from_config(r.child("network_b"));
    c.rho = r.number("rho");
    const Json& origin = r.raw("origin_unit");
    if (origin.is_string()) {
        c.origin_unit = origin.get<std::string>();
    } else if (origin.is_number_integer()) {
        c.origin_unit = std::to_string(origin.get<std::int64_t>());
    } else {
        throw InputError("config field 'origin_unit': expected a label or an index");
    }
    c.shock_size = r.number("shock_size", c.shock_size);
    const auto b = r.numbers("baseline_outcomes");
    c.baseline_outcomes = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
    if (r.has("labels")) {
        const Json& l = r.raw("labels");
        if (!l.is_array()) throw InputError("config field 'labels': expected an array of strings");
        for (const auto& s : l) {
            if (!s.is_string()) throw InputError("config field 'labels': expected an array of strings");
            c.labels.push_back(s.get<std::string>());
        }
    }
    r.finish();
    return c;
}

}  // namespace netrecover
