#include "netrecover/campaign.hpp"
#include "netrecover/config.hpp"
#include "netrecover/counterfactual.hpp"
#include "netrecover/estimator.hpp"
#include "netrecover/generators.hpp"
#include "netrecover/identification.hpp"
#include "netrecover/io.hpp"
#include "netrecover/model.hpp"
#include "netrecover/net_stats.hpp"
#include "netrecover/ols.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace netrecover;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

std::string fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string("fnv1a64:") + buf;
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct Common {
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";
    int threads = 1;
};

/// Output directory plus the manifest describing the run. Only the manifest
/// carries timestamps.
class Run {
public:
    Run(std::string command, const Common& common, std::vector<std::string> argv)
        : command_(std::move(command)), common_(common), argv_(std::move(argv)), started_(utc_now()) {
        if (common_.threads < 1) throw InputError("--threads must be at least 1");
        fs::create_directories(common_.out_dir);
    }

    std::string path(const std::string& name) {
        outputs_.push_back(name);
        return (fs::path(common_.out_dir) / name).string();
    }

    void write_json(const std::string& name, const Json& j) {
        std::ofstream out(path(name), std::ios::binary);
        if (!out) throw InputError("cannot write " + name);
        out << j.dump(2) << '\n';
    }

    void write_text(const std::string& name, const std::string& text) {
        std::ofstream out(path(name), std::ios::binary);
        if (!out) throw InputError("cannot write " + name);
        out << text;
    }

    void config(const std::string& file, const std::string& bytes) {
        config_path_ = file;
        config_digest_ = fnv1a64(bytes);
    }

    void input(const std::string& file) { inputs_[file] = fnv1a64(read_text_file(file)); }

    void seed(std::uint64_t s) { seed_ = s; }
    Json& extra() { return extra_; }

    void finish() {
        Json m{{"schema", "netrecover.manifest/1"},
               {"command", command_},
               {"arguments", argv_},
               {"config_path", config_path_.empty() ? Json(nullptr) : Json(config_path_)},
               {"config_digest", config_digest_.empty() ? Json(nullptr) : Json(config_digest_)},
               {"input_digests", inputs_},
               {"seed", seed_ ? Json(*seed_) : Json(nullptr)},
               {"threads", common_.threads},
               {"version", NETRECOVER_VERSION},
               {"started_at", started_},
               {"finished_at", utc_now()},
               {"outputs", outputs_}};
        if (!extra_.empty()) m["extra"] = extra_;
        std::ofstream out(fs::path(common_.out_dir) / "manifest.json", std::ios::binary);
        out << m.dump(2) << '\n';
    }

private:
    std::string command_;
    Common common_;
    std::vector<std::string> argv_;
    std::string started_;
    std::string config_path_, config_digest_;
    Json inputs_ = Json::object();
    std::optional<std::uint64_t> seed_;
    std::vector<std::string> outputs_;
    Json extra_ = Json::object();
};

/// Relative network paths in a config are taken relative to the config file.
void resolve_path(std::string& path, const std::string& config_path) {
    if (path.empty() || fs::path(path).is_absolute()) return;
    path = (fs::path(config_path).parent_path() / path).lexically_normal().string();
}

Json read_config(Run& run, const std::string& path) {
    const std::string bytes = read_text_file(path);
    run.config(path, bytes);
    return parse_json_text(bytes, path);
}

LabeledNetwork load_network(const NetworkSource& src, std::uint64_t seed) {
    if (src.weights) return {Network(*src.weights), {}};
    const std::uint64_t s = src.seed ? *src.seed : seed;
    return {campaign_network(src.spec, s), {}};
}

LabeledNetwork load_network_file(const NetworkSource& src, Run& run) {
    if (src.spec.kind == NetworkSpec::Kind::from_file && !src.weights) {
        run.input(src.spec.path);
        return read_edge_list(src.spec.path);
    }
    return load_network(src, 0);
}

std::string edge_list_text(const Network& net, const std::vector<std::string>& labels = {}) {
    std::ostringstream ss;
    write_edge_list(ss, net, labels);
    return ss.str();
}

// simulate ------------------------------------------------------------------

int cmd_simulate(const Common& c, const std::string& config_path, const std::vector<std::string>& argv) {
    Run run("simulate", c, argv);
    const Json j = read_config(run, config_path);
    SimulateConfig cfg = simulate_from_config(j);
    resolve_path(cfg.network.spec.path, config_path);
    if (c.seed) cfg.seed = *c.seed;
    run.seed(cfg.seed);

    LabeledNetwork net;
    if (cfg.network.spec.kind == NetworkSpec::Kind::from_file && !cfg.network.weights) {
        run.input(cfg.network.spec.path);
        net = read_edge_list(cfg.network.spec.path);
    } else {
        net = load_network(cfg.network, derive_seed(cfg.seed, {1}));
    }
    StructuralParams theta{net.network, cfg.rho, cfg.gamma, cfg.beta};
    const auto rep = check_assumptions(theta);
    if (!rep.a2.holds)
        throw InputError("A2 violated: |rho| = " + format_double(rep.a2_rho_abs) +
                         ", max row sum of |rho W| = " + format_double(rep.a2.value) + " (both must be < 1)");
    const bool explicit_shock_seed = j.contains("shock") && j["shock"].contains("seed");
    if (!explicit_shock_seed) cfg.shock.seed = derive_seed(cfg.seed, {2});
    std::vector<std::string> warnings;
    PanelData panel = simulate_panel(theta, cfg.shock, cfg.t, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    if (!net.labels.empty()) panel.unit_labels = net.labels;

    std::ostringstream csv;
    write_panel_csv(csv, panel);
    run.write_text("panel.csv", csv.str());
    run.write_json("theta.json", Json{{"schema", "netrecover.theta/1"},
                                      {"theta", to_json(theta)},
                                      {"assumptions", to_json(rep)}});
    run.write_text("network.csv", edge_list_text(theta.network, net.labels));
    run.finish();
    std::cout << "simulated T=" << panel.t() << " N=" << panel.n() << " K=" << panel.k() << " -> " << c.out_dir << '\n';
    return 0;
}

// estimate ------------------------------------------------------------------

int cmd_estimate(const Common& c, const std::string& panel_path, const std::string& config_path,
                 const std::string& grid, const std::string& truth_path, const std::vector<std::string>& argv) {
    Run run("estimate", c, argv);
    run.input(panel_path);
    EstimatorConfig cfg;
    if (!config_path.empty()) cfg = estimator_from_config(ConfigReader(read_config(run, config_path), ""));
    if (!grid.empty()) cfg.penalty.grid = parse_penalty_grid(grid);
    if (c.seed) cfg.gmm.seed = *c.seed;
    cfg.threads = c.threads;
    run.seed(cfg.gmm.seed);
    const PanelData panel = read_panel_csv(panel_path);

    const auto result = estimate(panel, cfg);
    run.write_json("result.json", to_json(result));
    run.write_text("w_hat.csv", edge_list_text(result.theta_hat.network, panel.unit_labels));
    std::string log;
    for (const auto& r : result.convergence_log) log += to_json(r).dump() + '\n';
    run.write_text("convergence.jsonl", log);

    if (!truth_path.empty()) {
        run.input(truth_path);
        const Json tj = read_json_file(truth_path);
        const StructuralParams truth = params_from_json(tj.contains("theta") ? tj.at("theta") : tj);
        if (truth.n() != panel.n()) throw InputError("truth network size does not match the panel");
        StructuralParams scored = result.theta_hat;
        if (result.post_2sls) {
            scored.rho = result.post_2sls->rho;
            scored.beta = result.post_2sls->beta;
            scored.gamma = result.post_2sls->gamma;
        }
        const auto m = compare(truth.network, result.theta_hat.network, reduced_form(truth).first(),
                               reduced_form(result.theta_hat).first(), truth, scored);
        run.write_json("metrics.json", to_json(m));
    }
    run.finish();
    std::cout << "gmm_value=" << format_double(result.gmm_value) << " bic=" << format_double(result.bic_value)
              << " nonzeros=" << count_offdiag_nonzeros(result.theta_hat.network.weights()) << " penalty=("
              << format_double(result.chosen_penalty.p1) << ',' << format_double(result.chosen_penalty.p1_star) << ','
              << format_double(result.chosen_penalty.p2) << ")\n";
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
    return 0;
}

// campaign ------------------------------------------------------------------

int cmd_campaign(const Common& c, const std::string& config_path, const std::vector<std::string>& argv) {
    Run run("campaign", c, argv);
    CampaignConfig cfg = campaign_from_config(read_config(run, config_path));
    resolve_path(cfg.network.path, config_path);
    if (c.seed) cfg.seed = *c.seed;
    cfg.threads = c.threads;
    cfg.out_dir = c.out_dir;
    if (cfg.network.kind == NetworkSpec::Kind::from_file) run.input(cfg.network.path);
    run.seed(cfg.seed);
    std::vector<double> seconds;
    const auto report = run_campaign(cfg, &seconds);
    run.path("records.jsonl");
    run.write_json("report.json", to_json(report));
    std::ostringstream csv;
    write_report_csv(csv, report);
    run.write_text("report.csv", csv.str());
    Json timing = Json::array();
    for (std::size_t i = 0; i < seconds.size(); ++i) timing.push_back(Json{{"T", cfg.t_grid[i]}, {"seconds", seconds[i]}});
    run.extra()["cell_wall_clock"] = timing;
    run.finish();
    for (const auto& cell : report.cells) {
        auto get = [&](const char* k) {
            const auto it = cell.metrics.find(k);
            return it == cell.metrics.end() ? 0.0 : it->second.mean;
        };
        std::cout << "T=" << cell.t << " ok=" << cell.successes << " failed=" << cell.failures
                  << " zero=" << format_double(get("zero_recovery_rate"))
                  << " nonzero=" << format_double(get("nonzero_recovery_rate"))
                  << " mad_w=" << format_double(get("mad_w")) << '\n';
    }
    return 0;
}

// stats ---------------------------------------------------------------------

int cmd_stats(const Common& c, const std::string& network_path, int n, double threshold,
              const std::vector<std::string>& argv) {
    Run run("stats", c, argv);
    run.input(network_path);
    const auto net = read_edge_list(network_path, n);
    const auto s = compute_stats(net.network, threshold);
    Json j = to_json(s);
    if (!net.labels.empty()) {
        auto name = [&](const Json& ids) {
            Json out = Json::array();
            for (const auto& i : ids) out.push_back(net.labels[i.get<int>()]);
            return out;
        };
        j["top_out_degree_labels"] = name(j["top_out_degree_nodes"]);
        j["top_eigencentrality_labels"] = name(j["top_eigencentrality_nodes"]);
    }
    run.write_json("stats.json", j);
    std::ostringstream csv;
    csv << "nodes,edge_count,strong_edge_count,weak_edge_count,reciprocated,clustering,component_count,"
           "max_component_size,density,diag_w2_sd,in_degree_mean,in_degree_sd,out_degree_mean,out_degree_sd\n";
    csv << s.nodes << ',' << s.edge_count << ',' << s.strong_edge_count << ',' << s.weak_edge_count << ','
        << s.reciprocated_edge_count << ',' << format_double(s.clustering_coefficient) << ',' << s.component_count << ','
        << s.max_component_size << ',' << format_double(s.density) << ',' << format_double(s.diag_w2_sd) << ','
        << format_double(s.in_degree_mean) << ',' << format_double(s.in_degree_sd) << ','
        << format_double(s.out_degree_mean) << ',' << format_double(s.out_degree_sd) << '\n';
    run.write_text("stats.csv", csv.str());
    run.finish();
    std::cout << "nodes=" << s.nodes << " edges=" << s.edge_count << " density=" << format_double(s.density) << '\n';
    return 0;
}

// counterfactual --------------------------------------------------------------

int cmd_counterfactual(const Common& c, const std::string& config_path, const std::vector<std::string>& argv) {
    Run run("counterfactual", c, argv);
    auto cfg = counterfactual_from_config(read_config(run, config_path));
    resolve_path(cfg.network_a.spec.path, config_path);
    resolve_path(cfg.network_b.spec.path, config_path);
    if (c.seed) run.seed(*c.seed);
    const auto a = load_network_file(cfg.network_a, run);
    const auto b = load_network_file(cfg.network_b, run);
    ShockScenario s;
    s.origin_unit = cfg.origin_unit;
    s.shock_size = cfg.shock_size;
    s.hypothesis_a = a.network;
    s.hypothesis_b = b.network;
    s.rho = cfg.rho;
    s.baseline_outcomes = cfg.baseline_outcomes;
    s.labels = !cfg.labels.empty() ? cfg.labels : a.labels;
    if (!cfg.labels.empty() && !a.labels.empty() && a.labels != cfg.labels)
        throw InputError("labels in the config differ from the edge-list labels");
    const auto out = compare_networks(s);
    std::ostringstream csv;
    csv << "unit,upsilon,defined,outcome_a,outcome_b,reason\n";
    for (std::size_t j = 0; j < out.upsilon.size(); ++j) {
        const auto& e = out.upsilon[j];
        csv << e.unit << ',' << (e.defined ? format_double(e.upsilon) : "") << ',' << (e.defined ? "true" : "false")
            << ',' << format_double(out.outcome_a(j)) << ',' << format_double(out.outcome_b(j)) << ',' << e.reason
            << '\n';
    }
    run.write_text("upsilon.csv", csv.str());
    run.finish();
    int undefined = 0;
    for (const auto& e : out.upsilon) undefined += !e.defined;
    std::cout << "units=" << out.upsilon.size() << " undefined=" << undefined << '\n';
    return 0;
}

// check ---------------------------------------------------------------------

int cmd_check(const Common& c, const std::string& network_path, const std::string& theta_path, double rho,
              double beta, double gamma, const std::vector<std::string>& argv) {
    Run run("check", c, argv);
    if (c.seed) run.seed(*c.seed);
    StructuralParams theta;
    if (!theta_path.empty()) {
        run.input(theta_path);
        const Json tj = read_json_file(theta_path);
        theta = params_from_json(tj.contains("theta") ? tj.at("theta") : tj);
    } else {
        run.input(network_path);
        theta = StructuralParams::scalar(read_edge_list(network_path).network, rho, beta, gamma);
    }
    const auto rep = check_assumptions(theta);
    Json j{{"schema", "netrecover.check/1"},
           {"rho", theta.rho},
           {"beta", theta.beta},
           {"gamma", theta.gamma},
           {"assumptions", to_json(rep)}};
    if (rep.a2.holds) {
        const auto rf = reduced_form(theta);
        try {
            const auto sign = sign_of_network_effect(rf);
            j["sign_of_network_effect"] = Json{{"off_diagonal", sign.off_diagonal}, {"eigen", sign.eigen}, {"agree", sign.agree}};
        } catch (const InputError& e) {
            j["sign_of_network_effect"] = Json{{"error", e.what()}};
        }
    }
    run.write_json("assumptions.json", j);
    run.finish();
    auto flag = [](const AssumptionCheck& a) { return a.holds ? "true" : "false"; };
    std::cout << "A1=" << flag(rep.a1) << " A2=" << flag(rep.a2) << " A3=" << flag(rep.a3) << " A4=" << flag(rep.a4)
              << " A5=" << flag(rep.a5) << '\n';
    return 0;
}

// rowsum-test ---------------------------------------------------------------

int cmd_rowsum(const Common& c, const std::string& panel_path, const std::vector<std::string>& argv) {
    Run run("rowsum-test", c, argv);
    if (c.seed) run.seed(*c.seed);
    run.input(panel_path);
    const auto panel = read_panel_csv(panel_path);
    const auto rep = rowsum_wald_test(panel);
    Json j = to_json(rep);
    j["schema"] = "netrecover.wald/1";
    run.write_json("wald.json", j);
    run.finish();
    std::cout << "statistic=" << format_double(rep.statistic) << " dof=" << rep.dof
              << " p_value=" << format_double(rep.p_value) << '\n';
    return 0;
}

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--seed", c.seed, "Random seed (overrides the config)");
    sub->add_option("--out-dir", c.out_dir, "Output directory")->capture_default_str();
    sub->add_option("--threads", c.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Recover social-interaction networks from panel data"};
    app.require_subcommand(1);
    app.set_version_flag("--version", NETRECOVER_VERSION);
    const std::vector<std::string> args(argv + 1, argv + argc);

    Common common;
    std::string config, panel, network, theta, grid, truth;
    int n = 0;
    double threshold = 0.3, rho = 0.3, beta = 0.4, gamma = 0.5;

    auto* sim = app.add_subcommand("simulate", "Simulate a panel from a structural configuration");
    sim->add_option("--config", config, "Simulation config (JSON)")->required();
    add_common(sim, common);

    auto* est = app.add_subcommand("estimate", "Estimate W, rho, beta, gamma from a panel");
    est->add_option("--panel", panel, "Panel CSV")->required();
    est->add_option("--config", config, "Estimator config (JSON)");
    est->add_option("--grid", grid, "Penalty grid as p1:p1_star:p2[,...]");
    est->add_option("--truth", truth, "True theta JSON; writes recovery metrics");
    add_common(est, common);

    auto* camp = app.add_subcommand("campaign", "Run a Monte Carlo campaign");
    camp->add_option("--config", config, "Campaign config (JSON)")->required();
    add_common(camp, common);

    auto* stats = app.add_subcommand("stats", "Descriptive statistics of a network");
    stats->add_option("--network", network, "Edge-list CSV")->required();
    stats->add_option("--n", n, "Node count for index lists with trailing isolated nodes");
    stats->add_option("--strong-threshold", threshold, "Strong-link threshold")->capture_default_str();
    add_common(stats, common);

    auto* cf = app.add_subcommand("counterfactual", "Compare shock propagation under two networks");
    cf->add_option("--config", config, "Scenario config (JSON)")->required();
    add_common(cf, common);

    auto* chk = app.add_subcommand("check", "Check the model assumptions");
    auto* net_opt = chk->add_option("--network", network, "Edge-list CSV");
    auto* theta_opt = chk->add_option("--theta", theta, "Theta JSON (as written by simulate)");
    net_opt->excludes(theta_opt);
    chk->add_option("--rho", rho, "rho used with --network")->capture_default_str();
    chk->add_option("--beta", beta, "beta used with --network")->capture_default_str();
    chk->add_option("--gamma", gamma, "gamma used with --network")->capture_default_str();
    add_common(chk, common);

    auto* rs = app.add_subcommand("rowsum-test", "Wald test of row-sum normalization");
    rs->add_option("--panel", panel, "Panel CSV")->required();
    add_common(rs, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    try {
        if (*sim) return cmd_simulate(common, config, args);
        if (*est) return cmd_estimate(common, panel, config, grid, truth, args);
        if (*camp) return cmd_campaign(common, config, args);
        if (*stats) return cmd_stats(common, network, n, threshold, args);
        if (*cf) return cmd_counterfactual(common, config, args);
        if (*chk) {
            if (network.empty() && theta.empty()) throw InputError("check needs --network or --theta");
            return cmd_check(common, network, theta, rho, beta, gamma, args);
        }
        if (*rs) return cmd_rowsum(common, panel, args);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
