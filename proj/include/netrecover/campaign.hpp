#pragma once

#include "netrecover/estimator.hpp"
#include "netrecover/generators.hpp"
#include "netrecover/io.hpp"
#include "netrecover/model.hpp"
#include "netrecover/net_stats.hpp"
#include "netrecover/parallel.hpp"
#include "netrecover/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace netrecover {

struct NetworkSpec {
    enum class Kind { erdos_renyi, political_party, from_file };
    Kind kind = Kind::erdos_renyi;
    int n = 30;
    std::string path;

    std::string name() const {
        switch (kind) {
            case Kind::erdos_renyi: return "erdos_renyi(" + std::to_string(n) + ")";
            case Kind::political_party: return "political_party(" + std::to_string(n) + ")";
            case Kind::from_file: return "from_file(" + path + ")";
        }
        return {};
    }
};

struct CampaignConfig {
    NetworkSpec network;
    std::vector<int> t_grid{5, 10, 25, 50, 100};
    int replications = 50;
    int calibration_runs = 50;
    double rho = 0.3;
    double beta = 0.4;
    double gamma = 0.5;
    ShockConfig shock;
    EstimatorConfig estimator;
    std::uint64_t seed = 1;
    int threads = 1;
    /// Directory for records.jsonl; empty keeps everything in memory.
    std::string out_dir;

    void validate() const {
        if (t_grid.empty()) throw InputError("t_grid is empty");
        if (calibration_runs < 1) throw InputError("calibration_runs must be at least 1");
        if (replications < calibration_runs) throw InputError("replications must be >= calibration_runs");
        for (int t : t_grid)
            if (t < 3) throw InputError("every T in t_grid must be >= 3");
        estimator.penalty.validate();
    }
};

/// One replication, as persisted (one JSON object per line).
struct ReplicationRecord {
    int cell = 0;
    int t = 0;
    int rep = 0;
    std::uint64_t seed = 0;
    bool calibration = false;
    bool ok = false;
    std::string error;
    PenaltyTriple penalty;
    int nonzeros = 0;
    RecoveryMetrics metrics;
    /// Post-2SLS estimates (NaN when unavailable).
    double rho_hat = NAN;
    double gamma_hat = NAN;
    double beta_hat = NAN;
    /// Whether each party leader is among the top-3 out-degree nodes of W hat.
    bool leaders_top3 = false;
};

struct MetricSummary {
    double mean = 0.0;
    double sd = 0.0;
};

struct CellReport {
    int t = 0;
    PenaltyTriple frozen_penalty;
    int successes = 0;
    int failures = 0;
    std::map<std::string, MetricSummary> metrics;
    double leaders_top3_rate = 0.0;
};

struct CampaignReport {
    std::string network;
    std::vector<CellReport> cells;
    std::vector<ReplicationRecord> records;
};

inline Json to_json(const ReplicationRecord& r) {
    Json j{{"cell", r.cell}, {"T", r.t}, {"rep", r.rep}, {"seed", r.seed}, {"calibration", r.calibration}, {"ok", r.ok}};
    if (!r.ok) {
        j["error"] = r.error;
        return j;
    }
    auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
    j["penalty"] = to_json(r.penalty);
    j["nonzeros"] = r.nonzeros;
    j["metrics"] = to_json(r.metrics);
    j["rho_hat"] = num(r.rho_hat);
    j["gamma_hat"] = num(r.gamma_hat);
    j["beta_hat"] = num(r.beta_hat);
    j["leaders_top3"] = r.leaders_top3;
    return j;
}

inline ReplicationRecord record_from_json(const Json& j) {
    ReplicationRecord r;
    r.cell = j.at("cell").get<int>();
    r.t = j.at("T").get<int>();
    r.rep = j.at("rep").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.calibration = j.at("calibration").get<bool>();
    r.ok = j.at("ok").get<bool>();
    if (!r.ok) {
        r.error = j.value("error", std::string());
        return r;
    }
    const auto& p = j.at("penalty");
    r.penalty = {p.at("p1").get<double>(), p.at("p1_star").get<double>(), p.at("p2").get<double>()};
    r.nonzeros = j.at("nonzeros").get<int>();
    const auto& m = j.at("metrics");
    r.metrics.zero_recovery_rate = m.at("zero_recovery_rate").get<double>();
    r.metrics.nonzero_recovery_rate = m.at("nonzero_recovery_rate").get<double>();
    r.metrics.strong_edge_recovery_rate = m.at("strong_edge_recovery_rate").get<double>();
    r.metrics.mad_w = m.at("mad_w").get<double>();
    r.metrics.mad_pi = m.at("mad_pi").get<double>();
    r.metrics.bias_rho = m.at("bias_rho").get<double>();
    r.metrics.bias_gamma = m.at("bias_gamma").get<double>();
    r.metrics.bias_beta = m.at("bias_beta").get<double>();
    auto num = [&](const char* key) { return j.at(key).is_null() ? NAN : j.at(key).get<double>(); };
    r.rho_hat = num("rho_hat");
    r.gamma_hat = num("gamma_hat");
    r.beta_hat = num("beta_hat");
    r.leaders_top3 = j.at("leaders_top3").get<bool>();
    return r;
}

/// Coordinatewise median of the chosen triples, snapped to the nearest grid point
/// (Euclidean; ties to the lexicographically smallest triple).
inline PenaltyTriple median_penalty(const std::vector<PenaltyTriple>& chosen, const std::vector<PenaltyTriple>& grid) {
    if (chosen.empty() || grid.empty()) throw InputError("median penalty needs calibration results and a grid");
    auto median = [&](auto member) {
        std::vector<double> v;
        for (const auto& p : chosen) v.push_back(p.*member);
        std::sort(v.begin(), v.end());
        const std::size_t m = v.size() / 2;
        return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    };
    const PenaltyTriple med{median(&PenaltyTriple::p1), median(&PenaltyTriple::p1_star), median(&PenaltyTriple::p2)};
    std::vector<PenaltyTriple> sorted = grid;
    std::sort(sorted.begin(), sorted.end());
    const PenaltyTriple* best = nullptr;
    double best_d = INFINITY;
    for (const auto& g : sorted) {
        const double d = std::pow(g.p1 - med.p1, 2) + std::pow(g.p1_star - med.p1_star, 2) + std::pow(g.p2 - med.p2, 2);
        if (d < best_d - 1e-15) {
            best_d = d;
            best = &g;
        }
    }
    return *best;
}

/// The network for one replication: generated families draw a fresh network per
/// replication; file networks are fixed.
inline Network campaign_network(const NetworkSpec& spec, std::uint64_t seed) {
    switch (spec.kind) {
        case NetworkSpec::Kind::erdos_renyi: return gen_erdos_renyi(spec.n, seed);
        case NetworkSpec::Kind::political_party: return gen_political_party(spec.n, seed);
        case NetworkSpec::Kind::from_file: return read_edge_list(spec.path).network;
    }
    throw InputError("unknown network kind");
}

/// Simulate, estimate, and score one replication. Failures are captured in the record.
/// Replication `rep` uses the same network in every cell.
inline ReplicationRecord run_replication(const CampaignConfig& cfg, int cell, int rep,
                                         const std::vector<PenaltyTriple>& grid, bool calibration) {
    ReplicationRecord r;
    r.cell = cell;
    r.t = cfg.t_grid[cell];
    r.rep = rep;
    r.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(cell), static_cast<std::uint64_t>(rep)});
    r.calibration = calibration;
    try {
        // The network depends on the replication only, so cells differ in T and shocks alone.
        const Network w0 = campaign_network(cfg.network, derive_seed(cfg.seed, {0x6e6574ULL, static_cast<std::uint64_t>(rep)}));
        const auto theta0 = StructuralParams::scalar(w0, cfg.rho, cfg.beta, cfg.gamma);
        ShockConfig shock = cfg.shock;
        shock.seed = derive_seed(r.seed, {2});
        const PanelData panel = simulate_panel(theta0, shock, r.t);
        EstimatorConfig ec = cfg.estimator;
        ec.penalty.grid = grid;
        ec.threads = 1;
        ec.gmm.seed = derive_seed(r.seed, {3});
        const auto est = estimate(panel, ec);
        const Matrix pi0 = reduced_form(theta0).first();
        const Matrix pi_hat = reduced_form(est.theta_hat).first();
        StructuralParams scored = est.theta_hat;
        if (est.post_2sls) {
            scored.rho = est.post_2sls->rho;
            scored.beta = est.post_2sls->beta;
            scored.gamma = est.post_2sls->gamma;
            r.rho_hat = est.post_2sls->rho;
            r.gamma_hat = est.post_2sls->gamma[0];
            r.beta_hat = est.post_2sls->beta[0];
        }
        r.metrics = compare(w0, est.theta_hat.network, pi0, pi_hat, theta0, scored);
        r.penalty = est.chosen_penalty;
        r.nonzeros = count_offdiag_nonzeros(est.theta_hat.network.weights());
        if (cfg.network.kind == NetworkSpec::Kind::political_party) {
            const auto [a, b] = party_leaders(cfg.network.n);
            const auto top = compute_stats(est.theta_hat.network).top_out_degree_nodes;
            auto in_top = [&](int v) { return std::find(top.begin(), top.end(), v) != top.end(); };
            r.leaders_top3 = in_top(a) && in_top(b);
        }
        r.ok = true;
    } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
    }
    return r;
}

namespace detail {

inline MetricSummary summarize(const std::vector<double>& v) {
    MetricSummary s;
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
}

}  // namespace detail

/// Aggregate one cell's records. Pure function of the records, so persisted
/// records reproduce the report exactly.
inline CellReport aggregate_cell(int t, const PenaltyTriple& frozen, const std::vector<ReplicationRecord>& recs) {
    CellReport c;
    c.t = t;
    c.frozen_penalty = frozen;
    std::map<std::string, std::vector<double>> cols;
    int leaders = 0;
    for (const auto& r : recs) {
        if (!r.ok) {
            ++c.failures;
            continue;
        }
        ++c.successes;
        cols["zero_recovery_rate"].push_back(r.metrics.zero_recovery_rate);
        cols["nonzero_recovery_rate"].push_back(r.metrics.nonzero_recovery_rate);
        cols["strong_edge_recovery_rate"].push_back(r.metrics.strong_edge_recovery_rate);
        cols["mad_w"].push_back(r.metrics.mad_w);
        cols["mad_pi"].push_back(r.metrics.mad_pi);
        cols["bias_rho"].push_back(r.metrics.bias_rho);
        cols["bias_gamma"].push_back(r.metrics.bias_gamma);
        cols["bias_beta"].push_back(r.metrics.bias_beta);
        cols["nonzeros"].push_back(r.nonzeros);
        leaders += r.leaders_top3;
    }
    for (const auto& [k, v] : cols) c.metrics[k] = detail::summarize(v);
    c.leaders_top3_rate = c.successes > 0 ? static_cast<double>(leaders) / c.successes : 0.0;
    return c;
}

inline CampaignReport aggregate(const CampaignConfig& cfg, const std::vector<ReplicationRecord>& records) {
    CampaignReport rep;
    rep.network = cfg.network.name();
    rep.records = records;
    std::sort(rep.records.begin(), rep.records.end(),
              [](const auto& a, const auto& b) { return std::pair(a.cell, a.rep) < std::pair(b.cell, b.rep); });
    for (int c = 0; c < static_cast<int>(cfg.t_grid.size()); ++c) {
        std::vector<ReplicationRecord> cell;
        std::vector<PenaltyTriple> chosen;
        for (const auto& r : rep.records)
            if (r.cell == c) {
                cell.push_back(r);
                if (r.calibration && r.ok) chosen.push_back(r.penalty);
            }
        PenaltyTriple frozen;
        if (!chosen.empty()) frozen = median_penalty(chosen, cfg.estimator.penalty.grid);
        rep.cells.push_back(aggregate_cell(cfg.t_grid[c], frozen, cell));
    }
    return rep;
}

inline std::vector<ReplicationRecord> load_records(const std::string& path) {
    std::vector<ReplicationRecord> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(Json::parse(line)));
        } catch (const std::exception&) {
            break;  // a torn final line from an interrupted run; the rest is recomputed
        }
    }
    return out;
}

/// Run (or resume) a campaign: per T, calibration runs over the full grid, then the
/// remaining replications at the frozen median penalty. Each replication has its
/// own seed derived from (campaign seed, cell, replication). Wall-clock seconds per
/// cell go to `cell_seconds` when given; they never enter the report.
inline CampaignReport run_campaign(const CampaignConfig& cfg, std::vector<double>* cell_seconds = nullptr) {
    cfg.validate();
    std::vector<ReplicationRecord> records;
    std::string records_path;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        records_path = (std::filesystem::path(cfg.out_dir) / "records.jsonl").string();
        records = load_records(records_path);
        // Rewrite the file without any torn tail so appends stay line-aligned.
        std::ofstream out(records_path, std::ios::trunc);
        for (const auto& r : records) out << to_json(r).dump() << '\n';
    }
    auto have = [&](int cell, int rep) {
        return std::any_of(records.begin(), records.end(), [&](const auto& r) { return r.cell == cell && r.rep == rep; });
    };
    auto run_phase = [&](int cell, int first, int last, const std::vector<PenaltyTriple>& grid, bool calibration) {
        std::vector<int> todo;
        for (int rep = first; rep < last; ++rep)
            if (!have(cell, rep)) todo.push_back(rep);
        const int chunk = std::max(1, cfg.threads);
        for (std::size_t start = 0; start < todo.size(); start += chunk) {
            const int count = static_cast<int>(std::min<std::size_t>(chunk, todo.size() - start));
            std::vector<ReplicationRecord> done(count);
            parallel_for(count, cfg.threads,
                         [&](int i) { done[i] = run_replication(cfg, cell, todo[start + i], grid, calibration); });
            std::ofstream out;
            if (!records_path.empty()) out.open(records_path, std::ios::app);
            for (auto& r : done) {
                if (out) out << to_json(r).dump() << '\n';
                records.push_back(std::move(r));
            }
        }
    };
    if (cell_seconds) cell_seconds->assign(cfg.t_grid.size(), 0.0);
    for (int cell = 0; cell < static_cast<int>(cfg.t_grid.size()); ++cell) {
        const auto started = std::chrono::steady_clock::now();
        struct Timer {
            std::vector<double>* out;
            int cell;
            std::chrono::steady_clock::time_point start;
            ~Timer() {
                if (out) (*out)[cell] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            }
        } timer{cell_seconds, cell, started};
        run_phase(cell, 0, cfg.calibration_runs, cfg.estimator.penalty.grid, true);
        std::vector<PenaltyTriple> chosen;
        for (const auto& r : records)
            if (r.cell == cell && r.calibration && r.ok) chosen.push_back(r.penalty);
        if (chosen.empty()) {
            // Nothing calibrated; the frozen phase has no penalty to use.
            continue;
        }
        const PenaltyTriple frozen = median_penalty(chosen, cfg.estimator.penalty.grid);
        run_phase(cell, cfg.calibration_runs, cfg.replications, {frozen}, false);
    }
    return aggregate(cfg, records);
}

inline Json to_json(const CampaignReport& r) {
    Json cells = Json::array();
    for (const auto& c : r.cells) {
        Json m = Json::object();
        for (const auto& [k, s] : c.metrics) m[k] = Json{{"mean", s.mean}, {"sd", s.sd}};
        cells.push_back(Json{{"T", c.t},
                             {"frozen_penalty", to_json(c.frozen_penalty)},
                             {"successes", c.successes},
                             {"failures", c.failures},
                             {"leaders_top3_rate", c.leaders_top3_rate},
                             {"metrics", std::move(m)}});
    }
    return Json{{"schema", "netrecover.campaign/1"}, {"network", r.network}, {"cells", std::move(cells)}};
}

/// Plot-ready table: one row per T, mean and sd of every metric.
inline void write_report_csv(std::ostream& out, const CampaignReport& r) {
    static const char* keys[] = {"zero_recovery_rate", "nonzero_recovery_rate", "strong_edge_recovery_rate",
                                 "mad_w", "mad_pi", "bias_rho", "bias_gamma", "bias_beta", "nonzeros"};
    out << "network,T,p1,p1_star,p2,successes,failures,leaders_top3_rate";
    for (const char* k : keys) out << ',' << k << "_mean," << k << "_sd";
    out << '\n';
    for (const auto& c : r.cells) {
        out << r.network.substr(0, r.network.find('(')) << ',' << c.t << ',' << format_double(c.frozen_penalty.p1) << ','
            << format_double(c.frozen_penalty.p1_star) << ',' << format_double(c.frozen_penalty.p2) << ',' << c.successes
            << ',' << c.failures << ',' << format_double(c.leaders_top3_rate);
        for (const char* k : keys) {
            const auto it = c.metrics.find(k);
            const MetricSummary s = it == c.metrics.end() ? MetricSummary{} : it->second;
            out << ',' << format_double(s.mean) << ',' << format_double(s.sd);
        }
        out << '\n';
    }
}

}  // namespace netrecover
