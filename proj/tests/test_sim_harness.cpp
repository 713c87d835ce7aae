#include "netrecover/campaign.hpp"
#include "netrecover/config.hpp"
#include "netrecover/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace netrecover;
namespace fs = std::filesystem;

namespace {

CampaignConfig small_campaign(int n = 8) {
    CampaignConfig c;
    c.network.kind = NetworkSpec::Kind::erdos_renyi;
    c.network.n = n;
    c.t_grid = {10, 25};
    c.replications = 4;
    c.calibration_runs = 2;
    c.estimator.penalty.grid = {{0, 0, 0}, {0.05, 0.05, 0}, {0.1, 0.1, 0.05}};
    c.estimator.gmm.particle_count = 20;
    c.estimator.gmm.swarm_iterations = 20;
    c.seed = 11;
    return c;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("netrecover_sim_" + name);
    fs::remove_all(dir);
    return dir;
}

std::vector<std::string> lines_of(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

Json parse(const std::string& text) { return parse_json_text(text, "test"); }

}  // namespace

TEST(MedianPenalty, CoordinatewiseMedianSnappedToGrid) {
    const auto grid = penalty_cube(default_penalty_axis());
    // Medians (0.05, 0.025, 0.1) lie on the grid.
    const std::vector<PenaltyTriple> chosen{{0.0, 0.0, 0.1}, {0.05, 0.025, 0.1}, {0.1, 0.1, 0.0}};
    EXPECT_EQ(median_penalty(chosen, grid), (PenaltyTriple{0.05, 0.025, 0.1}));
    // Even count: the median p1 .0375 is equidistant from .025 and .05; the smaller wins.
    const std::vector<PenaltyTriple> even{{0.025, 0.0, 0.0}, {0.05, 0.0, 0.0}};
    EXPECT_EQ(median_penalty(even, grid), (PenaltyTriple{0.025, 0.0, 0.0}));
    // Off-grid median snaps to the nearest point.
    const std::vector<PenaltyTriple> sparse{{0.0, 0.0, 0.0}, {0.1, 0.1, 0.1}};
    const std::vector<PenaltyTriple> coarse{{0.0, 0.0, 0.0}, {0.1, 0.1, 0.1}, {0.06, 0.04, 0.05}};
    EXPECT_EQ(median_penalty(sparse, coarse), (PenaltyTriple{0.06, 0.04, 0.05}));
    EXPECT_THROW(median_penalty({}, grid), InputError);
    EXPECT_THROW(median_penalty(chosen, {}), InputError);
}

TEST(MedianPenalty, TiesGoToLexicographicallySmallest) {
    const std::vector<PenaltyTriple> grid{{0.1, 0.0, 0.0}, {0.0, 0.1, 0.0}, {0.0, 0.0, 0.1}};
    EXPECT_EQ(median_penalty({{0.0, 0.0, 0.0}}, grid), (PenaltyTriple{0.0, 0.0, 0.1}));
}

TEST(CampaignConfig, Validation) {
    auto c = small_campaign();
    EXPECT_NO_THROW(c.validate());
    c.calibration_runs = 0;
    EXPECT_THROW(c.validate(), InputError);
    c = small_campaign();
    c.replications = 1;
    EXPECT_THROW(c.validate(), InputError);
    c = small_campaign();
    c.t_grid.clear();
    EXPECT_THROW(c.validate(), InputError);
    c = small_campaign();
    c.t_grid = {10, 2};
    EXPECT_THROW(c.validate(), InputError);
}

TEST(CampaignConfig, ParsesConfigFile) {
    const auto c = campaign_from_config(read_json_file(NETRECOVER_SOURCE_DIR "/fixtures/configs/campaign_small.json"));
    EXPECT_EQ(c.network.kind, NetworkSpec::Kind::erdos_renyi);
    EXPECT_EQ(c.network.n, 8);
    EXPECT_EQ(c.t_grid, (std::vector<int>{10, 25}));
    EXPECT_EQ(c.replications, 4);
    EXPECT_EQ(c.calibration_runs, 2);
    ASSERT_EQ(c.estimator.penalty.grid.size(), 3u);
    EXPECT_EQ(c.estimator.penalty.grid[2], (PenaltyTriple{0.1, 0.1, 0.05}));
    EXPECT_EQ(c.estimator.gmm.particle_count, 30);
    EXPECT_EQ(c.seed, 11u);
}

TEST(CampaignConfig, RejectsBadConfigs) {
    auto expect_error = [](const std::string& text, const std::string& fragment) {
        try {
            campaign_from_config(parse(text));
            ADD_FAILURE() << "accepted: " << text;
        } catch (const InputError& e) {
            EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
        }
    };
    expect_error(R"({"network": {"kind": "erdos_renyi"}, "bogus": 1})", "bogus");
    expect_error(R"({"network": {"kind": "erdos_renyi"}, "replications": 3, "calibration_runs": 5})", "replications");
    expect_error(R"({"network": {"kind": "erdos_renyi"}, "t_grid": [5, 2.5]})", "t_grid");
    expect_error(R"({"network": {"kind": "erdos_renyi"}, "t_grid": []})", "t_grid");
    expect_error(R"({"network": {"kind": "circle"}})", "kind");
    expect_error(R"({"network": {"weights": [[0, 1], [1, 0]]}})", "network");
    expect_error(R"({"network": {"kind": "erdos_renyi"}, "estimator": {"penalty": {"axis": [0], "grid": "0:0:0"}}})",
                 "grid");
    expect_error(R"({"network": {"kind": "erdos_renyi"}, "estimator": {"penalty": {"grid": "0:0"}}})", "p1:p1_star:p2");
    expect_error(R"({"network": {"kind": "erdos_renyi"}, "estimator": {"penalty": {"grid": "-1:0:0"}}})", "");
    expect_error(R"({"network": {"kind": "erdos_renyi"}, "shock": {"noise_sd": -1}})", "noise_sd");
    expect_error(R"({"network": {"kind": "erdos_renyi"}, "seed": -4})", "seed");
    try {
        parse_json_text("{\n  \"a\": 1,\n  oops\n}", "cfg.json");
        ADD_FAILURE();
    } catch (const InputError& e) {
        EXPECT_EQ(std::string(e.what()).rfind("cfg.json:3:", 0), 0u) << e.what();
    }
}

TEST(RunCampaign, StructureAndFrozenPenalty) {
    const auto cfg = small_campaign();
    const auto rep = run_campaign(cfg);
    ASSERT_EQ(rep.cells.size(), 2u);
    ASSERT_EQ(rep.records.size(), 8u);
    EXPECT_EQ(rep.network, "erdos_renyi(8)");
    for (int c = 0; c < 2; ++c) {
        const auto& cell = rep.cells[c];
        EXPECT_EQ(cell.t, cfg.t_grid[c]);
        EXPECT_EQ(cell.successes + cell.failures, 4);
        std::vector<PenaltyTriple> chosen;
        for (const auto& r : rep.records) {
            if (r.cell != c) continue;
            EXPECT_EQ(r.t, cfg.t_grid[c]);
            EXPECT_EQ(r.calibration, r.rep < 2);
            if (r.calibration && r.ok) chosen.push_back(r.penalty);
        }
        ASSERT_FALSE(chosen.empty());
        const PenaltyTriple frozen = median_penalty(chosen, cfg.estimator.penalty.grid);
        EXPECT_EQ(cell.frozen_penalty, frozen);
        for (const auto& r : rep.records)
            if (r.cell == c && !r.calibration && r.ok) EXPECT_EQ(r.penalty, frozen);
    }
}

TEST(RunCampaign, AllCalibrationLeavesFrozenPhaseEmpty) {
    auto cfg = small_campaign();
    cfg.t_grid = {10};
    cfg.replications = cfg.calibration_runs = 3;
    const auto rep = run_campaign(cfg);
    ASSERT_EQ(rep.records.size(), 3u);
    for (const auto& r : rep.records) EXPECT_TRUE(r.calibration);
    EXPECT_EQ(rep.cells[0].successes + rep.cells[0].failures, 3);
    EXPECT_NO_THROW(to_json(rep).dump());
}

TEST(RunCampaign, DeterministicAcrossRunsAndThreads) {
    auto cfg = small_campaign();
    cfg.network.kind = NetworkSpec::Kind::political_party;
    cfg.network.n = 9;
    const std::string a = to_json(run_campaign(cfg)).dump();
    const std::string b = to_json(run_campaign(cfg)).dump();
    cfg.threads = 3;
    const std::string c = to_json(run_campaign(cfg)).dump();
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
}

TEST(RunCampaign, PersistedRecordsReproduceAggregates) {
    auto cfg = small_campaign();
    const fs::path dir = scratch_dir("persist");
    cfg.out_dir = dir.string();
    const auto rep = run_campaign(cfg);
    const auto records = load_records((dir / "records.jsonl").string());
    ASSERT_EQ(records.size(), rep.records.size());
    EXPECT_EQ(to_json(aggregate(cfg, records)).dump(), to_json(rep).dump());
    std::ostringstream csv_a, csv_b;
    write_report_csv(csv_a, rep);
    write_report_csv(csv_b, aggregate(cfg, records));
    EXPECT_EQ(csv_a.str(), csv_b.str());
    fs::remove_all(dir);
}

TEST(RunCampaign, ResumesFromTornRecords) {
    auto cfg = small_campaign();
    const fs::path dir = scratch_dir("resume");
    cfg.out_dir = dir.string();
    const std::string full = to_json(run_campaign(cfg)).dump();
    const fs::path path = dir / "records.jsonl";
    auto lines = lines_of(path);
    ASSERT_EQ(lines.size(), 8u);
    {
        std::ofstream out(path, std::ios::trunc);
        for (int i = 0; i < 3; ++i) out << lines[i] << '\n';
        out << lines[3].substr(0, lines[3].size() / 2);  // interrupted mid-write
    }
    EXPECT_EQ(to_json(run_campaign(cfg)).dump(), full);
    EXPECT_EQ(lines_of(path).size(), 8u);
    fs::remove_all(dir);
}

TEST(AggregateCell, ExcludesFailuresAndComputesMoments) {
    std::vector<ReplicationRecord> recs(4);
    const double mad[] = {0.1, 0.3, 0.2, 99.0};
    for (int i = 0; i < 4; ++i) {
        recs[i].rep = i;
        recs[i].ok = i < 3;
        recs[i].metrics.mad_w = mad[i];
        recs[i].nonzeros = 10 + i;
        recs[i].leaders_top3 = i == 0;
    }
    recs[3].error = "all grid points failed";
    const auto cell = aggregate_cell(10, {}, recs);
    EXPECT_EQ(cell.successes, 3);
    EXPECT_EQ(cell.failures, 1);
    EXPECT_NEAR(cell.metrics.at("mad_w").mean, 0.2, 1e-15);
    EXPECT_NEAR(cell.metrics.at("mad_w").sd, 0.1, 1e-15);
    EXPECT_NEAR(cell.metrics.at("nonzeros").mean, 11.0, 1e-15);
    EXPECT_NEAR(cell.leaders_top3_rate, 1.0 / 3.0, 1e-15);
}

TEST(ReplicationRecord, JsonRoundTrip) {
    ReplicationRecord r;
    r.cell = 1;
    r.t = 25;
    r.rep = 7;
    r.seed = 0xfedcba9876543210ULL;
    r.calibration = true;
    r.ok = true;
    r.penalty = {0.025, 0.05, 0.1};
    r.nonzeros = 12;
    r.metrics.mad_w = 0.1 + 1e-17;
    r.metrics.zero_recovery_rate = 1.0 / 3.0;
    r.rho_hat = 0.3000000000000001;
    r.gamma_hat = NAN;
    const auto back = record_from_json(Json::parse(to_json(r).dump()));
    EXPECT_EQ(back.seed, r.seed);
    EXPECT_EQ(back.penalty, r.penalty);
    EXPECT_EQ(back.metrics.mad_w, r.metrics.mad_w);
    EXPECT_EQ(back.metrics.zero_recovery_rate, r.metrics.zero_recovery_rate);
    EXPECT_EQ(back.rho_hat, r.rho_hat);
    EXPECT_TRUE(std::isnan(back.gamma_hat));
    EXPECT_EQ(back.calibration, true);
    ReplicationRecord failed;
    failed.error = "stage 1 failed";
    const auto fb = record_from_json(Json::parse(to_json(failed).dump()));
    EXPECT_FALSE(fb.ok);
    EXPECT_EQ(fb.error, "stage 1 failed");
}

TEST(CampaignNetwork, FromFileIsFixed) {
    NetworkSpec spec;
    spec.kind = NetworkSpec::Kind::from_file;
    spec.path = NETRECOVER_SOURCE_DIR "/fixtures/pentagon.csv";
    const Network a = campaign_network(spec, 1), b = campaign_network(spec, 2);
    EXPECT_EQ(a.weights(), b.weights());
    EXPECT_EQ(a.n(), 5);
    spec.kind = NetworkSpec::Kind::erdos_renyi;
    spec.n = 12;
    EXPECT_NE(campaign_network(spec, 1).weights(), campaign_network(spec, 2).weights());
    EXPECT_EQ(campaign_network(spec, 3).weights(), campaign_network(spec, 3).weights());
}

TEST(Io, EdgeListRoundTrip) {
    const Network w = gen_political_party(9, 2);
    const fs::path dir = scratch_dir("edges");
    fs::create_directories(dir);
    const fs::path p = dir / "w.csv";
    write_edge_list(p.string(), w);
    const auto back = read_edge_list(p.string());
    EXPECT_EQ(back.network.weights(), w.weights());
    std::ofstream(dir / "dup.csv") << "from,to,weight\n0,1,0.5\n0,1,0.5\n";
    EXPECT_THROW(read_edge_list((dir / "dup.csv").string()), InputError);
    std::ofstream(dir / "loop.csv") << "from,to,weight\n2,2,1\n";
    EXPECT_THROW(read_edge_list((dir / "loop.csv").string()), InputError);
    std::ofstream(dir / "labels.csv") << "from,to,weight\nCA,NV,0.5\nNV,AZ,1\n";
    const auto lab = read_edge_list((dir / "labels.csv").string());
    EXPECT_EQ(lab.labels, (std::vector<std::string>{"CA", "NV", "AZ"}));
    EXPECT_EQ(lab.network(1, 0), 0.5);
    EXPECT_EQ(lab.network(2, 1), 1.0);
    fs::remove_all(dir);
}

TEST(Io, PanelCsvRoundTrip) {
    const auto theta = StructuralParams::scalar(gen_erdos_renyi(5, 1), 0.3, 0.4, 0.5);
    ShockConfig s;
    s.seed = 3;
    const PanelData p = simulate_panel(theta, s, 7);
    const fs::path dir = scratch_dir("panel");
    fs::create_directories(dir);
    write_panel_csv((dir / "p.csv").string(), p);
    const PanelData back = read_panel_csv((dir / "p.csv").string());
    EXPECT_EQ(back.y, p.y);
    EXPECT_EQ(back.x[0], p.x[0]);
    std::ofstream(dir / "unbalanced.csv") << "unit,time,y,x1\na,1,0,0\nb,1,0,0\na,2,0,0\n";
    EXPECT_THROW(read_panel_csv((dir / "unbalanced.csv").string()), InputError);
    std::ofstream(dir / "header.csv") << "unit,period,y,x1\na,1,0,0\n";
    EXPECT_THROW(read_panel_csv((dir / "header.csv").string()), InputError);
    fs::remove_all(dir);
}

TEST(RunCampaignProperty, MadDecreasesInT) {
    // At least 50 replications per T; one inversion allowed.
    CampaignConfig cfg;
    cfg.network.kind = NetworkSpec::Kind::political_party;
    cfg.network.n = 9;
    cfg.t_grid = {10, 25, 50, 100};
    cfg.replications = 50;
    cfg.calibration_runs = 10;
    cfg.estimator.penalty.grid = {{0, 0, 0}, {0.025, 0.025, 0}, {0.05, 0.05, 0.05}};
    cfg.estimator.gmm.particle_count = 20;
    cfg.estimator.gmm.swarm_iterations = 20;
    cfg.seed = 5;
    cfg.threads = 4;
    const auto rep = run_campaign(cfg);
    int inversions = 0;
    for (std::size_t c = 1; c < rep.cells.size(); ++c) {
        ASSERT_GE(rep.cells[c].successes, 45);
        if (rep.cells[c].metrics.at("mad_w").mean > rep.cells[c - 1].metrics.at("mad_w").mean) ++inversions;
    }
    EXPECT_LE(inversions, 1);
    EXPECT_LT(rep.cells.back().metrics.at("mad_w").mean, rep.cells.front().metrics.at("mad_w").mean);
}
