#pragma once

#include "netrecover/counterfactual.hpp"
#include "netrecover/estimator.hpp"
#include "netrecover/identification.hpp"
#include "netrecover/model.hpp"
#include "netrecover/net_stats.hpp"
#include "netrecover/ols.hpp"
#include "netrecover/types.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace netrecover {

using Json = nlohmann::ordered_json;

/// Shortest decimal that round-trips a double.
inline std::string format_double(double v) {
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw InputError(where + ": '" + s + "' is not a finite number");
}

inline bool is_index(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    return in;
}

struct CsvRows {
    std::vector<std::string> header;
    std::vector<std::pair<int, std::vector<std::string>>> rows;  // (line number, cells)
};

inline CsvRows read_csv(const std::string& path) {
    auto in = open_input(path);
    CsvRows out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto cells = split_csv(line);
        if (out.header.empty()) {
            out.header = std::move(cells);
            continue;
        }
        if (cells.size() != out.header.size())
            throw InputError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(out.header.size()) +
                             " fields, got " + std::to_string(cells.size()));
        out.rows.emplace_back(lineno, std::move(cells));
    }
    if (out.header.empty()) throw InputError(path + ": empty file");
    return out;
}

}  // namespace detail

struct LabeledNetwork {
    Network network;
    std::vector<std::string> labels;
};

/// Edge list with header `from,to,weight`. Influence flows from `from` to `to`, so
/// a row `j,i,w` sets W(i, j) = w. Nodes are 0-based indices when every label is a
/// nonnegative integer, else labels in order of first appearance. `n` sets the
/// node count for index lists whose highest nodes have no edges.
inline LabeledNetwork read_edge_list(const std::string& path, int n = 0) {
    const auto csv = detail::read_csv(path);
    if (csv.header != std::vector<std::string>{"from", "to", "weight"})
        throw InputError(path + ": header must be from,to,weight");
    bool indices = true;
    for (const auto& [line, r] : csv.rows) indices = indices && detail::is_index(r[0]) && detail::is_index(r[1]);
    std::vector<std::string> labels;
    std::map<std::string, int> index;
    auto id = [&](const std::string& s) {
        if (indices) return std::stoi(s);
        auto it = index.find(s);
        if (it != index.end()) return it->second;
        index[s] = static_cast<int>(labels.size());
        labels.push_back(s);
        return static_cast<int>(labels.size()) - 1;
    };
    std::vector<std::tuple<int, int, double, int>> edges;
    int max_id = -1;
    for (const auto& [line, r] : csv.rows) {
        const std::string where = path + ":" + std::to_string(line);
        const int a = id(r[0]), b = id(r[1]);
        edges.emplace_back(a, b, detail::parse_number(r[2], where), line);
        max_id = std::max({max_id, a, b});
    }
    const int size = indices ? std::max(n, max_id + 1) : static_cast<int>(labels.size());
    if (size < 1) throw InputError(path + ": no nodes");
    if (indices) {
        labels.clear();
        for (int i = 0; i < size; ++i) labels.push_back(std::to_string(i));
    }
    Matrix w = Matrix::Zero(size, size);
    std::set<std::pair<int, int>> seen;
    for (const auto& [a, b, v, line] : edges) {
        if (!seen.insert({a, b}).second)
            throw InputError(path + ":" + std::to_string(line) + ": duplicate edge");
        if (a == b) throw InputError(path + ":" + std::to_string(line) + ": self-loop violates a zero diagonal (A1)");
        w(b, a) = v;
    }
    return {Network(std::move(w)), std::move(labels)};
}

inline void write_edge_list(std::ostream& out, const Network& net, const std::vector<std::string>& labels = {},
                            double tol = kZeroTol) {
    out << "from,to,weight\n";
    const int n = net.n();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && std::abs(net(i, j)) > tol)
                out << (labels.empty() ? std::to_string(j) : labels[j]) << ','
                    << (labels.empty() ? std::to_string(i) : labels[i]) << ',' << format_double(net(i, j)) << '\n';
}

inline void write_edge_list(const std::string& path, const Network& net, const std::vector<std::string>& labels = {}) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    write_edge_list(out, net, labels);
}

/// Long panel with header `unit,time,y,x1..xK[,z1..zL]`. Units and periods keep the
/// order of first appearance; the panel must be balanced.
inline PanelData read_panel_csv(const std::string& path) {
    const auto csv = detail::read_csv(path);
    const auto& h = csv.header;
    if (h.size() < 4 || h[0] != "unit" || h[1] != "time" || h[2] != "y")
        throw InputError(path + ": header must start with unit,time,y,x1");
    int k = 0, l = 0;
    for (std::size_t c = 3; c < h.size(); ++c) {
        if (h[c] == "x" + std::to_string(k + 1) && l == 0)
            ++k;
        else if (h[c] == "z" + std::to_string(l + 1))
            ++l;
        else
            throw InputError(path + ": unexpected column '" + h[c] + "'");
    }
    if (k == 0) throw InputError(path + ": at least one covariate column x1 is required");
    std::vector<std::string> units, times;
    std::map<std::string, int> uidx, tidx;
    for (const auto& [line, r] : csv.rows) {
        if (!uidx.count(r[0])) {
            uidx[r[0]] = static_cast<int>(units.size());
            units.push_back(r[0]);
        }
        if (!tidx.count(r[1])) {
            tidx[r[1]] = static_cast<int>(times.size());
            times.push_back(r[1]);
        }
    }
    const int n = static_cast<int>(units.size()), t = static_cast<int>(times.size());
    PanelData p;
    p.y = Matrix::Zero(t, n);
    p.x.assign(k, Matrix::Zero(t, n));
    if (l > 0) p.z.assign(l, Matrix::Zero(t, n));
    p.unit_labels = units;
    p.time_labels = times;
    std::set<std::pair<int, int>> seen;
    for (const auto& [line, r] : csv.rows) {
        const std::string where = path + ":" + std::to_string(line);
        const int i = uidx[r[0]], s = tidx[r[1]];
        if (!seen.insert({i, s}).second) throw InputError(where + ": duplicate (unit,time) row");
        p.y(s, i) = detail::parse_number(r[2], where);
        for (int c = 0; c < k; ++c) p.x[c](s, i) = detail::parse_number(r[3 + c], where);
        for (int c = 0; c < l; ++c) p.z[c](s, i) = detail::parse_number(r[3 + k + c], where);
    }
    if (static_cast<int>(seen.size()) != n * t)
        throw InputError(path + ": unbalanced panel (" + std::to_string(seen.size()) + " of " +
                         std::to_string(n * t) + " unit-period rows)");
    p.validate();
    return p;
}

inline void write_panel_csv(std::ostream& out, const PanelData& p) {
    out << "unit,time,y";
    for (int c = 0; c < p.k(); ++c) out << ",x" << c + 1;
    for (std::size_t c = 0; c < p.z.size(); ++c) out << ",z" << c + 1;
    out << '\n';
    for (int s = 0; s < p.t(); ++s)
        for (int i = 0; i < p.n(); ++i) {
            out << (p.unit_labels.empty() ? std::to_string(i) : p.unit_labels[i]) << ','
                << (p.time_labels.empty() ? std::to_string(s) : p.time_labels[s]) << ',' << format_double(p.y(s, i));
            for (const auto& x : p.x) out << ',' << format_double(x(s, i));
            for (const auto& z : p.z) out << ',' << format_double(z(s, i));
            out << '\n';
        }
}

inline void write_panel_csv(const std::string& path, const PanelData& p) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    write_panel_csv(out, p);
}

// JSON views. Matrices are arrays of rows.

inline Json to_json(const Matrix& m) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        a.push_back(std::move(row));
    }
    return a;
}

inline Json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Matrix matrix_from_json(const Json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw InputError(what + ": expected a non-empty array of rows");
    const auto rows = j.size(), cols = j[0].size();
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (!j[i].is_array() || j[i].size() != cols) throw InputError(what + ": ragged matrix at row " + std::to_string(i));
        for (std::size_t c = 0; c < cols; ++c) {
            if (!j[i][c].is_number()) throw InputError(what + ": non-numeric entry");
            m(i, c) = j[i][c].get<double>();
        }
    }
    return m;
}

inline Json to_json(const StructuralParams& p) {
    return Json{{"rho", p.rho}, {"beta", p.beta}, {"gamma", p.gamma}, {"W", to_json(p.network.weights())}};
}

inline StructuralParams params_from_json(const Json& j) {
    StructuralParams p;
    p.network = Network(matrix_from_json(j.at("W"), "W"));
    p.rho = j.at("rho").get<double>();
    auto vec = [&](const char* key) {
        const auto& v = j.at(key);
        return v.is_array() ? v.get<std::vector<double>>() : std::vector<double>{v.get<double>()};
    };
    p.beta = vec("beta");
    p.gamma = vec("gamma");
    if (p.beta.size() != p.gamma.size() || p.beta.empty()) throw InputError("beta and gamma must have equal, nonzero length");
    return p;
}

inline Json to_json(const AssumptionReport& r) {
    auto one = [](const AssumptionCheck& c) { return Json{{"holds", c.holds}, {"value", c.value}}; };
    Json a2 = one(r.a2);
    a2["rho_abs"] = r.a2_rho_abs;
    return Json{{"A1", one(r.a1)}, {"A2", a2}, {"A3", one(r.a3)}, {"A4", one(r.a4)}, {"A5", one(r.a5)}, {"all", r.all()}};
}

inline Json to_json(const WaldReport& r) {
    return Json{{"statistic", r.statistic}, {"dof", r.dof}, {"p_value", r.p_value}, {"row_sums", to_json(r.row_sums)}};
}

inline Json to_json(const NetworkStats& s) {
    return Json{{"nodes", s.nodes},
                {"edge_count", s.edge_count},
                {"strong_edge_count", s.strong_edge_count},
                {"weak_edge_count", s.weak_edge_count},
                {"reciprocated_edge_count", s.reciprocated_edge_count},
                {"clustering_coefficient", s.clustering_coefficient},
                {"component_count", s.component_count},
                {"max_component_size", s.max_component_size},
                {"density", s.density},
                {"diag_w2_sd", s.diag_w2_sd},
                {"in_degree_mean", s.in_degree_mean},
                {"in_degree_sd", s.in_degree_sd},
                {"out_degree_mean", s.out_degree_mean},
                {"out_degree_sd", s.out_degree_sd},
                {"top_out_degree_nodes", s.top_out_degree_nodes},
                {"top_eigencentrality_nodes", s.top_eigencentrality_nodes}};
}

inline Json to_json(const RecoveryMetrics& m) {
    return Json{{"zero_recovery_rate", m.zero_recovery_rate},
                {"nonzero_recovery_rate", m.nonzero_recovery_rate},
                {"strong_edge_recovery_rate", m.strong_edge_recovery_rate},
                {"mad_w", m.mad_w},
                {"mad_pi", m.mad_pi},
                {"bias_rho", m.bias_rho},
                {"bias_gamma", m.bias_gamma},
                {"bias_beta", m.bias_beta}};
}

inline Json to_json(const TslsResult& r) {
    return Json{{"rho", r.rho}, {"beta", r.beta}, {"gamma", r.gamma}, {"std_errors", r.std_errors}, {"cov", to_json(r.cov)}};
}

inline Json to_json(const PenaltyTriple& p) { return Json{{"p1", p.p1}, {"p1_star", p.p1_star}, {"p2", p.p2}}; }

inline Json to_json(const ConvergenceRecord& r) {
    return Json{{"penalty", to_json(r.penalty)}, {"stage", r.stage},          {"objective", r.objective},
                {"gmm_value", r.gmm_value},      {"iterations", r.iterations}, {"prune_rounds", r.prune_rounds},
                {"converged", r.converged},      {"nonzeros", r.nonzeros}};
}

inline Json to_json(const EstimationResult& r) {
    Json grid = Json::array();
    for (const auto& g : r.grid) {
        Json e{{"penalty", to_json(g.penalty)}, {"ok", g.ok}};
        if (g.ok) {
            e["bic"] = g.bic;
            e["gmm_value"] = g.gmm_value;
            e["nonzeros"] = g.nonzeros;
        } else {
            e["error"] = g.error;
        }
        grid.push_back(std::move(e));
    }
    Json zp = Json::array();
    for (Eigen::Index i = 0; i < r.zero_pattern.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < r.zero_pattern.cols(); ++j) row.push_back(static_cast<bool>(r.zero_pattern(i, j)));
        zp.push_back(std::move(row));
    }
    Json out{{"schema", "netrecover.estimation/1"},
             {"theta_hat", to_json(r.theta_hat)},
             {"stage1_theta", to_json(r.stage1_theta)},
             {"chosen_penalty", to_json(r.chosen_penalty)},
             {"bic_value", r.bic_value},
             {"objective_value", r.objective_value},
             {"gmm_value", r.gmm_value},
             {"nonzeros", count_offdiag_nonzeros(r.theta_hat.network.weights())},
             {"zero_pattern", std::move(zp)},
             {"grid", std::move(grid)},
             {"warnings", r.warnings}};
    if (r.post_2sls)
        out["post_2sls"] = to_json(*r.post_2sls);
    else
        out["post_2sls"] = Json{{"error", r.post_2sls_error}};
    return out;
}

inline Json to_json(const EigenAnalysis& e) {
    auto cvec = [](const std::vector<std::complex<double>>& v) {
        Json a = Json::array();
        for (const auto& c : v) a.push_back(Json{{"re", c.real()}, {"im", c.imag()}});
        return a;
    };
    return Json{{"eigenvalues_w", cvec(e.eigenvalues_w)},
                {"eigenvalues_pi", cvec(e.eigenvalues_pi)},
                {"dominant_index", e.dominant_index},
                {"eigencentrality", to_json(e.eigencentrality)},
                {"eigenvector_condition", e.eigenvector_condition},
                {"unreliable", e.unreliable},
                {"uninformative", e.uninformative}};
}

}  // namespace netrecover
