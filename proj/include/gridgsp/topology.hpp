#pragma once

#include "gridgsp/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace gridgsp {

enum class BusType { slack, pv, pq };
enum class BranchStatus { in_service, out };
enum class GraphKind { bus_vertex, line_vertex };
enum class Weighting { inverse_distance, inverse_reactance, unit };

struct BusRecord {
    int id = 0;
    BusType type = BusType::pq;
    double p_load = 0.0;  // per-unit active demand
    std::optional<double> x;
    std::optional<double> y;
};

struct BranchRecord {
    int from_bus = 0;
    int to_bus = 0;
    double reactance = 0.0;  // per-unit
    BranchStatus status = BranchStatus::in_service;
};

struct CaseData {
    double base_mva = 100.0;
    std::vector<BusRecord> buses;
    std::vector<BranchRecord> branches;
};

struct WeightedEdge {
    Index i = 0;
    Index j = 0;
    double w = 0.0;
};

/// Weighted undirected graph with its Laplacian. Immutable once built;
/// `labels` maps vertex index to bus id (bus_vertex) or branch table
/// index (line_vertex).
struct GridGraph {
    GraphKind kind = GraphKind::bus_vertex;
    std::vector<WeightedEdge> edges;
    Matrix laplacian;
    std::vector<int> labels;
    bool connected = true;

    Index n() const { return laplacian.rows(); }

    std::vector<std::vector<Index>> adjacency() const {
        std::vector<std::vector<Index>> adj(static_cast<std::size_t>(n()));
        for (const auto& e : edges) {
            adj[static_cast<std::size_t>(e.i)].push_back(e.j);
            adj[static_cast<std::size_t>(e.j)].push_back(e.i);
        }
        return adj;
    }
};

namespace detail {

inline bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

inline std::string_view strip_comment(std::string_view line) {
    auto pos = line.find('%');
    return pos == std::string_view::npos ? line : line.substr(0, pos);
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

struct RawMatrix {
    std::vector<std::vector<double>> rows;
    std::size_t line = 0;  // line of the assignment
};

/// Recognizes the numeric-matrix subset of MATPOWER case syntax:
/// `name = [ rows ];`, `name = scalar;`, `name = 'string';` and a single
/// leading `function` header. Anything else is rejected, never evaluated.
class CaseScanner {
public:
    explicit CaseScanner(std::istream& in) {
        std::string line;
        std::size_t lineno = 0;
        bool saw_statement = false;
        std::optional<std::string> pending_name;
        std::optional<RawMatrix> pending;
        std::vector<double> row;
        std::string num;

        auto flush_number = [&]() {
            if (num.empty()) return;
            char* end = nullptr;
            double v = std::strtod(num.c_str(), &end);
            if (end == nullptr || *end != '\0')
                throw ParseError("invalid numeric token '" + num + "'", lineno);
            row.push_back(v);
            num.clear();
        };
        auto flush_row = [&]() {
            flush_number();
            if (!row.empty()) {
                pending->rows.push_back(row);
                row.clear();
            }
        };

        while (std::getline(in, line)) {
            ++lineno;
            std::string_view body = strip_comment(line);
            if (pending) {
                for (char c : body) {
                    if (c == ']') {
                        flush_row();
                        matrices_[*pending_name] = std::move(*pending);
                        pending.reset();
                        pending_name.reset();
                        break;
                    } else if (c == ';') {
                        flush_row();
                    } else if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
                        flush_number();
                    } else {
                        num.push_back(c);
                    }
                }
                if (pending) flush_row();  // newline also terminates a row
                continue;
            }
            if (is_blank(body)) continue;
            std::string stmt = trim(body);
            if (stmt.rfind("function", 0) == 0 && !saw_statement) {
                saw_statement = true;  // tolerated header, never evaluated
                continue;
            }
            saw_statement = true;
            auto eq = stmt.find('=');
            if (eq == std::string::npos)
                throw ParseError("statement is not an assignment: '" + stmt + "'", lineno);
            std::string name = trim(stmt.substr(0, eq));
            if (auto dot = name.rfind('.'); dot != std::string::npos) name = name.substr(dot + 1);
            if (name.empty() || !std::all_of(name.begin(), name.end(), [](unsigned char c) {
                    return std::isalnum(c) || c == '_';
                }))
                throw ParseError("invalid assignment target '" + name + "'", lineno);
            std::string rhs = trim(stmt.substr(eq + 1));
            if (!rhs.empty() && rhs.front() == '[') {
                pending_name = name;
                pending = RawMatrix{{}, lineno};
                std::string rest = rhs.substr(1);
                // re-scan the remainder of this line as matrix content
                for (char c : rest) {
                    if (c == ']') {
                        flush_row();
                        matrices_[*pending_name] = std::move(*pending);
                        pending.reset();
                        pending_name.reset();
                        break;
                    } else if (c == ';') {
                        flush_row();
                    } else if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
                        flush_number();
                    } else {
                        num.push_back(c);
                    }
                }
                if (pending) flush_row();
                continue;
            }
            if (!rhs.empty() && rhs.back() == ';') rhs = trim(rhs.substr(0, rhs.size() - 1));
            if (rhs.size() >= 2 && rhs.front() == '\'' && rhs.back() == '\'') {
                strings_[name] = rhs.substr(1, rhs.size() - 2);
                continue;
            }
            char* end = nullptr;
            double v = std::strtod(rhs.c_str(), &end);
            if (end == nullptr || *end != '\0' || rhs.empty())
                throw ParseError("expression is not a plain scalar: '" + rhs + "'", lineno);
            scalars_[name] = v;
        }
        if (pending)
            throw ParseError("unterminated matrix '" + *pending_name + "'", pending->line);
    }

    const RawMatrix* matrix(const std::string& name) const {
        auto it = matrices_.find(name);
        return it == matrices_.end() ? nullptr : &it->second;
    }
    std::optional<double> scalar(const std::string& name) const {
        auto it = scalars_.find(name);
        if (it == scalars_.end()) return std::nullopt;
        return it->second;
    }

private:
    std::map<std::string, RawMatrix> matrices_;
    std::map<std::string, double> scalars_;
    std::map<std::string, std::string> strings_;
};

inline void require_rectangular(const RawMatrix& m, const std::string& name) {
    if (m.rows.empty()) return;
    std::size_t w = m.rows.front().size();
    for (std::size_t r = 1; r < m.rows.size(); ++r)
        if (m.rows[r].size() != w)
            throw ParseError("ragged row " + std::to_string(r + 1) + " in matrix '" + name + "'",
                             m.line);
}

}  // namespace detail

/// Parses the numeric-matrix subset of a MATPOWER case. Bus rows use
/// columns (bus_i, type, Pd); branch rows use (fbus, tbus, _, x) and the
/// status column when present. Pd is converted MW -> per-unit on baseMVA.
inline CaseData parse_matpower_case(std::istream& in) {
    detail::CaseScanner scan(in);
    const auto* bus = scan.matrix("bus");
    const auto* branch = scan.matrix("branch");
    if (bus == nullptr) throw ValidationError("case is missing required table 'bus'");
    if (branch == nullptr) throw ValidationError("case is missing required table 'branch'");
    detail::require_rectangular(*bus, "bus");
    detail::require_rectangular(*branch, "branch");

    CaseData data;
    data.base_mva = scan.scalar("baseMVA").value_or(100.0);
    if (data.base_mva <= 0.0) throw ValidationError("baseMVA must be positive");

    std::unordered_map<int, std::size_t> seen;
    for (std::size_t r = 0; r < bus->rows.size(); ++r) {
        const auto& row = bus->rows[r];
        if (row.size() < 3)
            throw ParseError("bus row " + std::to_string(r + 1) + " has fewer than 3 columns",
                             bus->line);
        BusRecord b;
        b.id = static_cast<int>(row[0]);
        if (b.id <= 0) throw ValidationError("bus id must be a positive integer");
        int code = static_cast<int>(row[1]);
        switch (code) {
            case 1: b.type = BusType::pq; break;
            case 2: b.type = BusType::pv; break;
            case 3: b.type = BusType::slack; break;
            default:
                throw ValidationError("bus " + std::to_string(b.id) + " has unknown type code " +
                                      std::to_string(code));
        }
        b.p_load = row[2] / data.base_mva;
        if (!seen.emplace(b.id, r).second)
            throw ValidationError("duplicate bus id " + std::to_string(b.id));
        data.buses.push_back(b);
    }
    std::size_t slack_count =
        static_cast<std::size_t>(std::count_if(data.buses.begin(), data.buses.end(),
                                               [](const BusRecord& b) { return b.type == BusType::slack; }));
    if (slack_count != 1)
        throw ValidationError("expected exactly one slack bus, found " +
                              std::to_string(slack_count));

    for (std::size_t r = 0; r < branch->rows.size(); ++r) {
        const auto& row = branch->rows[r];
        if (row.size() < 4)
            throw ParseError("branch row " + std::to_string(r + 1) + " has fewer than 4 columns",
                             branch->line);
        BranchRecord br;
        br.from_bus = static_cast<int>(row[0]);
        br.to_bus = static_cast<int>(row[1]);
        br.reactance = row[3];
        br.status = (row.size() >= 11 && row[10] == 0.0) ? BranchStatus::out
                                                         : BranchStatus::in_service;
        if (br.from_bus == br.to_bus)
            throw ValidationError("branch row " + std::to_string(r + 1) + " is a self-loop");
        if (!seen.count(br.from_bus) || !seen.count(br.to_bus))
            throw ValidationError("branch row " + std::to_string(r + 1) +
                                  " references an unknown bus");
        if (br.reactance <= 0.0)
            throw ValidationError("branch row " + std::to_string(r + 1) +
                                  " has non-positive reactance");
        data.branches.push_back(br);
    }
    return data;
}

inline CaseData parse_matpower_case(const std::string& text) {
    std::istringstream in(text);
    return parse_matpower_case(in);
}

/// Emits the parsed tables back as case text (numeric content round-trips
/// bit-equal for exactly representable values).
inline std::string serialize_case(const CaseData& data) {
    std::ostringstream out;
    out << "baseMVA = " << format_double(data.base_mva) << ";\n";
    out << "bus = [\n";
    for (const auto& b : data.buses) {
        int code = b.type == BusType::pq ? 1 : (b.type == BusType::pv ? 2 : 3);
        out << "\t" << b.id << "\t" << code << "\t" << format_double(b.p_load * data.base_mva)
            << ";\n";
    }
    out << "];\n";
    out << "branch = [\n";
    for (const auto& br : data.branches)
        out << "\t" << br.from_bus << "\t" << br.to_bus << "\t0\t" << format_double(br.reactance)
            << "\t0\t0\t0\t0\t0\t0\t" << (br.status == BranchStatus::in_service ? 1 : 0) << ";\n";
    out << "];\n";
    return out.str();
}

namespace detail {

inline bool bfs_connected(Index n, const std::vector<std::vector<Index>>& adj) {
    if (n == 0) return true;
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::deque<Index> queue{0};
    seen[0] = 1;
    Index reached = 1;
    while (!queue.empty()) {
        Index v = queue.front();
        queue.pop_front();
        for (Index u : adj[static_cast<std::size_t>(v)])
            if (!seen[static_cast<std::size_t>(u)]) {
                seen[static_cast<std::size_t>(u)] = 1;
                ++reached;
                queue.push_back(u);
            }
    }
    return reached == n;
}

inline GridGraph finish_graph(GraphKind kind, Index n, std::map<std::pair<Index, Index>, double> weights,
                              std::vector<int> labels) {
    GridGraph g;
    g.kind = kind;
    g.labels = std::move(labels);
    g.laplacian = Matrix::Zero(n, n);
    for (const auto& [key, w] : weights) {
        auto [i, j] = key;
        g.edges.push_back({i, j, w});
        g.laplacian(i, j) -= w;
        g.laplacian(j, i) -= w;
        g.laplacian(i, i) += w;
        g.laplacian(j, j) += w;
    }
    g.connected = bfs_connected(n, g.adjacency());
    return g;
}

}  // namespace detail

/// Bus-vertex graph: one vertex per bus, edges weighted per `weighting`.
/// Parallel branches merge by summing weights; out-of-service branches are
/// excluded. Result carries `connected = false` instead of failing when the
/// in-service network splits.
inline GridGraph build_bus_graph(const std::vector<BusRecord>& buses,
                                 const std::vector<BranchRecord>& branches, Weighting weighting) {
    std::unordered_map<int, Index> index_of;
    std::vector<int> labels;
    for (const auto& b : buses) {
        if (!index_of.emplace(b.id, static_cast<Index>(labels.size())).second)
            throw ValidationError("duplicate bus id " + std::to_string(b.id));
        labels.push_back(b.id);
    }
    std::map<std::pair<Index, Index>, double> weights;
    for (const auto& br : branches) {
        if (br.status == BranchStatus::out) continue;
        auto fi = index_of.find(br.from_bus);
        auto ti = index_of.find(br.to_bus);
        if (fi == index_of.end() || ti == index_of.end())
            throw ValidationError("branch references an unknown bus");
        Index i = std::min(fi->second, ti->second);
        Index j = std::max(fi->second, ti->second);
        if (i == j) throw ValidationError("self-loop branch");
        double w = 0.0;
        switch (weighting) {
            case Weighting::unit: w = 1.0; break;
            case Weighting::inverse_reactance:
                if (br.reactance <= 0.0) throw ValidationError("non-positive reactance");
                w = 1.0 / br.reactance;
                break;
            case Weighting::inverse_distance: {
                const auto& a = buses[static_cast<std::size_t>(fi->second)];
                const auto& b = buses[static_cast<std::size_t>(ti->second)];
                if (!a.x || !a.y || !b.x || !b.y)
                    throw ConfigError("inverse_distance weighting requires coordinates on every bus");
                double d = std::hypot(*a.x - *b.x, *a.y - *b.y);
                if (d <= 0.0)
                    throw ValidationError("degenerate weight: zero distance between buses " +
                                          std::to_string(br.from_bus) + " and " +
                                          std::to_string(br.to_bus));
                w = 1.0 / d;
                break;
            }
        }
        weights[{i, j}] += w;
    }
    return detail::finish_graph(GraphKind::bus_vertex, static_cast<Index>(buses.size()),
                                std::move(weights), std::move(labels));
}

/// Line-vertex graph: one vertex per in-service branch, unit-weight edge
/// between branches that share a bus. Labels hold branch table indices.
inline GridGraph build_line_graph(const std::vector<BranchRecord>& branches) {
    std::vector<int> labels;
    std::vector<std::pair<int, int>> ends;
    for (std::size_t r = 0; r < branches.size(); ++r) {
        if (branches[r].status == BranchStatus::out) continue;
        labels.push_back(static_cast<int>(r));
        ends.emplace_back(branches[r].from_bus, branches[r].to_bus);
    }
    if (ends.empty()) throw ValidationError("line graph requires at least one in-service branch");
    std::map<std::pair<Index, Index>, double> weights;
    for (std::size_t a = 0; a < ends.size(); ++a)
        for (std::size_t b = a + 1; b < ends.size(); ++b) {
            const auto& [af, at] = ends[a];
            const auto& [bf, bt] = ends[b];
            if (af == bf || af == bt || at == bf || at == bt)
                weights[{static_cast<Index>(a), static_cast<Index>(b)}] = 1.0;
        }
    return detail::finish_graph(GraphKind::line_vertex, static_cast<Index>(ends.size()),
                                std::move(weights), std::move(labels));
}

/// Unweighted hop counts from `source` to every vertex; -1 marks vertices in
/// other components.
inline std::vector<int> bfs_hops(const GridGraph& g, Index source) {
    if (source < 0 || source >= g.n()) throw DimensionError("vertex out of range");
    std::vector<int> dist(static_cast<std::size_t>(g.n()), -1);
    auto adj = g.adjacency();
    std::deque<Index> queue{source};
    dist[static_cast<std::size_t>(source)] = 0;
    while (!queue.empty()) {
        Index v = queue.front();
        queue.pop_front();
        for (Index u : adj[static_cast<std::size_t>(v)])
            if (dist[static_cast<std::size_t>(u)] < 0) {
                dist[static_cast<std::size_t>(u)] = dist[static_cast<std::size_t>(v)] + 1;
                queue.push_back(u);
            }
    }
    return dist;
}

/// Shortest-path hop count; empty across components.
inline std::optional<int> hop_distance(const GridGraph& g, Index a, Index b) {
    if (a < 0 || a >= g.n() || b < 0 || b >= g.n()) throw DimensionError("vertex out of range");
    int d = bfs_hops(g, a)[static_cast<std::size_t>(b)];
    if (d < 0) return std::nullopt;
    return d;
}

// Native topology document (JSON).

inline nlohmann::ordered_json topology_to_json(const CaseData& data) {
    nlohmann::ordered_json doc;
    doc["buses"] = nlohmann::ordered_json::array();
    for (const auto& b : data.buses) {
        nlohmann::ordered_json jb;
        jb["id"] = b.id;
        jb["type"] = b.type == BusType::slack ? "slack" : (b.type == BusType::pv ? "pv" : "pq");
        jb["p_load"] = b.p_load;
        if (b.x) jb["x"] = *b.x;
        if (b.y) jb["y"] = *b.y;
        doc["buses"].push_back(jb);
    }
    doc["branches"] = nlohmann::ordered_json::array();
    for (const auto& br : data.branches) {
        nlohmann::ordered_json jb;
        jb["from"] = br.from_bus;
        jb["to"] = br.to_bus;
        jb["reactance"] = br.reactance;
        jb["status"] = br.status == BranchStatus::in_service ? "in_service" : "out";
        doc["branches"].push_back(jb);
    }
    return doc;
}

inline CaseData topology_from_json(const nlohmann::json& doc) {
    CaseData data;
    if (!doc.contains("buses") || !doc.contains("branches"))
        throw ValidationError("topology document requires 'buses' and 'branches'");
    for (const auto& jb : doc.at("buses")) {
        BusRecord b;
        b.id = jb.at("id").get<int>();
        std::string t = jb.at("type").get<std::string>();
        if (t == "slack")
            b.type = BusType::slack;
        else if (t == "pv")
            b.type = BusType::pv;
        else if (t == "pq")
            b.type = BusType::pq;
        else
            throw ValidationError("unknown bus type '" + t + "'");
        b.p_load = jb.at("p_load").get<double>();
        if (jb.contains("x")) b.x = jb.at("x").get<double>();
        if (jb.contains("y")) b.y = jb.at("y").get<double>();
        data.buses.push_back(b);
    }
    for (const auto& jb : doc.at("branches")) {
        BranchRecord br;
        br.from_bus = jb.at("from").get<int>();
        br.to_bus = jb.at("to").get<int>();
        br.reactance = jb.at("reactance").get<double>();
        std::string s = jb.at("status").get<std::string>();
        if (s == "in_service")
            br.status = BranchStatus::in_service;
        else if (s == "out")
            br.status = BranchStatus::out;
        else
            throw ValidationError("unknown branch status '" + s + "'");
        data.branches.push_back(br);
    }
    return data;
}

/// Coordinates sidecar: CSV `bus_id,x,y` with a header row. Applies onto the
/// bus table in place.
inline void apply_coords_csv(std::istream& in, std::vector<BusRecord>& buses) {
    std::unordered_map<int, std::size_t> index_of;
    for (std::size_t i = 0; i < buses.size(); ++i) index_of[buses[i].id] = i;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1) continue;  // header
        if (detail::is_blank(line)) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(row, cell, ',')) cells.push_back(detail::trim(cell));
        if (cells.size() != 3) throw ParseError("expected 'bus_id,x,y'", lineno);
        int id = std::stoi(cells[0]);
        auto it = index_of.find(id);
        if (it == index_of.end())
            throw ValidationError("coordinates reference unknown bus " + std::to_string(id));
        buses[it->second].x = std::stod(cells[1]);
        buses[it->second].y = std::stod(cells[2]);
    }
}

inline Index slack_index(const std::vector<BusRecord>& buses) {
    for (std::size_t i = 0; i < buses.size(); ++i)
        if (buses[i].type == BusType::slack) return static_cast<Index>(i);
    throw ValidationError("no slack bus in table");
}

}  // namespace gridgsp
