#pragma once

#include "gridgsp/core.hpp"
#include "gridgsp/topology.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace gridgsp {

enum class ProfileShape { flat, daily, ramp };

struct LoadProfile {
    Vector base_loads;                 // per-unit, one entry per bus
    std::vector<double> multipliers;   // length T, all > 0
    double noise_sigma = 0.0;
};

/// T x N sample matrix; row t is the graph signal at step t.
struct TimeVaryingSignal {
    Matrix samples;
    std::string dt_label;

    Index steps() const { return samples.rows(); }
    Index width() const { return samples.cols(); }
};

/// Multiplier sequences standing in for recorded load patterns.
///   flat:  all 1.0
///   daily: 1 + 0.25 sin(2 pi t / T - pi/2), trough at t = 0
///   ramp:  linear 0.9 -> 1.1
inline std::vector<double> synth_profile(Index t_steps, ProfileShape shape,
                                         std::uint64_t /*seed*/ = 0) {
    if (t_steps < 1) throw ConfigError("profile length must be at least 1");
    std::vector<double> m(static_cast<std::size_t>(t_steps), 1.0);
    switch (shape) {
        case ProfileShape::flat: break;
        case ProfileShape::daily:
            for (Index t = 0; t < t_steps; ++t)
                m[static_cast<std::size_t>(t)] =
                    1.0 + 0.25 * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) /
                                              static_cast<double>(t_steps) -
                                          std::numbers::pi / 2.0);
            break;
        case ProfileShape::ramp:
            for (Index t = 0; t < t_steps; ++t)
                m[static_cast<std::size_t>(t)] =
                    t_steps == 1 ? 1.0
                                 : 0.9 + 0.2 * static_cast<double>(t) /
                                             static_cast<double>(t_steps - 1);
            break;
    }
    return m;
}

struct PowerFlowResult {
    Vector theta;  // bus voltage angles, radians, slack pinned to 0
    Vector flows;  // per branch-table row; 0 for out-of-service branches
};

namespace detail {

struct FlowSystem {
    Eigen::LDLT<Matrix> factor;  // reduced susceptance matrix, slack removed
    Index slack = 0;
    std::unordered_map<int, Index> bus_index;
};

inline FlowSystem factor_network(const std::vector<BusRecord>& buses,
                                 const std::vector<BranchRecord>& branches) {
    const Index n = static_cast<Index>(buses.size());
    FlowSystem sys;
    sys.slack = slack_index(buses);
    for (Index i = 0; i < n; ++i) sys.bus_index[buses[static_cast<std::size_t>(i)].id] = i;

    std::vector<std::vector<Index>> adj(static_cast<std::size_t>(n));
    Matrix b = Matrix::Zero(n, n);
    for (const auto& br : branches) {
        if (br.status == BranchStatus::out) continue;
        Index i = sys.bus_index.at(br.from_bus);
        Index j = sys.bus_index.at(br.to_bus);
        double w = 1.0 / br.reactance;
        b(i, i) += w;
        b(j, j) += w;
        b(i, j) -= w;
        b(j, i) -= w;
        adj[static_cast<std::size_t>(i)].push_back(j);
        adj[static_cast<std::size_t>(j)].push_back(i);
    }
    if (!bfs_connected(n, adj))
        throw TopologyError("in-service network is islanded; power flow is infeasible");

    Matrix reduced(n - 1, n - 1);
    Index ri = 0;
    for (Index i = 0; i < n; ++i) {
        if (i == sys.slack) continue;
        Index rj = 0;
        for (Index j = 0; j < n; ++j) {
            if (j == sys.slack) continue;
            reduced(ri, rj) = b(i, j);
            ++rj;
        }
        ++ri;
    }
    sys.factor = reduced.ldlt();
    if (sys.factor.info() != Eigen::Success)
        throw TopologyError("susceptance matrix is singular; power flow is infeasible");
    return sys;
}

inline PowerFlowResult solve_flow(const FlowSystem& sys, const std::vector<BusRecord>& buses,
                                  const std::vector<BranchRecord>& branches,
                                  const Vector& injections) {
    const Index n = static_cast<Index>(buses.size());
    if (injections.size() != n) throw DimensionError("injection vector length does not match buses");

    Vector p(n - 1);
    Index ri = 0;
    for (Index i = 0; i < n; ++i) {
        if (i == sys.slack) continue;
        p(ri++) = injections(i);
    }
    Vector reduced_theta = sys.factor.solve(p);

    PowerFlowResult out;
    out.theta = Vector::Zero(n);
    ri = 0;
    for (Index i = 0; i < n; ++i) {
        if (i == sys.slack) continue;
        out.theta(i) = reduced_theta(ri++);
    }
    out.flows = Vector::Zero(static_cast<Index>(branches.size()));
    for (std::size_t r = 0; r < branches.size(); ++r) {
        const auto& br = branches[r];
        if (br.status == BranchStatus::out) continue;
        Index i = sys.bus_index.at(br.from_bus);
        Index j = sys.bus_index.at(br.to_bus);
        out.flows(static_cast<Index>(r)) = (out.theta(i) - out.theta(j)) / br.reactance;
    }
    return out;
}

}  // namespace detail

/// Linearized power flow B' theta = P with the slack angle pinned to 0. The
/// slack entry of `injections` is ignored and replaced by the balancing
/// power; flow on branch (i,j) is (theta_i - theta_j) / x_ij.
inline PowerFlowResult dc_power_flow(const std::vector<BusRecord>& buses,
                                     const std::vector<BranchRecord>& branches,
                                     Vector injections) {
    auto sys = detail::factor_network(buses, branches);
    double balance = 0.0;
    for (Index i = 0; i < injections.size(); ++i)
        if (i != sys.slack) balance += injections(i);
    injections(sys.slack) = -balance;
    return detail::solve_flow(sys, buses, branches, injections);
}

struct FailureSpec {
    Index branch = 0;  // branch table index
    Index step = 0;    // first step with the branch out
};

struct SimulationResult {
    TimeVaryingSignal bus_angles;  // on the bus-vertex graph, radians
    TimeVaryingSignal line_flows;  // on the pre-failure line-vertex graph, per-unit
};

/// Synthesizes a clean (or single-line-failure) telemetry run. Loads follow
/// base * multiplier * (1 + N(0, sigma)) per bus per step; the slack bus
/// absorbs the total mismatch. From `failure.step` onward the branch drops
/// out of the solve and its flow entry reads 0; the line-vertex indexing
/// stays that of the pre-failure graph.
inline SimulationResult simulate(const std::vector<BusRecord>& buses,
                                 const std::vector<BranchRecord>& branches,
                                 const LoadProfile& profile,
                                 const std::optional<FailureSpec>& failure, std::uint64_t seed) {
    const Index n = static_cast<Index>(buses.size());
    const Index t_steps = static_cast<Index>(profile.multipliers.size());
    if (profile.base_loads.size() != n)
        throw DimensionError("base load vector length does not match buses");
    if (t_steps < 1) throw ConfigError("profile must cover at least one step");
    for (double m : profile.multipliers)
        if (m <= 0.0) throw ConfigError("profile multipliers must be positive");
    if (failure && (failure->step < 0 || failure->step >= t_steps))
        throw ConfigError("failure step outside the simulated horizon");
    if (failure && (failure->branch < 0 ||
                    failure->branch >= static_cast<Index>(branches.size()) ||
                    branches[static_cast<std::size_t>(failure->branch)].status == BranchStatus::out))
        throw ConfigError("failure references a branch that is not in service");

    auto base_system = detail::factor_network(buses, branches);
    std::optional<detail::FlowSystem> failed_system;
    std::vector<BranchRecord> failed_branches;
    if (failure) {
        failed_branches = branches;
        failed_branches[static_cast<std::size_t>(failure->branch)].status = BranchStatus::out;
        failed_system = detail::factor_network(buses, failed_branches);  // throws on islanding
    }

    // Line-signal columns follow the pre-failure line-vertex graph.
    std::vector<Index> line_cols;
    for (std::size_t r = 0; r < branches.size(); ++r)
        if (branches[r].status == BranchStatus::in_service) line_cols.push_back(static_cast<Index>(r));

    SimulationResult out;
    out.bus_angles.samples.resize(t_steps, n);
    out.bus_angles.dt_label = "step";
    out.line_flows.samples.resize(t_steps, static_cast<Index>(line_cols.size()));
    out.line_flows.dt_label = "step";

    auto engine = rng::make_engine(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Index t = 0; t < t_steps; ++t) {
        Vector injections(n);
        const double mult = profile.multipliers[static_cast<std::size_t>(t)];
        for (Index i = 0; i < n; ++i) {
            double noise = profile.noise_sigma > 0.0 ? profile.noise_sigma * gauss(engine) : 0.0;
            injections(i) = -profile.base_loads(i) * mult * (1.0 + noise);
        }
        const bool after_failure = failure && t >= failure->step;
        const auto& sys = after_failure ? *failed_system : base_system;
        const auto& brs = after_failure ? failed_branches : branches;
        double balance = 0.0;
        for (Index i = 0; i < n; ++i)
            if (i != sys.slack) balance += injections(i);
        injections(sys.slack) = -balance;
        auto flow = detail::solve_flow(sys, buses, brs, injections);
        out.bus_angles.samples.row(t) = flow.theta.transpose();
        for (std::size_t c = 0; c < line_cols.size(); ++c)
            out.line_flows.samples(t, static_cast<Index>(c)) = flow.flows(line_cols[c]);
    }
    return out;
}

/// CSV matrix export, header `t,v1,...,vN`, one row per step.
inline void write_measurements_csv(std::ostream& out, const TimeVaryingSignal& signal) {
    out << 't';
    for (Index c = 0; c < signal.width(); ++c) out << ",v" << (c + 1);
    out << '\n';
    for (Index t = 0; t < signal.steps(); ++t) {
        out << t;
        for (Index c = 0; c < signal.width(); ++c)
            out << ',' << format_double(signal.samples(t, c));
        out << '\n';
    }
}

inline TimeVaryingSignal read_measurements_csv(std::istream& in) {
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::vector<double>> rows;
    Index width = -1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::is_blank(line)) continue;
        if (lineno == 1) {
            if (line.rfind("t,", 0) != 0 && line != "t")
                throw ParseError("expected measurement header 't,v1,...'", lineno);
            continue;
        }
        std::istringstream row(line);
        std::string cell;
        std::vector<double> values;
        bool first = true;
        while (std::getline(row, cell, ',')) {
            if (first) {  // step index column
                first = false;
                continue;
            }
            values.push_back(std::stod(cell));
        }
        if (width < 0) width = static_cast<Index>(values.size());
        if (static_cast<Index>(values.size()) != width)
            throw ParseError("ragged measurement row", lineno);
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw ParseError("measurement file has no data rows", lineno);
    TimeVaryingSignal signal;
    signal.dt_label = "step";
    signal.samples.resize(static_cast<Index>(rows.size()), width);
    for (std::size_t t = 0; t < rows.size(); ++t)
        for (Index c = 0; c < width; ++c)
            signal.samples(static_cast<Index>(t), c) = rows[t][static_cast<std::size_t>(c)];
    return signal;
}

/// Scenario config document: {T, profile: {shape, noise_sigma}, failure?:
/// {branch, step}, seed}.
struct SimConfig {
    Index t_steps = 288;
    ProfileShape shape = ProfileShape::daily;
    double noise_sigma = 0.01;
    std::optional<FailureSpec> failure;
    std::uint64_t seed = 0;
};

inline std::string profile_shape_name(ProfileShape s) {
    switch (s) {
        case ProfileShape::flat: return "flat";
        case ProfileShape::daily: return "daily";
        case ProfileShape::ramp: return "ramp";
    }
    return "flat";
}

inline ProfileShape profile_shape_from_name(const std::string& s) {
    if (s == "flat") return ProfileShape::flat;
    if (s == "daily") return ProfileShape::daily;
    if (s == "ramp") return ProfileShape::ramp;
    throw ConfigError("unknown profile shape '" + s + "'");
}

inline nlohmann::ordered_json sim_config_to_json(const SimConfig& cfg) {
    nlohmann::ordered_json doc;
    doc["T"] = cfg.t_steps;
    doc["profile"] = {{"shape", profile_shape_name(cfg.shape)}, {"noise_sigma", cfg.noise_sigma}};
    if (cfg.failure)
        doc["failure"] = {{"branch", cfg.failure->branch}, {"step", cfg.failure->step}};
    doc["seed"] = cfg.seed;
    return doc;
}

inline SimConfig sim_config_from_json(const nlohmann::json& doc) {
    SimConfig cfg;
    cfg.t_steps = doc.at("T").get<Index>();
    if (doc.contains("profile")) {
        const auto& p = doc.at("profile");
        if (p.contains("shape")) cfg.shape = profile_shape_from_name(p.at("shape").get<std::string>());
        if (p.contains("noise_sigma")) cfg.noise_sigma = p.at("noise_sigma").get<double>();
    }
    if (doc.contains("failure")) {
        FailureSpec f;
        f.branch = doc.at("failure").at("branch").get<Index>();
        f.step = doc.at("failure").at("step").get<Index>();
        cfg.failure = f;
    }
    if (doc.contains("seed")) cfg.seed = doc.at("seed").get<std::uint64_t>();
    return cfg;
}

}  // namespace gridgsp
