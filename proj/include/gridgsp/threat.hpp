#pragma once

#include "gridgsp/core.hpp"
#include "gridgsp/gridsim.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <json.hpp>

namespace gridgsp {

enum class StressKind { none, dos, replay, fdia, line_failure };

inline std::string stress_kind_name(StressKind k) {
    switch (k) {
        case StressKind::none: return "none";
        case StressKind::dos: return "dos";
        case StressKind::replay: return "replay";
        case StressKind::fdia: return "fdia";
        case StressKind::line_failure: return "line_failure";
    }
    return "none";
}

inline StressKind stress_kind_from_name(const std::string& s) {
    if (s == "none") return StressKind::none;
    if (s == "dos") return StressKind::dos;
    if (s == "replay") return StressKind::replay;
    if (s == "fdia") return StressKind::fdia;
    if (s == "line_failure") return StressKind::line_failure;
    throw ConfigError("unknown stress kind '" + s + "'");
}

/// Ground-truth description of one injected stress. `targets` holds vertex
/// indices of the attacked graph (line-vertex index of the failed branch for
/// line failures, which also records `branch` as a branch-table index).
struct StressScenario {
    StressKind kind = StressKind::none;
    std::vector<Index> targets;
    Index branch = -1;
    Index t_start = 0;
    Index t_end = 0;
    double alpha = 0.0;
    Index replay_offset = 0;
    std::uint64_t seed = 0;

    void validate(Index t_total) const {
        if (kind == StressKind::none) return;
        if (targets.empty()) throw ValidationError("stress scenario requires at least one target");
        if (t_start > t_end || t_end >= t_total)
            throw ValidationError("attack window must satisfy t_start <= t_end < T");
        if (kind == StressKind::replay) {
            if (replay_offset < 1) throw ValidationError("replay offset must be at least 1 step");
            if (replay_offset > t_start)
                throw ValidationError("replay offset must reach strictly before the attack window");
        }
        if (kind == StressKind::fdia && alpha < 0.0)
            throw ValidationError("fdia magnitude alpha must be non-negative");
    }
};

namespace detail {

inline void check_targets(const StressScenario& sc, Index width) {
    for (Index v : sc.targets)
        if (v < 0 || v >= width) throw ValidationError("attack target out of range");
}

}  // namespace detail

/// Denial of service: targeted entries read exactly 0 inside the window.
inline TimeVaryingSignal inject_dos(const TimeVaryingSignal& clean, const StressScenario& sc) {
    if (sc.kind != StressKind::dos) throw ConfigError("scenario kind is not dos");
    sc.validate(clean.steps());
    detail::check_targets(sc, clean.width());
    TimeVaryingSignal out = clean;
    for (Index t = sc.t_start; t <= sc.t_end; ++t)
        for (Index v : sc.targets) out.samples(t, v) = 0.0;
    return out;
}

/// Replay: targeted entries repeat the clean signal from `replay_offset`
/// steps earlier, so every replayed value predates the window.
inline TimeVaryingSignal inject_replay(const TimeVaryingSignal& clean, const StressScenario& sc) {
    if (sc.kind != StressKind::replay) throw ConfigError("scenario kind is not replay");
    sc.validate(clean.steps());
    detail::check_targets(sc, clean.width());
    TimeVaryingSignal out = clean;
    for (Index t = sc.t_start; t <= sc.t_end; ++t) {
        Index src = t - sc.replay_offset;
        if (src < 0) throw ConfigError("replay reaches before the start of the record");
        for (Index v : sc.targets) out.samples(t, v) = clean.samples(src, v);
    }
    return out;
}

/// The falsified-measurement update: value + (-1)^d * alpha * u * range.
inline double fdia_value(double value, double alpha, double u, int d, double range) {
    return value + (d % 2 == 0 ? 1.0 : -1.0) * alpha * u * range;
}

/// Per-vertex measurement ranges (max - min) from clean history; the scale
/// basis for FDIA perturbations.
inline Vector compute_range_table(const TimeVaryingSignal& clean) {
    Vector range(clean.width());
    for (Index c = 0; c < clean.width(); ++c)
        range(c) = clean.samples.col(c).maxCoeff() - clean.samples.col(c).minCoeff();
    return range;
}

/// False data injection: each targeted (vertex, step) gets an independent
/// draw of d in {0,1} and u in [0,1).
inline TimeVaryingSignal inject_fdia(const TimeVaryingSignal& clean, const StressScenario& sc,
                                     const Vector& range_table) {
    if (sc.kind != StressKind::fdia) throw ConfigError("scenario kind is not fdia");
    sc.validate(clean.steps());
    detail::check_targets(sc, clean.width());
    if (range_table.size() != clean.width())
        throw ConfigError("range table does not cover every vertex");
    if (!range_table.allFinite()) throw ConfigError("range table has missing entries");

    auto engine = rng::make_engine(rng::derive_seed(sc.seed, 0xfd1aULL));
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::uniform_int_distribution<int> coin(0, 1);
    TimeVaryingSignal out = clean;
    std::vector<Index> targets = sc.targets;
    std::sort(targets.begin(), targets.end());
    for (Index t = sc.t_start; t <= sc.t_end; ++t)
        for (Index v : targets) {
            int d = coin(engine);
            double u = uniform(engine);
            out.samples(t, v) = fdia_value(clean.samples(t, v), sc.alpha, u, d, range_table(v));
        }
    return out;
}

/// Applies the scenario's injector; `none` and `line_failure` pass through
/// (line failures corrupt the solve itself, not the record).
inline TimeVaryingSignal inject(const TimeVaryingSignal& clean, const StressScenario& sc,
                                const Vector& range_table) {
    switch (sc.kind) {
        case StressKind::none:
        case StressKind::line_failure: return clean;
        case StressKind::dos: return inject_dos(clean, sc);
        case StressKind::replay: return inject_replay(clean, sc);
        case StressKind::fdia: return inject_fdia(clean, sc, range_table);
    }
    return clean;
}

inline nlohmann::ordered_json scenario_to_json(const StressScenario& sc) {
    nlohmann::ordered_json doc;
    doc["kind"] = stress_kind_name(sc.kind);
    doc["targets"] = sc.targets;
    if (sc.kind == StressKind::line_failure) doc["branch"] = sc.branch;
    doc["t_start"] = sc.t_start;
    doc["t_end"] = sc.t_end;
    if (sc.kind == StressKind::fdia) doc["alpha"] = sc.alpha;
    if (sc.kind == StressKind::replay) doc["replay_offset"] = sc.replay_offset;
    doc["seed"] = sc.seed;
    return doc;
}

inline StressScenario scenario_from_json(const nlohmann::json& doc) {
    StressScenario sc;
    sc.kind = stress_kind_from_name(doc.at("kind").get<std::string>());
    sc.targets = doc.at("targets").get<std::vector<Index>>();
    if (doc.contains("branch")) sc.branch = doc.at("branch").get<Index>();
    sc.t_start = doc.at("t_start").get<Index>();
    sc.t_end = doc.at("t_end").get<Index>();
    if (doc.contains("alpha")) sc.alpha = doc.at("alpha").get<double>();
    if (doc.contains("replay_offset")) sc.replay_offset = doc.at("replay_offset").get<Index>();
    if (doc.contains("seed")) sc.seed = doc.at("seed").get<std::uint64_t>();
    return sc;
}

}  // namespace gridgsp
