#pragma once

#include "gridgsp/core.hpp"
#include "gridgsp/detect.hpp"
#include "gridgsp/gridsim.hpp"
#include "gridgsp/gsp.hpp"
#include "gridgsp/spectral.hpp"
#include "gridgsp/threat.hpp"
#include "gridgsp/topology.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace gridgsp {

struct AttackMix {
    double none = 0.5;
    double dos = 0.0;
    double replay = 0.0;
    double fdia = 0.5;
    double line_failure = 0.0;

    void validate() const {
        double total = none + dos + replay + fdia + line_failure;
        for (double p : {none, dos, replay, fdia, line_failure})
            if (p < 0.0) throw ConfigError("attack mix probabilities must be non-negative");
        if (std::abs(total - 1.0) > 1e-9)
            throw ConfigError("attack mix probabilities must sum to 1");
    }
    bool has_cyber() const { return dos + replay + fdia > 0.0; }
    bool has_line() const { return line_failure > 0.0; }
};

struct ExperimentPlan {
    int n_scenarios = 500;
    AttackMix attack_mix;
    std::vector<double> alpha_grid = {1.0, 2.0, 3.0, 4.0, 5.0};
    int targets_min = 1;
    int targets_max = 3;
    Index t_steps = 288;
    std::uint64_t seed = 1;

    void validate() const {
        if (n_scenarios < 1) throw ConfigError("plan requires at least one scenario");
        attack_mix.validate();
        if (alpha_grid.empty()) throw ConfigError("alpha grid must not be empty");
        if (targets_min < 1 || targets_max < targets_min)
            throw ConfigError("targets_per_attack range is invalid");
        if (t_steps < 20) throw ConfigError("scenario horizon is too short");
    }
};

inline nlohmann::ordered_json plan_to_json(const ExperimentPlan& p) {
    nlohmann::ordered_json doc;
    doc["n_scenarios"] = p.n_scenarios;
    doc["attack_mix"] = {{"none", p.attack_mix.none},
                         {"dos", p.attack_mix.dos},
                         {"replay", p.attack_mix.replay},
                         {"fdia", p.attack_mix.fdia},
                         {"line_failure", p.attack_mix.line_failure}};
    doc["alpha_grid"] = p.alpha_grid;
    doc["targets_per_attack"] = {p.targets_min, p.targets_max};
    doc["T"] = p.t_steps;
    doc["seed"] = p.seed;
    return doc;
}

inline ExperimentPlan plan_from_json(const nlohmann::json& doc) {
    ExperimentPlan p;
    p.n_scenarios = doc.at("n_scenarios").get<int>();
    const auto& mix = doc.at("attack_mix");
    p.attack_mix.none = mix.value("none", 0.0);
    p.attack_mix.dos = mix.value("dos", 0.0);
    p.attack_mix.replay = mix.value("replay", 0.0);
    p.attack_mix.fdia = mix.value("fdia", 0.0);
    p.attack_mix.line_failure = mix.value("line_failure", 0.0);
    p.alpha_grid = doc.at("alpha_grid").get<std::vector<double>>();
    auto range = doc.at("targets_per_attack").get<std::vector<int>>();
    if (range.size() != 2) throw ConfigError("targets_per_attack must be [min, max]");
    p.targets_min = range[0];
    p.targets_max = range[1];
    p.t_steps = doc.at("T").get<Index>();
    p.seed = doc.value("seed", std::uint64_t{1});
    p.validate();
    return p;
}

/// Harness-level knobs on top of the per-detector configuration.
struct HarnessConfig {
    Weighting weighting = Weighting::inverse_reactance;
    ProfileShape profile_shape = ProfileShape::daily;
    double noise_sigma = 0.01;
    Index train_steps = 1440;
    int persistence = 3;  // consecutive flagged steps per vertex for a scenario alarm
    unsigned threads = 0; // 0 = hardware concurrency
    DetectorConfig detector;
};

namespace detail {

enum SeedStream : std::uint64_t {
    kTrainStream = 0x7261696eULL,
    kScenarioStream = 0x7363656eULL,
    kSimStream = 0x73696d75ULL,
    kAttackStream = 0x61747461ULL,
};

}  // namespace detail

/// Everything derived from one case + config: graphs, bases, baselines and
/// the FDIA range table, all fitted on a dedicated clean training run.
struct StudyContext {
    CaseData case_data;
    GridGraph bus_graph;
    GridGraph line_graph;
    SpectralBasis bus_basis;
    SpectralBasis line_basis;
    BaselineModel bus_model;
    BaselineModel line_model;
    Vector angle_range;             // per-bus, from the clean training split
    Vector base_loads;
    Index slack = 0;
    std::vector<int> safe_branches; // branch indices whose loss keeps the grid connected
    HarnessConfig config;
};

inline StudyContext make_study(const CaseData& case_data, const HarnessConfig& config,
                               std::uint64_t seed) {
    StudyContext study;
    study.case_data = case_data;
    study.config = config;
    study.bus_graph = build_bus_graph(case_data.buses, case_data.branches, config.weighting);
    study.line_graph = build_line_graph(case_data.branches);
    study.bus_basis = eigendecompose(study.bus_graph);
    study.line_basis = eigendecompose(study.line_graph);
    study.slack = slack_index(case_data.buses);

    study.base_loads = Vector(static_cast<Index>(case_data.buses.size()));
    for (std::size_t i = 0; i < case_data.buses.size(); ++i)
        study.base_loads(static_cast<Index>(i)) = case_data.buses[i].p_load;

    LoadProfile train_profile{study.base_loads,
                              synth_profile(config.train_steps, config.profile_shape),
                              config.noise_sigma};
    auto train = simulate(case_data.buses, case_data.branches, train_profile, std::nullopt,
                          rng::derive_seed(seed, detail::kTrainStream));
    study.bus_model = fit_baseline(train.bus_angles, study.bus_basis, study.bus_graph,
                                   config.detector);
    study.line_model = fit_baseline(train.line_flows, study.line_basis, study.line_graph,
                                    config.detector);
    study.angle_range = compute_range_table(train.bus_angles);

    for (std::size_t r = 0; r < case_data.branches.size(); ++r) {
        if (case_data.branches[r].status == BranchStatus::out) continue;
        auto trial = case_data.branches;
        trial[r].status = BranchStatus::out;
        std::vector<std::vector<Index>> adj(case_data.buses.size());
        std::unordered_map<int, Index> index_of;
        for (std::size_t i = 0; i < case_data.buses.size(); ++i)
            index_of[case_data.buses[i].id] = static_cast<Index>(i);
        for (const auto& br : trial) {
            if (br.status == BranchStatus::out) continue;
            Index i = index_of.at(br.from_bus), j = index_of.at(br.to_bus);
            adj[static_cast<std::size_t>(i)].push_back(j);
            adj[static_cast<std::size_t>(j)].push_back(i);
        }
        if (detail::bfs_connected(static_cast<Index>(case_data.buses.size()), adj))
            study.safe_branches.push_back(static_cast<int>(r));
    }
    return study;
}

/// One generated scenario: ground truth plus the clean and corrupted records
/// on both graph domains.
struct ScenarioData {
    StressScenario truth;
    TimeVaryingSignal clean_angles;
    TimeVaryingSignal corrupted_angles;
    TimeVaryingSignal clean_flows;
    TimeVaryingSignal corrupted_flows;
};

/// Samples the ground truth for scenario `index`. The draw stream depends on
/// (plan seed, index) only, so an alpha sweep reuses identical scenarios and
/// differs purely in the injected magnitude.
inline StressScenario sample_scenario(const ExperimentPlan& plan, const StudyContext& study,
                                      double alpha, int index) {
    plan.validate();
    auto engine = rng::make_engine(
        rng::derive_seed(plan.seed, detail::kScenarioStream, static_cast<std::uint64_t>(index)));
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    StressScenario sc;
    sc.seed = rng::derive_seed(plan.seed, detail::kAttackStream, static_cast<std::uint64_t>(index));
    double roll = uniform(engine);
    const auto& mix = plan.attack_mix;
    if (roll < mix.none)
        sc.kind = StressKind::none;
    else if (roll < mix.none + mix.dos)
        sc.kind = StressKind::dos;
    else if (roll < mix.none + mix.dos + mix.replay)
        sc.kind = StressKind::replay;
    else if (roll < mix.none + mix.dos + mix.replay + mix.fdia)
        sc.kind = StressKind::fdia;
    else
        sc.kind = StressKind::line_failure;
    if (sc.kind == StressKind::none) return sc;

    const Index t_total = plan.t_steps;
    const Index lo = t_total / 4;
    const Index hi = 3 * t_total / 4;  // windows live inside [T/4, 3T/4]
    std::uniform_int_distribution<Index> start_dist(lo, hi - 5);
    sc.t_start = start_dist(engine);
    std::uniform_int_distribution<Index> len_dist(5, hi - sc.t_start);
    sc.t_end = sc.t_start + len_dist(engine) - 1;

    if (sc.kind == StressKind::line_failure) {
        if (study.safe_branches.empty())
            throw TopologyError("every single-line failure would island the network");
        // rejection over in-service branches = uniform over the safe set
        std::vector<int> in_service;
        for (std::size_t r = 0; r < study.case_data.branches.size(); ++r)
            if (study.case_data.branches[r].status == BranchStatus::in_service)
                in_service.push_back(static_cast<int>(r));
        std::uniform_int_distribution<std::size_t> pick(0, in_service.size() - 1);
        int branch = -1;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            int candidate = in_service[pick(engine)];
            if (std::binary_search(study.safe_branches.begin(), study.safe_branches.end(),
                                   candidate)) {
                branch = candidate;
                break;
            }
        }
        if (branch < 0) throw TopologyError("could not sample a non-islanding line failure");
        sc.branch = branch;
        sc.t_end = t_total - 1;  // a tripped line stays out
        for (std::size_t v = 0; v < study.line_graph.labels.size(); ++v)
            if (study.line_graph.labels[v] == branch) sc.targets = {static_cast<Index>(v)};
        return sc;
    }

    // Cyber targets: scattered buses, excluding the slack reference (its
    // angle is pinned, so falsifying it is a no-op in this signal model).
    std::uniform_int_distribution<int> count_dist(plan.targets_min, plan.targets_max);
    int want = count_dist(engine);
    const Index n = study.bus_graph.n();
    if (want > static_cast<int>(n) - 1) throw ConfigError("more targets requested than vertices");
    std::set<Index> chosen;
    std::uniform_int_distribution<Index> vertex_dist(0, n - 1);
    while (static_cast<int>(chosen.size()) < want) {
        Index v = vertex_dist(engine);
        if (v != study.slack) chosen.insert(v);
    }
    sc.targets.assign(chosen.begin(), chosen.end());

    if (sc.kind == StressKind::replay) {
        std::uniform_int_distribution<Index> offset_dist(1, sc.t_start);
        sc.replay_offset = offset_dist(engine);
    }
    if (sc.kind == StressKind::fdia) sc.alpha = alpha;
    return sc;
}

/// Simulates the clean run and applies the scenario's corruption.
inline ScenarioData materialize_scenario(const ExperimentPlan& plan, const StudyContext& study,
                                         const StressScenario& truth, int index) {
    ScenarioData data;
    data.truth = truth;
    LoadProfile profile{study.base_loads, synth_profile(plan.t_steps, study.config.profile_shape),
                        study.config.noise_sigma};
    std::uint64_t sim_seed =
        rng::derive_seed(plan.seed, detail::kSimStream, static_cast<std::uint64_t>(index));
    auto clean = simulate(study.case_data.buses, study.case_data.branches, profile, std::nullopt,
                          sim_seed);
    data.clean_angles = clean.bus_angles;
    data.clean_flows = clean.line_flows;
    if (truth.kind == StressKind::line_failure) {
        auto failed = simulate(study.case_data.buses, study.case_data.branches, profile,
                               FailureSpec{truth.branch, truth.t_start}, sim_seed);
        data.corrupted_angles = failed.bus_angles;
        data.corrupted_flows = failed.line_flows;
    } else {
        data.corrupted_angles = inject(clean.bus_angles, truth, study.angle_range);
        data.corrupted_flows = clean.line_flows;
    }
    return data;
}

/// Spec contract form: the full scenario list for one alpha value. The
/// experiment driver streams scenarios instead of holding them all.
inline std::vector<ScenarioData> generate_scenarios(const ExperimentPlan& plan,
                                                    const StudyContext& study, double alpha) {
    std::vector<ScenarioData> out;
    out.reserve(static_cast<std::size_t>(plan.n_scenarios));
    for (int i = 0; i < plan.n_scenarios; ++i)
        out.push_back(materialize_scenario(plan, study, sample_scenario(plan, study, alpha, i), i));
    return out;
}

namespace detail {

/// Debounced scan of per-step flag sets: a vertex contributes an alarm once
/// it stays flagged for `persistence` consecutive evaluated steps.
class PersistenceScanner {
public:
    PersistenceScanner(Index n, int persistence) : runs_(static_cast<std::size_t>(n), 0),
                                                   persistence_(persistence) {}

    void step(Index t, const std::vector<Index>& flagged, DetectionReport& report) {
        bool alarmed = false;
        std::size_t cursor = 0;
        for (std::size_t v = 0; v < runs_.size(); ++v) {
            bool on = cursor < flagged.size() && flagged[cursor] == static_cast<Index>(v);
            if (on) ++cursor;
            runs_[v] = on ? runs_[v] + 1 : 0;
            if (runs_[v] >= persistence_) {
                alarmed = true;
                located_.insert(static_cast<Index>(v));
            }
        }
        if (alarmed) report.alarm_steps.push_back(t);
    }

    void finish(DetectionReport& report) const {
        report.located.assign(located_.begin(), located_.end());
        report.stressed = !report.alarm_steps.empty();
    }

private:
    std::vector<int> runs_;
    std::set<Index> located_;
    int persistence_;
};

}  // namespace detail

/// Runs one detector family over a record and aggregates per-step alarms
/// into a scenario verdict via the persistence rule.
inline DetectionReport run_gamma_stream(const BaselineModel& model, const SpectralBasis& basis,
                                        const TimeVaryingSignal& signal, int persistence,
                                        std::uint64_t key) {
    DetectionReport report;
    report.detector = "gft";
    report.domain = "bus";
    report.scenario_key = key;
    const Index start = model.config.mean_window;
    int run = 0;
    for (Index t = start; t < signal.steps(); ++t) {
        bool raw = detect_gft(model, basis, signal.samples.row(t).transpose());
        run = raw ? run + 1 : 0;
        if (run >= persistence) report.alarm_steps.push_back(t);
    }
    report.stressed = !report.alarm_steps.empty();
    return report;
}

inline DetectionReport run_smoothness_stream(const BaselineModel& model, const GridGraph& graph,
                                             const TimeVaryingSignal& signal, int persistence,
                                             std::uint64_t key, const std::string& domain) {
    DetectionReport report;
    report.detector = "smoothness";
    report.domain = domain;
    report.scenario_key = key;
    detail::PersistenceScanner scan(graph.n(), persistence);
    const Index start = model.config.mean_window;
    for (Index t = start; t < signal.steps(); ++t) {
        auto det = detect_local_smoothness(model, graph, signal.samples.row(t).transpose());
        scan.step(t, det.flagged, report);
    }
    scan.finish(report);
    return report;
}

inline DetectionReport run_vfed_stream(const BaselineModel& model, const TimeVaryingSignal& signal,
                                       int persistence, std::uint64_t key,
                                       const std::string& domain) {
    DetectionReport report;
    report.detector = "vfed";
    report.domain = domain;
    report.scenario_key = key;
    detail::PersistenceScanner scan(signal.width(), persistence);
    for (Index t = model.config.mean_window; t < signal.steps(); ++t) {
        auto det = detect_vfed(model, signal, t);
        scan.step(t, det.flagged, report);
    }
    scan.finish(report);
    return report;
}

struct ScenarioOutcome {
    StressScenario truth;
    std::uint64_t key = 0;
    std::vector<DetectionReport> reports;
};

inline ScenarioOutcome evaluate_scenario(const StudyContext& study, const ScenarioData& data,
                                         std::uint64_t key, bool bus_detectors,
                                         bool line_detectors) {
    ScenarioOutcome out;
    out.truth = data.truth;
    out.key = key;
    const int persistence = study.config.persistence;
    if (bus_detectors) {
        out.reports.push_back(run_gamma_stream(study.bus_model, study.bus_basis,
                                               data.corrupted_angles, persistence, key));
        out.reports.push_back(run_smoothness_stream(study.bus_model, study.bus_graph,
                                                    data.corrupted_angles, persistence, key,
                                                    "bus"));
        out.reports.push_back(
            run_vfed_stream(study.bus_model, data.corrupted_angles, persistence, key, "bus"));
    }
    if (line_detectors) {
        out.reports.push_back(run_smoothness_stream(study.line_model, study.line_graph,
                                                    data.corrupted_flows, persistence, key,
                                                    "line"));
        out.reports.push_back(
            run_vfed_stream(study.line_model, data.corrupted_flows, persistence, key, "line"));
    }
    return out;
}

struct CyberMetrics {
    double accuracy = 0.0;
    double fpr = 0.0;
    double loc_exact = 0.0;
    double loc_1hop = 0.0;
    double loc_any = 0.0;
    int n_scenarios = 0;
    int n_attacked = 0;
    int n_normal = 0;
    int detected = 0;
    int missed = 0;
    int false_alarms = 0;
    int passed = 0;
};

struct LineMetrics {
    double detection_rate = 0.0;
    double fpr = 0.0;
    double loc_2hop = 0.0;
    double loc_3hop = 0.0;
    int n_scenarios = 0;
    int n_attacked = 0;
    int n_normal = 0;
    int detected = 0;
    int missed = 0;
    int false_alarms = 0;
    int passed = 0;
};

struct MetricsTable {
    // (detector, alpha) -> cyber metrics, insertion-ordered
    std::vector<std::tuple<std::string, double, CyberMetrics>> cyber;
    std::vector<std::pair<std::string, LineMetrics>> line;
};

namespace detail {

inline bool covers_within(const std::vector<Index>& located, const std::vector<Index>& targets,
                          const GridGraph& g, int hops) {
    if (located.empty()) return false;
    for (Index target : targets) {
        auto dist = bfs_hops(g, target);
        bool covered = false;
        for (Index v : located) {
            int d = dist[static_cast<std::size_t>(v)];
            if (d >= 0 && d <= hops) {
                covered = true;
                break;
            }
        }
        if (!covered) return false;
    }
    return true;
}

inline bool covers_exact(const std::vector<Index>& located, const std::vector<Index>& targets) {
    for (Index t : targets)
        if (!std::binary_search(located.begin(), located.end(), t)) return false;
    return !targets.empty();
}

inline bool any_overlap(const std::vector<Index>& located, const std::vector<Index>& targets) {
    for (Index t : targets)
        if (std::binary_search(located.begin(), located.end(), t)) return true;
    return false;
}

}  // namespace detail

/// Scores one scenario batch. Cyber rows cover {none, dos, replay, fdia}
/// against the bus-domain detectors; the line block covers {none,
/// line_failure} against the line-domain detectors. Locating credit requires
/// the located set to cover every true target (superset rule; the k-hop
/// variants relax coverage to hop distance <= k).
inline MetricsTable score(const std::vector<ScenarioOutcome>& outcomes, const GridGraph& bus_graph,
                          const GridGraph& line_graph, double alpha_label) {
    MetricsTable table;
    const std::vector<std::string> bus_detectors = {"gft", "smoothness", "vfed"};
    for (const auto& name : bus_detectors) {
        CyberMetrics m;
        int located_exact = 0, located_1hop = 0, located_any = 0, locatable = 0;
        for (const auto& outcome : outcomes) {
            if (outcome.truth.kind == StressKind::line_failure) continue;
            const DetectionReport* report = nullptr;
            for (const auto& r : outcome.reports)
                if (r.domain == "bus" && r.detector == name) report = &r;
            if (report == nullptr) continue;
            ++m.n_scenarios;
            const bool attacked = outcome.truth.kind != StressKind::none;
            if (attacked) {
                ++m.n_attacked;
                if (report->stressed) {
                    ++m.detected;
                    ++locatable;
                    if (detail::covers_exact(report->located, outcome.truth.targets))
                        ++located_exact;
                    if (detail::covers_within(report->located, outcome.truth.targets, bus_graph, 1))
                        ++located_1hop;
                    if (detail::any_overlap(report->located, outcome.truth.targets)) ++located_any;
                } else {
                    ++m.missed;
                }
            } else {
                ++m.n_normal;
                if (report->stressed)
                    ++m.false_alarms;
                else
                    ++m.passed;
            }
        }
        if (m.n_scenarios == 0) continue;
        m.accuracy = static_cast<double>(m.detected + m.passed) / m.n_scenarios;
        m.fpr = m.n_normal > 0 ? static_cast<double>(m.false_alarms) / m.n_normal : 0.0;
        m.loc_exact = locatable > 0 ? static_cast<double>(located_exact) / locatable : 0.0;
        m.loc_1hop = locatable > 0 ? static_cast<double>(located_1hop) / locatable : 0.0;
        m.loc_any = locatable > 0 ? static_cast<double>(located_any) / locatable : 0.0;
        table.cyber.emplace_back(name, alpha_label, m);
    }

    for (const auto& name : {std::string("smoothness"), std::string("vfed")}) {
        LineMetrics m;
        int located_2hop = 0, located_3hop = 0, locatable = 0;
        for (const auto& outcome : outcomes) {
            if (outcome.truth.kind != StressKind::none &&
                outcome.truth.kind != StressKind::line_failure)
                continue;
            const DetectionReport* report = nullptr;
            for (const auto& r : outcome.reports)
                if (r.domain == "line" && r.detector == name) report = &r;
            if (report == nullptr) continue;
            ++m.n_scenarios;
            if (outcome.truth.kind == StressKind::line_failure) {
                ++m.n_attacked;
                if (report->stressed) {
                    ++m.detected;
                    ++locatable;
                    if (detail::covers_within(report->located, outcome.truth.targets, line_graph,
                                              2))
                        ++located_2hop;
                    if (detail::covers_within(report->located, outcome.truth.targets, line_graph,
                                              3))
                        ++located_3hop;
                } else {
                    ++m.missed;
                }
            } else {
                ++m.n_normal;
                if (report->stressed)
                    ++m.false_alarms;
                else
                    ++m.passed;
            }
        }
        if (m.n_scenarios == 0 || m.n_attacked == 0) continue;
        m.detection_rate = static_cast<double>(m.detected) / m.n_attacked;
        m.fpr = m.n_normal > 0 ? static_cast<double>(m.false_alarms) / m.n_normal : 0.0;
        m.loc_2hop = locatable > 0 ? static_cast<double>(located_2hop) / locatable : 0.0;
        m.loc_3hop = locatable > 0 ? static_cast<double>(located_3hop) / locatable : 0.0;
        table.line.emplace_back(name, m);
    }
    return table;
}

inline nlohmann::ordered_json metrics_to_json(const MetricsTable& table) {
    nlohmann::ordered_json doc;
    doc["cyber"] = nlohmann::ordered_json::array();
    for (const auto& [detector, alpha, m] : table.cyber) {
        nlohmann::ordered_json row;
        row["detector"] = detector;
        row["alpha"] = alpha;
        row["detection_accuracy"] = m.accuracy;
        row["false_positive_rate"] = m.fpr;
        row["locating_rate_exact"] = m.loc_exact;
        row["locating_rate_1hop"] = m.loc_1hop;
        row["locating_rate_any_overlap"] = m.loc_any;
        row["counts"] = {{"scenarios", m.n_scenarios}, {"attacked", m.n_attacked},
                         {"normal", m.n_normal},       {"detected", m.detected},
                         {"missed", m.missed},         {"false_alarms", m.false_alarms},
                         {"passed", m.passed}};
        doc["cyber"].push_back(row);
    }
    doc["line_failure"] = nlohmann::ordered_json::array();
    for (const auto& [detector, m] : table.line) {
        nlohmann::ordered_json row;
        row["detector"] = detector;
        row["detection_rate"] = m.detection_rate;
        row["false_positive_rate"] = m.fpr;
        row["locating_rate_2hop"] = m.loc_2hop;
        row["locating_rate_3hop"] = m.loc_3hop;
        row["counts"] = {{"scenarios", m.n_scenarios}, {"attacked", m.n_attacked},
                         {"normal", m.n_normal},       {"detected", m.detected},
                         {"missed", m.missed},         {"false_alarms", m.false_alarms},
                         {"passed", m.passed}};
        doc["line_failure"].push_back(row);
    }
    return doc;
}

inline void write_curves_csv(std::ostream& out, const MetricsTable& table) {
    out << "alpha,detector,accuracy,fpr,loc_exact,loc_1hop\n";
    for (const auto& [detector, alpha, m] : table.cyber)
        out << format_double(alpha) << ',' << detector << ',' << format_double(m.accuracy) << ','
            << format_double(m.fpr) << ',' << format_double(m.loc_exact) << ','
            << format_double(m.loc_1hop) << '\n';
}

namespace detail {

inline void parallel_for(Index count, unsigned threads, const std::function<void(Index)>& body) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, 8);
    if (threads <= 1 || count < 4) {
        for (Index i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<Index> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (;;) {
                Index i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace detail

struct ExperimentResult {
    MetricsTable metrics;
    std::vector<ScenarioOutcome> outcomes;  // all batches, in evaluation order
};

/// End-to-end protocol: fit baselines on a clean training run, stream the
/// scenario batch for every alpha in the grid (scenario draws are shared
/// across alphas), score each batch, and optionally write metrics.json,
/// curves.csv and the per-scenario truth/report documents under `out_dir`.
/// Scenario kinds untouched by alpha are evaluated once and reused.
inline ExperimentResult run_experiment(const ExperimentPlan& plan, const StudyContext& study,
                                       const std::optional<std::filesystem::path>& out_dir) {
    plan.validate();
    const bool bus_detectors = plan.attack_mix.has_cyber() || !plan.attack_mix.has_line();
    const bool line_detectors = plan.attack_mix.has_line();

    ExperimentResult result;
    std::vector<ScenarioOutcome> alpha_invariant(static_cast<std::size_t>(plan.n_scenarios));
    std::vector<char> cached(static_cast<std::size_t>(plan.n_scenarios), 0);

    for (std::size_t batch = 0; batch < plan.alpha_grid.size(); ++batch) {
        const double alpha = plan.alpha_grid[batch];
        std::vector<ScenarioOutcome> outcomes(static_cast<std::size_t>(plan.n_scenarios));
        detail::parallel_for(plan.n_scenarios, study.config.threads, [&](Index i) {
            auto truth = sample_scenario(plan, study, alpha, static_cast<int>(i));
            const bool alpha_dependent = truth.kind == StressKind::fdia;
            if (!alpha_dependent && cached[static_cast<std::size_t>(i)]) {
                auto copy = alpha_invariant[static_cast<std::size_t>(i)];
                copy.key = batch * static_cast<std::size_t>(plan.n_scenarios) +
                           static_cast<std::size_t>(i);
                for (auto& r : copy.reports) r.scenario_key = copy.key;
                outcomes[static_cast<std::size_t>(i)] = std::move(copy);
                return;
            }
            auto data = materialize_scenario(plan, study, truth, static_cast<int>(i));
            std::uint64_t key =
                batch * static_cast<std::size_t>(plan.n_scenarios) + static_cast<std::size_t>(i);
            auto outcome = evaluate_scenario(study, data, key, bus_detectors, line_detectors);
            if (!alpha_dependent) {
                alpha_invariant[static_cast<std::size_t>(i)] = outcome;
                cached[static_cast<std::size_t>(i)] = 1;
            }
            outcomes[static_cast<std::size_t>(i)] = std::move(outcome);
        });

        auto batch_metrics = score(outcomes, study.bus_graph, study.line_graph, alpha);
        for (auto& row : batch_metrics.cyber) result.metrics.cyber.push_back(row);
        if (batch == 0) result.metrics.line = batch_metrics.line;
        for (auto& o : outcomes) result.outcomes.push_back(std::move(o));
    }

    if (out_dir) {
        namespace fs = std::filesystem;
        fs::create_directories(*out_dir / "scenarios");
        fs::create_directories(*out_dir / "reports");
        for (const auto& outcome : result.outcomes) {
            char name[16];
            std::snprintf(name, sizeof(name), "%04llu.json",
                          static_cast<unsigned long long>(outcome.key));
            std::ofstream truth_file(*out_dir / "scenarios" / name);
            truth_file << scenario_to_json(outcome.truth).dump(2) << '\n';
            nlohmann::ordered_json reports = nlohmann::ordered_json::array();
            for (const auto& r : outcome.reports) reports.push_back(report_to_json(r));
            std::ofstream report_file(*out_dir / "reports" / name);
            report_file << reports.dump(2) << '\n';
        }
        std::ofstream metrics_file(*out_dir / "metrics.json");
        metrics_file << metrics_to_json(result.metrics).dump(2) << '\n';
        std::ofstream curves_file(*out_dir / "curves.csv");
        write_curves_csv(curves_file, result.metrics);
    }
    return result;
}

}  // namespace gridgsp
