#pragma once

#include "gridgsp/core.hpp"
#include "gridgsp/gridsim.hpp"
#include "gridgsp/gsp.hpp"
#include "gridgsp/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace gridgsp {

/// Histogram-based pdf estimate on [lo, hi] with ceil(sqrt(n)) equal bins.
/// Zero outside the observed support, so unseen values always alarm.
struct EmpiricalDensity {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<double> bin_density;
    std::size_t sample_count = 0;

    static EmpiricalDensity fit(const std::vector<double>& samples) {
        if (samples.empty()) throw ConfigError("cannot fit a density to zero samples");
        EmpiricalDensity d;
        d.sample_count = samples.size();
        auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
        d.lo = *lo_it;
        d.hi = *hi_it;
        std::size_t bins = static_cast<std::size_t>(
            std::ceil(std::sqrt(static_cast<double>(samples.size()))));
        if (d.hi - d.lo <= 0.0) {
            // degenerate spread: a spike of nominal width around the value
            double width = std::max(1e-12, 1e-9 * std::abs(d.lo));
            d.lo -= width / 2.0;
            d.hi += width / 2.0;
            bins = 1;
        }
        d.bin_density.assign(bins, 0.0);
        const double width = (d.hi - d.lo) / static_cast<double>(bins);
        for (double v : samples) {
            auto b = static_cast<std::size_t>((v - d.lo) / width);
            if (b >= bins) b = bins - 1;  // hi boundary lands in the last bin
            d.bin_density[b] += 1.0;
        }
        for (double& dv : d.bin_density)
            dv /= static_cast<double>(samples.size()) * width;
        return d;
    }

    double evaluate(double v) const {
        if (v < lo || v > hi) return 0.0;
        const double width = (hi - lo) / static_cast<double>(bin_density.size());
        auto b = static_cast<std::size_t>((v - lo) / width);
        if (b >= bin_density.size()) b = bin_density.size() - 1;
        return bin_density[b];
    }

    double integral() const {
        const double width = (hi - lo) / static_cast<double>(bin_density.size());
        double total = 0.0;
        for (double d : bin_density) total += d * width;
        return total;
    }
};

struct DetectorConfig {
    double lambda_cut = 0.5;         // high-pass cutoff on normalized frequencies
    double theta_gamma = 0.005;      // likelihood threshold, gamma detector
    double theta_smoothness = 0.005; // likelihood threshold, per-vertex smoothness
    double theta_energy = 0.005;     // likelihood threshold, energy-marginal detector
    Index mean_window = 12;          // delta: rolling-mean window, steps
    double sigma_floor = 1e-6;       // guards constant-signal vertices
    double y_floor = 1e-12;          // guards the 1/sqrt(y) singularity
    std::size_t min_density_samples = 100;

    void validate() const {
        if (lambda_cut < 0.0 || lambda_cut >= 1.0)
            throw ConfigError("lambda_cut must lie in [0, 1)");
        for (double th : {theta_gamma, theta_smoothness, theta_energy})
            if (th <= 0.0 || th >= 1.0) throw ConfigError("thresholds must lie in (0, 1)");
        if (mean_window < 1) throw ConfigError("mean window must be at least 1 step");
    }
};

/// Amount of high graph-frequency content: gamma = sum_k |X(lambda_k)| over
/// normalized frequencies above the cutoff (ideal high-pass response).
inline double gamma_statistic(const SpectralBasis& basis, const Vector& x, double lambda_cut) {
    Vector spectrum = gft(basis, x);
    double gamma = 0.0;
    for (Index k = 0; k < basis.n(); ++k)
        if (basis.normalized_frequencies(k) > lambda_cut) gamma += std::abs(spectrum(k));
    return gamma;
}

/// The printed piece-wise density for the squared signal:
///   p(y) = 1/(2 sigma sqrt(2 pi y)) [ exp(-(y-mu)/(2 sigma^2)) u(y-mu)
///                                   + exp(-(mu-y)/(2 sigma^2)) u(mu-y) ],
/// with u(0) = 1/2 so the two branches meet continuously at y = mu. `y` is
/// clamped to `y_floor` before evaluation.
inline double evaluate_eq13_pdf(double y, double mu, double sigma, double y_floor = 1e-12) {
    if (sigma <= 0.0) throw ConfigError("sigma must be positive");
    y = std::max(y, y_floor);
    auto step = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? 0.0 : 0.5); };
    const double scale = 1.0 / (2.0 * sigma * std::sqrt(2.0 * std::numbers::pi * y));
    const double two_sigma_sq = 2.0 * sigma * sigma;
    return scale * (std::exp(-(y - mu) / two_sigma_sq) * step(y - mu) +
                    std::exp(-(mu - y) / two_sigma_sq) * step(mu - y));
}

/// Baseline statistics estimated from clean history: the gamma density, the
/// per-vertex local-smoothness densities (vertices whose unmasked sample
/// count is too small carry no density), and the per-vertex deviation scale
/// sigma_n of the rolling-mean residual.
struct BaselineModel {
    EmpiricalDensity gamma_density;
    std::vector<std::optional<EmpiricalDensity>> smoothness_densities;
    Vector sigma;
    DetectorConfig config;
};

/// Rolling mean over [t - window, t) for every t in [window, T).
inline Matrix rolling_means(const Matrix& samples, Index window) {
    const Index t_total = samples.rows();
    if (window < 1 || window > t_total) throw ConfigError("invalid rolling-mean window");
    Matrix means(t_total - window, samples.cols());
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(samples.cols());
    for (Index t = 0; t < window; ++t) acc += samples.row(t);
    for (Index t = window; t < t_total; ++t) {
        means.row(t - window) = acc / static_cast<double>(window);
        if (t + 1 < t_total) acc += samples.row(t) - samples.row(t - window);
    }
    return means;
}

inline BaselineModel fit_baseline(const TimeVaryingSignal& history, const SpectralBasis& basis,
                                  const GridGraph& graph, const DetectorConfig& config) {
    config.validate();
    const Index t_total = history.steps();
    const Index n = history.width();
    if (n != graph.n() || n != basis.n())
        throw DimensionError("history width does not match graph");
    if (t_total < 100) throw ConfigError("baseline fitting requires at least 100 clean steps");
    if (t_total <= config.mean_window)
        throw ConfigError("history must be longer than the rolling-mean window");

    BaselineModel model;
    model.config = config;

    std::vector<double> gamma_samples(static_cast<std::size_t>(t_total));
    std::vector<std::vector<double>> smooth_samples(static_cast<std::size_t>(n));
    for (Index t = 0; t < t_total; ++t) {
        Vector x = history.samples.row(t).transpose();
        gamma_samples[static_cast<std::size_t>(t)] = gamma_statistic(basis, x, config.lambda_cut);
        auto ls = local_smoothness(graph, x);
        for (Index v = 0; v < n; ++v)
            if (ls.defined_mask[static_cast<std::size_t>(v)])
                smooth_samples[static_cast<std::size_t>(v)].push_back(ls.s(v));
    }
    model.gamma_density = EmpiricalDensity::fit(gamma_samples);
    model.smoothness_densities.resize(static_cast<std::size_t>(n));
    for (Index v = 0; v < n; ++v) {
        auto& samples = smooth_samples[static_cast<std::size_t>(v)];
        if (samples.size() >= config.min_density_samples)
            model.smoothness_densities[static_cast<std::size_t>(v)] = EmpiricalDensity::fit(samples);
    }

    Matrix means = rolling_means(history.samples, config.mean_window);
    Matrix residuals =
        history.samples.bottomRows(t_total - config.mean_window) - means;
    model.sigma = Vector(n);
    const double count = static_cast<double>(residuals.rows());
    for (Index v = 0; v < n; ++v) {
        double mean = residuals.col(v).mean();
        double var = (residuals.col(v).array() - mean).square().sum() / (count - 1.0);
        model.sigma(v) = std::max(std::sqrt(var), config.sigma_floor);
    }
    return model;
}

/// Per-step detector outcome. The gamma detector carries no location.
struct StepDetection {
    bool alarm = false;
    std::vector<Index> flagged;
};

/// Alarm iff the estimated likelihood of gamma(t) falls under theta_gamma.
inline bool detect_gft(const BaselineModel& model, const SpectralBasis& basis, const Vector& x) {
    double g = gamma_statistic(basis, x, model.config.lambda_cut);
    return model.gamma_density.evaluate(g) < model.config.theta_gamma;
}

/// Flags every unmasked vertex whose local smoothness is unlikely under its
/// clean density. Vertices that never produced a clean density flag whenever
/// they turn up unmasked.
inline StepDetection detect_local_smoothness(const BaselineModel& model, const GridGraph& graph,
                                             const Vector& x) {
    auto ls = local_smoothness(graph, x);
    StepDetection out;
    for (Index v = 0; v < graph.n(); ++v) {
        if (!ls.defined_mask[static_cast<std::size_t>(v)]) continue;
        const auto& density = model.smoothness_densities[static_cast<std::size_t>(v)];
        bool flagged = !density || density->evaluate(ls.s(v)) < model.config.theta_smoothness;
        if (flagged) out.flagged.push_back(v);
    }
    out.alarm = !out.flagged.empty();
    return out;
}

/// Energy-marginal detector. The marginalized energy distribution of a step
/// equals the squared signal, so the statistic is the squared deviation of
/// x(n,t) from its rolling mean, standardized by sigma_n, scored with the
/// piece-wise density (mu = 0, sigma = 1 in standardized coordinates).
inline StepDetection detect_vfed(const BaselineModel& model, const TimeVaryingSignal& signal,
                                 Index t) {
    const Index window = model.config.mean_window;
    if (t < window || t >= signal.steps())
        throw ConfigError("energy detector requires " + std::to_string(window) +
                          " past steps before t");
    if (signal.width() != model.sigma.size())
        throw DimensionError("signal width does not match model");
    StepDetection out;
    for (Index v = 0; v < signal.width(); ++v) {
        double mu = signal.samples.col(v).segment(t - window, window).mean();
        double z = (signal.samples(t, v) - mu) / model.sigma(v);
        double y = std::max(z * z, model.config.y_floor);
        double likelihood = evaluate_eq13_pdf(y, 0.0, 1.0, model.config.y_floor);
        if (likelihood < model.config.theta_energy) out.flagged.push_back(v);
    }
    out.alarm = !out.flagged.empty();
    return out;
}

/// Scenario-level verdict for one detector stream.
struct DetectionReport {
    std::string detector;        // "gft" | "smoothness" | "vfed"
    std::string domain;          // "bus" | "line"
    bool stressed = false;
    std::vector<Index> alarm_steps;
    std::vector<Index> located;
    std::uint64_t scenario_key = 0;
};

inline nlohmann::ordered_json report_to_json(const DetectionReport& r) {
    nlohmann::ordered_json doc;
    doc["detector"] = r.detector;
    doc["domain"] = r.domain;
    doc["verdict"] = r.stressed ? "stressed" : "normal";
    doc["alarm_steps"] = r.alarm_steps;
    doc["located"] = r.located;
    doc["scenario"] = r.scenario_key;
    return doc;
}

inline DetectionReport report_from_json(const nlohmann::json& doc) {
    DetectionReport r;
    r.detector = doc.at("detector").get<std::string>();
    r.domain = doc.at("domain").get<std::string>();
    r.stressed = doc.at("verdict").get<std::string>() == "stressed";
    r.alarm_steps = doc.at("alarm_steps").get<std::vector<Index>>();
    r.located = doc.at("located").get<std::vector<Index>>();
    r.scenario_key = doc.at("scenario").get<std::uint64_t>();
    return r;
}

// Model persistence.

inline nlohmann::ordered_json density_to_json(const EmpiricalDensity& d) {
    return {{"lo", d.lo},
            {"hi", d.hi},
            {"sample_count", d.sample_count},
            {"bin_density", d.bin_density}};
}

inline EmpiricalDensity density_from_json(const nlohmann::json& doc) {
    EmpiricalDensity d;
    d.lo = doc.at("lo").get<double>();
    d.hi = doc.at("hi").get<double>();
    d.sample_count = doc.at("sample_count").get<std::size_t>();
    d.bin_density = doc.at("bin_density").get<std::vector<double>>();
    if (d.bin_density.empty() || d.hi <= d.lo)
        throw ValidationError("malformed density document");
    return d;
}

inline nlohmann::ordered_json model_to_json(const BaselineModel& model) {
    nlohmann::ordered_json doc;
    doc["lambda_cut"] = model.config.lambda_cut;
    doc["thresholds"] = {{"gamma", model.config.theta_gamma},
                         {"smoothness", model.config.theta_smoothness},
                         {"energy", model.config.theta_energy}};
    doc["mean_window"] = model.config.mean_window;
    doc["sigma_floor"] = model.config.sigma_floor;
    doc["y_floor"] = model.config.y_floor;
    doc["min_density_samples"] = model.config.min_density_samples;
    doc["gamma_density"] = density_to_json(model.gamma_density);
    doc["smoothness_densities"] = nlohmann::ordered_json::array();
    for (const auto& d : model.smoothness_densities)
        doc["smoothness_densities"].push_back(d ? density_to_json(*d)
                                                : nlohmann::ordered_json(nullptr));
    doc["sigma"] = std::vector<double>(model.sigma.data(), model.sigma.data() + model.sigma.size());
    return doc;
}

inline BaselineModel model_from_json(const nlohmann::json& doc) {
    BaselineModel model;
    model.config.lambda_cut = doc.at("lambda_cut").get<double>();
    model.config.theta_gamma = doc.at("thresholds").at("gamma").get<double>();
    model.config.theta_smoothness = doc.at("thresholds").at("smoothness").get<double>();
    model.config.theta_energy = doc.at("thresholds").at("energy").get<double>();
    model.config.mean_window = doc.at("mean_window").get<Index>();
    model.config.sigma_floor = doc.at("sigma_floor").get<double>();
    model.config.y_floor = doc.at("y_floor").get<double>();
    model.config.min_density_samples = doc.at("min_density_samples").get<std::size_t>();
    model.config.validate();
    model.gamma_density = density_from_json(doc.at("gamma_density"));
    for (const auto& jd : doc.at("smoothness_densities"))
        model.smoothness_densities.push_back(
            jd.is_null() ? std::nullopt : std::optional<EmpiricalDensity>(density_from_json(jd)));
    auto sigma = doc.at("sigma").get<std::vector<double>>();
    model.sigma = Eigen::Map<const Vector>(sigma.data(), static_cast<Index>(sigma.size()));
    return model;
}

}  // namespace gridgsp
