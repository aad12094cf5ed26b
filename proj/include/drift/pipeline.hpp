#ifndef DRIFT_PIPELINE_HPP
#define DRIFT_PIPELINE_HPP

// End-to-end study: per-domain similarity, geometry, loss and probe stages, then the
// cross-domain feature/target heatmap.

#include "drift/corpus_io.hpp"
#include "drift/correlation_study.hpp"
#include "drift/detail/numeric.hpp"
#include "drift/detail/parallel.hpp"
#include "drift/error.hpp"
#include "drift/geometry.hpp"
#include "drift/improvement_metrics.hpp"
#include "drift/loss_dynamics.hpp"
#include "drift/repr_similarity.hpp"
#include "drift/scarce_classifiers.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace drift {

inline constexpr const char* kToolVersion = "0.1.0";

struct DomainEntry {
    std::filesystem::path manifest;
    std::optional<std::filesystem::path> probe_test;
};

struct PipelineConfig {
    std::vector<DomainEntry> domains;
    ProbeConfig probe;
    std::vector<SimilarityMetric> metrics{SimilarityMetric::cka, SimilarityMetric::procrustes, SimilarityMetric::rsa};
    bool similarity = true;
    bool geometry = true;
    bool loss = true;
    bool classify = true;
    bool include_layer0 = false;
    int loss_window = 5;
    std::uint64_t seed = 0;
    GeometryOptions geometry_options;
};

inline nlohmann::json to_json(const PipelineConfig& c) {
    nlohmann::json j;
    j["domains"] = nlohmann::json::array();
    for (const auto& d : c.domains) {
        nlohmann::json e{{"manifest", d.manifest.generic_string()}};
        if (d.probe_test) e["probe_test"] = d.probe_test->generic_string();
        j["domains"].push_back(e);
    }
    j["probe"] = to_json(c.probe);
    j["metrics"] = nlohmann::json::array();
    for (auto m : c.metrics) j["metrics"].push_back(metric_name(m));
    j["features"] = {{"similarity", c.similarity}, {"geometry", c.geometry}, {"loss", c.loss}, {"classify", c.classify}};
    j["include_layer0"] = c.include_layer0;
    j["loss_window"] = c.loss_window;
    j["seed"] = c.seed;
    j["geometry"] = {{"k_min", c.geometry_options.k_min},
                     {"k_max", c.geometry_options.k_max},
                     {"silhouette_cap", c.geometry_options.silhouette_cap},
                     {"kmeans_restarts", c.geometry_options.kmeans.restarts}};
    return j;
}

/// Parses a study config. Domain paths resolve against `base_dir` (the config's directory).
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    PipelineConfig c;
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() || base_dir.empty() ? fp : base_dir / fp;
    };
    try {
        for (const auto& d : j.at("domains")) {
            DomainEntry e;
            if (d.is_string()) {
                e.manifest = resolve(d.get<std::string>());
            } else {
                e.manifest = resolve(d.at("manifest").get<std::string>());
                if (d.contains("probe_test")) e.probe_test = resolve(d["probe_test"].get<std::string>());
            }
            c.domains.push_back(std::move(e));
        }
        if (j.contains("probe")) c.probe = probe_config_from_json(j["probe"]);
        if (j.contains("metrics")) {
            c.metrics.clear();
            for (const auto& m : j["metrics"]) c.metrics.push_back(parse_similarity_metric(m.get<std::string>()));
        }
        if (j.contains("features")) {
            const auto& f = j["features"];
            c.similarity = f.value("similarity", c.similarity);
            c.geometry = f.value("geometry", c.geometry);
            c.loss = f.value("loss", c.loss);
            c.classify = f.value("classify", c.classify);
        }
        c.include_layer0 = j.value("include_layer0", c.include_layer0);
        c.loss_window = j.value("loss_window", c.loss_window);
        c.seed = j.value("seed", c.seed);
        if (j.contains("geometry")) {
            const auto& g = j["geometry"];
            c.geometry_options.k_min = g.value("k_min", c.geometry_options.k_min);
            c.geometry_options.k_max = g.value("k_max", c.geometry_options.k_max);
            c.geometry_options.silhouette_cap = g.value("silhouette_cap", c.geometry_options.silhouette_cap);
            c.geometry_options.kmeans.restarts = g.value("kmeans_restarts", c.geometry_options.kmeans.restarts);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("pipeline config: ") + e.what());
    }
    return c;
}

inline PipelineConfig read_pipeline_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_text_file(path.string()));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return pipeline_config_from_json(j, path.parent_path());
}

/// Provenance lines stamped into every output of a study.
inline std::vector<std::string> provenance(const PipelineConfig& c) {
    std::string seeds;
    for (std::size_t i = 0; i < c.probe.seeds.size(); ++i) seeds += (i ? " " : "") + std::to_string(c.probe.seeds[i]);
    return {std::string("drift ") + kToolVersion, "config_hash " + detail::hex64(detail::fnv1a64(to_json(c).dump())),
            "seed " + std::to_string(c.seed), "probe_seeds " + seeds};
}

/// Registered feature names for one similarity metric.
inline void add_similarity_features(std::map<std::string, std::optional<double>>& out, SimilarityMetric metric,
                                    const SimilarityFeatures& f) {
    const auto m = metric_name(metric);
    out[m + "_max"] = f.max_change;
    out[m + "_argmax_layer"] = static_cast<double>(f.argmax_layer);
    out[m + "_layers_1_3"] = f.mean_change_layers_1_3;
    out[m + "_final"] = f.final_layer_change;
    out[m + "_mean"] = f.mean_change_all;
}

inline void add_geometry_features(std::map<std::string, std::optional<double>>& out, const GeometryFeatures& g) {
    out["effective_rank_delta"] = g.effective_rank_delta;
    out["partition_isotropy_delta"] = g.partition_isotropy_delta;
    out["silhouette_delta"] = g.silhouette_delta;
    out["ari_delta"] = g.ari_delta;
    out["nmi_delta"] = g.nmi_delta;
}

inline void add_loss_features(std::map<std::string, std::optional<double>>& out, const LossFeatures& f) {
    out["loss_relative_improvement"] = f.relative_improvement;
    out["loss_first_epoch_relative_improvement"] = f.first_epoch_relative_improvement;
    out["loss_relative_improvement_eval"] = f.relative_improvement_eval;
    out["loss_first_epoch_relative_improvement_eval"] = f.first_epoch_relative_improvement_eval;
    if (f.fit) {
        out["loss_fit_c"] = f.fit->c_asymptote;
        out["loss_fit_b"] = f.fit->b_coefficient;
        out["loss_fit_beta"] = f.fit->no_decay ? std::nullopt : std::optional<double>(f.fit->beta);
    } else {
        out["loss_fit_c"] = out["loss_fit_b"] = out["loss_fit_beta"] = std::nullopt;
    }
}

/// Wide target row: <classifier>_<metric>_<size>_{err,logit_delta,raw_delta}.
inline DomainFeatureRow target_row(const std::string& domain, const ImprovementTable& table) {
    DomainFeatureRow row;
    row.domain = domain;
    for (const auto& r : table.rows) {
        if (r.domain != domain) continue;
        const auto stem = r.target_stem();
        row.values[stem + "_raw_delta"] = r.raw_delta;
        row.values[stem + "_err"] = r.err;
        row.values[stem + "_logit_delta"] = r.logit_delta;
    }
    return row;
}

inline nlohmann::json to_json(const LayerSimilarityProfile& p) {
    return {{"metric", metric_name(p.metric)}, {"scores", p.scores}, {"change", p.change}};
}

inline nlohmann::json to_json(const SimilarityFeatures& f) {
    return {{"max_change", f.max_change},
            {"argmax_layer", f.argmax_layer},
            {"mean_change_layers_1_3", f.mean_change_layers_1_3},
            {"final_layer_change", f.final_layer_change},
            {"mean_change_all", f.mean_change_all}};
}

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline nlohmann::json to_json(const GeometryReport& r) {
    return {{"effective_rank", r.isotropy.effective_rank},
            {"partition_isotropy", r.isotropy.partition_isotropy},
            {"optimal_k", r.clustering.optimal_k},
            {"silhouette_at_optimal", r.clustering.silhouette_at_optimal},
            {"silhouette_by_k", r.clustering.silhouette_by_k},
            {"silhouette_n_used", r.clustering.silhouette_n_used},
            {"silhouette_subsampled", r.clustering.silhouette_subsampled},
            {"ari_vs_labels", opt_json(r.clustering.ari_vs_labels)},
            {"nmi_vs_labels", opt_json(r.clustering.nmi_vs_labels)},
            {"k_used_for_label_metrics", r.clustering.k_used_for_label_metrics}};
}

inline nlohmann::json to_json(const GeometryComparison& g) {
    return {{"layer", kFinalLayer},
            {"base", to_json(g.base)},
            {"ft", to_json(g.ft)},
            {"deltas",
             {{"effective_rank_delta", g.deltas.effective_rank_delta},
              {"partition_isotropy_delta", g.deltas.partition_isotropy_delta},
              {"silhouette_delta", g.deltas.silhouette_delta},
              {"ari_delta", opt_json(g.deltas.ari_delta)},
              {"nmi_delta", opt_json(g.deltas.nmi_delta)}}}};
}

enum class DomainStatus { ok, unlabeled, failed };

struct DomainResult {
    std::string domain;       // manifest domain name, or the manifest path when it failed to load
    DomainStatus status = DomainStatus::ok;
    std::string reason;       // failure or skip reason
    DomainFeatureRow features;
    std::vector<ClassificationOutcome> outcomes;
    nlohmann::json report = nlohmann::json::object();
};

/// All stages for one domain. Errors are caught and reported in the result.
inline DomainResult analyze_domain(const DomainEntry& entry, const PipelineConfig& config, int jobs = 1) {
    DomainResult res;
    res.domain = entry.manifest.generic_string();
    try {
        auto run = load_run(entry.manifest);
        res.domain = run.domain();
        res.features.domain = run.domain();
        const std::uint64_t seed = detail::derive_seed(config.seed, static_cast<std::uint64_t>(run.manifest.seed));
        res.report["domain"] = run.domain();
        res.report["n_samples"] = run.sample_ids().size();
        res.report["dim"] = run.base.final_layer().cols();
        res.report["cka_kernel"] = "linear";
        res.report["vectors"] = "raw, column-centered";
        if (!run.manifest.extraction_notes.empty()) res.report["extraction_notes"] = run.manifest.extraction_notes;
        if (config.similarity) {
            for (auto metric : config.metrics) {
                auto profile = layer_profile(run.base, run.ft, metric, jobs);
                auto feats = similarity_features(profile, config.include_layer0);
                add_similarity_features(res.features.values, metric, feats);
                res.report["similarity"][metric_name(metric)] = {{"profile", to_json(profile)},
                                                                 {"features", to_json(feats)}};
            }
        }
        if (config.geometry) {
            auto geo = geometry_deltas(run.base.final_layer(), run.ft.final_layer(), run.labels, seed,
                                       config.geometry_options);
            add_geometry_features(res.features.values, geo.deltas);
            res.report["geometry"] = to_json(geo);
        }
        if (config.loss) {
            auto lf = loss_features(run.loss, config.loss_window);
            add_loss_features(res.features.values, lf);
            res.report["loss"] = to_json(lf);
        }
        if (config.classify) {
            if (!run.labels) {
                res.status = DomainStatus::unlabeled;
                res.reason = "unlabeled domain";
            } else if (!entry.probe_test) {
                res.status = DomainStatus::unlabeled;
                res.reason = "no probe-test manifest";
            } else {
                auto test = load_run(*entry.probe_test, true);
                auto proto = run_scarce_protocol(run, test, config.probe, jobs);
                if (proto.unlabeled) {
                    res.status = DomainStatus::unlabeled;
                    res.reason = "unlabeled domain";
                }
                res.outcomes = std::move(proto.outcomes);
            }
        }
    } catch (const std::exception& e) {
        res.status = DomainStatus::failed;
        res.reason = e.what();
        res.features.values.clear();
        res.outcomes.clear();
    }
    res.report["status"] = res.status == DomainStatus::ok ? "ok" : res.status == DomainStatus::unlabeled ? "unlabeled" : "failed";
    if (!res.reason.empty()) res.report["reason"] = res.reason;
    return res;
}

struct PipelineResult {
    int exit_code = 0; // 0 success, 2 partial, 1 failure
    std::vector<DomainResult> domains; // sorted by domain name
    std::vector<ClassificationOutcome> outcomes;
    ImprovementTable improvements;
    std::optional<NamedMatrix> features;
    std::optional<NamedMatrix> targets;
    std::optional<HeatmapTable> heatmap;
    std::vector<std::string> log;
};

/// Runs every domain (up to `jobs` concurrently) and aggregates in domain-name order.
/// With an output directory, writes features.csv, targets.csv, outcomes.csv,
/// improvements.csv, domains/<name>.json, heatmap/, pipeline.log and summary.json.
inline PipelineResult run_pipeline(const PipelineConfig& config, const std::optional<std::filesystem::path>& out_dir,
                                   int jobs = 1) {
    PipelineResult result;
    const auto prov = provenance(config);
    result.domains.resize(config.domains.size());
    detail::parallel_for(config.domains.size(), jobs,
                         [&](std::size_t i) { result.domains[i] = analyze_domain(config.domains[i], config); });
    std::stable_sort(result.domains.begin(), result.domains.end(),
                     [](const auto& a, const auto& b) { return a.domain < b.domain; });

    bool partial = false;
    std::size_t usable = 0;
    std::vector<DomainFeatureRow> feature_rows;
    std::map<std::string, int> seen;
    for (auto& d : result.domains) {
        if (d.status == DomainStatus::ok || d.status == DomainStatus::unlabeled) {
            if (seen[d.domain]++) {
                d.status = DomainStatus::failed;
                d.reason = "duplicate domain name";
                d.report["status"] = "failed";
                d.report["reason"] = d.reason;
            }
        }
        switch (d.status) {
        case DomainStatus::ok: result.log.push_back(d.domain + ": ok"); break;
        case DomainStatus::unlabeled:
            result.log.push_back(d.domain + ": features only (" + d.reason + ")");
            partial = true;
            break;
        case DomainStatus::failed:
            result.log.push_back(d.domain + ": failed: " + d.reason);
            partial = true;
            continue;
        }
        ++usable;
        feature_rows.push_back(d.features);
        result.outcomes.insert(result.outcomes.end(), d.outcomes.begin(), d.outcomes.end());
    }
    result.improvements = improvement_table(result.outcomes);

    if (usable == 0) {
        result.log.push_back("no domain could be analyzed");
        result.exit_code = 1;
    } else {
        result.features = assemble_feature_matrix(feature_rows, 1);
        std::vector<DomainFeatureRow> target_rows;
        for (const auto& name : result.features->domains) target_rows.push_back(target_row(name, result.improvements));
        result.targets = assemble_feature_matrix(target_rows, 1);
        if (usable < kMinDomainsPerCell) {
            result.log.push_back("correlation stage skipped: need >= 3 domains, have " + std::to_string(usable));
            partial = true;
        } else if (result.features->names.empty() || result.targets->names.empty()) {
            result.log.push_back("correlation stage skipped: no features or no targets");
            partial = true;
        } else {
            result.heatmap = build_heatmap(*result.features, *result.targets);
        }
        result.exit_code = partial ? 2 : 0;
    }

    if (out_dir) {
        namespace fs = std::filesystem;
        fs::create_directories(*out_dir / "domains");
        if (result.features)
            detail::write_text_file((*out_dir / "features.csv").string(), named_matrix_csv(*result.features, prov));
        if (result.targets)
            detail::write_text_file((*out_dir / "targets.csv").string(), named_matrix_csv(*result.targets, prov));
        detail::write_text_file((*out_dir / "outcomes.csv").string(), outcomes_csv(result.outcomes, prov));
        detail::write_text_file((*out_dir / "improvements.csv").string(), improvement_csv(result.improvements, prov));
        for (const auto& d : result.domains) {
            if (d.status == DomainStatus::failed && d.report.find("domain") == d.report.end()) continue;
            auto j = d.report;
            j["provenance"] = prov;
            detail::write_text_file((*out_dir / "domains" / (d.domain + ".json")).string(), j.dump(2) + "\n");
        }
        if (result.heatmap) emit_heatmap(*result.heatmap, *out_dir / "heatmap", prov);
        std::string log;
        for (const auto& line : result.log) log += line + "\n";
        detail::write_text_file((*out_dir / "pipeline.log").string(), log);
        nlohmann::json summary;
        summary["provenance"] = prov;
        summary["exit_code"] = result.exit_code;
        summary["config"] = to_json(config);
        for (const auto& d : result.domains)
            summary["domains"].push_back({{"domain", d.domain},
                                          {"status", d.report.value("status", "failed")},
                                          {"reason", d.reason}});
        detail::write_text_file((*out_dir / "summary.json").string(), summary.dump(2) + "\n");
    }
    return result;
}

} // namespace drift

#endif
