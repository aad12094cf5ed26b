// drift: command-line front end for the drift analysis toolkit.

#include "drift/drift.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Globals {
    int jobs = 1;
    std::optional<std::uint64_t> seed;
};

void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    drift::detail::write_text_file(path.string(), j.dump(2) + "\n");
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    drift::detail::write_text_file(path.string(), text);
}

nlohmann::json read_json(const fs::path& path) {
    try {
        return nlohmann::json::parse(drift::detail::read_text_file(path.string()));
    } catch (const nlohmann::json::exception& e) {
        throw drift::FormatError(path.string() + ": " + e.what());
    }
}

int cmd_synth(const Globals& g, const fs::path& out, const std::string& spec_path, int study, int null_n,
              int n_samples, int n_test) {
    const std::uint64_t seed = g.seed.value_or(0);
    if (study > 0 || null_n > 0) {
        auto specs = study > 0 ? drift::monotone_study(study, seed, n_samples, n_test)
                               : drift::null_study(null_n, seed, n_samples, n_test);
        drift::PipelineConfig cfg;
        cfg.seed = seed;
        for (const auto& s : specs) {
            auto files = drift::gen_synthetic_domain(s, out / s.domain_name);
            cfg.domains.push_back({fs::path(s.domain_name) / "manifest.json",
                                   fs::path(s.domain_name) / "probe_test" / "manifest.json"});
        }
        write_json(out / "pipeline.json", drift::to_json(cfg));
        std::cout << "wrote " << specs.size() << " domains and " << (out / "pipeline.json").string() << "\n";
        return 0;
    }
    drift::SynthSpec spec = spec_path.empty() ? drift::SynthSpec{} : drift::synth_spec_from_json(read_json(spec_path));
    if (g.seed) spec.seed = *g.seed;
    auto files = drift::gen_synthetic_domain(spec, out);
    std::cout << "wrote " << files.train_manifest.string() << " and " << files.test_manifest.string() << "\n";
    return 0;
}

int cmd_similarity(const Globals& g, const fs::path& run_path, const std::string& metric_name, const fs::path& out,
                   std::string features_path, bool include_layer0) {
    auto run = drift::load_run(run_path);
    auto metric = drift::parse_similarity_metric(metric_name);
    auto profile = drift::layer_profile(run.base, run.ft, metric, g.jobs);
    std::string csv = "layer,score,change\n";
    for (int l = 0; l < drift::kLayerCount; ++l)
        csv += std::to_string(l) + "," + drift::detail::format_double(profile.scores[static_cast<std::size_t>(l)]) +
               "," + drift::detail::format_double(profile.change[static_cast<std::size_t>(l)]) + "\n";
    write_text(out, csv);
    if (features_path.empty()) features_path = fs::path(out).replace_extension(".features.json").string();
    auto f = drift::similarity_features(profile, include_layer0);
    nlohmann::json j = drift::to_json(f);
    j["metric"] = drift::metric_name(metric);
    j["domain"] = run.domain();
    write_json(features_path, j);
    return 0;
}

int cmd_geometry(const Globals& g, const fs::path& run_path, const fs::path& out) {
    auto run = drift::load_run(run_path);
    const std::uint64_t seed = drift::detail::derive_seed(g.seed.value_or(0), static_cast<std::uint64_t>(run.manifest.seed));
    auto cmp = drift::geometry_deltas(run.base.final_layer(), run.ft.final_layer(), run.labels, seed);
    auto j = drift::to_json(cmp);
    j["domain"] = run.domain();
    write_json(out, j);
    return 0;
}

int cmd_classify(const Globals& g, const fs::path& run_path, const fs::path& test_path, const std::string& config_path,
                 const fs::path& out) {
    drift::ProbeConfig cfg = config_path.empty() ? drift::ProbeConfig{} : drift::probe_config_from_json(read_json(config_path));
    auto run = drift::load_run(run_path);
    auto test = drift::load_run(test_path);
    auto res = drift::run_scarce_protocol(run, test, cfg, g.jobs);
    if (res.unlabeled) {
        std::cerr << run.domain() << ": unlabeled, no classification outcomes\n";
        write_text(out, drift::outcomes_csv({}));
        return 2;
    }
    write_text(out, drift::outcomes_csv(res.outcomes));
    return 0;
}

int cmd_improve(const fs::path& outcomes, const fs::path& out, bool wide) {
    auto table = drift::improvement_table(drift::read_outcomes(outcomes.string()));
    if (!wide) {
        write_text(out, drift::improvement_csv(table));
        return 0;
    }
    std::vector<std::string> domains;
    for (const auto& r : table.rows)
        if (domains.empty() || domains.back() != r.domain) domains.push_back(r.domain);
    std::vector<drift::DomainFeatureRow> rows;
    for (const auto& d : domains) rows.push_back(drift::target_row(d, table));
    write_text(out, drift::named_matrix_csv(drift::assemble_feature_matrix(rows, 1)));
    return 0;
}

int cmd_loss(const fs::path& log, const fs::path& out, int window) {
    auto curve = drift::read_loss_log(log);
    write_json(out, drift::to_json(drift::loss_features(curve, window)));
    return 0;
}

int cmd_correlate(const fs::path& features, const fs::path& targets, const fs::path& out) {
    auto f = drift::assemble_feature_matrix(drift::read_domain_rows(features.string()));
    auto t = drift::assemble_feature_matrix(drift::read_domain_rows(targets.string()), 1);
    drift::emit_heatmap(drift::build_heatmap(f, t), out);
    return 0;
}

int cmd_pipeline(const Globals& g, const fs::path& config_path, const fs::path& out) {
    auto cfg = drift::read_pipeline_config(config_path);
    if (g.seed) cfg.seed = *g.seed;
    auto res = drift::run_pipeline(cfg, out, g.jobs);
    for (const auto& line : res.log) std::cerr << line << "\n";
    return res.exit_code;
}

int cmd_report(const fs::path& bundle, const std::string& out, std::size_t top) {
    auto md = drift::render_report(bundle, top);
    if (out.empty()) std::cout << md;
    else write_text(out, md);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"drift: measure how domain fine-tuning changed an encoder's embeddings"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--jobs", g.jobs, "Concurrent tasks")->check(CLI::PositiveNumber);
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "Master seed");
    app.fallthrough();

    std::string out, spec_path, run_path, test_path, config_path, metric = "cka", features_path, outcomes_path, log_path,
        targets_path, bundle_path;
    int study = 0, null_n = 0, n_samples = 1100, n_test = 400, window = 5;
    std::size_t top = 15;
    bool include_layer0 = false, wide = false;

    auto* synth = app.add_subcommand("synth", "Generate synthetic domains");
    synth->add_option("--out", out, "Output directory")->required();
    synth->add_option("--spec", spec_path, "SynthSpec JSON")->check(CLI::ExistingFile);
    synth->add_option("--study", study, "Write N domains with monotone drift plus pipeline.json");
    synth->add_option("--null-study", null_n, "Write N domains with random drift and no separation change plus pipeline.json");
    synth->add_option("--n-samples", n_samples, "Rows per study domain");
    synth->add_option("--n-test", n_test, "Probe-test rows per study domain");

    auto* sim = app.add_subcommand("similarity", "Layer-wise base/ft similarity profile");
    sim->add_option("--run", run_path, "Run manifest")->required();
    sim->add_option("--metric", metric, "cka | procrustes | rsa | rsa_spearman");
    sim->add_option("--out", out, "Profile CSV")->required();
    sim->add_option("--features", features_path, "Features JSON (default: <out>.features.json)");
    sim->add_flag("--include-layer0", include_layer0, "Let layer 0 count in summary features");

    auto* geo = app.add_subcommand("geometry", "Isotropy and clustering of the final layer");
    geo->add_option("--run", run_path, "Run manifest")->required();
    geo->add_option("--out", out, "Output JSON")->required();

    auto* cls = app.add_subcommand("classify", "Scarce-label probe protocol");
    cls->add_option("--run", run_path, "Probe-train run manifest")->required();
    cls->add_option("--probe-test", test_path, "Probe-test run manifest")->required();
    cls->add_option("--config", config_path, "Probe config JSON");
    cls->add_option("--out", out, "Outcomes CSV")->required();

    auto* imp = app.add_subcommand("improve", "Improvement metrics from probe outcomes");
    imp->add_option("--outcomes", outcomes_path, "Outcomes CSV")->required();
    imp->add_option("--out", out, "Output CSV")->required();
    imp->add_flag("--wide", wide, "One row per domain, one column per target");

    auto* loss = app.add_subcommand("loss", "Loss-curve features and power-law fit");
    loss->add_option("--log", log_path, "Loss log CSV")->required();
    loss->add_option("--out", out, "Output JSON")->required();
    loss->add_option("--window", window, "Averaging window");

    auto* cor = app.add_subcommand("correlate", "Feature/target correlation heatmap");
    cor->add_option("--features", features_path, "Features CSV")->required();
    cor->add_option("--targets", targets_path, "Targets CSV")->required();
    cor->add_option("--out", out, "Output directory")->required();

    auto* pipe = app.add_subcommand("pipeline", "Run a full study");
    pipe->add_option("--config", config_path, "Study config JSON")->required();
    pipe->add_option("--out", out, "Output directory")->required();

    auto* rep = app.add_subcommand("report", "Markdown digest of a pipeline output directory");
    rep->add_option("--bundle", bundle_path, "Pipeline output directory")->required();
    rep->add_option("--out", out, "Markdown file (default: stdout)");
    rep->add_option("--top", top, "Number of strongest cells listed");

    CLI11_PARSE(app, argc, argv);
    if (seed_opt->count() > 0) g.seed = seed_value;

    try {
        if (*synth) return cmd_synth(g, out, spec_path, study, null_n, n_samples, n_test);
        if (*sim) return cmd_similarity(g, run_path, metric, out, features_path, include_layer0);
        if (*geo) return cmd_geometry(g, run_path, out);
        if (*cls) return cmd_classify(g, run_path, test_path, config_path, out);
        if (*imp) return cmd_improve(outcomes_path, out, wide);
        if (*loss) return cmd_loss(log_path, out, window);
        if (*cor) return cmd_correlate(features_path, targets_path, out);
        if (*pipe) return cmd_pipeline(g, config_path, out);
        if (*rep) return cmd_report(bundle_path, out, top);
    } catch (const std::exception& e) {
        std::cerr << "drift: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
