#ifndef DRIFT_SYNTH_HPP
#define DRIFT_SYNTH_HPP

// Synthetic domains with known drift: Gaussian class mixtures per layer for the base
// model, and a fine-tuned stack derived from it by controlled per-layer transforms.

#include "drift/corpus_io.hpp"
#include "drift/detail/numeric.hpp"
#include "drift/error.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace drift {

struct SynthSpec {
    std::string domain_name = "synth";
    int n_samples = 400;   // probe-train / embedding-analysis rows (set B role)
    int n_test = 200;      // probe-test rows (set C role)
    int dim = 16;
    int n_classes = 4;
    double base_separation = 1.5;   // typical norm of a base class mean (noise sd is 1)
    double class_separation = 1.0;  // ft/base class-mean scale at full layer weight
    double drift_rotation_angle = 0.0; // radians at full layer weight
    std::array<double, kLayerCount> drift_layer_profile{};
    double drift_distortion = 0.5;  // non-orthogonal mixing strength at full layer weight
    double anisotropy_factor = 1.0; // stretch of axis 0 at full layer weight
    bool labeled = true;
    // loss curve L(D) = C + B·D^(−β) + N(0, noise²)
    double loss_c = 2.0;
    double loss_b = 60.0;
    double loss_beta = 0.3;
    double loss_noise = 0.01;
    int loss_points = 40;
    int loss_epochs = 3;
    long long tokens_per_point = 409600;
    std::uint64_t seed = 0;
};

inline void validate(const SynthSpec& s) {
    auto fail = [](const std::string& msg) { throw ValidationError("synth spec: " + msg); };
    if (s.domain_name.empty()) fail("domain_name is empty");
    if (s.n_samples < 4 || s.n_test < 1) fail("n_samples must be >= 4 and n_test >= 1");
    if (s.dim < 1) fail("dim must be >= 1");
    if (s.n_classes < 2 || s.n_classes > s.n_samples) fail("n_classes must be in [2, n_samples]");
    if (s.class_separation < 0.0 || s.base_separation < 0.0) fail("separations must be >= 0");
    if (s.anisotropy_factor < 1.0) fail("anisotropy_factor must be >= 1");
    for (double w : s.drift_layer_profile)
        if (!(w >= 0.0 && w <= 1.0)) fail("drift_layer_profile entries must lie in [0,1]");
    if (s.loss_points < 4 || s.loss_epochs < 1 || s.tokens_per_point < 1) fail("loss curve shape invalid");
    if (s.loss_c < 0.0 || s.loss_b < 0.0 || s.loss_beta <= 0.0 || s.loss_noise < 0.0) fail("loss parameters invalid");
}

inline nlohmann::json to_json(const SynthSpec& s) {
    return {{"domain_name", s.domain_name},
            {"n_samples", s.n_samples},
            {"n_test", s.n_test},
            {"dim", s.dim},
            {"n_classes", s.n_classes},
            {"base_separation", s.base_separation},
            {"class_separation", s.class_separation},
            {"drift_rotation_angle", s.drift_rotation_angle},
            {"drift_layer_profile", s.drift_layer_profile},
            {"drift_distortion", s.drift_distortion},
            {"anisotropy_factor", s.anisotropy_factor},
            {"labeled", s.labeled},
            {"loss_c", s.loss_c},
            {"loss_b", s.loss_b},
            {"loss_beta", s.loss_beta},
            {"loss_noise", s.loss_noise},
            {"loss_points", s.loss_points},
            {"loss_epochs", s.loss_epochs},
            {"tokens_per_point", s.tokens_per_point},
            {"seed", s.seed}};
}

/// Missing keys keep their defaults.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec s;
    try {
        s.domain_name = j.value("domain_name", s.domain_name);
        s.n_samples = j.value("n_samples", s.n_samples);
        s.n_test = j.value("n_test", s.n_test);
        s.dim = j.value("dim", s.dim);
        s.n_classes = j.value("n_classes", s.n_classes);
        s.base_separation = j.value("base_separation", s.base_separation);
        s.class_separation = j.value("class_separation", s.class_separation);
        s.drift_rotation_angle = j.value("drift_rotation_angle", s.drift_rotation_angle);
        if (j.contains("drift_layer_profile")) {
            auto v = j["drift_layer_profile"].get<std::vector<double>>();
            if (v.size() != kLayerCount) throw ValidationError("synth spec: drift_layer_profile needs 13 entries");
            std::copy(v.begin(), v.end(), s.drift_layer_profile.begin());
        }
        s.drift_distortion = j.value("drift_distortion", s.drift_distortion);
        s.anisotropy_factor = j.value("anisotropy_factor", s.anisotropy_factor);
        s.labeled = j.value("labeled", s.labeled);
        s.loss_c = j.value("loss_c", s.loss_c);
        s.loss_b = j.value("loss_b", s.loss_b);
        s.loss_beta = j.value("loss_beta", s.loss_beta);
        s.loss_noise = j.value("loss_noise", s.loss_noise);
        s.loss_points = j.value("loss_points", s.loss_points);
        s.loss_epochs = j.value("loss_epochs", s.loss_epochs);
        s.tokens_per_point = j.value("tokens_per_point", s.tokens_per_point);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("synth spec: ") + e.what());
    }
    validate(s);
    return s;
}

/// Generated probe-train (B) and probe-test (C) runs of one synthetic domain.
struct SyntheticDomain {
    DomainRun train;
    DomainRun test;
};

namespace detail {

enum SynthStream : std::uint64_t { kMeans = 1, kTrainNoise = 2, kTestNoise = 3, kDistortion = 4, kLoss = 5 };

inline std::string class_name(int c) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "class_%02d", c);
    return buf;
}

struct LayerModel {
    Matrix means;      // n_classes x dim
    Matrix distortion; // dim x dim, applied on the right
};

inline std::vector<LayerModel> synth_layer_models(const SynthSpec& s) {
    std::vector<LayerModel> layers(kLayerCount);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double mean_sd = s.base_separation / std::sqrt(static_cast<double>(s.dim));
    for (int l = 0; l < kLayerCount; ++l) {
        std::mt19937_64 rng(derive_seed(s.seed, kMeans * 100 + static_cast<std::uint64_t>(l)));
        layers[static_cast<std::size_t>(l)].means = Matrix::NullaryExpr(s.n_classes, s.dim, [&] { return mean_sd * normal(rng); });
        std::mt19937_64 rng_d(derive_seed(s.seed, kDistortion * 100 + static_cast<std::uint64_t>(l)));
        Matrix g = Matrix::NullaryExpr(s.dim, s.dim, [&] { return normal(rng_d); }) / std::sqrt(static_cast<double>(s.dim));
        layers[static_cast<std::size_t>(l)].distortion = g;
    }
    return layers;
}

inline LayerStack synth_base_stack(const SynthSpec& s, const std::vector<LayerModel>& layers, int n,
                                   const std::vector<int>& classes, const std::vector<std::string>& ids,
                                   std::uint64_t stream) {
    LayerStack stack;
    stack.model_tag = "base";
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int l = 0; l < kLayerCount; ++l) {
        std::mt19937_64 rng(derive_seed(s.seed, stream * 100 + static_cast<std::uint64_t>(l)));
        EmbeddingCloud c;
        c.layer_index = l;
        c.model_tag = "base";
        c.sample_ids = ids;
        c.vectors.resize(n, s.dim);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < s.dim; ++k)
                c.vectors(i, k) = static_cast<float>(layers[static_cast<std::size_t>(l)].means(classes[static_cast<std::size_t>(i)], k) + normal(rng));
        stack.clouds.push_back(std::move(c));
    }
    return stack;
}

inline LayerStack synth_ft_stack(const SynthSpec& s, const std::vector<LayerModel>& layers, const LayerStack& base,
                                 const std::vector<int>& classes) {
    LayerStack stack;
    stack.model_tag = "ft";
    for (int l = 0; l < kLayerCount; ++l) {
        const auto& src = base.layer(l);
        EmbeddingCloud c = src;
        c.model_tag = "ft";
        const double w = s.drift_layer_profile[static_cast<std::size_t>(l)];
        if (w > 0.0) {
            const auto& model = layers[static_cast<std::size_t>(l)];
            const double sep = 1.0 + (s.class_separation - 1.0) * w;
            const double stretch = 1.0 + (s.anisotropy_factor - 1.0) * w;
            const double angle = s.drift_rotation_angle * w;
            const double cs = std::cos(angle), sn = std::sin(angle);
            Matrix mix = Matrix::Identity(s.dim, s.dim) + (s.drift_distortion * w) * model.distortion;
            Matrix x = src.to_double();
            for (Eigen::Index i = 0; i < x.rows(); ++i) x.row(i) += (sep - 1.0) * model.means.row(classes[static_cast<std::size_t>(i)]);
            x = x * mix;
            x.col(0) *= stretch;
            for (int k = 0; k + 1 < s.dim; k += 2) {
                Vector a = x.col(k), b = x.col(k + 1);
                x.col(k) = cs * a - sn * b;
                x.col(k + 1) = sn * a + cs * b;
            }
            c.vectors = x.cast<float>();
        }
        stack.clouds.push_back(std::move(c));
    }
    return stack;
}

inline LossCurve synth_loss_curve(const SynthSpec& s) {
    std::mt19937_64 rng(derive_seed(s.seed, kLoss));
    std::normal_distribution<double> noise(0.0, 1.0);
    LossCurve curve;
    for (int k = 1; k <= s.loss_points; ++k) {
        LossPoint p;
        p.step = static_cast<long long>(k) * 50;
        p.epoch = static_cast<double>(s.loss_epochs) * k / s.loss_points;
        p.tokens_seen = static_cast<long long>(k) * s.tokens_per_point;
        const double clean = s.loss_c + s.loss_b * std::pow(static_cast<double>(p.tokens_seen), -s.loss_beta);
        p.train_loss = std::max(0.0, clean + s.loss_noise * noise(rng));
        p.eval_loss = std::max(0.0, clean + 0.05 + s.loss_noise * noise(rng));
        curve.points.push_back(p);
    }
    return curve;
}

} // namespace detail

/// Builds both runs in memory. A zero drift profile yields an ft stack bit-identical to base.
inline SyntheticDomain generate_synthetic_domain(const SynthSpec& spec) {
    validate(spec);
    auto layers = detail::synth_layer_models(spec);
    auto make_run = [&](int n, const std::string& prefix, std::uint64_t stream, const std::string& split) {
        std::vector<int> classes(static_cast<std::size_t>(n));
        std::vector<std::string> ids(static_cast<std::size_t>(n));
        std::vector<std::pair<std::string, std::string>> labels;
        for (int i = 0; i < n; ++i) {
            classes[static_cast<std::size_t>(i)] = i % spec.n_classes;
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%s%05d", prefix.c_str(), i);
            ids[static_cast<std::size_t>(i)] = buf;
            labels.emplace_back(buf, detail::class_name(classes[static_cast<std::size_t>(i)]));
        }
        DomainRun run;
        run.manifest.domain_name = spec.domain_name;
        run.manifest.split_tag = split;
        run.manifest.seed = static_cast<std::int64_t>(spec.seed);
        run.manifest.extraction_notes = "synthetic";
        run.manifest.extra = to_json(spec);
        run.base = detail::synth_base_stack(spec, layers, n, classes, ids, stream);
        run.ft = detail::synth_ft_stack(spec, layers, run.base, classes);
        run.loss = detail::synth_loss_curve(spec);
        if (spec.labeled) run.labels = LabelTable::from_pairs(labels);
        return run;
    };
    SyntheticDomain out;
    out.train = make_run(spec.n_samples, "b", detail::kTrainNoise, "B");
    out.test = make_run(spec.n_test, "c", detail::kTestNoise, "C");
    return out;
}

struct SynthFiles {
    std::filesystem::path train_manifest;
    std::filesystem::path test_manifest;
    RunManifest train;
    RunManifest test;
};

/// Writes the domain under out_dir: manifest.json (+ base/, ft/, labels.csv, loss.csv) and
/// probe_test/manifest.json for the held-out rows.
inline SynthFiles gen_synthetic_domain(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    auto domain = generate_synthetic_domain(spec);
    SynthFiles files;
    auto write_run = [&](const DomainRun& run, const std::filesystem::path& dir, const std::string& loss_rel) {
        std::filesystem::create_directories(dir);
        write_stack(run.base, dir / "base");
        write_stack(run.ft, dir / "ft");
        RunManifest m = run.manifest;
        m.base_dir = "base";
        m.ft_dir = "ft";
        m.loss_log = loss_rel;
        if (run.labels) {
            std::vector<std::string> labels;
            for (const auto& id : run.sample_ids()) labels.push_back(run.labels->entries.at(id));
            write_labels(run.sample_ids(), labels, dir / "labels.csv");
            m.labels = "labels.csv";
        }
        write_manifest(m, dir / "manifest.json");
        return m;
    };
    std::filesystem::create_directories(out_dir);
    write_loss_log(domain.train.loss, out_dir / "loss.csv",
                   {"synthetic: L = C + B*D^-beta + noise, see manifest 'synthetic' block"});
    files.train = write_run(domain.train, out_dir, "loss.csv");
    files.test = write_run(domain.test, out_dir / "probe_test", "../loss.csv");
    files.train_manifest = out_dir / "manifest.json";
    files.test_manifest = out_dir / "probe_test" / "manifest.json";
    return files;
}

/// Layer weights for a study domain: full weight on layers 1–3, tapering to half at 12,
/// layer 0 untouched.
inline std::array<double, kLayerCount> tapered_profile(double magnitude) {
    std::array<double, kLayerCount> p{};
    for (int l = 1; l < kLayerCount; ++l) {
        const double taper = l <= 3 ? 1.0 : 1.0 - 0.5 * (l - 3) / 9.0;
        p[static_cast<std::size_t>(l)] = magnitude * taper;
    }
    return p;
}

/// `n` domains whose drift magnitude rises monotonically from 0 to 1; larger drift brings
/// larger class separation and a larger loss drop.
inline std::vector<SynthSpec> monotone_study(int n, std::uint64_t seed, int n_samples = 1100, int n_test = 400) {
    std::vector<SynthSpec> specs;
    for (int i = 0; i < n; ++i) {
        const double m = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
        SynthSpec s;
        char name[32];
        std::snprintf(name, sizeof(name), "domain_%02d", i);
        s.domain_name = name;
        s.n_samples = n_samples;
        s.n_test = n_test;
        s.seed = detail::derive_seed(seed, static_cast<std::uint64_t>(i));
        s.drift_layer_profile = tapered_profile(m);
        s.class_separation = 1.0 + 1.5 * m;
        s.drift_rotation_angle = 0.4;
        s.loss_b = 20.0 + 80.0 * m;
        specs.push_back(s);
    }
    return specs;
}

/// `n` domains with independently drawn drift magnitude, rotation and loss decay. Class
/// separation is left unchanged, so probe gains carry no signal from the drift.
inline std::vector<SynthSpec> null_study(int n, std::uint64_t seed, int n_samples = 1100, int n_test = 400) {
    std::vector<SynthSpec> specs;
    std::mt19937_64 rng(detail::derive_seed(seed, 0x6e756c6cULL));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        SynthSpec s;
        char name[32];
        std::snprintf(name, sizeof(name), "null_%02d", i);
        s.domain_name = name;
        s.n_samples = n_samples;
        s.n_test = n_test;
        s.seed = detail::derive_seed(seed, static_cast<std::uint64_t>(i));
        s.drift_layer_profile = tapered_profile(unit(rng));
        s.drift_rotation_angle = unit(rng);
        s.loss_b = 20.0 + 80.0 * unit(rng);
        specs.push_back(s);
    }
    return specs;
}

} // namespace drift

#endif
