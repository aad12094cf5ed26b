#ifndef DRIFT_SCARCE_CLASSIFIERS_HPP
#define DRIFT_SCARCE_CLASSIFIERS_HPP

// Scarce-label probes on frozen final-layer embeddings: stratified subsets, multinomial
// logistic regression, kNN, and the base-vs-fine-tuned evaluation protocol.

#include "drift/corpus_io.hpp"
#include "drift/detail/csv.hpp"
#include "drift/detail/numeric.hpp"
#include "drift/detail/parallel.hpp"
#include "drift/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace drift {

enum class ClassifierKind { logistic, knn };
enum class KnnMetric { cosine, euclidean };

inline std::string to_string(ClassifierKind k) { return k == ClassifierKind::logistic ? "logistic" : "knn"; }
inline std::string to_string(KnnMetric m) { return m == KnnMetric::cosine ? "cosine" : "euclidean"; }

inline ClassifierKind parse_classifier(std::string_view s) {
    if (s == "logistic") return ClassifierKind::logistic;
    if (s == "knn") return ClassifierKind::knn;
    throw ValidationError("unknown classifier '" + std::string(s) + "'");
}

inline KnnMetric parse_knn_metric(std::string_view s) {
    if (s == "cosine") return KnnMetric::cosine;
    if (s == "euclidean") return KnnMetric::euclidean;
    throw ValidationError("unknown kNN metric '" + std::string(s) + "'");
}

struct LogisticOptions {
    double l2_strength = 1.0;
    int max_iter = 1000;
    double tol = 1e-6; // on the gradient norm
    bool standardize = true;
};

struct ProbeConfig {
    std::vector<ClassifierKind> classifiers{ClassifierKind::logistic, ClassifierKind::knn};
    std::vector<int> subset_sizes{250, 500, 1000};
    std::vector<std::int64_t> seeds{0, 1, 2, 3, 4};
    int knn_k = 5;
    KnnMetric knn_metric = KnnMetric::cosine;
    LogisticOptions logistic;
};

inline nlohmann::json to_json(const ProbeConfig& c) {
    nlohmann::json j;
    j["classifiers"] = nlohmann::json::array();
    for (auto k : c.classifiers) j["classifiers"].push_back(to_string(k));
    j["subset_sizes"] = c.subset_sizes;
    j["seeds"] = c.seeds;
    j["knn_k"] = c.knn_k;
    j["knn_metric"] = to_string(c.knn_metric);
    j["logistic"] = {{"l2_strength", c.logistic.l2_strength},
                     {"max_iter", c.logistic.max_iter},
                     {"tol", c.logistic.tol},
                     {"standardize", c.logistic.standardize}};
    return j;
}

/// Missing keys keep their defaults.
inline ProbeConfig probe_config_from_json(const nlohmann::json& j) {
    ProbeConfig c;
    try {
        if (j.contains("classifiers")) {
            c.classifiers.clear();
            for (const auto& s : j["classifiers"]) c.classifiers.push_back(parse_classifier(s.get<std::string>()));
        }
        if (j.contains("subset_sizes")) c.subset_sizes = j["subset_sizes"].get<std::vector<int>>();
        if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::int64_t>>();
        c.knn_k = j.value("knn_k", c.knn_k);
        if (j.contains("knn_metric")) c.knn_metric = parse_knn_metric(j["knn_metric"].get<std::string>());
        if (j.contains("logistic")) {
            const auto& l = j["logistic"];
            c.logistic.l2_strength = l.value("l2_strength", c.logistic.l2_strength);
            c.logistic.max_iter = l.value("max_iter", c.logistic.max_iter);
            c.logistic.tol = l.value("tol", c.logistic.tol);
            c.logistic.standardize = l.value("standardize", c.logistic.standardize);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("probe config: ") + e.what());
    }
    if (c.classifiers.empty() || c.subset_sizes.empty() || c.seeds.empty())
        throw ValidationError("probe config: classifiers, subset_sizes and seeds must be non-empty");
    if (c.knn_k < 1) throw ValidationError("probe config: knn_k must be >= 1");
    return c;
}

/// Per-class sample counts for a stratified subset: largest-remainder apportionment
/// (remainder ties go to the lower class index), then every class raised to at least one.
inline std::vector<std::size_t> stratified_quotas(std::span<const std::size_t> class_counts, std::size_t size) {
    const std::size_t k = class_counts.size();
    const std::size_t total = std::accumulate(class_counts.begin(), class_counts.end(), std::size_t{0});
    for (std::size_t c = 0; c < k; ++c)
        if (class_counts[c] == 0) throw ValidationError("stratified_subset: class " + std::to_string(c) + " has no samples");
    if (size < k)
        throw ValidationError("stratified_subset: size " + std::to_string(size) + " smaller than class count " +
                              std::to_string(k));
    if (size > total)
        throw ValidationError("stratified_subset: size " + std::to_string(size) + " exceeds available " +
                              std::to_string(total));
    std::vector<std::size_t> quota(k);
    std::vector<std::pair<std::size_t, std::size_t>> remainders; // (remainder numerator, class)
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < k; ++c) {
        // exact integer arithmetic: size*count = quota*total + rem
        const auto prod = static_cast<unsigned long long>(size) * class_counts[c];
        quota[c] = static_cast<std::size_t>(prod / total);
        remainders.emplace_back(static_cast<std::size_t>(prod % total), c);
        assigned += quota[c];
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < size; ++i, ++assigned) ++quota[remainders[i].second];
    for (std::size_t c = 0; c < k; ++c) {
        if (quota[c] > 0) continue;
        std::size_t donor = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (quota[j] > quota[donor]) donor = j;
        --quota[donor];
        quota[c] = 1;
    }
    return quota;
}

/// Row indices (ascending) of a stratified subset of `labels` (dense codes in [0, n_classes)).
inline std::vector<std::size_t> stratified_subset(std::span<const int> labels, int n_classes, std::size_t size,
                                                  std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes) throw ValidationError("stratified_subset: label out of range");
        members[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    std::vector<std::size_t> counts;
    for (const auto& m : members) counts.push_back(m.size());
    auto quota = stratified_quotas(counts, size);
    std::vector<std::size_t> out;
    out.reserve(size);
    for (std::size_t c = 0; c < members.size(); ++c) {
        auto idx = members[c];
        std::mt19937_64 rng(detail::derive_seed(seed, c));
        std::shuffle(idx.begin(), idx.end(), rng);
        out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Multinomial logistic model over standardized features.
struct LinearModel {
    Matrix weights; // classes x d
    Vector bias;    // classes
    Eigen::RowVectorXd feature_mean;
    Eigen::RowVectorXd feature_scale;
    int iterations = 0;
    double gradient_norm = 0.0;
    std::vector<double> loss_history; // objective after each accepted step, starting at the initial point

    [[nodiscard]] Matrix standardize(const Matrix& x) const {
        return (x.rowwise() - feature_mean).array().rowwise() / feature_scale.array();
    }
    [[nodiscard]] Matrix scores(const Matrix& x) const {
        return (standardize(x) * weights.transpose()).rowwise() + bias.transpose();
    }
    [[nodiscard]] std::vector<int> predict(const Matrix& x) const {
        Matrix s = scores(x);
        std::vector<int> out(static_cast<std::size_t>(s.rows()));
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            Eigen::Index best = 0;
            s.row(i).maxCoeff(&best);
            out[static_cast<std::size_t>(i)] = static_cast<int>(best);
        }
        return out;
    }
};

struct ObjectiveValue {
    double loss = 0.0;
    Matrix gradient; // same shape as params
};

/// Mean multinomial cross-entropy + (l2/(2m))‖W‖²_F. `params` is classes x (d+1), the last
/// column holding the (unpenalized) biases.
inline ObjectiveValue logistic_objective(const Matrix& params, const Matrix& x, std::span<const int> y, double l2) {
    const Eigen::Index m = x.rows();
    const Eigen::Index d = x.cols();
    const Eigen::Index k = params.rows();
    const auto w = params.leftCols(d);
    Matrix z = (x * w.transpose()).rowwise() + params.col(d).transpose();
    ObjectiveValue out;
    Matrix resid(m, k);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double zmax = z.row(i).maxCoeff();
        Eigen::RowVectorXd e = (z.row(i).array() - zmax).exp();
        const double denom = e.sum();
        loss += zmax + std::log(denom) - z(i, y[static_cast<std::size_t>(i)]);
        resid.row(i) = e / denom;
        resid(i, y[static_cast<std::size_t>(i)]) -= 1.0;
    }
    const double inv_m = 1.0 / static_cast<double>(m);
    out.loss = loss * inv_m + 0.5 * l2 * inv_m * w.squaredNorm();
    out.gradient.resize(k, d + 1);
    out.gradient.leftCols(d) = inv_m * (resid.transpose() * x) + l2 * inv_m * w;
    out.gradient.col(d) = inv_m * resid.colwise().sum().transpose();
    return out;
}

/// Full-batch gradient descent with Barzilai-Borwein trial steps and Armijo backtracking.
/// Every accepted step decreases the objective; the result is bitwise reproducible.
inline LinearModel train_logistic(const Matrix& x, std::span<const int> y, int n_classes,
                                  const LogisticOptions& opt = {}) {
    if (static_cast<std::size_t>(x.rows()) != y.size()) throw ValidationError("train_logistic: x/y length mismatch");
    if (x.rows() < 1) throw ValidationError("train_logistic: empty training set");
    if (!x.allFinite()) throw ValidationError("train_logistic: non-finite features");
    std::vector<int> present(static_cast<std::size_t>(n_classes), 0);
    for (int v : y) {
        if (v < 0 || v >= n_classes) throw ValidationError("train_logistic: label out of range");
        present[static_cast<std::size_t>(v)] = 1;
    }
    if (std::accumulate(present.begin(), present.end(), 0) < 2)
        throw ValidationError("train_logistic: single class present");

    LinearModel model;
    const Eigen::Index d = x.cols();
    model.feature_mean = Eigen::RowVectorXd::Zero(d);
    model.feature_scale = Eigen::RowVectorXd::Ones(d);
    if (opt.standardize) {
        model.feature_mean = x.colwise().mean();
        Eigen::RowVectorXd var = (x.rowwise() - model.feature_mean).array().square().colwise().mean();
        for (Eigen::Index c = 0; c < d; ++c) model.feature_scale(c) = var(c) > 0.0 ? std::sqrt(var(c)) : 1.0;
    }
    const Matrix xs = model.standardize(x);

    Matrix params = Matrix::Zero(n_classes, d + 1);
    auto cur = logistic_objective(params, xs, y, opt.l2_strength);
    model.loss_history.push_back(cur.loss);
    double step = 1.0;
    int it = 0;
    for (; it < opt.max_iter; ++it) {
        const double gnorm2 = cur.gradient.squaredNorm();
        if (std::sqrt(gnorm2) < opt.tol) break;
        Matrix trial;
        ObjectiveValue next;
        bool accepted = false;
        for (int halvings = 0; halvings < 60; ++halvings) {
            trial = params - step * cur.gradient;
            next = logistic_objective(trial, xs, y, opt.l2_strength);
            if (next.loss <= cur.loss - 1e-4 * step * gnorm2) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        const Matrix s = trial - params;
        const Matrix g_diff = next.gradient - cur.gradient;
        const double sy = (s.array() * g_diff.array()).sum();
        step = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-10, 1e10) : std::min(step * 2.0, 1e10);
        params = std::move(trial);
        cur = std::move(next);
        model.loss_history.push_back(cur.loss);
    }
    model.iterations = it;
    model.gradient_norm = cur.gradient.norm();
    model.weights = params.leftCols(d);
    model.bias = params.col(d);
    return model;
}

/// Majority vote among the k nearest training rows. Distance ties go to the lower row index,
/// vote ties to the lower class index.
inline std::vector<int> knn_classify(const Matrix& train_x, std::span<const int> train_y, const Matrix& test_x, int k,
                                     KnnMetric metric, int n_classes) {
    const Eigen::Index m = train_x.rows();
    if (m == 0) throw ValidationError("knn_classify: empty training set");
    if (static_cast<std::size_t>(m) != train_y.size()) throw ValidationError("knn_classify: x/y length mismatch");
    if (k < 1 || k > m) throw ValidationError("knn_classify: k=" + std::to_string(k) + " outside [1, " +
                                              std::to_string(m) + "]");
    if (test_x.cols() != train_x.cols()) throw ValidationError("knn_classify: dimension mismatch");
    Vector train_norm = train_x.rowwise().norm();
    std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(m));
    std::vector<int> votes(static_cast<std::size_t>(n_classes));
    std::vector<int> out(static_cast<std::size_t>(test_x.rows()));
    for (Eigen::Index t = 0; t < test_x.rows(); ++t) {
        const double tn = test_x.row(t).norm();
        for (Eigen::Index i = 0; i < m; ++i) {
            double dv;
            if (metric == KnnMetric::euclidean) {
                dv = (train_x.row(i) - test_x.row(t)).squaredNorm();
            } else {
                const double denom = train_norm(i) * tn;
                dv = denom > 0.0 ? 1.0 - train_x.row(i).dot(test_x.row(t)) / denom : 1.0;
            }
            dist[static_cast<std::size_t>(i)] = {dv, i};
        }
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
        std::fill(votes.begin(), votes.end(), 0);
        for (int j = 0; j < k; ++j) ++votes[static_cast<std::size_t>(train_y[static_cast<std::size_t>(dist[static_cast<std::size_t>(j)].second)])];
        out[static_cast<std::size_t>(t)] =
            static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
    return out;
}

struct ClassificationScores {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

/// Accuracy and unweighted macro-F1 over classes [0, n_classes); a class with P+R = 0 scores 0.
inline ClassificationScores evaluate(std::span<const int> pred, std::span<const int> truth, int n_classes) {
    if (pred.size() != truth.size()) throw ValidationError("evaluate: length mismatch");
    if (truth.empty()) throw ValidationError("evaluate: empty input");
    std::vector<double> tp(static_cast<std::size_t>(n_classes)), fp(tp.size()), fn(tp.size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto p = static_cast<std::size_t>(pred[i]);
        const auto t = static_cast<std::size_t>(truth[i]);
        if (p >= tp.size() || t >= tp.size()) throw ValidationError("evaluate: label out of range");
        if (p == t) {
            ++correct;
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn[t] += 1;
        }
    }
    double f1_sum = 0.0;
    for (std::size_t c = 0; c < tp.size(); ++c) {
        const double precision = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
        const double recall = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
        if (precision + recall > 0) f1_sum += 2 * precision * recall / (precision + recall);
    }
    return {static_cast<double>(correct) / static_cast<double>(truth.size()), f1_sum / static_cast<double>(n_classes)};
}

struct ClassificationOutcome {
    std::string domain;
    ClassifierKind classifier = ClassifierKind::logistic;
    int subset_size = 0;
    std::int64_t seed = 0;
    std::string model_tag;
    double accuracy = 0.0;
    double macro_f1 = 0.0;

    bool operator==(const ClassificationOutcome&) const = default;
};

struct ProtocolResult {
    std::vector<ClassificationOutcome> outcomes;
    bool unlabeled = false; // protocol skipped: no labels for probe-train or probe-test
};

inline ClassificationOutcome run_probe_cell(const Matrix& train_x, std::span<const int> train_y, const Matrix& test_x,
                                           std::span<const int> test_y, int n_classes, ClassifierKind classifier,
                                           int subset_size, std::int64_t seed, const ProbeConfig& config) {
    auto rows = stratified_subset(train_y, n_classes, static_cast<std::size_t>(subset_size),
                                  static_cast<std::uint64_t>(seed));
    Matrix sub_x(static_cast<Eigen::Index>(rows.size()), train_x.cols());
    std::vector<int> sub_y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        sub_x.row(static_cast<Eigen::Index>(i)) = train_x.row(static_cast<Eigen::Index>(rows[i]));
        sub_y[i] = train_y[rows[i]];
    }
    std::vector<int> pred;
    if (classifier == ClassifierKind::logistic) {
        pred = train_logistic(sub_x, sub_y, n_classes, config.logistic).predict(test_x);
    } else {
        pred = knn_classify(sub_x, sub_y, test_x, std::min<int>(config.knn_k, static_cast<int>(rows.size())),
                            config.knn_metric, n_classes);
    }
    auto s = evaluate(pred, test_y, n_classes);
    ClassificationOutcome o;
    o.classifier = classifier;
    o.subset_size = subset_size;
    o.seed = seed;
    o.accuracy = s.accuracy;
    o.macro_f1 = s.macro_f1;
    return o;
}

/// Trains every (classifier, subset size, seed, model) cell on the final layer of the
/// probe-train run and scores it on the probe-test run. The subset for a seed is shared by
/// both models. Output order is fixed by that nesting regardless of `jobs`.
inline ProtocolResult run_scarce_protocol(const DomainRun& train, const DomainRun& test, const ProbeConfig& config,
                                          int jobs = 1) {
    ProtocolResult result;
    if (!train.labels || !test.labels) {
        result.unlabeled = true;
        return result;
    }
    const auto& classes = train.labels->class_set;
    const int n_classes = static_cast<int>(classes.size());
    if (n_classes < 2) throw ValidationError(train.domain() + ": classification needs at least 2 classes");
    const auto train_y = train.labels->encode(train.sample_ids());
    std::vector<int> test_y;
    test_y.reserve(test.sample_ids().size());
    for (std::size_t i = 0; i < test.sample_ids().size(); ++i) {
        auto it = test.labels->entries.find(test.sample_ids()[i]);
        if (it == test.labels->entries.end())
            throw ValidationError("probe-test: no label for sample id '" + test.sample_ids()[i] + "'");
        test_y.push_back(train.labels->class_index(it->second));
    }
    const std::array<const LayerStack*, 2> train_stacks{&train.base, &train.ft};
    const std::array<const LayerStack*, 2> test_stacks{&test.base, &test.ft};
    const std::array<std::string, 2> tags{"base", "ft"};
    std::array<Matrix, 2> train_x, test_x;
    for (std::size_t m = 0; m < 2; ++m) {
        train_x[m] = train_stacks[m]->final_layer().to_double();
        test_x[m] = test_stacks[m]->final_layer().to_double();
        if (train_x[m].cols() != test_x[m].cols())
            throw ValidationError("probe-train and probe-test hidden sizes differ");
    }
    struct Cell {
        ClassifierKind classifier;
        int size;
        std::int64_t seed;
        std::size_t model;
    };
    std::vector<Cell> cells;
    for (auto c : config.classifiers)
        for (int size : config.subset_sizes)
            for (auto seed : config.seeds)
                for (std::size_t m = 0; m < 2; ++m) cells.push_back({c, size, seed, m});
    result.outcomes.resize(cells.size());
    detail::parallel_for(cells.size(), jobs, [&](std::size_t i) {
        const auto& cell = cells[i];
        auto o = run_probe_cell(train_x[cell.model], train_y, test_x[cell.model], test_y, n_classes, cell.classifier,
                                cell.size, cell.seed, config);
        o.domain = train.domain();
        o.model_tag = tags[cell.model];
        result.outcomes[i] = std::move(o);
    });
    return result;
}

inline std::string outcomes_csv(const std::vector<ClassificationOutcome>& outcomes,
                                const std::vector<std::string>& comments = {}) {
    std::string out;
    for (const auto& c : comments) out += "# " + c + "\n";
    out += "domain,classifier,subset_size,seed,model_tag,accuracy,macro_f1\n";
    for (const auto& o : outcomes) {
        out += detail::join_csv({o.domain, to_string(o.classifier), std::to_string(o.subset_size),
                                 std::to_string(o.seed), o.model_tag, detail::format_double(o.accuracy),
                                 detail::format_double(o.macro_f1)}) +
               "\n";
    }
    return out;
}

inline std::vector<ClassificationOutcome> read_outcomes(const std::string& path) {
    auto [header, rows] = detail::read_csv(path);
    const std::vector<std::string> expected{"domain", "classifier", "subset_size", "seed",
                                            "model_tag", "accuracy", "macro_f1"};
    if (header != expected) throw FormatError(path + ": unexpected outcomes header");
    std::vector<ClassificationOutcome> out;
    for (const auto& r : rows) {
        auto where = path + ":" + std::to_string(r.line);
        if (r.fields.size() != expected.size()) throw FormatError(where + ": expected 7 fields");
        ClassificationOutcome o;
        o.domain = r.fields[0];
        o.classifier = parse_classifier(r.fields[1]);
        auto size = detail::parse_int(r.fields[2]);
        auto seed = detail::parse_int(r.fields[3]);
        auto acc = detail::parse_double(r.fields[5]);
        auto f1 = detail::parse_double(r.fields[6]);
        if (!size || !seed || !acc || !f1) throw FormatError(where + ": unparsable number");
        o.subset_size = static_cast<int>(*size);
        o.seed = *seed;
        o.model_tag = r.fields[4];
        o.accuracy = *acc;
        o.macro_f1 = *f1;
        out.push_back(std::move(o));
    }
    return out;
}

} // namespace drift

#endif
