#include "drift/scarce_classifiers.hpp"
#include "drift/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

using namespace drift;

namespace {

struct Blobs {
    Matrix x;
    std::vector<int> y;
};

// Class c centred at sep·e_c with unit noise.
Blobs make_blobs(std::mt19937_64& rng, int per_class, int k, int d, double sep) {
    std::normal_distribution<double> g(0.0, 1.0);
    Blobs b;
    b.x.resize(per_class * k, d);
    for (int c = 0; c < k; ++c)
        for (int i = 0; i < per_class; ++i) {
            const int row = c * per_class + i;
            for (int j = 0; j < d; ++j) b.x(row, j) = g(rng) + (j == c ? sep : 0.0);
            b.y.push_back(c);
        }
    return b;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    return evaluate(pred, truth, *std::max_element(truth.begin(), truth.end()) + 1).accuracy;
}

std::vector<int> brute_knn(const Matrix& tx, const std::vector<int>& ty, const Matrix& q, int k, KnnMetric metric,
                           int n_classes) {
    std::vector<int> out;
    for (Eigen::Index t = 0; t < q.rows(); ++t) {
        std::vector<std::pair<double, Eigen::Index>> d;
        for (Eigen::Index i = 0; i < tx.rows(); ++i) {
            double v = 0.0;
            if (metric == KnnMetric::euclidean) {
                for (Eigen::Index j = 0; j < tx.cols(); ++j) v += (tx(i, j) - q(t, j)) * (tx(i, j) - q(t, j));
            } else {
                double dot = 0, na = 0, nb = 0;
                for (Eigen::Index j = 0; j < tx.cols(); ++j) {
                    dot += tx(i, j) * q(t, j);
                    na += tx(i, j) * tx(i, j);
                    nb += q(t, j) * q(t, j);
                }
                v = 1.0 - dot / std::sqrt(na * nb);
            }
            d.emplace_back(v, i);
        }
        std::sort(d.begin(), d.end());
        std::vector<int> votes(static_cast<std::size_t>(n_classes));
        for (int j = 0; j < k; ++j) ++votes[static_cast<std::size_t>(ty[static_cast<std::size_t>(d[static_cast<std::size_t>(j)].second)])];
        int best = 0;
        for (int c = 1; c < n_classes; ++c)
            if (votes[static_cast<std::size_t>(c)] > votes[static_cast<std::size_t>(best)]) best = c;
        out.push_back(best);
    }
    return out;
}

SynthSpec probe_spec() {
    SynthSpec s;
    s.domain_name = "probe";
    s.seed = 5;
    s.n_samples = 400;
    s.n_test = 200;
    s.drift_layer_profile = tapered_profile(1.0);
    s.class_separation = 2.0;
    return s;
}

ProbeConfig small_config() {
    ProbeConfig c;
    c.subset_sizes = {100, 200};
    c.seeds = {0, 1, 2};
    return c;
}

} // namespace

TEST(Stratified, EvenSplit) {
    std::vector<std::size_t> counts{500, 500};
    EXPECT_EQ(stratified_quotas(counts, 250), (std::vector<std::size_t>{125, 125}));
}

TEST(Stratified, LargestRemainder) {
    std::vector<std::size_t> counts{70, 20, 10};
    EXPECT_EQ(stratified_quotas(counts, 10), (std::vector<std::size_t>{7, 2, 1}));
    // equal remainders go to the lower class index
    std::vector<std::size_t> thirds{3, 3, 3};
    EXPECT_EQ(stratified_quotas(thirds, 4), (std::vector<std::size_t>{2, 1, 1}));
}

TEST(Stratified, EveryClassGetsOne) {
    std::vector<std::size_t> counts{98, 1, 1};
    EXPECT_EQ(stratified_quotas(counts, 10), (std::vector<std::size_t>{8, 1, 1}));
}

TEST(Stratified, QuotasSumToSize) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> cnt(1, 300);
    for (int t = 0; t < 200; ++t) {
        std::vector<std::size_t> counts(2 + t % 6);
        for (auto& c : counts) c = cnt(rng);
        const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
        const std::size_t size = counts.size() + rng() % (total - counts.size() + 1);
        auto q = stratified_quotas(counts, size);
        EXPECT_EQ(std::accumulate(q.begin(), q.end(), std::size_t{0}), size);
        for (std::size_t c = 0; c < q.size(); ++c) {
            EXPECT_GE(q[c], 1u);
            EXPECT_LE(q[c], counts[c]);
        }
    }
}

TEST(Stratified, Errors) {
    std::vector<std::size_t> counts{5, 5};
    EXPECT_THROW(stratified_quotas(counts, 11), ValidationError);
    EXPECT_THROW(stratified_quotas(counts, 1), ValidationError);
    std::vector<std::size_t> empty_class{5, 0};
    EXPECT_THROW(stratified_quotas(empty_class, 3), ValidationError);
}

TEST(Stratified, SubsetDeterministicAndSeedDependent) {
    std::vector<int> labels;
    for (int i = 0; i < 300; ++i) labels.push_back(i % 3);
    auto a = stratified_subset(labels, 3, 60, 9);
    auto b = stratified_subset(labels, 3, 60, 9);
    auto c = stratified_subset(labels, 3, 60, 10);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
    EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 60u);
    std::vector<int> per(3);
    for (auto i : a) ++per[static_cast<std::size_t>(labels[i])];
    EXPECT_EQ(per, (std::vector<int>{20, 20, 20}));
}

TEST(Logistic, SeparableBlobsNearPerfect) {
    std::mt19937_64 rng(21);
    auto train = make_blobs(rng, 34, 3, 8, 5.0);
    auto test = make_blobs(rng, 300, 3, 8, 5.0);
    auto model = train_logistic(train.x, train.y, 3);
    EXPECT_GE(accuracy(model.predict(test.x), test.y), 0.99);
}

TEST(Logistic, SingleClassRejected) {
    Matrix x = Matrix::Random(5, 2);
    std::vector<int> y(5, 1);
    try {
        (void)train_logistic(x, y, 3);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("single class"), std::string::npos);
    }
}

TEST(Logistic, GradientMatchesCentralDifferences) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g;
    Matrix x(20, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    std::vector<int> y;
    for (int i = 0; i < 20; ++i) y.push_back(i % 3);
    Matrix params(3, 6);
    for (Eigen::Index i = 0; i < params.size(); ++i) params.data()[i] = 0.5 * g(rng);
    const double l2 = 0.7;
    auto analytic = logistic_objective(params, x, y, l2).gradient;
    const double eps = 1e-5;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        Matrix p = params, m = params;
        p.data()[i] += eps;
        m.data()[i] -= eps;
        const double fd = (logistic_objective(p, x, y, l2).loss - logistic_objective(m, x, y, l2).loss) / (2 * eps);
        worst = std::max(worst, std::abs(fd - analytic.data()[i]));
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(Logistic, ObjectiveNeverIncreases) {
    std::mt19937_64 rng(4);
    auto b = make_blobs(rng, 30, 4, 6, 1.0);
    auto model = train_logistic(b.x, b.y, 4);
    ASSERT_GE(model.loss_history.size(), 2u);
    for (std::size_t i = 1; i < model.loss_history.size(); ++i)
        EXPECT_LE(model.loss_history[i], model.loss_history[i - 1]);
    EXPECT_LT(model.gradient_norm, 1e-6);
}

TEST(Logistic, Reproducible) {
    std::mt19937_64 rng(4);
    auto b = make_blobs(rng, 30, 4, 6, 1.0);
    auto m1 = train_logistic(b.x, b.y, 4);
    auto m2 = train_logistic(b.x, b.y, 4);
    EXPECT_EQ(m1.weights, m2.weights);
    EXPECT_EQ(m1.bias, m2.bias);
}

TEST(Knn, KOneReturnsOwnLabel) {
    std::mt19937_64 rng(2);
    auto b = make_blobs(rng, 10, 3, 4, 0.5);
    EXPECT_EQ(knn_classify(b.x, b.y, b.x, 1, KnnMetric::euclidean, 3), b.y);
}

TEST(Knn, VoteTieGoesToLowerClass) {
    // the two class-1 points are nearer, but a 2-2 vote resolves to class 0 ("a")
    Matrix tx(4, 1);
    tx << 3.0, 4.0, 1.0, 2.0;
    std::vector<int> ty{0, 0, 1, 1};
    Matrix q(1, 1);
    q << 0.0;
    EXPECT_EQ(knn_classify(tx, ty, q, 4, KnnMetric::euclidean, 2), std::vector<int>{0});
    EXPECT_EQ(knn_classify(tx, ty, q, 2, KnnMetric::euclidean, 2), std::vector<int>{1});
}

TEST(Knn, MatchesBruteForce) {
    std::mt19937_64 rng(17);
    for (auto metric : {KnnMetric::cosine, KnnMetric::euclidean}) {
        auto train = make_blobs(rng, 10, 3, 4, 1.0);
        auto test = make_blobs(rng, 10, 3, 4, 1.0);
        for (int k : {1, 3, 5, 7})
            EXPECT_EQ(knn_classify(train.x, train.y, test.x, k, metric, 3),
                      brute_knn(train.x, train.y, test.x, k, metric, 3))
                << to_string(metric) << " k=" << k;
    }
}

TEST(Knn, SeparableBlobsNearPerfect) {
    std::mt19937_64 rng(22);
    auto train = make_blobs(rng, 50, 4, 8, 6.0);
    auto test = make_blobs(rng, 250, 4, 8, 6.0);
    EXPECT_GE(accuracy(knn_classify(train.x, train.y, test.x, 5, KnnMetric::cosine, 4), test.y), 0.99);
}

TEST(Knn, InvalidK) {
    Matrix x = Matrix::Ones(3, 2);
    std::vector<int> y{0, 1, 0};
    EXPECT_THROW(knn_classify(x, y, x, 0, KnnMetric::cosine, 2), ValidationError);
    EXPECT_THROW(knn_classify(x, y, x, 4, KnnMetric::cosine, 2), ValidationError);
}

TEST(Evaluate, AccuracyAndMacroF1) {
    std::vector<int> truth{0, 0, 1, 1}, pred{0, 0, 1, 0};
    auto s = evaluate(pred, truth, 2);
    EXPECT_DOUBLE_EQ(s.accuracy, 0.75);
    EXPECT_NEAR(s.macro_f1, (0.8 + 2.0 / 3.0) / 2.0, 1e-15);
    EXPECT_NEAR(s.macro_f1, 0.7333, 1e-4);
}

TEST(Evaluate, NeverPredictedClassScoresZero) {
    std::vector<int> truth{0, 1, 2}, pred{0, 1, 1};
    auto s = evaluate(pred, truth, 3);
    EXPECT_NEAR(s.macro_f1, (1.0 + 2.0 / 3.0 + 0.0) / 3.0, 1e-15);
    EXPECT_THROW(evaluate(std::vector<int>{0}, std::vector<int>{0, 1}, 2), ValidationError);
}

TEST(Protocol, FineTunedSeparationHelps) {
    auto d = generate_synthetic_domain(probe_spec());
    auto res = run_scarce_protocol(d.train, d.test, small_config());
    ASSERT_FALSE(res.unlabeled);
    EXPECT_EQ(res.outcomes.size(), 2u * 2u * 3u * 2u);
    double base = 0, ft = 0;
    for (const auto& o : res.outcomes) (o.model_tag == "ft" ? ft : base) += o.macro_f1;
    EXPECT_GT(ft, base);
}

TEST(Protocol, OutcomeOrderIsFixed) {
    auto d = generate_synthetic_domain(probe_spec());
    auto res = run_scarce_protocol(d.train, d.test, small_config());
    const auto& o = res.outcomes;
    EXPECT_EQ(o[0].classifier, ClassifierKind::logistic);
    EXPECT_EQ(o[0].model_tag, "base");
    EXPECT_EQ(o[1].model_tag, "ft");
    EXPECT_EQ(o[0].subset_size, 100);
    EXPECT_EQ(o[2].seed, 1);
    EXPECT_EQ(o.back().classifier, ClassifierKind::knn);
    EXPECT_EQ(o.back().subset_size, 200);
    EXPECT_EQ(o.back().domain, "probe");
}

TEST(Protocol, UnlabeledMarked) {
    auto d = generate_synthetic_domain(probe_spec());
    d.train.labels.reset();
    auto res = run_scarce_protocol(d.train, d.test, small_config());
    EXPECT_TRUE(res.unlabeled);
    EXPECT_TRUE(res.outcomes.empty());
}

TEST(Protocol, IdenticalStacksGiveIdenticalScores) {
    auto spec = probe_spec();
    spec.drift_layer_profile = {};
    spec.class_separation = 1.0;
    auto d = generate_synthetic_domain(spec);
    auto res = run_scarce_protocol(d.train, d.test, small_config());
    for (std::size_t i = 0; i < res.outcomes.size(); i += 2) {
        EXPECT_EQ(res.outcomes[i].accuracy, res.outcomes[i + 1].accuracy);
        EXPECT_EQ(res.outcomes[i].macro_f1, res.outcomes[i + 1].macro_f1);
    }
}

TEST(Protocol, JobsDoNotChangeResults) {
    auto d = generate_synthetic_domain(probe_spec());
    auto serial = run_scarce_protocol(d.train, d.test, small_config(), 1);
    auto again = run_scarce_protocol(d.train, d.test, small_config(), 1);
    auto par = run_scarce_protocol(d.train, d.test, small_config(), 8);
    EXPECT_EQ(serial.outcomes, again.outcomes);
    EXPECT_EQ(serial.outcomes, par.outcomes);
}

TEST(Protocol, ProbeTestRowsDisjointFromTrain) {
    auto d = generate_synthetic_domain(probe_spec());
    std::set<std::string> train(d.train.sample_ids().begin(), d.train.sample_ids().end());
    for (const auto& id : d.test.sample_ids()) EXPECT_EQ(train.count(id), 0u) << id;
}

TEST(Protocol, RowsOutsideSubsetNeverTouched) {
    std::mt19937_64 rng(31);
    auto train = make_blobs(rng, 40, 3, 5, 2.0);
    auto test = make_blobs(rng, 40, 3, 5, 2.0);
    ProbeConfig cfg;
    auto rows = stratified_subset(train.y, 3, 30, 4);
    Matrix poisoned = train.x;
    std::vector<bool> keep(static_cast<std::size_t>(train.x.rows()));
    for (auto r : rows) keep[r] = true;
    for (Eigen::Index i = 0; i < poisoned.rows(); ++i)
        if (!keep[static_cast<std::size_t>(i)]) poisoned.row(i).setConstant(1e6);
    for (auto kind : {ClassifierKind::logistic, ClassifierKind::knn}) {
        auto a = run_probe_cell(train.x, train.y, test.x, test.y, 3, kind, 30, 4, cfg);
        auto b = run_probe_cell(poisoned, train.y, test.x, test.y, 3, kind, 30, 4, cfg);
        EXPECT_EQ(a, b) << to_string(kind);
    }
}

TEST(Protocol, OutcomesCsvRoundTrip) {
    auto d = generate_synthetic_domain(probe_spec());
    auto res = run_scarce_protocol(d.train, d.test, small_config());
    auto path = std::filesystem::temp_directory_path() / ("drift_outcomes_" + std::to_string(::getpid()) + ".csv");
    detail::write_text_file(path.string(), outcomes_csv(res.outcomes, {"note"}));
    auto back = read_outcomes(path.string());
    std::filesystem::remove(path);
    EXPECT_EQ(back, res.outcomes);
}

TEST(ProbeConfigJson, RoundTripAndValidation) {
    ProbeConfig c;
    c.knn_k = 3;
    c.knn_metric = KnnMetric::euclidean;
    c.seeds = {7};
    auto back = probe_config_from_json(to_json(c));
    EXPECT_EQ(back.knn_k, 3);
    EXPECT_EQ(back.knn_metric, KnnMetric::euclidean);
    EXPECT_EQ(back.seeds, std::vector<std::int64_t>{7});
    EXPECT_THROW(probe_config_from_json(nlohmann::json{{"classifiers", {"svm"}}}), ValidationError);
    EXPECT_THROW(probe_config_from_json(nlohmann::json{{"seeds", nlohmann::json::array()}}), ValidationError);
}
