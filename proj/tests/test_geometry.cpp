#include "drift/geometry.hpp"
#include "drift/synth.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace drift;

namespace {

Matrix signed_axes(const std::vector<double>& scale) {
    const auto d = static_cast<Eigen::Index>(scale.size());
    Matrix x = Matrix::Zero(2 * d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        x(2 * i, i) = scale[static_cast<std::size_t>(i)];
        x(2 * i + 1, i) = -scale[static_cast<std::size_t>(i)];
    }
    return x;
}

Matrix blobs(const std::vector<Eigen::RowVector2d>& centers, int per, double sd, std::uint64_t seed,
             std::vector<int>& truth) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, sd);
    Matrix x(static_cast<Eigen::Index>(centers.size()) * per, 2);
    truth.clear();
    for (std::size_t c = 0; c < centers.size(); ++c)
        for (int i = 0; i < per; ++i) {
            const auto r = static_cast<Eigen::Index>(c) * per + i;
            x(r, 0) = centers[c](0) + g(rng);
            x(r, 1) = centers[c](1) + g(rng);
            truth.push_back(static_cast<int>(c));
        }
    return x;
}

} // namespace

TEST(EffectiveRank, SignedAxesGiveFullRank) {
    EXPECT_NEAR(effective_rank(signed_axes({1, 1, 1, 1})), 4.0, 1e-12);
}

TEST(EffectiveRank, RankOneCloud) {
    Matrix x(4, 3);
    x << 1, 2, 3, -1, -2, -3, 2, 4, 6, -2, -4, -6;
    EXPECT_NEAR(effective_rank(x), 1.0, 1e-12);
}

TEST(EffectiveRank, SingularValuesTwoOneOne) {
    EXPECT_NEAR(effective_rank(signed_axes({2, 1, 1})), 2.0 * std::sqrt(2.0), 1e-9);
    EXPECT_NEAR(std::log(effective_rank(signed_axes({2, 1, 1}))), 1.03972, 1e-5);
}

TEST(EffectiveRank, BoundsAndInvariance) {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 100; ++t) {
        auto x = oracle::random_matrix(12, 5, rng);
        const double er = effective_rank(x);
        EXPECT_GE(er, 1.0 - 1e-9);
        EXPECT_LE(er, 5.0 + 1e-9);
        auto q = oracle::random_orthogonal(5, rng);
        EXPECT_NEAR(effective_rank(3.5 * x * q), er, 1e-9);
        EXPECT_NEAR(er, oracle::effective_rank(x), 1e-10);
    }
    EXPECT_THROW(effective_rank(Matrix::Ones(4, 3)), DegenerateInput);
}

TEST(PartitionIsotropy, SymmetricAxesGiveOne) {
    EXPECT_NEAR(partition_isotropy(signed_axes({1, 1, 1})), 1.0, 1e-12);
}

TEST(PartitionIsotropy, RepeatedUnitVector) {
    Matrix x(6, 3);
    Eigen::RowVector3d w(1.0, 2.0, 2.0);
    w /= 3.0;
    for (int i = 0; i < 6; ++i) x.row(i) = w;
    EXPECT_NEAR(partition_isotropy(x), std::exp(-2.0), 1e-12);
    EXPECT_NEAR(partition_isotropy(x), 0.13534, 1e-5);
}

TEST(PartitionIsotropy, GaussianCloudMatchesOracle) {
    std::mt19937_64 rng(22);
    auto x = oracle::random_matrix(50, 8, rng);
    const double v = partition_isotropy(x);
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_NEAR(v, oracle::partition_isotropy(x), 1e-10);
}

TEST(PartitionIsotropy, RotationInvariant) {
    std::mt19937_64 rng(23);
    for (int t = 0; t < 100; ++t) {
        auto x = oracle::random_matrix(12, 4, rng);
        auto q = oracle::random_orthogonal(4, rng);
        EXPECT_NEAR(partition_isotropy(x * q), partition_isotropy(x), 1e-9);
    }
}

TEST(PartitionIsotropy, LargeValuesDoNotOverflow) {
    std::mt19937_64 rng(24);
    Matrix x = 800.0 * oracle::random_matrix(20, 3, rng);
    const double v = partition_isotropy(x);
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);
    EXPECT_THROW(partition_isotropy(Matrix::Zero(3, 3)), DegenerateInput);
}

TEST(KMeans, SeparatedBlobsRecovered) {
    std::vector<int> truth;
    auto x = blobs({{0, 0}, {10, 10}}, 30, 0.5, 1, truth);
    auto km = kmeans(x, 2, 42);
    EXPECT_DOUBLE_EQ(ari(km.assignment, truth), 1.0);
}

TEST(KMeans, KEqualsN) {
    std::mt19937_64 rng(25);
    auto x = oracle::random_matrix(7, 2, rng);
    auto km = kmeans(x, 7, 3);
    EXPECT_NEAR(km.inertia, 0.0, 1e-20);
    std::vector<int> sorted = km.assignment;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::unique(sorted.begin(), sorted.end()) - sorted.begin(), 7);
}

TEST(KMeans, DeterministicForSeed) {
    std::mt19937_64 rng(26);
    auto x = oracle::random_matrix(60, 3, rng);
    auto a = kmeans(x, 4, 9);
    auto b = kmeans(x, 4, 9);
    EXPECT_EQ(a.assignment, b.assignment);
    EXPECT_EQ(a.inertia, b.inertia);
    EXPECT_THROW(kmeans(x, 1, 9), ValidationError);
    EXPECT_THROW(kmeans(x, 61, 9), ValidationError);
}

TEST(KMeans, DuplicatePointsStillFillAllClusters) {
    Matrix x = Matrix::Zero(6, 2);
    x(5, 0) = 1.0;
    auto km = kmeans(x, 3, 1);
    std::vector<int> counts(3, 0);
    for (int a : km.assignment) ++counts[static_cast<std::size_t>(a)];
    for (int c : counts) EXPECT_GT(c, 0);
}

TEST(Silhouette, WorkedFourPoints) {
    Matrix x(4, 1);
    x << 0.0, 0.1, 10.0, 10.1;
    std::vector<int> lab{0, 0, 1, 1};
    EXPECT_NEAR(silhouette(x, lab).score, 0.9900, 1e-4);
    EXPECT_NEAR(silhouette(x, lab).score, oracle::silhouette(x, lab), 1e-12);
}

TEST(Silhouette, SingleClusterRejected) {
    Matrix x(4, 1);
    x << 0.0, 0.1, 10.0, 10.1;
    std::vector<int> lab(4, 0);
    EXPECT_THROW(silhouette(x, lab), DegenerateInput);
}

TEST(Silhouette, RandomLabelsNearZero) {
    std::mt19937_64 rng(27);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> lab(0, 2);
    Matrix x = Matrix::NullaryExpr(500, 2, [&] { return u(rng); });
    std::vector<int> a(500);
    for (auto& v : a) v = lab(rng);
    EXPECT_LT(std::abs(silhouette(x, a).score), 0.1);
}

TEST(Silhouette, SubsampleCapIsRecordedAndSeeded) {
    std::mt19937_64 rng(28);
    auto x = oracle::random_matrix(300, 2, rng);
    std::vector<int> a(300);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = x(static_cast<Eigen::Index>(i), 0) > 0 ? 1 : 0;
    auto s1 = silhouette(x, a, 5, 100);
    auto s2 = silhouette(x, a, 5, 100);
    EXPECT_TRUE(s1.subsampled);
    EXPECT_EQ(s1.n_used, 100u);
    EXPECT_EQ(s1.score, s2.score);
    EXPECT_FALSE(silhouette(x, a, 5).subsampled);
}

TEST(Silhouette, SingletonContributesZero) {
    Matrix x(3, 1);
    x << 0.0, 1.0, 5.0;
    std::vector<int> lab{0, 0, 1};
    EXPECT_NEAR(silhouette(x, lab).score, oracle::silhouette(x, lab), 1e-15);
}

TEST(OptimalK, ThreeBlobs) {
    std::vector<int> truth;
    auto x = blobs({{0, 0}, {12, 0}, {6, 10}}, 25, 0.6, 2, truth);
    EXPECT_EQ(optimal_k(x, 1, 2, 8).k, 3);
}

TEST(OptimalK, UnstructuredCloudScoresLow) {
    std::mt19937_64 rng(29);
    auto x = oracle::random_matrix(200, 6, rng);
    auto best = optimal_k(x, 1);
    EXPECT_LT(best.silhouette, 0.2);
    EXPECT_GE(best.k, 2);
}

TEST(OptimalK, TieGoesToSmallestK) {
    std::vector<double> scores{0.5, 0.3, 0.5};
    EXPECT_EQ(first_argmax(scores), 0u);
    Matrix x(3, 1);
    x << 0, 1, 2;
    EXPECT_THROW(optimal_k(x.topRows(2), 1), DegenerateInput);
}

TEST(Ari, Examples) {
    std::vector<int> a{0, 0, 1, 1}, b{1, 1, 0, 0};
    EXPECT_DOUBLE_EQ(ari(a, a), 1.0);
    EXPECT_DOUBLE_EQ(ari(a, b), 1.0);
    std::vector<int> c{0, 0, 1, 1, 2, 2}, d{0, 0, 1, 2, 1, 2};
    EXPECT_NEAR(ari(c, d), oracle::ari(c, d), 1e-15);
    EXPECT_THROW(ari(std::vector<int>{0, 1}, std::vector<int>{0}), ValidationError);
}

TEST(Ari, SymmetricAndPermutationInvariant) {
    std::mt19937_64 rng(30);
    std::uniform_int_distribution<int> lab(0, 3);
    for (int t = 0; t < 100; ++t) {
        std::vector<int> a(12), b(12), pa(12);
        for (auto& v : a) v = lab(rng);
        for (auto& v : b) v = lab(rng);
        for (std::size_t i = 0; i < a.size(); ++i) pa[i] = (a[i] + 2) % 4 + 10;
        EXPECT_NEAR(ari(a, b), ari(b, a), 1e-14);
        EXPECT_NEAR(ari(pa, b), ari(a, b), 1e-14);
        EXPECT_NEAR(ari(a, b), oracle::ari(a, b), 1e-12);
        EXPECT_LE(ari(a, b), 1.0);
    }
}

TEST(Nmi, Examples) {
    std::vector<int> a{0, 1, 2, 0, 1, 2};
    EXPECT_NEAR(nmi(a, a), 1.0, 1e-15);
    std::vector<int> b{0, 0, 1, 1, 1, 2};
    EXPECT_NEAR(nmi(a, b), oracle::nmi(a, b), 1e-12);
    std::vector<int> c(6, 0);
    EXPECT_EQ(nmi(c, c), 1.0);
    EXPECT_EQ(nmi(c, a), 0.0);
}

TEST(Nmi, IndependentLabelingsNearZero) {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> lab(0, 1);
    std::vector<int> a(10000), b(10000);
    for (auto& v : a) v = lab(rng);
    for (auto& v : b) v = lab(rng);
    EXPECT_LT(nmi(a, b), 0.01);
    EXPECT_NEAR(nmi(a, b), nmi(b, a), 1e-15);
}

namespace {

SyntheticDomain geometry_domain(double class_separation, bool labeled = true) {
    SynthSpec spec;
    spec.n_samples = 240;
    spec.n_test = 4;
    spec.dim = 6;
    spec.n_classes = 3;
    spec.base_separation = 4.0;
    spec.drift_layer_profile[kFinalLayer] = class_separation == 1.0 ? 0.0 : 1.0;
    spec.class_separation = class_separation;
    spec.drift_distortion = 0.0;
    spec.labeled = labeled;
    spec.seed = 5;
    return generate_synthetic_domain(spec);
}

} // namespace

TEST(GeometryDeltas, IdenticalCloudsGiveZero) {
    auto d = geometry_domain(1.0);
    auto g = geometry_deltas(d.train.base.final_layer(), d.train.ft.final_layer(), d.train.labels, 3);
    EXPECT_EQ(g.deltas.effective_rank_delta, 0.0);
    EXPECT_EQ(g.deltas.partition_isotropy_delta, 0.0);
    EXPECT_EQ(g.deltas.silhouette_delta, 0.0);
    EXPECT_EQ(g.deltas.ari_delta, 0.0);
    EXPECT_EQ(g.deltas.nmi_delta, 0.0);
    EXPECT_EQ(g.base.clustering.k_used_for_label_metrics, 3);
}

TEST(GeometryDeltas, LargerClassSeparationRaisesAri) {
    auto d = geometry_domain(3.0);
    auto g = geometry_deltas(d.train.base.final_layer(), d.train.ft.final_layer(), d.train.labels, 3);
    ASSERT_TRUE(g.deltas.ari_delta);
    EXPECT_GT(*g.deltas.ari_delta, 0.0);
}

TEST(GeometryDeltas, MissingLabelsKeepIsotropy) {
    auto d = geometry_domain(3.0, false);
    auto g = geometry_deltas(d.train.base.final_layer(), d.train.ft.final_layer(), std::nullopt, 3);
    EXPECT_FALSE(g.deltas.ari_delta);
    EXPECT_FALSE(g.deltas.nmi_delta);
    EXPECT_NE(g.deltas.effective_rank_delta, 0.0);
}

TEST(GeometryDeltas, AnisotropicStretchLowersEffectiveRank) {
    SynthSpec spec;
    spec.n_samples = 200;
    spec.n_test = 4;
    spec.anisotropy_factor = 10.0;
    spec.drift_layer_profile[kFinalLayer] = 1.0;
    auto d = generate_synthetic_domain(spec);
    auto g = geometry_deltas(d.train.base.final_layer(), d.train.ft.final_layer(), d.train.labels, 1);
    EXPECT_LT(g.deltas.effective_rank_delta, 0.0);
}
