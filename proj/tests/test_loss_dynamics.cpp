#include "drift/loss_dynamics.hpp"
#include "drift/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace drift;

namespace {

LossCurve curve_of(const std::vector<double>& epochs, const std::vector<double>& train,
                   const std::vector<std::optional<double>>& eval = {}) {
    LossCurve c;
    for (std::size_t i = 0; i < train.size(); ++i)
        c.points.push_back({static_cast<int>(i + 1), epochs[i], static_cast<long long>(1000 * (i + 1)), train[i],
                            eval.empty() ? std::nullopt : eval[i]});
    return c;
}

// 50 log-spaced token counts between 1e2 and 1e6.
std::vector<double> token_grid() {
    std::vector<double> d;
    for (int i = 0; i < 50; ++i) d.push_back(std::pow(10.0, 2.0 + 4.0 * i / 49.0));
    return d;
}

std::vector<double> power_law(const std::vector<double>& d, double c, double b, double beta) {
    std::vector<double> l;
    for (double x : d) l.push_back(c + b * std::pow(x, -beta));
    return l;
}

} // namespace

TEST(RelativeImprovement, WorkedValues) {
    EXPECT_DOUBLE_EQ(relative_improvement(std::vector<double>{4.0, 1.0}, 1).value, 0.75);
    EXPECT_DOUBLE_EQ(relative_improvement(std::vector<double>{2.0, 3.0}, 1).value, -0.5);
    EXPECT_DOUBLE_EQ(relative_improvement(std::vector<double>{3.0, 3.0, 3.0, 3.0}, 2).value, 0.0);
}

TEST(RelativeImprovement, WindowAveragesEnds) {
    std::vector<double> v{5, 3, 9, 9, 9, 2, 0};
    auto r = relative_improvement(v, 2);
    EXPECT_EQ(r.window, 2);
    EXPECT_DOUBLE_EQ(r.start_loss, 4.0);
    EXPECT_DOUBLE_EQ(r.end_loss, 1.0);
    EXPECT_DOUBLE_EQ(r.value, 0.75);
}

TEST(RelativeImprovement, ShortSeriesShrinksWindow) {
    auto r = relative_improvement(std::vector<double>{4, 4, 1}, 5);
    EXPECT_EQ(r.window, 1);
    EXPECT_DOUBLE_EQ(r.value, 0.75);
}

TEST(RelativeImprovement, Errors) {
    EXPECT_THROW(relative_improvement(std::vector<double>{1.0}), ValidationError);
    EXPECT_THROW(relative_improvement(std::vector<double>{0.0, 1.0}, 1), DegenerateInput);
}

TEST(RelativeImprovement, ScaleInvariant) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.5, 10.0);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> v(12), w(12);
        const double k = u(rng);
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = u(rng);
            w[i] = k * v[i];
        }
        EXPECT_NEAR(relative_improvement(v).value, relative_improvement(w).value, 1e-12);
    }
}

TEST(RelativeImprovement, FirstEpochOnly) {
    auto c = curve_of({0.5, 1.0, 1.5, 2.0}, {4, 3, 2, 1});
    EXPECT_DOUBLE_EQ(first_epoch_relative_improvement(c, 1).value, 0.25);
    EXPECT_DOUBLE_EQ(relative_improvement(c, 1).value, 0.75);
    auto late = curve_of({1.5, 2.0, 2.5}, {4, 3, 2});
    EXPECT_THROW(first_epoch_relative_improvement(late, 1), ValidationError);
}

TEST(RelativeImprovement, EvalSeriesSkipsMissing) {
    auto c = curve_of({0.5, 1.0, 1.5, 2.0}, {4, 3, 2, 1}, {10.0, std::nullopt, std::nullopt, 5.0});
    EXPECT_DOUBLE_EQ(relative_improvement(c, 1, LossSeries::eval).value, 0.5);
}

TEST(PowerLaw, NoiselessRecovery) {
    auto d = token_grid();
    auto fit = fit_power_law(d, power_law(d, 2.0, 5.0, 0.5));
    EXPECT_FALSE(fit.no_decay);
    EXPECT_NEAR(fit.c_asymptote, 2.0, 2e-3);
    EXPECT_NEAR(fit.b_coefficient, 5.0, 5e-3);
    EXPECT_NEAR(fit.beta, 0.5, 5e-4);
    EXPECT_EQ(fit.n_points, 50);
}

TEST(PowerLaw, NoisyBetaMostlyWithinTolerance) {
    auto d = token_grid();
    int hits = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(trial));
        std::normal_distribution<double> noise(0.0, 0.01);
        auto l = power_law(d, 2.0, 5.0, 0.5);
        for (auto& v : l) v += noise(rng);
        if (std::abs(fit_power_law(d, l).beta - 0.5) <= 0.05) ++hits;
    }
    EXPECT_GE(hits, 18);
}

TEST(PowerLaw, ConstantCurveHasNoDecay) {
    auto d = token_grid();
    std::vector<double> l(d.size(), 3.0);
    auto fit = fit_power_law(d, l);
    EXPECT_TRUE(fit.no_decay);
    EXPECT_EQ(fit.beta, 0.0);
    EXPECT_EQ(fit.b_coefficient, 0.0);
    EXPECT_NEAR(fit.c_asymptote, 3.0, 1e-12);
}

TEST(PowerLaw, RisingCurveHasNoDecay) {
    auto d = token_grid();
    std::vector<double> l;
    for (double x : d) l.push_back(1.0 + 0.1 * std::log(x));
    auto fit = fit_power_law(d, l);
    EXPECT_TRUE(fit.no_decay);
    EXPECT_GE(fit.c_asymptote, 0.0);
}

TEST(PowerLaw, NoGridPointBeatsTheFit) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> noise(0.0, 0.05);
    auto d = token_grid();
    auto l = power_law(d, 1.0, 3.0, 0.3);
    for (auto& v : l) v += noise(rng);
    auto fit = fit_power_law(d, l);
    for (int i = 0; i < 200; ++i) {
        const double beta = std::exp(std::log(0.01) + (std::log(2.0) - std::log(0.01)) * i / 199.0);
        EXPECT_LE(fit.sse, power_law_inner_fit(d, l, beta).sse + 1e-12) << beta;
    }
}

TEST(PowerLaw, InnerFitKeepsCoefficientsNonNegative) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto d = token_grid();
    for (int t = 0; t < 100; ++t) {
        std::vector<double> l;
        for (std::size_t i = 0; i < d.size(); ++i) l.push_back(u(rng));
        auto f = power_law_inner_fit(d, l, 0.4);
        EXPECT_GE(f.c, 0.0);
        EXPECT_GE(f.b, 0.0);
    }
}

TEST(PowerLaw, Errors) {
    std::vector<double> d{1, 2, 3}, l{3, 2, 1};
    EXPECT_THROW(fit_power_law(d, l), ValidationError);
    std::vector<double> same(5, 7.0), l5{5, 4, 3, 2, 1};
    EXPECT_THROW(fit_power_law(same, l5), DegenerateInput);
    std::vector<double> zeros{0, 0, 0, 1, 2, 3}, l6{6, 5, 4, 3, 2, 1};
    EXPECT_THROW(fit_power_law(zeros, l6), ValidationError); // only 3 points with D > 0
}

TEST(LossFeatures, SyntheticCurve) {
    SynthSpec spec;
    spec.loss_noise = 0.0;
    auto f = loss_features(detail::synth_loss_curve(spec));
    EXPECT_GT(f.relative_improvement, 0.0);
    EXPECT_GT(f.first_epoch_relative_improvement, 0.0);
    ASSERT_TRUE(f.fit);
    EXPECT_NEAR(f.fit->beta, spec.loss_beta, 1e-3);
    auto j = to_json(f);
    EXPECT_TRUE(j.contains("fit"));
    EXPECT_EQ(j["fit"]["no_decay"], false);
}

TEST(LossFeatures, MissingEvalNoted) {
    auto c = curve_of({0.25, 0.5, 0.75, 1.0, 1.5, 2.0}, {6, 5, 4, 3, 2, 1});
    auto f = loss_features(c, 1);
    EXPECT_FALSE(f.relative_improvement_eval);
    EXPECT_FALSE(f.notes.empty());
    EXPECT_TRUE(to_json(f)["relative_improvement_eval"].is_null());
}
