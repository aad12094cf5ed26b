#ifndef DRIFT_LOSS_DYNAMICS_HPP
#define DRIFT_LOSS_DYNAMICS_HPP

// Loss-curve features of a fine-tuning run: relative improvements and a fit of
// L(D) = C + B·D^(−β) with D the number of training tokens seen.

#include "drift/corpus_io.hpp"
#include "drift/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace drift {

enum class LossSeries { train, eval };

struct RelativeImprovement {
    double value = 0.0;
    double start_loss = 0.0;
    double end_loss = 0.0;
    int window = 1;
};

/// (start − end)/start with start/end the means of the first and last `window` values.
/// Short series shrink the window to ⌊n/2⌋ (at least 1).
inline RelativeImprovement relative_improvement(std::span<const double> losses, int window = 5) {
    if (losses.size() < 2) throw ValidationError("relative_improvement: need at least 2 points");
    const int n = static_cast<int>(losses.size());
    int w = std::max(1, window);
    if (n < 2 * w) w = std::max(1, n / 2);
    RelativeImprovement out;
    out.window = w;
    for (int i = 0; i < w; ++i) {
        out.start_loss += losses[static_cast<std::size_t>(i)];
        out.end_loss += losses[static_cast<std::size_t>(n - w + i)];
    }
    out.start_loss /= w;
    out.end_loss /= w;
    if (out.start_loss == 0.0) throw DegenerateInput("relative_improvement: start loss is 0");
    out.value = (out.start_loss - out.end_loss) / out.start_loss;
    return out;
}

namespace detail {

inline std::vector<double> series_values(const LossCurve& curve, LossSeries series, double max_epoch) {
    std::vector<double> v;
    for (const auto& p : curve.points) {
        if (p.epoch > max_epoch) continue;
        if (series == LossSeries::train) v.push_back(p.train_loss);
        else if (p.eval_loss) v.push_back(*p.eval_loss);
    }
    return v;
}

} // namespace detail

inline RelativeImprovement relative_improvement(const LossCurve& curve, int window = 5,
                                                LossSeries series = LossSeries::train) {
    auto v = detail::series_values(curve, series, std::numeric_limits<double>::infinity());
    return relative_improvement(v, window);
}

/// Relative improvement restricted to points with epoch ≤ 1.
inline RelativeImprovement first_epoch_relative_improvement(const LossCurve& curve, int window = 5,
                                                            LossSeries series = LossSeries::train) {
    auto v = detail::series_values(curve, series, 1.0);
    if (v.size() < 2)
        throw ValidationError("first_epoch_relative_improvement: fewer than 2 points with epoch <= 1");
    return relative_improvement(v, window);
}

struct PowerLawFit {
    double c_asymptote = 0.0;
    double b_coefficient = 0.0;
    double beta = 0.0; // 0 together with no_decay when the fitted B is 0
    double sse = 0.0;
    int n_points = 0;
    bool no_decay = false;

    [[nodiscard]] double predict(double tokens) const {
        return no_decay ? c_asymptote : c_asymptote + b_coefficient * std::pow(tokens, -beta);
    }
};

struct PowerLawOptions {
    double beta_min = 0.01;
    double beta_max = 2.0;
    int grid_points = 200;
    double beta_tol = 1e-4; // final golden-section bracket width
};

struct InnerFit {
    double c = 0.0;
    double b = 0.0;
    double sse = 0.0;
};

/// Least squares for (C, B) ≥ 0 at fixed β.
inline InnerFit power_law_inner_fit(std::span<const double> tokens, std::span<const double> loss, double beta) {
    const std::size_t n = tokens.size();
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::pow(tokens[i], -beta);
    auto sse_of = [&](double c, double b) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = loss[i] - c - b * x[i];
            s += r * r;
        }
        return s;
    };
    double mx = 0.0, ml = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        ml += loss[i];
    }
    mx /= static_cast<double>(n);
    ml /= static_cast<double>(n);
    double sxx = 0.0, sxl = 0.0, sx2 = 0.0, sxl0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxl += (x[i] - mx) * (loss[i] - ml);
        sx2 += x[i] * x[i];
        sxl0 += x[i] * loss[i];
    }
    if (sxx > 0.0) {
        const double b = sxl / sxx;
        const double c = ml - b * mx;
        if (b >= 0.0 && c >= 0.0) return {c, b, sse_of(c, b)};
    }
    InnerFit flat{std::max(0.0, ml), 0.0, 0.0};
    flat.sse = sse_of(flat.c, 0.0);
    InnerFit through_origin{0.0, sx2 > 0.0 ? std::max(0.0, sxl0 / sx2) : 0.0, 0.0};
    through_origin.sse = sse_of(0.0, through_origin.b);
    return through_origin.sse < flat.sse ? through_origin : flat;
}

/// Fits L(D) = C + B·D^(−β) on the points with D > 0: log-spaced β grid with closed-form
/// (C, B) per β, then golden-section refinement around the best grid point.
inline PowerLawFit fit_power_law(std::span<const double> tokens, std::span<const double> loss,
                                 const PowerLawOptions& opt = {}) {
    if (tokens.size() != loss.size()) throw ValidationError("fit_power_law: length mismatch");
    std::vector<double> d, l;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] > 0.0) {
            d.push_back(tokens[i]);
            l.push_back(loss[i]);
        }
    }
    if (d.size() < 4) throw ValidationError("fit_power_law: need at least 4 points with tokens_seen > 0");
    if (std::all_of(d.begin(), d.end(), [&](double v) { return v == d.front(); }))
        throw DegenerateInput("fit_power_law: all tokens_seen values are equal");

    const double lo = std::log(opt.beta_min);
    const double hi = std::log(opt.beta_max);
    std::vector<double> grid(static_cast<std::size_t>(opt.grid_points));
    for (int i = 0; i < opt.grid_points; ++i)
        grid[static_cast<std::size_t>(i)] = std::exp(lo + (hi - lo) * i / (opt.grid_points - 1));
    std::size_t best = 0;
    InnerFit best_fit = power_law_inner_fit(d, l, grid[0]);
    for (std::size_t i = 1; i < grid.size(); ++i) {
        auto f = power_law_inner_fit(d, l, grid[i]);
        if (f.sse < best_fit.sse) {
            best_fit = f;
            best = i;
        }
    }
    double best_beta = grid[best];

    double a = grid[best == 0 ? 0 : best - 1];
    double b = grid[std::min(best + 1, grid.size() - 1)];
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    auto f1 = power_law_inner_fit(d, l, x1);
    auto f2 = power_law_inner_fit(d, l, x2);
    while (b - a > opt.beta_tol) {
        if (f1.sse <= f2.sse) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = power_law_inner_fit(d, l, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = power_law_inner_fit(d, l, x2);
        }
    }
    const double mid = 0.5 * (a + b);
    auto fm = power_law_inner_fit(d, l, mid);
    if (fm.sse < best_fit.sse) {
        best_fit = fm;
        best_beta = mid;
    }

    PowerLawFit out;
    out.c_asymptote = best_fit.c;
    out.b_coefficient = best_fit.b;
    out.beta = best_beta;
    out.sse = best_fit.sse;
    out.n_points = static_cast<int>(d.size());
    if (best_fit.b <= 0.0) {
        out.no_decay = true;
        out.beta = 0.0;
        out.b_coefficient = 0.0;
    }
    return out;
}

inline PowerLawFit fit_power_law(const LossCurve& curve, LossSeries series = LossSeries::train,
                                 const PowerLawOptions& opt = {}) {
    std::vector<double> d, l;
    for (const auto& p : curve.points) {
        if (series == LossSeries::train) {
            l.push_back(p.train_loss);
        } else if (p.eval_loss) {
            l.push_back(*p.eval_loss);
        } else {
            continue;
        }
        d.push_back(static_cast<double>(p.tokens_seen));
    }
    return fit_power_law(d, l, opt);
}

struct LossFeatures {
    double relative_improvement = 0.0;
    double first_epoch_relative_improvement = 0.0;
    double start_loss = 0.0;
    double end_loss = 0.0;
    std::optional<double> relative_improvement_eval;
    std::optional<double> first_epoch_relative_improvement_eval;
    std::optional<PowerLawFit> fit;
    std::vector<std::string> notes; // why optional parts are missing
};

/// All loss features of one run. Parts that cannot be computed (no eval loss, too few
/// first-epoch points, fit failure) are left empty with a note, except the train-loss
/// relative improvement which is required.
inline LossFeatures loss_features(const LossCurve& curve, int window = 5) {
    LossFeatures f;
    auto ri = relative_improvement(curve, window);
    f.relative_improvement = ri.value;
    f.start_loss = ri.start_loss;
    f.end_loss = ri.end_loss;
    f.first_epoch_relative_improvement = first_epoch_relative_improvement(curve, window).value;
    try {
        f.relative_improvement_eval = relative_improvement(curve, window, LossSeries::eval).value;
        f.first_epoch_relative_improvement_eval =
            first_epoch_relative_improvement(curve, window, LossSeries::eval).value;
    } catch (const Error& e) {
        f.notes.push_back(std::string("eval: ") + e.what());
    }
    try {
        f.fit = fit_power_law(curve);
    } catch (const Error& e) {
        f.notes.push_back(std::string("fit: ") + e.what());
    }
    return f;
}

inline nlohmann::json to_json(const PowerLawFit& fit) {
    return {{"c_asymptote", fit.c_asymptote}, {"b_coefficient", fit.b_coefficient}, {"beta", fit.beta},
            {"sse", fit.sse},                 {"n_points", fit.n_points},           {"no_decay", fit.no_decay}};
}

inline nlohmann::json to_json(const LossFeatures& f) {
    nlohmann::json j;
    j["relative_improvement"] = f.relative_improvement;
    j["first_epoch_relative_improvement"] = f.first_epoch_relative_improvement;
    j["start_loss"] = f.start_loss;
    j["end_loss"] = f.end_loss;
    j["relative_improvement_eval"] = f.relative_improvement_eval ? nlohmann::json(*f.relative_improvement_eval) : nlohmann::json(nullptr);
    j["first_epoch_relative_improvement_eval"] =
        f.first_epoch_relative_improvement_eval ? nlohmann::json(*f.first_epoch_relative_improvement_eval) : nlohmann::json(nullptr);
    j["fit"] = f.fit ? to_json(*f.fit) : nlohmann::json(nullptr);
    j["notes"] = f.notes;
    return j;
}

} // namespace drift

#endif
