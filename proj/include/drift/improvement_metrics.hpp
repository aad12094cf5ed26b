#ifndef DRIFT_IMPROVEMENT_METRICS_HPP
#define DRIFT_IMPROVEMENT_METRICS_HPP

#include "drift/detail/csv.hpp"
#include "drift/detail/numeric.hpp"
#include "drift/error.hpp"
#include "drift/scarce_classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace drift {

/// Error reduction rate (ft − bl)/(1 − bl): the fraction of the remaining error removed.
/// Undefined (nullopt) when the baseline is already perfect.
inline std::optional<double> err(double bl, double ft) {
    if (!(bl < 1.0)) return std::nullopt;
    return (ft - bl) / (1.0 - bl);
}

struct LogitDelta {
    double value = 0.0;
    bool clamped = false;
};

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// logit(ft) − logit(bl) with both scores clamped into [eps, 1 − eps].
inline LogitDelta logit_delta(double bl, double ft, double eps = 1e-6) {
    const double bl_c = std::clamp(bl, eps, 1.0 - eps);
    const double ft_c = std::clamp(ft, eps, 1.0 - eps);
    return {logit(ft_c) - logit(bl_c), bl_c != bl || ft_c != ft};
}

enum class ScoreMetric { accuracy, macro_f1 };

inline std::string to_string(ScoreMetric m) { return m == ScoreMetric::accuracy ? "accuracy" : "macro_f1"; }

struct ImprovementRow {
    std::string domain;
    ClassifierKind classifier = ClassifierKind::logistic;
    ScoreMetric metric = ScoreMetric::accuracy;
    int subset_size = 0;
    std::optional<double> bl; // seed mean
    std::optional<double> ft;
    std::optional<double> raw_delta;
    std::optional<double> err;
    std::optional<double> logit_delta;
    double bl_sd = 0.0; // across seeds
    double ft_sd = 0.0;
    std::size_t n_seeds = 0;
    std::vector<std::string> flags;

    [[nodiscard]] bool complete() const { return bl && ft; }
    /// Column stem used in the wide target matrix, e.g. "logistic_macro_f1_250".
    [[nodiscard]] std::string target_stem() const {
        return to_string(classifier) + "_" + to_string(metric) + "_" + std::to_string(subset_size);
    }
};

struct ImprovementTable {
    std::vector<ImprovementRow> rows; // sorted by (domain, classifier, metric, size)
};

/// Seed-averages base and ft scores per (domain, classifier, metric, size), then derives
/// raw delta, ERR and logit delta. Rows lacking one side are kept and flagged incomplete.
inline ImprovementTable improvement_table(const std::vector<ClassificationOutcome>& outcomes) {
    using Key = std::tuple<std::string, int, int, int>;
    struct Acc {
        std::vector<double> base, ft;
    };
    std::map<Key, Acc> groups;
    for (const auto& o : outcomes) {
        if (o.model_tag != "base" && o.model_tag != "ft")
            throw ValidationError("improvement_table: unexpected model_tag '" + o.model_tag + "'");
        for (auto metric : {ScoreMetric::accuracy, ScoreMetric::macro_f1}) {
            auto& acc = groups[{o.domain, static_cast<int>(o.classifier), static_cast<int>(metric), o.subset_size}];
            const double v = metric == ScoreMetric::accuracy ? o.accuracy : o.macro_f1;
            (o.model_tag == "base" ? acc.base : acc.ft).push_back(v);
        }
    }
    auto mean_sd = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        return std::pair{m, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
    };
    ImprovementTable table;
    for (const auto& [key, acc] : groups) {
        ImprovementRow row;
        row.domain = std::get<0>(key);
        row.classifier = static_cast<ClassifierKind>(std::get<1>(key));
        row.metric = static_cast<ScoreMetric>(std::get<2>(key));
        row.subset_size = std::get<3>(key);
        if (!acc.base.empty()) std::tie(row.bl, row.bl_sd) = mean_sd(acc.base);
        if (!acc.ft.empty()) std::tie(row.ft, row.ft_sd) = mean_sd(acc.ft);
        row.n_seeds = std::max(acc.base.size(), acc.ft.size());
        if (!row.complete()) {
            row.flags.push_back("incomplete");
        } else {
            row.raw_delta = *row.ft - *row.bl;
            row.err = err(*row.bl, *row.ft);
            if (!row.err) row.flags.push_back("err_undefined");
            auto ld = logit_delta(*row.bl, *row.ft);
            row.logit_delta = ld.value;
            if (ld.clamped) row.flags.push_back("clamped");
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

inline std::string improvement_csv(const ImprovementTable& table, const std::vector<std::string>& comments = {}) {
    std::string out;
    for (const auto& c : comments) out += "# " + c + "\n";
    out += "domain,classifier,metric,size,bl,ft,raw_delta,err,logit_delta,flags,bl_sd,ft_sd,n_seeds\n";
    for (const auto& r : table.rows) {
        std::string flags;
        for (std::size_t i = 0; i < r.flags.size(); ++i) flags += (i ? ";" : "") + r.flags[i];
        out += detail::join_csv({r.domain, to_string(r.classifier), to_string(r.metric), std::to_string(r.subset_size),
                                 detail::format_optional(r.bl), detail::format_optional(r.ft),
                                 detail::format_optional(r.raw_delta), detail::format_optional(r.err),
                                 detail::format_optional(r.logit_delta), flags, detail::format_double(r.bl_sd),
                                 detail::format_double(r.ft_sd), std::to_string(r.n_seeds)}) +
               "\n";
    }
    return out;
}

} // namespace drift

#endif
