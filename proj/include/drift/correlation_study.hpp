#ifndef DRIFT_CORRELATION_STUDY_HPP
#define DRIFT_CORRELATION_STUDY_HPP

// Cross-domain feature/target line fits and the correlation heatmap bundle
// (signed r, p-values, Benjamini-Hochberg q-values, n used, SVG).

#include "drift/detail/csv.hpp"
#include "drift/detail/numeric.hpp"
#include "drift/error.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace drift {

inline constexpr std::size_t kMinDomainsPerCell = 3;

enum class CellStatus { ok, insufficient_n, degenerate };

inline std::string to_string(CellStatus s) {
    switch (s) {
    case CellStatus::ok: return "ok";
    case CellStatus::insufficient_n: return "insufficient_n";
    case CellStatus::degenerate: return "degenerate";
    }
    return "unknown";
}

struct PairFit {
    double slope = 0.0;
    double intercept = 0.0;
    double pearson_r = 0.0;
    double p_value = 1.0;
    std::size_t n_used = 0;
    CellStatus status = CellStatus::insufficient_n;
    bool perfect = false; // |r| = 1: p is 0
};

/// Two-sided p-value of a Pearson r over n points: t = r·sqrt((n−2)/(1−r²)) under Student-t
/// with n−2 degrees of freedom, via the regularized incomplete beta function.
inline double correlation_p_value(double r, std::size_t n) {
    if (n < 3) throw ValidationError("correlation_p_value: need n >= 3");
    const double df = static_cast<double>(n - 2);
    const double r2 = r * r;
    if (r2 >= 1.0) return 0.0;
    const double t2 = r2 * df / (1.0 - r2);
    // P(|T| > |t|) = I_{df/(df+t²)}(df/2, 1/2)
    return std::clamp(boost::math::ibeta(df / 2.0, 0.5, df / (df + t2)), 0.0, 1.0);
}

/// OLS line y = slope·x + intercept plus Pearson r and its p-value over the pairs where
/// both sides are present.
inline PairFit pairwise_fit(std::span<const std::optional<double>> x, std::span<const std::optional<double>> y) {
    if (x.size() != y.size()) throw ValidationError("pairwise_fit: length mismatch");
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] && y[i] && std::isfinite(*x[i]) && std::isfinite(*y[i])) {
            xs.push_back(*x[i]);
            ys.push_back(*y[i]);
        }
    }
    PairFit fit;
    fit.n_used = xs.size();
    if (fit.n_used < kMinDomainsPerCell) {
        fit.status = CellStatus::insufficient_n;
        return fit;
    }
    const double n = static_cast<double>(fit.n_used);
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        fit.status = CellStatus::degenerate;
        return fit;
    }
    fit.status = CellStatus::ok;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.pearson_r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    if (1.0 - std::abs(fit.pearson_r) < 1e-12) {
        fit.perfect = true;
        fit.p_value = 0.0;
    } else {
        fit.p_value = correlation_p_value(fit.pearson_r, fit.n_used);
    }
    return fit;
}

inline PairFit pairwise_fit(std::span<const double> x, std::span<const double> y) {
    std::vector<std::optional<double>> xo(x.begin(), x.end()), yo(y.begin(), y.end());
    return pairwise_fit(xo, yo);
}

/// Benjamini-Hochberg adjusted q-values; empty entries are skipped and stay empty.
inline std::vector<std::optional<double>> benjamini_hochberg(std::span<const std::optional<double>> p) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i]) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return *p[a] < *p[b]; });
    std::vector<std::optional<double>> q(p.size());
    const double m = static_cast<double>(idx.size());
    double running = 1.0;
    for (std::size_t k = idx.size(); k-- > 0;) {
        running = std::min(running, *p[idx[k]] * m / static_cast<double>(k + 1));
        q[idx[k]] = std::min(1.0, running);
    }
    return q;
}

/// Per-domain named values (features or targets).
struct DomainFeatureRow {
    std::string domain;
    std::map<std::string, std::optional<double>> values;
};

/// Domains x named columns, both sorted by name. Missing values are empty.
struct NamedMatrix {
    std::vector<std::string> domains;
    std::vector<std::string> names;
    std::vector<std::vector<std::optional<double>>> values; // [domain][name]

    [[nodiscard]] std::vector<std::optional<double>> column(std::size_t j) const {
        std::vector<std::optional<double>> col;
        col.reserve(values.size());
        for (const auto& row : values) col.push_back(row[j]);
        return col;
    }
    /// Rows reordered to `order`; domains absent here become all-missing rows.
    [[nodiscard]] NamedMatrix aligned_to(const std::vector<std::string>& order) const {
        NamedMatrix out;
        out.domains = order;
        out.names = names;
        for (const auto& d : order) {
            auto it = std::find(domains.begin(), domains.end(), d);
            out.values.push_back(it == domains.end() ? std::vector<std::optional<double>>(names.size())
                                                     : values[static_cast<std::size_t>(it - domains.begin())]);
        }
        return out;
    }
};

inline NamedMatrix assemble_feature_matrix(const std::vector<DomainFeatureRow>& rows, std::size_t min_domains = 3) {
    if (rows.size() < min_domains)
        throw ValidationError("assemble_feature_matrix: need >= " + std::to_string(min_domains) + " domains, got " +
                              std::to_string(rows.size()));
    std::map<std::string, const DomainFeatureRow*> by_domain;
    std::set<std::string> names;
    for (const auto& r : rows) {
        if (!by_domain.emplace(r.domain, &r).second)
            throw ValidationError("assemble_feature_matrix: duplicate domain '" + r.domain + "'");
        for (const auto& [name, v] : r.values) names.insert(name);
    }
    NamedMatrix m;
    m.names.assign(names.begin(), names.end());
    for (const auto& [domain, row] : by_domain) {
        m.domains.push_back(domain);
        std::vector<std::optional<double>> vals;
        vals.reserve(m.names.size());
        for (const auto& name : m.names) {
            auto it = row->values.find(name);
            vals.push_back(it == row->values.end() ? std::nullopt : it->second);
        }
        m.values.push_back(std::move(vals));
    }
    return m;
}

inline std::string named_matrix_csv(const NamedMatrix& m, const std::vector<std::string>& comments = {}) {
    std::string out;
    for (const auto& c : comments) out += "# " + c + "\n";
    std::vector<std::string> header{"domain"};
    header.insert(header.end(), m.names.begin(), m.names.end());
    out += detail::join_csv(header) + "\n";
    for (std::size_t i = 0; i < m.domains.size(); ++i) {
        std::vector<std::string> fields{m.domains[i]};
        for (const auto& v : m.values[i]) fields.push_back(detail::format_optional(v));
        out += detail::join_csv(fields) + "\n";
    }
    return out;
}

/// Reads a CSV whose first column is `domain` and whose other columns are named values.
inline std::vector<DomainFeatureRow> read_domain_rows(const std::string& path) {
    auto [header, rows] = detail::read_csv(path);
    if (header.empty() || header[0] != "domain") throw FormatError(path + ": first column must be 'domain'");
    std::vector<DomainFeatureRow> out;
    for (const auto& r : rows) {
        if (r.fields.size() != header.size())
            throw FormatError(path + ":" + std::to_string(r.line) + ": expected " + std::to_string(header.size()) +
                              " fields");
        DomainFeatureRow row;
        row.domain = r.fields[0];
        for (std::size_t j = 1; j < header.size(); ++j) {
            const auto& cell = r.fields[j];
            if (cell.find_first_not_of(" \t") == std::string::npos) {
                row.values[header[j]] = std::nullopt;
                continue;
            }
            auto v = detail::parse_double(cell);
            if (!v) throw FormatError(path + ":" + std::to_string(r.line) + ": unparsable value in column '" + header[j] + "'");
            row.values[header[j]] = *v;
        }
        out.push_back(std::move(row));
    }
    return out;
}

struct HeatmapTable {
    std::vector<std::string> features;
    std::vector<std::string> targets;
    std::vector<PairFit> cells;              // row-major: features x targets
    std::vector<std::optional<double>> q_values; // BH over ok cells

    [[nodiscard]] const PairFit& at(std::size_t f, std::size_t t) const { return cells[f * targets.size() + t]; }
    [[nodiscard]] std::optional<double> q_at(std::size_t f, std::size_t t) const { return q_values[f * targets.size() + t]; }
};

/// One pairwise fit per (feature, target). Target rows are aligned to the feature domains.
inline HeatmapTable build_heatmap(const NamedMatrix& features, const NamedMatrix& targets) {
    auto aligned = targets.aligned_to(features.domains);
    HeatmapTable table;
    table.features = features.names;
    table.targets = targets.names;
    table.cells.reserve(features.names.size() * targets.names.size());
    std::vector<std::vector<std::optional<double>>> tcols;
    for (std::size_t t = 0; t < aligned.names.size(); ++t) tcols.push_back(aligned.column(t));
    for (std::size_t f = 0; f < features.names.size(); ++f) {
        auto fcol = features.column(f);
        for (std::size_t t = 0; t < targets.names.size(); ++t) table.cells.push_back(pairwise_fit(fcol, tcols[t]));
    }
    std::vector<std::optional<double>> p;
    p.reserve(table.cells.size());
    for (const auto& c : table.cells)
        p.push_back(c.status == CellStatus::ok ? std::optional<double>(c.p_value) : std::nullopt);
    table.q_values = benjamini_hochberg(p);
    return table;
}

namespace detail {

inline std::string heatmap_matrix_csv(const HeatmapTable& t, const std::vector<std::string>& comments,
                                      const std::function<std::string(std::size_t, std::size_t)>& cell) {
    std::string out;
    for (const auto& c : comments) out += "# " + c + "\n";
    std::vector<std::string> header{"feature"};
    header.insert(header.end(), t.targets.begin(), t.targets.end());
    out += join_csv(header) + "\n";
    for (std::size_t f = 0; f < t.features.size(); ++f) {
        std::vector<std::string> fields{t.features[f]};
        for (std::size_t j = 0; j < t.targets.size(); ++j) fields.push_back(cell(f, j));
        out += join_csv(fields) + "\n";
    }
    return out;
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out.push_back(c);
        }
    }
    return out;
}

/// Diverging palette: dark blue at −1, white at 0, dark red at +1.
inline std::string diverging_color(double r) {
    r = std::clamp(r, -1.0, 1.0);
    const int dark_red[3] = {103, 0, 31};
    const int dark_blue[3] = {5, 48, 97};
    const int* end = r >= 0 ? dark_red : dark_blue;
    const double a = std::abs(r);
    char buf[8];
    int rgb[3];
    for (int i = 0; i < 3; ++i) rgb[i] = static_cast<int>(std::lround(255.0 + (end[i] - 255.0) * a));
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
    return buf;
}

inline std::string heatmap_svg(const HeatmapTable& t, const std::vector<std::string>& comments) {
    const int cell = 28;
    std::size_t longest_feature = 0, longest_target = 0;
    for (const auto& f : t.features) longest_feature = std::max(longest_feature, f.size());
    for (const auto& g : t.targets) longest_target = std::max(longest_target, g.size());
    const int left = 12 + static_cast<int>(longest_feature) * 7;
    const int top = 12 + static_cast<int>(longest_target) * 7;
    const int width = left + cell * static_cast<int>(t.targets.size()) + 12;
    const int height = top + cell * static_cast<int>(t.features.size()) + 12;
    const bool annotate = t.features.size() <= 30 && t.targets.size() <= 30;
    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    for (const auto& c : comments) svg << "<!-- " << xml_escape(c) << " -->\n";
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
    for (std::size_t j = 0; j < t.targets.size(); ++j) {
        const int x = left + static_cast<int>(j) * cell + cell / 2;
        svg << "<text transform=\"translate(" << x << "," << top - 6 << ") rotate(-90)\">" << xml_escape(t.targets[j])
            << "</text>\n";
    }
    for (std::size_t f = 0; f < t.features.size(); ++f) {
        const int y = top + static_cast<int>(f) * cell;
        svg << "<text x=\"" << left - 6 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\">"
            << xml_escape(t.features[f]) << "</text>\n";
        for (std::size_t j = 0; j < t.targets.size(); ++j) {
            const auto& c = t.at(f, j);
            const int x = left + static_cast<int>(j) * cell;
            const std::string fill = c.status == CellStatus::ok ? diverging_color(c.pearson_r) : "#cccccc";
            svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
                << "\" fill=\"" << fill << "\" stroke=\"#ffffff\"><title>" << xml_escape(t.features[f]) << " / "
                << xml_escape(t.targets[j]) << ": " << to_string(c.status);
            if (c.status == CellStatus::ok) svg << " r=" << format_double(c.pearson_r) << " p=" << format_double(c.p_value);
            svg << "</title></rect>\n";
            if (annotate && c.status == CellStatus::ok) {
                char label[16];
                std::snprintf(label, sizeof(label), "%.2f", c.pearson_r);
                svg << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
                    << "\" text-anchor=\"middle\" font-size=\"9\" fill=\""
                    << (std::abs(c.pearson_r) > 0.6 ? "#ffffff" : "#000000") << "\">" << label << "</text>\n";
            }
        }
    }
    svg << "</svg>\n";
    return svg.str();
}

} // namespace detail

/// Writes signed_r.csv, p_value.csv, q_value.csv, n_used.csv and heatmap.svg into out_dir.
/// Cells that are not ok are left empty in the r/p/q matrices.
inline void emit_heatmap(const HeatmapTable& table, const std::filesystem::path& out_dir,
                         const std::vector<std::string>& comments = {}) {
    if (table.features.empty() || table.targets.empty()) throw ValidationError("emit_heatmap: no cells");
    std::filesystem::create_directories(out_dir);
    auto ok = [&](std::size_t f, std::size_t t) { return table.at(f, t).status == CellStatus::ok; };
    detail::write_text_file((out_dir / "signed_r.csv").string(),
                            detail::heatmap_matrix_csv(table, comments, [&](std::size_t f, std::size_t t) {
                                return ok(f, t) ? detail::format_double(table.at(f, t).pearson_r) : std::string{};
                            }));
    detail::write_text_file((out_dir / "p_value.csv").string(),
                            detail::heatmap_matrix_csv(table, comments, [&](std::size_t f, std::size_t t) {
                                return ok(f, t) ? detail::format_double(table.at(f, t).p_value) : std::string{};
                            }));
    detail::write_text_file((out_dir / "q_value.csv").string(),
                            detail::heatmap_matrix_csv(table, comments, [&](std::size_t f, std::size_t t) {
                                return detail::format_optional(table.q_at(f, t));
                            }));
    detail::write_text_file((out_dir / "n_used.csv").string(),
                            detail::heatmap_matrix_csv(table, comments, [&](std::size_t f, std::size_t t) {
                                return std::to_string(table.at(f, t).n_used);
                            }));
    detail::write_text_file((out_dir / "heatmap.svg").string(), detail::heatmap_svg(table, comments));
}

} // namespace drift

#endif
