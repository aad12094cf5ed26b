#ifndef DRIFT_REPORT_HPP
#define DRIFT_REPORT_HPP

// Markdown digest of a pipeline output directory.

#include "drift/detail/csv.hpp"
#include "drift/detail/numeric.hpp"
#include "drift/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace drift {

struct HeatmapCell {
    std::string feature;
    std::string target;
    double r = 0.0;
    double p = 1.0;
    std::optional<double> q;
    long long n = 0;
};

namespace detail {

struct LabeledGrid {
    std::vector<std::string> cols;
    std::vector<std::string> rows;
    std::vector<std::vector<std::string>> cells;
};

inline LabeledGrid read_grid(const std::filesystem::path& path) {
    auto [header, rows] = read_csv(path.string());
    if (header.size() < 2 || header[0] != "feature") throw FormatError(path.string() + ": first column must be 'feature'");
    LabeledGrid g;
    g.cols.assign(header.begin() + 1, header.end());
    for (const auto& r : rows) {
        if (r.fields.size() != header.size())
            throw FormatError(path.string() + ":" + std::to_string(r.line) + ": expected " +
                              std::to_string(header.size()) + " fields");
        g.rows.push_back(r.fields[0]);
        g.cells.emplace_back(r.fields.begin() + 1, r.fields.end());
    }
    return g;
}

} // namespace detail

/// Cells with a defined r from heatmap/{signed_r,p_value,q_value,n_used}.csv.
inline std::vector<HeatmapCell> read_heatmap_cells(const std::filesystem::path& heatmap_dir) {
    auto r = detail::read_grid(heatmap_dir / "signed_r.csv");
    auto p = detail::read_grid(heatmap_dir / "p_value.csv");
    auto q = detail::read_grid(heatmap_dir / "q_value.csv");
    auto n = detail::read_grid(heatmap_dir / "n_used.csv");
    for (const auto* g : {&p, &q, &n})
        if (g->rows != r.rows || g->cols != r.cols) throw FormatError(heatmap_dir.string() + ": heatmap matrices disagree in shape");
    std::vector<HeatmapCell> out;
    for (std::size_t i = 0; i < r.rows.size(); ++i)
        for (std::size_t j = 0; j < r.cols.size(); ++j) {
            auto rv = detail::parse_double(r.cells[i][j]);
            if (!rv) continue;
            HeatmapCell c;
            c.feature = r.rows[i];
            c.target = r.cols[j];
            c.r = *rv;
            c.p = detail::parse_double(p.cells[i][j]).value_or(1.0);
            c.q = detail::parse_double(q.cells[i][j]);
            c.n = detail::parse_int(n.cells[i][j]).value_or(0);
            out.push_back(std::move(c));
        }
    return out;
}

namespace detail {

inline std::string fixed(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

inline std::string sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

} // namespace detail

/// Renders a markdown report for a pipeline output directory: domain status table, the
/// `top` strongest cells by |r|, and the strongest target per feature.
inline std::string render_report(const std::filesystem::path& bundle_dir, std::size_t top = 15) {
    std::string md = "# Drift study report\n\n";
    const auto summary_path = bundle_dir / "summary.json";
    if (std::filesystem::exists(summary_path)) {
        nlohmann::json s;
        try {
            s = nlohmann::json::parse(detail::read_text_file(summary_path.string()));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(summary_path.string() + ": " + e.what());
        }
        for (const auto& line : s.value("provenance", std::vector<std::string>{})) md += "- " + line + "\n";
        md += "- exit code " + std::to_string(s.value("exit_code", -1)) + "\n\n";
        md += "## Domains\n\n| domain | status | note |\n|---|---|---|\n";
        for (const auto& d : s.value("domains", nlohmann::json::array()))
            md += "| " + d.value("domain", "") + " | " + d.value("status", "") + " | " + d.value("reason", "") + " |\n";
        md += "\n";
    }
    const auto heatmap_dir = bundle_dir / "heatmap";
    if (!std::filesystem::exists(heatmap_dir / "signed_r.csv")) {
        md += "No heatmap: the correlation stage did not run.\n";
        return md;
    }
    auto cells = read_heatmap_cells(heatmap_dir);
    std::stable_sort(cells.begin(), cells.end(),
                     [](const auto& a, const auto& b) { return std::abs(a.r) > std::abs(b.r); });
    md += "## Strongest feature/target pairs\n\n| feature | target | r | p | q | n |\n|---|---|---|---|---|---|\n";
    for (std::size_t i = 0; i < std::min(top, cells.size()); ++i) {
        const auto& c = cells[i];
        md += "| " + c.feature + " | " + c.target + " | " + detail::fixed(c.r) + " | " + detail::sci(c.p) + " | " +
              (c.q ? detail::sci(*c.q) : std::string("-")) + " | " + std::to_string(c.n) + " |\n";
    }
    md += "\n## Best target per feature\n\n| feature | target | r |\n|---|---|---|\n";
    std::vector<std::string> seen;
    std::vector<const HeatmapCell*> best;
    for (const auto& c : cells) {
        if (std::find(seen.begin(), seen.end(), c.feature) != seen.end()) continue;
        seen.push_back(c.feature);
        best.push_back(&c);
    }
    std::sort(best.begin(), best.end(), [](const auto* a, const auto* b) { return a->feature < b->feature; });
    for (const auto* c : best) md += "| " + c->feature + " | " + c->target + " | " + detail::fixed(c->r) + " |\n";
    std::size_t significant = 0;
    for (const auto& c : cells)
        if (c.q && *c.q < 0.05) ++significant;
    md += "\n" + std::to_string(significant) + " of " + std::to_string(cells.size()) +
          " cells have q < 0.05 (Benjamini-Hochberg).\n";
    return md;
}

} // namespace drift

#endif
