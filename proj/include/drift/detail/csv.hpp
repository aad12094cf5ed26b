#ifndef DRIFT_DETAIL_CSV_HPP
#define DRIFT_DETAIL_CSV_HPP

#include "drift/error.hpp"

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace drift::detail {

struct CsvRow {
    std::size_t line = 0; // 1-based line number in the source file
    std::vector<std::string> fields;
};

/// Splits one CSV record. Double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

inline std::string escape_csv(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

/// Reads a CSV file, skipping blank lines and lines starting with '#'.
/// The first remaining record is returned as the header.
inline std::pair<std::vector<std::string>, std::vector<CsvRow>> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::string> header;
    std::vector<CsvRow> rows;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        auto fields = split_csv_line(line);
        if (!have_header) {
            header = std::move(fields);
            have_header = true;
        } else {
            rows.push_back({lineno, std::move(fields)});
        }
    }
    if (!have_header) throw FormatError(path + ": missing CSV header");
    return {std::move(header), std::move(rows)};
}

inline std::string join_csv(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        out += escape_csv(fields[i]);
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << contents;
    if (!out) throw IoError("write failed for " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace drift::detail

#endif
