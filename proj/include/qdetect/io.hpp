// Output helpers: JSON serialisation with 17 significant digits for every
// floating value, and a small CSV writer using the same number format.
#pragma once

#include "qdetect/errors.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

namespace qdetect::io {

using Json = nlohmann::ordered_json;

inline std::string format_double(double v) {
    if (!std::isfinite(v)) return "null";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline void dump(const Json& j, std::ostringstream& os, int indent, int level) {
    auto newline = [&](int lv) {
        if (indent < 0) return;
        os << '\n' << std::string(static_cast<std::size_t>(indent * lv), ' ');
    };
    switch (j.type()) {
        case Json::value_t::object: {
            if (j.empty()) { os << "{}"; return; }
            os << '{';
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) os << ',';
                first = false;
                newline(level + 1);
                os << Json(it.key()).dump() << (indent < 0 ? ":" : ": ");
                dump(it.value(), os, indent, level + 1);
            }
            newline(level);
            os << '}';
            return;
        }
        case Json::value_t::array: {
            if (j.empty()) { os << "[]"; return; }
            os << '[';
            bool first = true;
            for (const auto& v : j) {
                if (!first) os << ',';
                first = false;
                newline(level + 1);
                dump(v, os, indent, level + 1);
            }
            newline(level);
            os << ']';
            return;
        }
        case Json::value_t::number_float:
            os << format_double(j.get<double>());
            return;
        default:
            os << j.dump();
    }
}

}  // namespace detail

/// JSON text where every floating value carries 17 significant digits.
inline std::string dump(const Json& j, int indent = 2) {
    std::ostringstream os;
    detail::dump(j, os, indent, 0);
    return os.str();
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
}

inline std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << text;
    if (!out) throw ConfigError("write failed for '" + path + "'");
}

inline void write_json(const std::string& path, const Json& j) { write_text(path, dump(j) + "\n"); }

/// Cell of a CSV row: a double, an integer or raw text.
class Cell {
public:
    Cell(double v) : text_(format_double(v)) {}
    Cell(int v) : text_(std::to_string(v)) {}
    Cell(long v) : text_(std::to_string(v)) {}
    Cell(long long v) : text_(std::to_string(v)) {}
    Cell(unsigned v) : text_(std::to_string(v)) {}
    Cell(unsigned long v) : text_(std::to_string(v)) {}
    Cell(unsigned long long v) : text_(std::to_string(v)) {}
    Cell(const char* s) : text_(s) {}
    Cell(std::string s) : text_(std::move(s)) {}
    const std::string& text() const { return text_; }

private:
    std::string text_;
};

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : cols_(header.size()) { row_strings(header); }

    void row(std::initializer_list<Cell> cells) {
        if (cells.size() != cols_) throw std::logic_error("CSV row width mismatch");
        bool first = true;
        for (const auto& c : cells) {
            if (!first) os_ << ',';
            first = false;
            os_ << (c.text() == "null" ? "nan" : c.text());
        }
        os_ << '\n';
    }

    std::string str() const { return os_.str(); }
    void save(const std::string& path) const { write_text(path, str()); }

private:
    void row_strings(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
        os_ << '\n';
    }
    std::size_t cols_;
    std::ostringstream os_;
};

}  // namespace qdetect::io
