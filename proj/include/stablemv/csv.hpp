#pragma once

// CSV dialect: comma separated, '.' decimal, header row, LF endings. Doubles
// are printed in shortest round-trip form so files are bit-stable.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <vector>

#include "stablemv/errors.hpp"

namespace stablemv::csv {

inline std::string format(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline std::string format(std::uint64_t x) { return std::to_string(x); }
inline std::string format(std::int64_t x) { return std::to_string(x); }
inline std::string format(int x) { return std::to_string(x); }
inline std::string format(std::string_view s) { return std::string(s); }
inline std::string format(const char* s) { return std::string(s); }

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    void header(const std::vector<std::string>& cols) {
        for (std::size_t i = 0; i < cols.size(); ++i) out_ << (i ? "," : "") << cols[i];
        out_ << '\n';
    }

    template <typename... Ts>
    void row(const Ts&... values) {
        bool first = true;
        ((out_ << (first ? "" : ",") << format(values), first = false), ...);
        out_ << '\n';
    }

    void row(const std::vector<double>& values) {
        for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format(values[i]);
        out_ << '\n';
    }

private:
    std::ostream& out_;
};

inline std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw DomainError("malformed number in CSV: '" + std::string(s) + "'");
    return v;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline Table read_numeric(std::istream& in) {
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw EmptyDataError("CSV input has no header row");
    t.header = split(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != t.header.size())
            throw DomainError("CSV row " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                              " fields, expected " + std::to_string(t.header.size()));
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) row.push_back(parse_double(c));
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace stablemv::csv
