#include "odonto/csv.hpp"

#include <charconv>
#include <fstream>
#include <limits>

#include "odonto/common.hpp"

namespace odonto::csv {

std::vector<std::string> split_line(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r' && c != '\n') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

int Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

int Table::require(std::string_view name) const {
    const int c = column(name);
    if (c < 0) throw ParseError("CSV is missing column '" + std::string(name) + "'");
    return c;
}

Table read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    Table t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        auto cells = split_line(line);
        if (first) {
            t.header = std::move(cells);
            first = false;
            continue;
        }
        if (cells.size() != t.header.size())
            throw ParseError("'" + path + "': row has " + std::to_string(cells.size()) + " cells, header has " +
                             std::to_string(t.header.size()));
        t.rows.push_back(std::move(cells));
    }
    if (first) throw ParseError("'" + path + "' is empty");
    return t;
}

double to_double(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw ParseError("bad number '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw ParseError("bad number '" + s + "'");
    }
}

int to_int(const std::string& s) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ParseError("bad integer '" + s + "'");
    return v;
}

}  // namespace odonto::csv
