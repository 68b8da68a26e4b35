#pragma once

#include <fmt/format.h>

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

namespace odonto::csv {

/// Shortest round-trip-safe rendering used by every CSV writer ("inf", "nan" for non-finite).
inline std::string num(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    return fmt::format("{:.12g}", x);
}

std::vector<std::string> split_line(std::string_view line);

/// Parsed CSV with a header row.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(std::string_view name) const;  // -1 when absent
    int require(std::string_view name) const;  // throws ParseError when absent
};

Table read_file(const std::string& path);
double to_double(const std::string& s);
int to_int(const std::string& s);

}  // namespace odonto::csv
