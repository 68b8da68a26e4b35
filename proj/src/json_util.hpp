#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "odonto/common.hpp"

namespace odonto::jsonutil {

using nlohmann::json;

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw InvalidInput(where + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!allowed.contains(key)) throw InvalidInput("unknown key '" + key + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("bad value for '") + key + "': " + e.what());
    }
}

inline Vec3 read_vec(const json& j) {
    if (!j.is_array() || j.size() != 3) throw InvalidInput("expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

/// Parses a whole file; ParseError on syntax errors.
json load_file(const std::string& path);

}  // namespace odonto::jsonutil
