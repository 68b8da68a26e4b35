#include "json_util.hpp"

#include <fstream>

namespace odonto::jsonutil {

json load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError("'" + path + "': " + e.what());
    }
}

}  // namespace odonto::jsonutil
