#include "odonto/mesh_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_map>

namespace odonto::mesh {

namespace {

std::string read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct CellKey {
    std::int64_t x, y, z;
    bool operator==(const CellKey&) const = default;
};

struct CellHash {
    std::size_t operator()(const CellKey& k) const {
        return std::hash<std::int64_t>()(k.x * 73856093LL ^ k.y * 19349663LL ^ k.z * 83492791LL);
    }
};

float read_f32(const char* p) {
    float f;
    std::memcpy(&f, p, 4);
    return f;
}

std::uint32_t read_u32(const char* p) {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
}

void parse_binary(const std::string& data, std::vector<Vec3>& pts) {
    if (data.size() < 84) throw ParseError("binary STL shorter than its 84-byte header");
    const std::uint32_t n = read_u32(data.data() + 80);
    if (data.size() < 84 + 50ull * n) throw ParseError("binary STL truncated: expected " + std::to_string(n) + " facets");
    for (std::uint32_t f = 0; f < n; ++f) {
        const char* rec = data.data() + 84 + 50ull * f;
        for (int v = 0; v < 3; ++v) {
            const char* p = rec + 12 + 12 * v;
            pts.emplace_back(read_f32(p), read_f32(p + 4), read_f32(p + 8));
        }
    }
}

void parse_ascii(const std::string& data, std::vector<Vec3>& pts) {
    std::istringstream in(data);
    std::string tok;
    in >> tok;  // solid
    int in_loop = 0;
    while (in >> tok) {
        if (tok == "vertex") {
            double x, y, z;
            if (!(in >> x >> y >> z)) throw ParseError("ASCII STL: malformed vertex");
            pts.emplace_back(x, y, z);
            ++in_loop;
        } else if (tok == "endloop") {
            if (in_loop != 3) throw ParseError("ASCII STL: facet without exactly 3 vertices");
            in_loop = 0;
        }
    }
    if (in_loop != 0) throw ParseError("ASCII STL: unterminated facet");
}

bool looks_ascii(const std::string& data) {
    if (data.rfind("solid", 0) != 0) return false;
    if (data.size() >= 84) {
        const std::uint32_t n = read_u32(data.data() + 80);
        if (data.size() == 84 + 50ull * n) return false;
    }
    return data.find("facet") != std::string::npos || data.find("endsolid") != std::string::npos;
}

}  // namespace

SurfaceMesh weld(const std::vector<Vec3>& points, const std::vector<Tri>& tris, double tol) {
    SurfaceMesh m;
    std::unordered_map<CellKey, std::vector<int>, CellHash> grid;
    const double cell = tol > 0.0 ? tol : 1e-12;
    std::vector<int> remap(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Vec3& p = points[i];
        const CellKey c{static_cast<std::int64_t>(std::floor(p.x() / cell)),
                        static_cast<std::int64_t>(std::floor(p.y() / cell)),
                        static_cast<std::int64_t>(std::floor(p.z() / cell))};
        int found = -1;
        for (int dx = -1; dx <= 1 && found < 0; ++dx)
            for (int dy = -1; dy <= 1 && found < 0; ++dy)
                for (int dz = -1; dz <= 1 && found < 0; ++dz) {
                    auto it = grid.find({c.x + dx, c.y + dy, c.z + dz});
                    if (it == grid.end()) continue;
                    for (int v : it->second)
                        if ((m.vertices[v] - p).norm() <= tol) {
                            found = v;
                            break;
                        }
                }
        if (found < 0) {
            found = static_cast<int>(m.vertices.size());
            m.vertices.push_back(p);
            grid[c].push_back(found);
        }
        remap[i] = found;
    }
    for (const auto& t : tris) {
        Tri w{remap[t[0]], remap[t[1]], remap[t[2]]};
        if (w[0] == w[1] || w[1] == w[2] || w[0] == w[2]) continue;
        m.triangles.push_back(w);
    }
    return m;
}

SurfaceMesh load_stl(const std::string& path, double weld_tol) {
    const std::string data = read_all(path);
    std::vector<Vec3> pts;
    if (looks_ascii(data))
        parse_ascii(data, pts);
    else
        parse_binary(data, pts);
    if (pts.empty()) throw ParseError("STL '" + path + "' contains no facets");
    std::vector<Tri> tris;
    for (int i = 0; i + 2 < static_cast<int>(pts.size()); i += 3) tris.push_back({i, i + 1, i + 2});
    auto m = weld(pts, tris, weld_tol);
    if (m.triangles.empty()) throw ParseError("STL '" + path + "' has only degenerate facets");
    return m;
}

void save_stl_binary(const SurfaceMesh& mesh, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write '" + path + "'");
    char header[80] = {};
    std::strncpy(header, "odonto binary stl", sizeof(header) - 1);
    out.write(header, 80);
    const auto n = static_cast<std::uint32_t>(mesh.triangles.size());
    out.write(reinterpret_cast<const char*>(&n), 4);
    for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
        const Vec3 nrm = mesh.face_normal(f).normalized();
        float buf[12];
        for (int k = 0; k < 3; ++k) buf[k] = static_cast<float>(nrm[k]);
        for (int v = 0; v < 3; ++v)
            for (int k = 0; k < 3; ++k) buf[3 + 3 * v + k] = static_cast<float>(mesh.vertices[mesh.triangles[f][v]][k]);
        out.write(reinterpret_cast<const char*>(buf), sizeof(buf));
        const std::uint16_t attr = 0;
        out.write(reinterpret_cast<const char*>(&attr), 2);
    }
}

void save_stl_ascii(const SurfaceMesh& mesh, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write '" + path + "'");
    out << std::setprecision(17) << "solid odonto\n";
    for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
        const Vec3 n = mesh.face_normal(f).normalized();
        out << "  facet normal " << n.x() << ' ' << n.y() << ' ' << n.z() << "\n    outer loop\n";
        for (int v : mesh.triangles[f]) {
            const Vec3& p = mesh.vertices[v];
            out << "      vertex " << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
        }
        out << "    endloop\n  endfacet\n";
    }
    out << "endsolid odonto\n";
}

// --------------------------------------------------------------------- TetGen

namespace {

/// Non-empty, non-comment lines split into tokens.
std::vector<std::vector<std::string>> tokenize(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    std::vector<std::vector<std::string>> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        std::istringstream ss(line);
        std::vector<std::string> toks;
        std::string t;
        while (ss >> t) toks.push_back(t);
        if (!toks.empty()) lines.push_back(std::move(toks));
    }
    return lines;
}

long long to_ll(const std::string& s, const std::string& path) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw ParseError("");
        return v;
    } catch (const std::exception&) {
        throw ParseError("'" + path + "': bad integer '" + s + "'");
    }
}

double to_d(const std::string& s, const std::string& path) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw ParseError("");
        return v;
    } catch (const std::exception&) {
        throw ParseError("'" + path + "': bad number '" + s + "'");
    }
}

}  // namespace

TetMesh load_tetgen(const std::string& node_path, const std::string& ele_path) {
    TetMesh mesh;
    const auto nl = tokenize(node_path);
    if (nl.empty() || nl[0].size() < 2) throw ParseError("'" + node_path + "': missing header");
    const long long n_nodes = to_ll(nl[0][0], node_path);
    if (to_ll(nl[0][1], node_path) != 3) throw ParseError("'" + node_path + "': only 3D meshes are supported");
    if (n_nodes <= 0 || static_cast<long long>(nl.size()) - 1 < n_nodes)
        throw ParseError("'" + node_path + "': node count mismatch");
    const long long base = to_ll(nl[1][0], node_path);
    if (base != 0 && base != 1) throw ParseError("'" + node_path + "': first index must be 0 or 1");
    mesh.nodes.resize(n_nodes);
    for (long long i = 0; i < n_nodes; ++i) {
        const auto& t = nl[i + 1];
        if (t.size() < 4) throw ParseError("'" + node_path + "': short node line");
        if (to_ll(t[0], node_path) != i + base) throw ParseError("'" + node_path + "': non-consecutive node index");
        mesh.nodes[i] = Vec3(to_d(t[1], node_path), to_d(t[2], node_path), to_d(t[3], node_path));
    }

    const auto el = tokenize(ele_path);
    if (el.empty() || el[0].size() < 2) throw ParseError("'" + ele_path + "': missing header");
    const long long n_ele = to_ll(el[0][0], ele_path);
    const long long npe = to_ll(el[0][1], ele_path);
    const long long n_attr = el[0].size() > 2 ? to_ll(el[0][2], ele_path) : 0;
    if (npe != 4) throw ParseError("'" + ele_path + "': only 4-node tetrahedra are supported");
    if (n_ele <= 0 || static_cast<long long>(el.size()) - 1 != n_ele)
        throw ParseError("'" + ele_path + "': element count mismatch");
    mesh.elements.resize(n_ele);
    mesh.domain_of_element.resize(n_ele, Domain::bone());
    for (long long e = 0; e < n_ele; ++e) {
        const auto& t = el[e + 1];
        if (static_cast<long long>(t.size()) < 5 + n_attr) throw ParseError("'" + ele_path + "': short element line");
        Tet tet;
        for (int k = 0; k < 4; ++k) {
            const long long idx = to_ll(t[1 + k], ele_path) - base;
            if (idx < 0 || idx >= n_nodes)
                throw InvalidInput("'" + ele_path + "': element " + std::to_string(e + base) + " references node " +
                                   t[1 + k] + " of " + std::to_string(n_nodes));
            tet[k] = static_cast<int>(idx);
        }
        mesh.elements[e] = tet;
        if (mesh.element_volume(e) < 0.0) std::swap(mesh.elements[e][2], mesh.elements[e][3]);
        if (n_attr > 0) mesh.domain_of_element[e] = Domain::from_code(static_cast<int>(std::lround(to_d(t[5], ele_path))));
    }
    return mesh;
}

void save_tetgen(const TetMesh& mesh, const std::string& node_path, const std::string& ele_path) {
    std::ofstream nout(node_path);
    if (!nout) throw InvalidInput("cannot write '" + node_path + "'");
    nout << std::setprecision(17);
    nout << mesh.nodes.size() << " 3 0 0\n";
    for (std::size_t i = 0; i < mesh.nodes.size(); ++i)
        nout << i << ' ' << mesh.nodes[i].x() << ' ' << mesh.nodes[i].y() << ' ' << mesh.nodes[i].z() << '\n';
    std::ofstream eout(ele_path);
    if (!eout) throw InvalidInput("cannot write '" + ele_path + "'");
    eout << mesh.elements.size() << " 4 1\n";
    for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
        const auto& t = mesh.elements[e];
        eout << e << ' ' << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << ' ' << mesh.domain_of_element[e].code()
             << '\n';
    }
}

void save_boundary_sets(const TetMesh& mesh, const std::string& path) {
    nlohmann::ordered_json j;
    j["sets"] = nlohmann::ordered_json::object();
    for (const auto& [name, set] : mesh.boundary_sets) {
        nlohmann::ordered_json s;
        s["faces"] = set.faces;
        if (set.recorded_area) s["area"] = *set.recorded_area;
        j["sets"][name] = s;
    }
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write '" + path + "'");
    out << j.dump(1) << '\n';
}

void load_boundary_sets(TetMesh& mesh, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
        for (const auto& [name, s] : j.at("sets").items()) {
            BoundarySet set;
            set.faces = s.at("faces").get<std::vector<Tri>>();
            if (s.contains("area")) set.recorded_area = s.at("area").get<double>();
            for (const auto& f : set.faces)
                for (int i : f)
                    if (i < 0 || i >= static_cast<int>(mesh.nodes.size()))
                        throw InvalidInput("boundary set '" + name + "' references missing node");
            mesh.boundary_sets[name] = std::move(set);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("'" + path + "': " + e.what());
    }
}

}  // namespace odonto::mesh
