#include "odonto/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

namespace odonto::mesh {

double tet_volume(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3) {
    return (p1 - p0).dot((p2 - p0).cross(p3 - p0)) / 6.0;
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    return 0.5 * (b - a).cross(c - a).norm();
}

// ---------------------------------------------------------------- SurfaceMesh

void SurfaceMesh::validate() const {
    if (!face_labels.empty() && face_labels.size() != triangles.size())
        throw InvalidInput("face_labels size does not match triangle count");
    for (const auto& v : vertices)
        if (!v.allFinite()) throw InvalidInput("non-finite vertex coordinate");
    const int nv = static_cast<int>(vertices.size());
    for (std::size_t f = 0; f < triangles.size(); ++f) {
        for (int i : triangles[f])
            if (i < 0 || i >= nv) throw InvalidInput("triangle " + std::to_string(f) + " index out of range");
        if (face_area(f) <= 0.0) throw InvalidInput("triangle " + std::to_string(f) + " has zero area");
    }
}

Vec3 SurfaceMesh::face_normal(std::size_t f) const {
    const auto& t = triangles[f];
    return (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
}

double SurfaceMesh::face_area(std::size_t f) const { return 0.5 * face_normal(f).norm(); }

double SurfaceMesh::area() const {
    double a = 0.0;
    for (std::size_t f = 0; f < triangles.size(); ++f) a += face_area(f);
    return a;
}

double SurfaceMesh::labeled_area(const std::string& label) const {
    double a = 0.0;
    for (std::size_t f = 0; f < triangles.size() && f < face_labels.size(); ++f)
        if (face_labels[f] == label) a += face_area(f);
    return a;
}

double SurfaceMesh::enclosed_volume() const {
    double v = 0.0;
    for (const auto& t : triangles)
        v += vertices[t[0]].dot(vertices[t[1]].cross(vertices[t[2]])) / 6.0;
    return v;
}

namespace {

std::uint64_t edge_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

}  // namespace

int SurfaceMesh::euler_characteristic() const {
    std::set<std::uint64_t> edges;
    std::set<int> used;
    for (const auto& t : triangles)
        for (int i = 0; i < 3; ++i) {
            const int a = t[i], b = t[(i + 1) % 3];
            edges.insert(edge_key(std::min(a, b), std::max(a, b)));
            used.insert(a);
        }
    return static_cast<int>(used.size()) - static_cast<int>(edges.size()) + static_cast<int>(triangles.size());
}

bool SurfaceMesh::is_closed_manifold() const {
    std::unordered_map<std::uint64_t, int> directed;
    for (const auto& t : triangles)
        for (int i = 0; i < 3; ++i) ++directed[edge_key(t[i], t[(i + 1) % 3])];
    for (const auto& [key, count] : directed) {
        if (count != 1) return false;
        const int a = static_cast<int>(key >> 32), b = static_cast<int>(key & 0xffffffffu);
        auto it = directed.find(edge_key(b, a));
        if (it == directed.end() || it->second != 1) return false;
    }
    return true;
}

// --------------------------------------------------------------------- Domain

int Domain::code() const {
    switch (kind) {
        case DomainKind::Bone: return 1;
        case DomainKind::Tooth: return id;
        case DomainKind::Pdl: return 100 + id;
        case DomainKind::Other: return 1000 + id;
    }
    return 1000 + id;
}

Domain Domain::from_code(int code) {
    if (code == 1) return bone();
    if (code >= 2 && code < 100) return tooth(code);
    if (code >= 100 && code < 1000) return pdl(code - 100);
    return {DomainKind::Other, code - 1000};
}

std::string Domain::name() const {
    switch (kind) {
        case DomainKind::Bone: return "bone";
        case DomainKind::Tooth: return "tooth_" + std::to_string(id);
        case DomainKind::Pdl: return "pdl_" + std::to_string(id);
        case DomainKind::Other: return "domain_" + std::to_string(id);
    }
    return "domain";
}

// -------------------------------------------------------------------- TetMesh

namespace {

std::array<int, 3> sorted(Tri f) {
    std::sort(f.begin(), f.end());
    return f;
}

constexpr int kTetFaces[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};

}  // namespace

std::array<Vec3, 4> TetMesh::element_points(std::size_t e) const {
    const auto& t = elements[e];
    return {nodes[t[0]], nodes[t[1]], nodes[t[2]], nodes[t[3]]};
}

double TetMesh::element_volume(std::size_t e) const {
    const auto p = element_points(e);
    return tet_volume(p[0], p[1], p[2], p[3]);
}

double TetMesh::face_area(const Tri& f) const { return triangle_area(nodes[f[0]], nodes[f[1]], nodes[f[2]]); }

double TetMesh::set_area(const std::string& name) const {
    auto it = boundary_sets.find(name);
    if (it == boundary_sets.end()) throw InvalidInput("unknown boundary set '" + name + "'");
    double a = 0.0;
    for (const auto& f : it->second.faces) a += face_area(f);
    return a;
}

std::vector<int> TetMesh::set_nodes(const std::string& name) const {
    auto it = boundary_sets.find(name);
    if (it == boundary_sets.end()) throw InvalidInput("unknown boundary set '" + name + "'");
    std::vector<int> out;
    for (const auto& f : it->second.faces) out.insert(out.end(), f.begin(), f.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<Domain> TetMesh::domains() const {
    std::set<Domain> s(domain_of_element.begin(), domain_of_element.end());
    return {s.begin(), s.end()};
}

std::vector<int> TetMesh::elements_in(const Domain& d) const {
    std::vector<int> out;
    for (std::size_t e = 0; e < domain_of_element.size(); ++e)
        if (domain_of_element[e] == d) out.push_back(static_cast<int>(e));
    return out;
}

std::vector<int> TetMesh::elements_of_kind(DomainKind k) const {
    std::vector<int> out;
    for (std::size_t e = 0; e < domain_of_element.size(); ++e)
        if (domain_of_element[e].kind == k) out.push_back(static_cast<int>(e));
    return out;
}

std::size_t TetMesh::count_elements(DomainKind k) const {
    return static_cast<std::size_t>(
        std::count_if(domain_of_element.begin(), domain_of_element.end(), [k](const Domain& d) { return d.kind == k; }));
}

std::vector<int> TetMesh::domain_nodes(const Domain& d) const {
    std::vector<int> out;
    for (std::size_t e = 0; e < elements.size(); ++e)
        if (domain_of_element[e] == d) out.insert(out.end(), elements[e].begin(), elements[e].end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<Tri> TetMesh::boundary_faces(const std::vector<int>& elems) const {
    std::map<std::array<int, 3>, std::pair<Tri, int>> faces;
    for (int e : elems) {
        const auto& t = elements[e];
        for (const auto& lf : kTetFaces) {
            Tri f{t[lf[0]], t[lf[1]], t[lf[2]]};
            auto [it, inserted] = faces.try_emplace(sorted(f), f, 0);
            ++it->second.second;
        }
    }
    std::vector<Tri> out;
    for (const auto& [key, v] : faces)
        if (v.second == 1) out.push_back(v.first);
    return out;
}

void TetMesh::validate() const {
    const int nn = static_cast<int>(nodes.size());
    if (domain_of_element.size() != elements.size())
        throw InvalidInput("domain_of_element size does not match element count");
    for (const auto& p : nodes)
        if (!p.allFinite()) throw InvalidInput("non-finite node coordinate");
    for (std::size_t e = 0; e < elements.size(); ++e) {
        for (int i : elements[e])
            if (i < 0 || i >= nn) throw InvalidInput("element " + std::to_string(e) + " index out of range");
        if (element_volume(e) <= 0.0) throw InvalidInput("element " + std::to_string(e) + " has non-positive volume");
    }
    if (boundary_sets.empty()) return;
    std::set<std::array<int, 3>> all_faces;
    for (const auto& t : elements)
        for (const auto& lf : kTetFaces) all_faces.insert(sorted({t[lf[0]], t[lf[1]], t[lf[2]]}));
    for (const auto& [name, set] : boundary_sets)
        for (const auto& f : set.faces) {
            for (int i : f)
                if (i < 0 || i >= nn) throw InvalidInput("boundary set '" + name + "' index out of range");
            if (!all_faces.contains(sorted(f)))
                throw InvalidInput("boundary set '" + name + "' contains a face that is not an element face");
        }
}

}  // namespace odonto::mesh
