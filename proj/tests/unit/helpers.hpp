#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "odonto/mesh.hpp"
#include "odonto/quality.hpp"

namespace testutil {

using odonto::Vec3;
namespace fs = std::filesystem;

// Scratch directory removed on destruction.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("odonto_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline odonto::mesh::TetPoints regular_tet(double edge = 1.0) {
    const double s = edge / std::sqrt(2.0);
    return {Vec3(0, 0, 0), Vec3(s, 0, s), Vec3(s, s, 0), Vec3(0, s, s)};
}

// Structured box split into 6 tets per cell along the main diagonal (conforming).
inline odonto::mesh::TetMesh box_mesh(int nx, int ny, int nz, const Vec3& size, const Vec3& origin = Vec3::Zero(),
                                      odonto::mesh::Domain domain = odonto::mesh::Domain::bone()) {
    odonto::mesh::TetMesh m;
    auto id = [&](int i, int j, int k) { return (k * (ny + 1) + j) * (nx + 1) + i; };
    for (int k = 0; k <= nz; ++k)
        for (int j = 0; j <= ny; ++j)
            for (int i = 0; i <= nx; ++i)
                m.nodes.push_back(origin + Vec3(size.x() * i / nx, size.y() * j / ny, size.z() * k / nz));
    const std::array<std::array<int, 3>, 6> perms = {
        {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i)
                for (const auto& p : perms) {
                    std::array<int, 3> c = {i, j, k};
                    odonto::mesh::Tet t;
                    t[0] = id(c[0], c[1], c[2]);
                    for (int s = 0; s < 3; ++s) {
                        ++c[p[s]];
                        t[s + 1] = id(c[0], c[1], c[2]);
                    }
                    const auto& n = m.nodes;
                    if (odonto::mesh::tet_volume(n[t[0]], n[t[1]], n[t[2]], n[t[3]]) < 0) std::swap(t[2], t[3]);
                    m.elements.push_back(t);
                    m.domain_of_element.push_back(domain);
                }
    return m;
}

// Boundary faces of the whole mesh whose three nodes satisfy pred.
template <class Pred>
std::vector<odonto::mesh::Tri> faces_where(const odonto::mesh::TetMesh& m, Pred pred) {
    std::vector<int> all(m.elements.size());
    for (std::size_t e = 0; e < all.size(); ++e) all[e] = static_cast<int>(e);
    std::vector<odonto::mesh::Tri> out;
    for (const auto& f : m.boundary_faces(all))
        if (pred(m.nodes[f[0]]) && pred(m.nodes[f[1]]) && pred(m.nodes[f[2]])) out.push_back(f);
    return out;
}

template <class Pred>
std::vector<int> nodes_where(const odonto::mesh::TetMesh& m, Pred pred) {
    std::vector<int> out;
    for (std::size_t v = 0; v < m.nodes.size(); ++v)
        if (pred(m.nodes[v])) out.push_back(static_cast<int>(v));
    return out;
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
    q.normalize();
    return q.toRotationMatrix();
}

// Regular tet with every vertex jittered by up to `jitter` (positively oriented).
inline odonto::mesh::TetPoints random_tet(std::mt19937_64& rng, double jitter = 0.35) {
    std::uniform_real_distribution<double> u(-jitter, jitter);
    for (;;) {
        auto t = regular_tet();
        for (auto& p : t) p += Vec3(u(rng), u(rng), u(rng));
        if (odonto::mesh::tet_volume(t[0], t[1], t[2], t[3]) > 1e-3) return t;
    }
}

}  // namespace testutil
