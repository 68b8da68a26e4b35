#pragma once

#include "helpers.hpp"
#include "odonto/synth.hpp"

namespace testutil {

// Bone (z < 1), PDL (1 < z < 3) and tooth 24 (z > 3) stacked on a 2x2x4 grid, with the standard
// boundary sets so that build_model and the harness accept it. Solves in milliseconds.
inline odonto::mesh::TetMesh stack_mesh(int unn = 24) {
    using odonto::mesh::Domain;
    auto m = box_mesh(2, 2, 4, Vec3(2, 2, 4));
    std::vector<int> bone;
    for (std::size_t e = 0; e < m.elements.size(); ++e) {
        Vec3 c = Vec3::Zero();
        for (int v : m.elements[e]) c += m.nodes[v] / 4.0;
        m.domain_of_element[e] = c.z() < 1 ? Domain::bone() : c.z() < 3 ? Domain::pdl(unn) : Domain::tooth(unn);
        if (c.z() < 1) bone.push_back(static_cast<int>(e));
    }
    m.boundary_sets[odonto::synth::kDirichletSet].faces = faces_where(m, [](const Vec3& p) { return p.z() == 0.0; });
    auto& patch = m.boundary_sets[odonto::synth::patch_set(unn)];
    patch.faces = faces_where(m, [](const Vec3& p) { return p.y() == 2.0 && p.z() >= 3.0; });
    patch.recorded_area = 2.0;
    // PDL-bone interface: top of the bone layer, seen from the PDL (downward normal).
    for (auto f : m.boundary_faces(bone))
        if (m.nodes[f[0]].z() == 1.0 && m.nodes[f[1]].z() == 1.0 && m.nodes[f[2]].z() == 1.0) {
            std::swap(f[1], f[2]);
            m.boundary_sets[odonto::synth::pdl_bone_set(unn)].faces.push_back(f);
        }
    return m;
}

}  // namespace testutil
