#pragma once

#include <random>

#include "helpers.hpp"
#include "odonto/fem.hpp"

namespace testutil {

using namespace odonto::fem;
using odonto::mesh::Domain;

// Column of bone (z < 1), PDL (1 < z < 3) and a rigid tooth (z > 3) on a 2x2x4 grid.
// Pressure on the tooth's y = 2 side.
inline FEModel stack_model(double force = 1e-3, PressureMode mode = PressureMode::Follower, bool with_load = true) {
    FEModel m;
    m.mesh = box_mesh(2, 2, 4, Vec3(2, 2, 4));
    for (std::size_t e = 0; e < m.mesh.elements.size(); ++e) {
        Vec3 c = Vec3::Zero();
        for (int v : m.mesh.elements[e]) c += m.mesh.nodes[v] / 4.0;
        m.mesh.domain_of_element[e] = c.z() < 1 ? Domain::bone() : c.z() < 3 ? Domain::pdl(24) : Domain::tooth(24);
    }
    m.materials[Domain::bone()] = IsotropicElastic{};
    m.materials[Domain::pdl(24)] = MooneyRivlin{};
    m.materials[Domain::tooth(24)] = Rigid{};
    m.dirichlet = testutil::nodes_where(m.mesh, [](const Vec3& p) { return p.z() == 0.0; });
    if (with_load) {
        PressureLoad l;
        l.tooth_unn = 24;
        l.faces = testutil::faces_where(m.mesh, [](const Vec3& p) { return p.y() == 2.0 && p.z() >= 3.0; });
        for (const auto& f : l.faces) l.area += m.mesh.face_area(f);
        l.force = force;
        m.loads.push_back(l);
    }
    m.pressure_mode = mode;
    m.finalize();
    return m;
}

// Random state near the reference: free nodes jittered, the tooth moved rigidly.
inline FEState random_state(const FEModel& m, std::mt19937_64& rng, double amp) {
    std::uniform_real_distribution<double> u(-amp, amp);
    const DofMap dofs = rigid_couple(m);
    FEState s = initial_state(m);
    Eigen::VectorXd du(dofs.n_dofs);
    for (int i = 0; i < dofs.n_dofs; ++i) du[i] = u(rng);
    apply_increment(m, dofs, s, du);
    s.load_factor = 1.0;
    return s;
}

// Max |K - K_fd| / max |K| with central differences of the residual.
inline double tangent_fd_error(const FEModel& m, const FEState& s, double h = 1e-6) {
    Assembler A(m);
    Eigen::VectorXd R;
    SparseMatrix K;
    A.assemble(s, R, &K);
    const Eigen::MatrixXd Kd = Eigen::MatrixXd(K);
    double worst = 0.0;
    for (int j = 0; j < A.n_dofs(); ++j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(A.n_dofs());
        e[j] = h;
        FEState p = s, q = s;
        apply_increment(m, A.dofs(), p, e);
        apply_increment(m, A.dofs(), q, -e);
        Eigen::VectorXd Rp, Rq;
        A.assemble(p, Rp, nullptr);
        A.assemble(q, Rq, nullptr);
        const Eigen::VectorXd col = (Rp - Rq) / (2 * h);
        worst = std::max(worst, (col - Kd.col(j)).cwiseAbs().maxCoeff());
    }
    return worst / Kd.cwiseAbs().maxCoeff();
}

// Unit cube, E = 1500, nu = 0.3, rollers on the three coordinate planes, 1 MPa on z = 1.
inline FEModel patch_cube_model() {
    FEModel m;
    m.mesh = box_mesh(3, 3, 3, Vec3(1, 1, 1));
    m.materials[Domain::bone()] = IsotropicElastic{1500.0, 0.3};
    m.dirichlet = testutil::nodes_where(m.mesh, [](const Vec3& p) { return p.isZero(); });
    for (std::size_t v = 0; v < m.mesh.nodes.size(); ++v)
        for (int a = 0; a < 3; ++a)
            if (m.mesh.nodes[v][a] == 0.0) m.rollers.emplace_back(static_cast<int>(v), a);
    PressureLoad l;
    l.faces = testutil::faces_where(m.mesh, [](const Vec3& p) { return p.z() == 1.0; });
    l.area = 1.0;
    l.force = 1.0;  // 1 MPa
    m.loads.push_back(l);
    m.pressure_mode = PressureMode::Reference;
    m.finalize();
    return m;
}

}  // namespace testutil
