#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fem_fixtures.hpp"
#include "odonto/fem.hpp"
#include "odonto/synth.hpp"

using namespace odonto;
using namespace odonto::fem;
using mesh::Domain;
using testutil::box_mesh;
using testutil::random_state;
using testutil::stack_model;
using testutil::tangent_fd_error;

namespace {

constexpr double kPi = std::numbers::pi;

// Voigt vector (xx yy zz xy yz xz) of a symmetric tensor with engineering shear.
Vec6 strain_voigt(const Mat3& e) {
    Vec6 v;
    v << e(0, 0), e(1, 1), e(2, 2), 2 * e(0, 1), 2 * e(1, 2), 2 * e(0, 2);
    return v;
}

double total_energy(const FEModel& m, const FEState& s) {
    double W = 0.0;
    for (std::size_t e = 0; e < m.mesh.elements.size(); ++e) {
        const auto* mr = std::get_if<MooneyRivlin>(&m.material(m.mesh.domain_of_element[e]));
        if (!mr) continue;
        const auto p = m.mesh.element_points(e);
        Mat3 X, x;
        for (int a = 0; a < 3; ++a) {
            X.col(a) = p[a + 1] - p[0];
            x.col(a) = s.position(m, m.mesh.elements[e][a + 1]) - s.position(m, m.mesh.elements[e][0]);
        }
        W += X.determinant() / 6.0 * strain_energy(x * X.inverse(), *mr);
    }
    return W;
}

Mat3 rotation(double deg, const Vec3& axis) { return Eigen::AngleAxisd(deg * kPi / 180.0, axis.normalized()).toRotationMatrix(); }

}  // namespace

// ------------------------------------------------------------------ materials

TEST_CASE("PDL parameters") {
    const MooneyRivlin m;
    CHECK(m.c1 == 0.011875);
    CHECK(m.c2 == 0.0);
    CHECK(m.k == doctest::Approx(0.0689 / (3.0 * (1.0 - 0.9))).epsilon(1e-15));
    CHECK(m.k == doctest::Approx(0.22966666666666674).epsilon(1e-12));
    const double e = 2.0 * (m.c1 + m.c2) * 2.0 * (1.0 + 0.45);
    CHECK(e == doctest::Approx(0.068875).epsilon(1e-12));
    CHECK(std::abs(e / 0.0689 - 1.0) < 1e-3);
    const auto f = MooneyRivlin::from_young(0.0689, 0.45);
    CHECK(f.young() == doctest::Approx(0.0689).epsilon(1e-12));
}

TEST_CASE("neo-Hookean response") {
    const MooneyRivlin m;
    SUBCASE("undeformed") {
        const auto r = neo_hookean_response(Mat3::Identity(), m);
        CHECK(r.sigma.norm() < 1e-15);
    }
    SUBCASE("pure dilatation") {
        const double J = 1.1;
        const auto r = neo_hookean_response(std::cbrt(J) * Mat3::Identity(), m);
        const double p = m.k * std::log(J) / J;
        CHECK(std::abs(p - 0.01989961026823633) < 1e-15);
        for (int i = 0; i < 3; ++i) CHECK(std::abs(r.sigma(i, i) - p) < 1e-9);
        CHECK(std::abs(r.sigma(0, 1)) < 1e-15);
    }
    SUBCASE("Cauchy stress matches the energy derivative") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> u(-0.2, 0.2);
        MooneyRivlin mr{0.02, 0.01, 0.3};
        for (int trial = 0; trial < 20; ++trial) {
            Mat3 F = Mat3::Identity();
            for (int i = 0; i < 9; ++i) F(i / 3, i % 3) += u(rng);
            const double h = 1e-6;
            Mat3 P;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    Mat3 a = F, b = F;
                    a(i, j) += h;
                    b(i, j) -= h;
                    P(i, j) = (strain_energy(a, mr) - strain_energy(b, mr)) / (2 * h);
                }
            const Mat3 sigma = P * F.transpose() / F.determinant();
            CHECK((neo_hookean_response(F, mr).sigma - sigma).norm() < 1e-8);
        }
    }
    SUBCASE("inversion carries the element id") {
        Mat3 F = Mat3::Identity();
        F(2, 2) = -0.5;
        try {
            neo_hookean_response(F, m, 42);
            FAIL("expected ElementInversion");
        } catch (const ElementInversion& e) {
            CHECK(e.element() == 42);
        }
    }
    SUBCASE("energy is frame indifferent") {
        std::mt19937_64 rng(9);
        Mat3 F;
        F << 1.05, 0.02, -0.01, 0.03, 0.97, 0.04, 0.0, -0.02, 1.1;
        for (int i = 0; i < 10; ++i) {
            const Mat3 Q = testutil::random_rotation(rng);
            CHECK(strain_energy(Q * F, m) == doctest::Approx(strain_energy(F, m)).epsilon(1e-12));
        }
    }
}

TEST_CASE("linear elastic response") {
    const IsotropicElastic m;  // E 1500, nu 0.3
    CHECK(m.lambda() == doctest::Approx(865.3846153846154).epsilon(1e-14));
    CHECK(m.mu() == doctest::Approx(576.9230769230769).epsilon(1e-14));
    CHECK(linear_elastic_response(Mat3::Zero(), m).norm() == 0.0);

    Mat3 e = Mat3::Zero();
    e(0, 0) = 1e-3;
    Mat3 s = linear_elastic_response(e, m);
    CHECK(s(0, 0) == doctest::Approx(2019.230769230769e-3).epsilon(1e-12));
    CHECK(s(1, 1) == doctest::Approx(865.3846153846154e-3).epsilon(1e-12));
    CHECK(s(2, 2) == doctest::Approx(865.3846153846154e-3).epsilon(1e-12));

    e.setZero();
    e(0, 1) = e(1, 0) = 1e-3;
    s = linear_elastic_response(e, m);
    CHECK(s(0, 1) == doctest::Approx(2.0 * 576.9230769230769e-3).epsilon(1e-12));
    CHECK(s(0, 0) == 0.0);

    // Tangent agrees with the response.
    Mat3 g;
    g << 1e-3, 2e-4, -3e-4, 2e-4, -5e-4, 1e-4, -3e-4, 1e-4, 7e-4;
    const Vec6 sv = linear_elastic_tangent(m) * strain_voigt(g);
    const Mat3 sm = linear_elastic_response(g, m);
    CHECK(sv[0] == doctest::Approx(sm(0, 0)));
    CHECK(sv[3] == doctest::Approx(sm(0, 1)));
    CHECK(sv[4] == doctest::Approx(sm(1, 2)));
    CHECK(sv[5] == doctest::Approx(sm(0, 2)));
}

TEST_CASE("von Mises stress") {
    Mat3 s = Mat3::Zero();
    CHECK(von_mises(s) == 0.0);
    s(0, 0) = 3.5;
    CHECK(von_mises(s) == doctest::Approx(3.5).epsilon(1e-14));
    CHECK(von_mises(2.0 * Mat3::Identity()) < 1e-14);
    s.setZero();
    s(0, 1) = s(1, 0) = 1.0;
    CHECK(von_mises(s) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-14));
}

TEST_CASE("material validation") {
    CHECK_THROWS_AS((IsotropicElastic{1500, 0.5}.validate()), InvalidInput);
    CHECK_THROWS_AS((IsotropicElastic{-1, 0.3}.validate()), InvalidInput);
    CHECK_THROWS_AS((MooneyRivlin{0, 0, 1}.validate()), InvalidInput);
    CHECK_THROWS_AS((MooneyRivlin{0.01, 0, 0}.validate()), InvalidInput);
}

// ------------------------------------------------------------- mass properties

TEST_CASE("center of mass") {
    const auto cube = box_mesh(2, 2, 2, Vec3(1, 1, 1));
    const auto p = compute_center_of_mass(cube, Domain::bone(), 1.0);
    CHECK((p.com - Vec3(0.5, 0.5, 0.5)).norm() < 1e-14);
    CHECK(p.mass == doctest::Approx(1.0).epsilon(1e-14));
    CHECK((p.inertia - Mat3::Identity() / 6.0).norm() < 1e-14);
    const auto q = compute_center_of_mass(cube, Domain::bone(), 2.0);
    CHECK(q.mass == doctest::Approx(2.0).epsilon(1e-14));
    CHECK((q.com - p.com).norm() < 1e-15);

    // L shape: [0,2]x[0,1]x[0,1] plus [0,1]x[0,1]x[1,2].
    auto l = box_mesh(2, 1, 2, Vec3(2, 1, 2));
    mesh::TetMesh L;
    L.nodes = l.nodes;
    for (std::size_t e = 0; e < l.elements.size(); ++e) {
        Vec3 c = Vec3::Zero();
        for (int v : l.elements[e]) c += l.nodes[v] / 4.0;
        if (c.x() > 1 && c.z() > 1) continue;
        L.elements.push_back(l.elements[e]);
        L.domain_of_element.push_back(Domain::tooth(20));
    }
    const auto r = compute_center_of_mass(L, Domain::tooth(20), 1.0);
    const Vec3 expected = (2.0 * Vec3(1, 0.5, 0.5) + 1.0 * Vec3(0.5, 0.5, 1.5)) / 3.0;
    CHECK((r.com - expected).norm() < 1e-12);
    CHECK(r.volume == doctest::Approx(3.0).epsilon(1e-14));

    CHECK_THROWS_AS(compute_center_of_mass(cube, Domain::tooth(20), 1.0), InvalidInput);
}

// ---------------------------------------------------------------- pressure

TEST_CASE("pressure_for_force") {
    CHECK(pressure_for_force(0.5, 10.0) == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(pressure_for_force(0.4, 9.0) == doctest::Approx(0.044444444444444).epsilon(1e-12));
    CHECK(pressure_for_force(0.0, 9.0) == 0.0);
    CHECK_THROWS_AS(pressure_for_force(1.0, 0.0), InvalidInput);
    CHECK_THROWS_AS(pressure_for_force(1.0, -2.0), InvalidInput);
}

TEST_CASE("pressure forces") {
    SUBCASE("flat patch") {
        // 2 x 5 rectangle in z = 0 split into 4 triangles, normal +z.
        const std::vector<Vec3> x = {{0, 0, 0}, {2, 0, 0}, {2, 5, 0}, {0, 5, 0}, {1, 2.5, 0}};
        const std::vector<mesh::Tri> f = {{0, 1, 4}, {1, 2, 4}, {2, 3, 4}, {3, 0, 4}};
        const auto F = pressure_forces(x, f, 0.05);
        Vec3 net = Vec3::Zero();
        for (const auto& v : F) net += v;
        CHECK((net - Vec3(0, 0, -0.5)).norm() < 1e-15);

        // Rotating the patch rotates the force.
        const Mat3 Q = rotation(37.0, Vec3(1, 2, 3));
        std::vector<Vec3> xr;
        for (const auto& p : x) xr.push_back(Q * p + Vec3(4, -1, 2));
        Vec3 netr = Vec3::Zero();
        for (const auto& v : pressure_forces(xr, f, 0.05)) netr += v;
        CHECK((netr - Q * net).norm() < 1e-14);
    }
    SUBCASE("closed surface nets to zero") {
        auto m = box_mesh(3, 2, 4, Vec3(1.3, 0.7, 2.1), Vec3(0.2, -1, 3));
        for (auto& p : m.nodes) p += 0.05 * Vec3(std::sin(7 * p.y()), std::cos(5 * p.z()), std::sin(3 * p.x()));
        const auto faces = testutil::faces_where(m, [](const Vec3&) { return true; });
        const auto F = pressure_forces(m.nodes, faces, 0.8);
        Vec3 net = Vec3::Zero(), moment = Vec3::Zero();
        for (std::size_t k = 0; k < faces.size(); ++k)
            for (int a = 0; a < 3; ++a) {
                net += F[3 * k + a];
                moment += m.nodes[faces[k][a]].cross(F[3 * k + a]);
            }
        CHECK(net.norm() < 1e-10);
        CHECK(moment.norm() < 1e-10);
    }
    SUBCASE("load stiffness matches finite differences") {
        std::vector<Vec3> x = {{0, 0, 0}, {1.2, 0.1, 0.3}, {0.2, 0.9, -0.2}};
        const std::vector<mesh::Tri> f = {{0, 1, 2}};
        std::vector<Eigen::Matrix<double, 9, 9>> S;
        pressure_forces(x, f, 0.3, &S);
        const double h = 1e-6;
        double worst = 0.0;
        for (int j = 0; j < 9; ++j) {
            auto a = x, b = x;
            a[j / 3][j % 3] += h;
            b[j / 3][j % 3] -= h;
            const auto Fa = pressure_forces(a, f, 0.3), Fb = pressure_forces(b, f, 0.3);
            for (int i = 0; i < 9; ++i)
                worst = std::max(worst, std::abs((Fa[i / 3][i % 3] - Fb[i / 3][i % 3]) / (2 * h) - S[0](i, j)));
        }
        CHECK(worst < 1e-8);
    }
}

// ------------------------------------------------------------ rigid coupling

TEST_CASE("rigid coupling") {
    const auto m = stack_model();
    const auto dofs = rigid_couple(m);
    std::size_t deformable = 0;
    for (std::size_t v = 0; v < m.mesh.nodes.size(); ++v) {
        const double z = m.mesh.nodes[v].z();
        if (z > 0 && z < 3) ++deformable;  // z = 3 nodes sit on the tooth
    }
    CHECK(dofs.n_dofs == static_cast<int>(3 * deformable + 6));
    CHECK(m.bodies().size() == 1);

    SUBCASE("prescribed motion moves tooth nodes rigidly") {
        FEState s = initial_state(m);
        const Eigen::Quaterniond q(Eigen::AngleAxisd(0.3, Vec3(1, -2, 0.5).normalized()));
        s.body_q[0] = q;
        s.body_t[0] = Vec3(0.1, -0.2, 0.05);
        update_rigid_nodes(m, s);
        const Vec3 c = m.bodies()[0].props.com;
        for (int v : m.bodies()[0].nodes) {
            const Vec3 X = m.mesh.nodes[v];
            CHECK((s.position(m, v) - (q * (X - c) + c + s.body_t[0])).norm() < 1e-12);
        }
    }
    SUBCASE("off-centre load gives the moment r x F") {
        FEState s = initial_state(m);
        s.load_factor = 1.0;
        Assembler A(m);
        const Eigen::VectorXd F = A.external_force(s);
        const auto& l = m.loads[0];
        const auto f = pressure_forces(m.mesh.nodes, l.faces, l.pressure());
        Vec3 net = Vec3::Zero(), moment = Vec3::Zero();
        const Vec3 c = m.bodies()[0].props.com;
        for (std::size_t k = 0; k < l.faces.size(); ++k)
            for (int a = 0; a < 3; ++a) {
                net += f[3 * k + a];
                moment += (m.mesh.nodes[l.faces[k][a]] - c).cross(f[3 * k + a]);
            }
        const int b = dofs.body_dof[0];
        CHECK((F.segment<3>(b) - net).norm() < 1e-12 * net.norm());
        CHECK((F.segment<3>(b + 3) - moment).norm() < 1e-12 * (moment.norm() + 1e-30));
        CHECK(moment.norm() > 0.0);
        CHECK(net.norm() == doctest::Approx(l.force).epsilon(1e-12));  // flat patch: resultant = p A
    }
    SUBCASE("a floating tooth is rejected") {
        FEModel bad;
        bad.mesh = box_mesh(1, 1, 2, Vec3(1, 1, 2));
        for (std::size_t e = 0; e < bad.mesh.elements.size(); ++e)
            bad.mesh.domain_of_element[e] = e < 6 ? Domain::bone() : Domain::tooth(20);
        // Separate the tooth by giving it private nodes.
        const int n0 = static_cast<int>(bad.mesh.nodes.size());
        for (int v = 0; v < n0; ++v) bad.mesh.nodes.push_back(bad.mesh.nodes[v] + Vec3(5, 0, 0));
        for (std::size_t e = 6; e < bad.mesh.elements.size(); ++e)
            for (int& v : bad.mesh.elements[e]) v += n0;
        bad.materials[Domain::bone()] = IsotropicElastic{};
        bad.materials[Domain::tooth(20)] = Rigid{};
        bad.dirichlet = {0};
        CHECK_THROWS_AS(bad.finalize(), InvalidInput);
    }
}

// ------------------------------------------------------------------ assembly

TEST_CASE("zero state has zero residual") {
    const auto m = stack_model();
    Assembler A(m);
    Eigen::VectorXd R;
    A.assemble(initial_state(m), R, nullptr);
    CHECK(R.norm() < 1e-14);
}

TEST_CASE("assembled tangent matches finite differences") {
    std::mt19937_64 rng(2024);
    SUBCASE("hyperelastic, linear, rigid and follower pressure") {
        const auto m = stack_model(5e-3);
        for (int trial = 0; trial < 3; ++trial) {
            const auto s = random_state(m, rng, 0.02);
            REQUIRE(rigid_couple(m).n_dofs <= 200);
            CHECK(tangent_fd_error(m, s) < 1e-6);
        }
    }
    SUBCASE("reference pressure") {
        const auto m = stack_model(5e-3, PressureMode::Reference);
        CHECK(tangent_fd_error(m, random_state(m, rng, 0.02)) < 1e-6);
    }
}

TEST_CASE("residual is the energy gradient") {
    // Hyperelastic block, no loads: R = dW/du.
    FEModel m;
    m.mesh = box_mesh(2, 2, 2, Vec3(1, 1, 1), Vec3::Zero(), Domain::pdl(24));
    m.materials[Domain::pdl(24)] = MooneyRivlin{0.02, 0.005, 0.3};
    m.dirichlet = testutil::nodes_where(m.mesh, [](const Vec3& p) { return p.z() == 0.0; });
    m.finalize();
    std::mt19937_64 rng(77);
    const auto s = random_state(m, rng, 0.05);
    Assembler A(m);
    Eigen::VectorXd R;
    SparseMatrix K;
    A.assemble(s, R, &K);
    const double h = 1e-6;
    double worst = 0.0;
    for (int j = 0; j < A.n_dofs(); ++j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(A.n_dofs());
        e[j] = h;
        FEState p = s, q = s;
        apply_increment(m, A.dofs(), p, e);
        apply_increment(m, A.dofs(), q, -e);
        worst = std::max(worst, std::abs((total_energy(m, p) - total_energy(m, q)) / (2 * h) - R[j]));
    }
    CHECK(worst < 1e-6 * R.cwiseAbs().maxCoeff());

    // No follower load or rigid body: the tangent is symmetric.
    const SparseMatrix asym = K - SparseMatrix(K.transpose());
    CHECK(asym.norm() < 1e-10 * K.norm());
}

TEST_CASE("tangent is symmetric with linear and hyperelastic domains") {
    FEModel m;
    m.mesh = box_mesh(2, 2, 3, Vec3(1, 1, 1.5));
    for (std::size_t e = 0; e < m.mesh.elements.size(); ++e)
        if (e % 3 == 0) m.mesh.domain_of_element[e] = Domain::pdl(24);
    m.materials[Domain::bone()] = IsotropicElastic{};
    m.materials[Domain::pdl(24)] = MooneyRivlin{};
    m.dirichlet = testutil::nodes_where(m.mesh, [](const Vec3& p) { return p.z() == 0.0; });
    m.finalize();
    std::mt19937_64 rng(1);
    Assembler A(m);
    Eigen::VectorXd R;
    SparseMatrix K;
    A.assemble(random_state(m, rng, 0.01), R, &K);
    CHECK(SparseMatrix(K - SparseMatrix(K.transpose())).norm() < 1e-10 * K.norm());
}

// --------------------------------------------------------------------- solve

TEST_CASE("elastic patch test") {
    const FEModel m = testutil::patch_cube_model();
    const auto states = solve_quasistatic(m, 1);
    const auto& s = states.back();
    CHECK(s.iterations == 1);
    const double uz = -1.0 / 1500.0;
    const double ul = 0.3 / 1500.0;
    for (std::size_t v = 0; v < m.mesh.nodes.size(); ++v) {
        const Vec3& X = m.mesh.nodes[v];
        CHECK(std::abs(s.u[v].z() - uz * X.z()) <= 1e-8 * std::abs(uz));
        CHECK(std::abs(s.u[v].x() - ul * X.x()) <= 1e-8 * std::abs(uz));
        CHECK(std::abs(s.u[v].y() - ul * X.y()) <= 1e-8 * std::abs(uz));
    }
    // Uniform stress in every element.
    for (std::size_t e = 0; e < m.mesh.elements.size(); ++e) {
        const Mat3 sig = element_stress(m, s, static_cast<int>(e));
        CHECK(std::abs(sig(2, 2) + 1.0) < 1e-8);
        CHECK(std::abs(sig(0, 0)) < 1e-8);
    }
}

TEST_CASE("linear model converges in one iteration per step") {
    FEModel m;
    m.mesh = box_mesh(2, 2, 2, Vec3(1, 1, 2));
    m.materials[Domain::bone()] = IsotropicElastic{};
    m.dirichlet = testutil::nodes_where(m.mesh, [](const Vec3& p) { return p.z() == 0.0; });
    PressureLoad l;
    l.faces = testutil::faces_where(m.mesh, [](const Vec3& p) { return p.x() == 1.0; });
    l.area = 2.0;
    l.force = 3.0;
    m.loads.push_back(l);
    m.pressure_mode = PressureMode::Reference;
    m.finalize();
    const auto states = solve_quasistatic(m, 4);
    REQUIRE(states.size() == 4);
    for (std::size_t i = 0; i < states.size(); ++i) {
        CHECK(states[i].iterations == 1);
        CHECK(states[i].load_factor == doctest::Approx((i + 1) / 4.0));
    }
    // Linear response: displacements scale with the load factor.
    for (std::size_t v = 0; v < m.mesh.nodes.size(); ++v)
        CHECK((states[1].u[v] * 2.0 - states[3].u[v]).norm() < 1e-12);
    CHECK_THROWS_AS(solve_quasistatic(m, 0), InvalidInput);
}

TEST_CASE("zero load leaves the model at rest") {
    const auto m = stack_model(0.0);
    for (const auto& s : solve_quasistatic(m, 3)) {
        for (const auto& u : s.u) CHECK(u.norm() == 0.0);
        CHECK(s.body_t[0].norm() == 0.0);
    }
}

TEST_CASE("nonlinear solve: equilibrium, unit quaternions, frame indifference") {
    const auto m = stack_model(2e-3);
    SolverOptions opts;
    opts.newton_tol = 1e-12;
    const auto states = solve_quasistatic(m, 2, opts);
    const auto& s = states.back();
    CHECK(std::abs(s.body_q[0].norm() - 1.0) < 1e-12);
    const auto tr = extract_rigid_transform(m, s, 24);
    CHECK(tr.translation.norm() > 0.0);
    CHECK(tr.angle_deg > 0.0);

    // Reactions balance the applied (deformed-configuration) pressure.
    const auto& l = m.loads[0];
    std::vector<Vec3> x(m.mesh.nodes.size());
    for (std::size_t v = 0; v < x.size(); ++v) x[v] = s.position(m, static_cast<int>(v));
    Vec3 applied = Vec3::Zero();
    for (const auto& f : pressure_forces(x, l.faces, l.pressure())) applied += f;
    CHECK((reaction_force(m, s) + applied).norm() < 1e-8);

    // Rotating the deformed configuration leaves the stored energy unchanged.
    const Mat3 Q = rotation(33.0, Vec3(0.3, 1, -0.4));
    FEState r = s;
    for (std::size_t v = 0; v < x.size(); ++v) r.u[v] = Q * x[v] + Vec3(1, 2, 3) - m.mesh.nodes[v];
    const double w0 = total_energy(m, s), w1 = total_energy(m, r);
    CHECK(w0 > 0.0);
    CHECK(std::abs(w1 - w0) <= 1e-10 * w0);

    // Von Mises fields.
    CHECK_THROWS_AS(von_mises_field(m, s, Domain::tooth(24)), InvalidInput);
    for (double v : von_mises_field(m, initial_state(m), Domain::pdl(24))) CHECK(v == 0.0);
    for (double v : von_mises_field(m, s, Domain::bone())) CHECK(v >= 0.0);
}

TEST_CASE("quaternion stays normalised under large increments") {
    const auto m = stack_model();
    const auto dofs = rigid_couple(m);
    FEState s = initial_state(m);
    Eigen::VectorXd du = Eigen::VectorXd::Zero(dofs.n_dofs);
    du.segment<3>(dofs.body_dof[0] + 3) = Vec3(0.7, -0.4, 1.1);
    for (int i = 0; i < 50; ++i) {
        apply_increment(m, dofs, s, du);
        CHECK(std::abs(s.body_q[0].norm() - 1.0) < 1e-12);
    }
}

// ---------------------------------------------------------- rigid transforms

TEST_CASE("rigid transform extraction") {
    const auto m = stack_model();
    SUBCASE("identity") {
        const auto t = extract_rigid_transform(m, initial_state(m), 24);
        CHECK(t.translation.norm() == 0.0);
        CHECK(t.angle_deg == 0.0);
    }
    SUBCASE("prescribed 5 degrees about z") {
        FEState s = initial_state(m);
        s.body_q[0] = Eigen::Quaterniond(Eigen::AngleAxisd(5.0 * kPi / 180.0, Vec3::UnitZ()));
        s.body_t[0] = Vec3(0.1, 0, 0);
        update_rigid_nodes(m, s);
        const auto t = extract_rigid_transform(m, s, 24);
        CHECK(std::abs(t.angle_deg - 5.0) < 1e-10);
        CHECK((t.axis - Vec3::UnitZ()).norm() < 1e-10);
        CHECK((t.translation - Vec3(0.1, 0, 0)).norm() < 1e-10);
    }
    SUBCASE("composed rotations against the matrix logarithm") {
        std::mt19937_64 rng(31);
        std::uniform_real_distribution<double> u(-1, 1);
        for (int trial = 0; trial < 50; ++trial) {
            Mat3 R = Mat3::Identity();
            for (int k = 0; k < 5; ++k) R = rotation(8.0 * u(rng), Vec3(u(rng), u(rng), u(rng))) * R;
            FEState s = initial_state(m);
            s.body_q[0] = Eigen::Quaterniond(R);
            const auto t = extract_rigid_transform(m, s, 24);
            // log(R): theta from the trace, axis from the skew part.
            const double theta = std::acos(std::clamp((R.trace() - 1.0) / 2.0, -1.0, 1.0));
            const Vec3 w = Vec3(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1)) / (2.0 * std::sin(theta));
            CHECK(std::abs(t.angle_deg - theta * 180.0 / kPi) < 1e-9);
            CHECK((t.axis - w).norm() < 1e-9);
            CHECK(std::abs(t.axis.norm() - 1.0) < 1e-12);
        }
    }
    SUBCASE("angle is folded into [0, 180]") {
        FEState s = initial_state(m);
        s.body_q[0] = Eigen::Quaterniond(Eigen::AngleAxisd(-0.2, Vec3::UnitX()));
        auto t = extract_rigid_transform(m, s, 24);
        CHECK(t.angle_deg == doctest::Approx(0.2 * 180.0 / kPi).epsilon(1e-12));
        CHECK((t.axis + Vec3::UnitX()).norm() < 1e-12);
        s.body_q[0].coeffs() *= -1.0;  // same rotation
        t = extract_rigid_transform(m, s, 24);
        CHECK(t.angle_deg == doctest::Approx(0.2 * 180.0 / kPi).epsilon(1e-12));
    }
    CHECK_THROWS_AS(extract_rigid_transform(m, initial_state(m), 30), InvalidInput);
}

// ---------------------------------------------------------------------- ties

namespace {

// Two blocks with mismatched grids glued at z = 0.5; bottom fixed, top pressed.
FEModel tied_blocks(double penalty_factor, double gap_tol) {
    auto lo = box_mesh(3, 3, 2, Vec3(1, 1, 0.5));
    const auto hi = box_mesh(4, 4, 2, Vec3(1, 1, 0.5), Vec3(0, 0, 0.5), Domain::pdl(20));
    FEModel m;
    m.mesh = lo;
    const int off = static_cast<int>(lo.nodes.size());
    m.mesh.nodes.insert(m.mesh.nodes.end(), hi.nodes.begin(), hi.nodes.end());
    for (auto t : hi.elements) {
        for (int& v : t) v += off;
        m.mesh.elements.push_back(t);
        m.mesh.domain_of_element.push_back(Domain::pdl(20));
    }
    m.materials[Domain::bone()] = IsotropicElastic{1500.0, 0.3};
    m.materials[Domain::pdl(20)] = IsotropicElastic{100.0, 0.3};
    std::vector<int> lower(lo.elements.size()), upper;
    for (std::size_t e = 0; e < lower.size(); ++e) lower[e] = static_cast<int>(e);
    for (std::size_t e = lo.elements.size(); e < m.mesh.elements.size(); ++e) upper.push_back(static_cast<int>(e));
    std::vector<mesh::Tri> primary, secondary;
    for (const auto& f : m.mesh.boundary_faces(lower))
        if (m.mesh.nodes[f[0]].z() == 0.5 && m.mesh.nodes[f[1]].z() == 0.5 && m.mesh.nodes[f[2]].z() == 0.5) primary.push_back(f);
    for (const auto& f : m.mesh.boundary_faces(upper))
        if (m.mesh.nodes[f[0]].z() == 0.5 && m.mesh.nodes[f[1]].z() == 0.5 && m.mesh.nodes[f[2]].z() == 0.5) secondary.push_back(f);
    auto tie = make_tied_interface(m.mesh, m.materials, secondary, primary, penalty_factor);
    tie.gap_tol = gap_tol;
    m.ties.push_back(tie);
    m.dirichlet = testutil::nodes_where(m.mesh, [](const Vec3& p) { return p.z() == 0.0; });
    PressureLoad l;
    l.faces = testutil::faces_where(m.mesh, [](const Vec3& p) { return p.z() == 1.0; });
    l.area = 1.0;
    l.force = 2.0;
    m.loads.push_back(l);
    // Shear as well as compression: press one side too.
    PressureLoad side;
    side.faces = testutil::faces_where(m.mesh, [](const Vec3& p) { return p.x() == 0.0 && p.z() >= 0.5; });
    side.area = 0.5;
    side.force = 0.5;
    m.loads.push_back(side);
    m.finalize();
    return m;
}

double top_displacement(const FEModel& m, const FEState& s) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t v = 0; v < m.mesh.nodes.size(); ++v)
        if (m.mesh.nodes[v].z() == 1.0) {
            sum += s.u[v].norm();
            ++n;
        }
    return sum / n;
}

}  // namespace

TEST_CASE("tied interfaces") {
    SUBCASE("zero motion gives zero tie force") {
        const auto m = tied_blocks(1.0, 1e-7);
        Assembler A(m);
        FEState s = initial_state(m);
        // A common rigid translation of both blocks opens no gap.
        for (auto& u : s.u) u = Vec3(0.01, -0.02, 0.003);
        CHECK(A.max_tie_gap(s) < 1e-16);
        const auto f = internal_nodal_forces(m, s);
        for (const auto& v : f) CHECK(v.norm() < 1e-10);
    }
    SUBCASE("augmentation closes the gap; penalty changes little") {
        const auto m1 = tied_blocks(1.0, 1e-7);
        const auto s1 = solve_quasistatic(m1, 1).back();
        CHECK(Assembler(m1).max_tie_gap(s1) < 1e-7);
        const auto m2 = tied_blocks(2.0, 1e-7);
        const auto s2 = solve_quasistatic(m2, 1).back();
        CHECK(Assembler(m2).max_tie_gap(s2) < 1e-7);
        const double d1 = top_displacement(m1, s1), d2 = top_displacement(m2, s2);
        CHECK(d1 > 0.0);
        CHECK(std::abs(d2 - d1) / d1 < 0.005);
    }
    SUBCASE("distant surfaces are rejected") {
        auto m = tied_blocks(1.0, 1e-7);
        std::vector<int> upper;
        for (std::size_t e = 0; e < m.mesh.elements.size(); ++e)
            if (m.mesh.domain_of_element[e] == Domain::pdl(20)) upper.push_back(static_cast<int>(e));
        std::vector<mesh::Tri> top;
        for (const auto& f : m.mesh.boundary_faces(upper))
            if (m.mesh.nodes[f[0]].z() == 1.0 && m.mesh.nodes[f[1]].z() == 1.0 && m.mesh.nodes[f[2]].z() == 1.0) top.push_back(f);
        const auto& primary = m.ties[0].pairs;
        REQUIRE(!primary.empty());
        std::vector<mesh::Tri> bottom_faces = {primary.front().face};
        CHECK_THROWS_AS(make_tied_interface(m.mesh, m.materials, top, bottom_faces), InvalidInput);
    }
}

// ------------------------------------------------------------ synthetic model

TEST_CASE("synthetic incisor model") {
    const auto mesh = synth::synth_assembly(synth::default_single_tooth_patient());
    const auto m = build_model(mesh);
    CHECK(m.bodies().size() == 1);
    CHECK(m.loads.size() == 1);
    CHECK(m.ties.empty());
    CHECK(!m.dirichlet.empty());
    const auto dofs = rigid_couple(m);
    CHECK(dofs.body_dof.size() == 1);

    SolverOptions opts;
    opts.newton_tol = 1e-11;
    const auto s = solve_quasistatic(m, 1, opts).back();
    const auto t = extract_rigid_transform(m, s, 24);
    CHECK(t.translation.norm() > 0.0);
    CHECK(std::abs(s.body_q[0].norm() - 1.0) < 1e-12);
    // Tipping: the crown moves along the load, i.e. lingually (against the buccal normal).
    CHECK(t.translation.y() < 0.0);

    const auto& l = m.loads[0];
    std::vector<Vec3> x(m.mesh.nodes.size());
    for (const auto& f : l.faces)
        for (int v : f) x[v] = s.position(m, v);
    Vec3 applied = Vec3::Zero();
    for (const auto& f : pressure_forces(x, l.faces, l.pressure())) applied += f;
    CHECK((reaction_force(m, s) + applied).norm() < 1e-8);
}
