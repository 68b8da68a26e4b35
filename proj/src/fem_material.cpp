#include <cmath>

#include "odonto/fem.hpp"

namespace odonto::fem {

namespace {

constexpr int kVoigt[6][2] = {{0, 0}, {1, 1}, {2, 2}, {0, 1}, {1, 2}, {0, 2}};

// Fourth-order building blocks evaluated at Voigt positions.
inline double delta(int i, int j) { return i == j ? 1.0 : 0.0; }

template <class F>
Mat6 voigt(F&& f) {
    Mat6 c;
    for (int I = 0; I < 6; ++I)
        for (int J = 0; J < 6; ++J) c(I, J) = f(kVoigt[I][0], kVoigt[I][1], kVoigt[J][0], kVoigt[J][1]);
    return c;
}

Mat6 one_x_one() {
    return voigt([](int i, int j, int k, int l) { return delta(i, j) * delta(k, l); });
}

Mat6 sym_identity() {
    return voigt([](int i, int j, int k, int l) { return 0.5 * (delta(i, k) * delta(j, l) + delta(i, l) * delta(j, k)); });
}

Mat6 dyad(const Mat3& a, const Mat3& b) {
    return voigt([&](int i, int j, int k, int l) { return a(i, j) * b(k, l); });
}

// 1/2 (a_ik a_jl + a_il a_jk)
Mat6 sym_product(const Mat3& a) {
    return voigt([&](int i, int j, int k, int l) { return 0.5 * (a(i, k) * a(j, l) + a(i, l) * a(j, k)); });
}

}  // namespace

void IsotropicElastic::validate() const {
    if (!(E > 0.0) || !(nu > -1.0 && nu < 0.5))
        throw InvalidInput("isotropic elastic: need E > 0 and -1 < nu < 0.5");
}

MooneyRivlin MooneyRivlin::from_young(double E, double nu) {
    MooneyRivlin m;
    m.c1 = E / (4.0 * (1.0 + nu));
    m.c2 = 0.0;
    m.k = E / (3.0 * (1.0 - 2.0 * nu));
    m.validate();
    return m;
}

double MooneyRivlin::young() const {
    const double mu = 2.0 * (c1 + c2);
    return 9.0 * k * mu / (3.0 * k + mu);
}

void MooneyRivlin::validate() const {
    if (!(c1 + c2 > 0.0) || !(k > 0.0) || !std::isfinite(c1) || !std::isfinite(c2))
        throw InvalidInput("Mooney-Rivlin: need C1 + C2 > 0 and K > 0");
}

HyperelasticResponse neo_hookean_response(const Mat3& F, const MooneyRivlin& m, int element) {
    const double J = F.determinant();
    if (!(J > 0.0)) throw ElementInversion(element, J);
    const Mat3 I = Mat3::Identity();
    const Mat3 b = std::pow(J, -2.0 / 3.0) * (F * F.transpose());
    const Mat3 b2 = b * b;
    const double I1 = b.trace();

    // Fictitious Kirchhoff-like stress of the isochoric part, divided by J.
    const Mat3 st = (2.0 / J) * ((m.c1 + I1 * m.c2) * b - m.c2 * b2);
    const double tr = st.trace();
    const Mat3 dev = st - tr / 3.0 * I;
    const double p = m.k * std::log(J) / J;

    HyperelasticResponse r;
    r.sigma = dev + p * I;

    const Mat6 II = one_x_one();
    const Mat6 Is = sym_identity();
    const Mat3 Y = (4.0 / J) * m.c2 * (I1 * b - b2);  // c~ : 1
    const double y = (4.0 / J) * m.c2 * (I1 * I1 - b2.trace());
    const Mat6 ct = (4.0 / J) * m.c2 * (dyad(b, b) - sym_product(b));
    const Mat6 ct_dev = ct - (dyad(I, Y) + dyad(Y, I)) / 3.0 + y / 9.0 * II;

    r.c = ct_dev + 2.0 / 3.0 * tr * (Is - II / 3.0) - 2.0 / 3.0 * (dyad(dev, I) + dyad(I, dev)) +
          (m.k / J) * II - 2.0 * p * Is;
    return r;
}

double strain_energy(const Mat3& F, const MooneyRivlin& m) {
    const double J = F.determinant();
    if (!(J > 0.0)) throw ElementInversion(-1, J);
    const Mat3 b = std::pow(J, -2.0 / 3.0) * (F * F.transpose());
    const double I1 = b.trace();
    const double I2 = 0.5 * (I1 * I1 - (b * b).trace());
    const double lnJ = std::log(J);
    return m.c1 * (I1 - 3.0) + m.c2 * (I2 - 3.0) + 0.5 * m.k * lnJ * lnJ;
}

Mat3 linear_elastic_response(const Mat3& strain, const IsotropicElastic& m) {
    return m.lambda() * strain.trace() * Mat3::Identity() + 2.0 * m.mu() * strain;
}

Mat6 linear_elastic_tangent(const IsotropicElastic& m) {
    return m.lambda() * one_x_one() + 2.0 * m.mu() * sym_identity();
}

double von_mises(const Mat3& s) {
    const double a = s(0, 0) - s(1, 1), b = s(1, 1) - s(2, 2), c = s(2, 2) - s(0, 0);
    const double sh = s(0, 1) * s(0, 1) + s(1, 2) * s(1, 2) + s(0, 2) * s(0, 2);
    return std::sqrt(0.5 * (a * a + b * b + c * c) + 3.0 * sh);
}

MassProperties compute_center_of_mass(const mesh::TetMesh& mesh, const mesh::Domain& domain, double density) {
    const auto elems = mesh.elements_in(domain);
    if (elems.empty()) throw InvalidInput("no elements in domain " + domain.name());
    MassProperties mp;
    Vec3 first = Vec3::Zero();
    Mat3 second = Mat3::Zero();  // integral of x x^T
    for (int e : elems) {
        const auto p = mesh.element_points(e);
        const double v = mesh::tet_volume(p[0], p[1], p[2], p[3]);
        const Vec3 s = p[0] + p[1] + p[2] + p[3];
        mp.volume += v;
        first += v * s / 4.0;
        Mat3 xx = s * s.transpose();
        for (const auto& q : p) xx += q * q.transpose();
        second += v / 20.0 * xx;
    }
    mp.com = first / mp.volume;
    mp.mass = density * mp.volume;
    const Mat3 M = second - mp.volume * mp.com * mp.com.transpose();
    mp.inertia = density * (M.trace() * Mat3::Identity() - M);
    return mp;
}

double pressure_for_force(double force, double area) {
    if (!(area > 0.0)) throw InvalidInput("load patch area must be positive");
    return force / area;
}

std::vector<Vec3> pressure_forces(const std::vector<Vec3>& x, const std::vector<mesh::Tri>& faces, double p,
                                  std::vector<Eigen::Matrix<double, 9, 9>>* stiffness) {
    std::vector<Vec3> f(faces.size() * 3);
    if (stiffness) stiffness->resize(faces.size());
    for (std::size_t k = 0; k < faces.size(); ++k) {
        const Vec3& x1 = x[faces[k][0]];
        const Vec3& x2 = x[faces[k][1]];
        const Vec3& x3 = x[faces[k][2]];
        const Vec3 n = (x2 - x1).cross(x3 - x1);
        for (int a = 0; a < 3; ++a) f[3 * k + a] = -p / 6.0 * n;
        if (stiffness) {
            // dn/dx_b for b = 1, 2, 3
            const Mat3 D[3] = {skew(x3 - x2), -skew(x3 - x1), skew(x2 - x1)};
            auto& S = (*stiffness)[k];
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) S.block<3, 3>(3 * a, 3 * b) = -p / 6.0 * D[b];
        }
    }
    return f;
}

}  // namespace odonto::fem
