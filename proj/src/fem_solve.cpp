#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "odonto/fem.hpp"

namespace odonto::fem {

namespace {

Eigen::Matrix<double, 4, 3> shape_gradients(const mesh::TetMesh& mesh, int e, double* volume = nullptr) {
    const auto p = mesh.element_points(e);
    Mat3 Jm;
    Jm << p[1] - p[0], p[2] - p[0], p[3] - p[0];
    const Mat3 inv = Jm.inverse();
    Eigen::Matrix<double, 4, 3> dN;
    dN.row(1) = inv.row(0);
    dN.row(2) = inv.row(1);
    dN.row(3) = inv.row(2);
    dN.row(0) = -(inv.row(0) + inv.row(1) + inv.row(2));
    if (volume) *volume = Jm.determinant() / 6.0;
    return dN;
}

Mat3 displacement_gradient(const FEState& s, const mesh::Tet& el, const Eigen::Matrix<double, 4, 3>& dN) {
    Mat3 H = Mat3::Zero();
    for (int a = 0; a < 4; ++a) H += s.u[el[a]] * dN.row(a);
    return H;
}

class Stepper {
public:
    Stepper(const FEModel& model, const SolverOptions& opts) : model_(model), asm_(model), opts_(opts) {}

    // Solves at `target` starting from `from`; bisects the increment on failure.
    FEState advance(const FEState& from, double target, int depth = 0) {
        FEState trial = from;
        if (newton(trial, target)) return trial;
        if (depth >= opts_.max_bisections)
            throw ConvergenceError(fmt::format("no convergence at load factor {} after {} bisections", target, depth));
        const double mid = 0.5 * (from.load_factor + target);
        const FEState half = advance(from, mid, depth + 1);
        FEState done = advance(half, target, depth + 1);
        done.iterations += half.iterations;
        return done;
    }

private:
    const FEModel& model_;
    Assembler asm_;
    LinearSolver lin_;
    SolverOptions opts_;
    bool factored_ = false;  // a tangent from an earlier iteration (or step) is available

    bool newton_only(FEState& s) {
        Eigen::VectorXd R;
        SparseMatrix K;
        double prev = std::numeric_limits<double>::infinity();
        for (int it = 0; it <= opts_.max_iters; ++it) {
            double rn = 0.0;
            try {
                asm_.assemble(s, R, nullptr);
                rn = R.norm();
                s.residual_norm = rn;
                if (!std::isfinite(rn)) return false;
                if (rn <= opts_.newton_tol * asm_.external_force(s).norm() || rn < 1e-14) return true;
                if (it == opts_.max_iters) break;
                if (!factored_ || opts_.refactor_ratio <= 0.0 || rn > opts_.refactor_ratio * prev) {
                    factored_ = false;
                    asm_.assemble(s, R, &K);
                    lin_.factorize(K);
                    factored_ = true;
                }
            } catch (const ElementInversion&) {
                factored_ = false;
                return false;
            } catch (const ConvergenceError&) {
                factored_ = false;
                return false;
            }
            prev = rn;
            apply_increment(model_, asm_.dofs(), s, lin_.solve(-R));
            ++s.iterations;
        }
        factored_ = false;
        return false;
    }

    bool newton(FEState& s, double target) {
        s.load_factor = target;
        s.iterations = 0;
        if (!newton_only(s)) return false;
        if (model_.ties.empty()) return true;
        int max_aug = 0;
        for (const auto& t : model_.ties) max_aug = std::max(max_aug, t.max_augmentations);
        for (int aug = 0; aug < max_aug; ++aug) {
            bool done = true;
            for (std::size_t t = 0; t < model_.ties.size(); ++t) {
                const auto& tie = model_.ties[t];
                double gap = 0.0, dl = 0.0, ln = 0.0;
                std::vector<Vec3> next(tie.pairs.size());
                for (std::size_t k = 0; k < tie.pairs.size(); ++k) {
                    const auto& p = tie.pairs[k];
                    const Vec3 g = s.u[p.node] - p.bary[0] * s.u[p.face[0]] - p.bary[1] * s.u[p.face[1]] -
                                   p.bary[2] * s.u[p.face[2]];
                    gap = std::max(gap, g.norm());
                    next[k] = s.tie_lambda[t][k] + p.penalty * g;
                    dl += (next[k] - s.tie_lambda[t][k]).squaredNorm();
                    ln += next[k].squaredNorm();
                }
                const bool gap_ok = gap < tie.gap_tol;
                const bool rel_ok = tie.aug_rel_tol > 0.0 && ln > 0.0 && std::sqrt(dl / ln) < tie.aug_rel_tol;
                if (gap_ok || rel_ok) continue;
                s.tie_lambda[t] = std::move(next);
                done = false;
            }
            if (done) return true;
            if (!newton_only(s)) return false;
        }
        return true;
    }
};

}  // namespace

std::vector<FEState> solve_quasistatic(const FEModel& model, int n_steps, const SolverOptions& opts) {
    if (n_steps < 1) throw InvalidInput("need at least one load step");
    Stepper stepper(model, opts);
    std::vector<FEState> out;
    FEState s = initial_state(model);
    for (int i = 1; i <= n_steps; ++i) {
        s = stepper.advance(s, static_cast<double>(i) / n_steps);
        out.push_back(s);
    }
    return out;
}

std::vector<std::optional<FEState>> solve_path(const FEModel& model, const std::vector<double>& load_factors,
                                               const SolverOptions& opts) {
    for (double f : load_factors)
        if (!(f >= 0.0) || !std::isfinite(f)) throw InvalidInput("load factors must be finite and non-negative");
    Stepper stepper(model, opts);
    std::vector<std::optional<FEState>> out;
    FEState s = initial_state(model);
    for (double f : load_factors) {
        try {
            s = stepper.advance(s, f);
            out.emplace_back(s);
        } catch (const ConvergenceError&) {
            out.emplace_back(std::nullopt);
        }
    }
    return out;
}

// --------------------------------------------------------------------- output

RigidTransform extract_rigid_transform(const FEModel& model, const FEState& state, int unn) {
    const int b = model.body_index(unn);
    RigidTransform r;
    r.translation = state.body_t[b];
    Eigen::Quaterniond q = state.body_q[b].normalized();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    const double s = q.vec().norm();
    r.angle_deg = 2.0 * std::atan2(s, q.w()) * 180.0 / std::numbers::pi;
    r.axis = s > 0.0 ? Vec3(q.vec() / s) : Vec3::UnitZ();
    return r;
}

Mat3 element_stress(const FEModel& model, const FEState& state, int e) {
    const auto& m = model.material(model.mesh.domain_of_element[e]);
    const auto dN = shape_gradients(model.mesh, e);
    const Mat3 H = displacement_gradient(state, model.mesh.elements[e], dN);
    if (const auto* h = std::get_if<MooneyRivlin>(&m)) return neo_hookean_response(Mat3::Identity() + H, *h, e).sigma;
    if (const auto* l = std::get_if<IsotropicElastic>(&m)) return linear_elastic_response(0.5 * (H + H.transpose()), *l);
    throw InvalidInput("element " + std::to_string(e) + " is rigid");
}

std::vector<double> von_mises_field(const FEModel& model, const FEState& state, const mesh::Domain& domain) {
    if (std::holds_alternative<Rigid>(model.material(domain)))
        throw InvalidInput("no stress field in rigid domain " + domain.name());
    std::vector<double> out;
    for (int e : model.mesh.elements_in(domain)) out.push_back(von_mises(element_stress(model, state, e)));
    return out;
}

std::vector<Vec3> internal_nodal_forces(const FEModel& model, const FEState& state) {
    const auto& mesh = model.mesh;
    std::vector<Vec3> f(mesh.nodes.size(), Vec3::Zero());
    for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
        const auto& m = model.material(mesh.domain_of_element[e]);
        if (std::holds_alternative<Rigid>(m)) continue;
        const auto& el = mesh.elements[e];
        double V = 0.0;
        const auto dN = shape_gradients(mesh, static_cast<int>(e), &V);
        const Mat3 H = displacement_gradient(state, el, dN);
        if (const auto* h = std::get_if<MooneyRivlin>(&m)) {
            const Mat3 F = Mat3::Identity() + H;
            const Mat3 sigma = neo_hookean_response(F, *h, static_cast<int>(e)).sigma;
            const double v = F.determinant() * V;
            const Eigen::Matrix<double, 4, 3> gx = dN * F.inverse();
            for (int a = 0; a < 4; ++a) f[el[a]] += v * sigma * gx.row(a).transpose();
        } else {
            const Mat3 sigma = linear_elastic_response(0.5 * (H + H.transpose()), std::get<IsotropicElastic>(m));
            for (int a = 0; a < 4; ++a) f[el[a]] += V * sigma * dN.row(a).transpose();
        }
    }
    for (std::size_t t = 0; t < model.ties.size(); ++t)
        for (std::size_t k = 0; k < model.ties[t].pairs.size(); ++k) {
            const auto& p = model.ties[t].pairs[k];
            const int nodes[4] = {p.node, p.face[0], p.face[1], p.face[2]};
            const double w[4] = {1.0, -p.bary[0], -p.bary[1], -p.bary[2]};
            Vec3 gap = Vec3::Zero();
            for (int a = 0; a < 4; ++a) gap += w[a] * state.u[nodes[a]];
            const Vec3 force = p.penalty * gap + state.tie_lambda[t][k];
            for (int a = 0; a < 4; ++a) f[nodes[a]] += w[a] * force;
        }
    return f;
}

Vec3 reaction_force(const FEModel& model, const FEState& state) {
    const auto f = internal_nodal_forces(model, state);
    Vec3 r = Vec3::Zero();
    for (int v : model.dirichlet) r += f[v];
    return r;
}

void write_vtk(const FEModel& model, const FEState& state, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write '" + path + "'");
    const auto& mesh = model.mesh;
    out << "# vtk DataFile Version 3.0\nodonto result\nASCII\nDATASET UNSTRUCTURED_GRID\n";
    out << "POINTS " << mesh.nodes.size() << " double\n";
    for (const auto& p : mesh.nodes) out << fmt::format("{:.10g} {:.10g} {:.10g}\n", p.x(), p.y(), p.z());
    out << "CELLS " << mesh.elements.size() << ' ' << 5 * mesh.elements.size() << '\n';
    for (const auto& e : mesh.elements) out << "4 " << e[0] << ' ' << e[1] << ' ' << e[2] << ' ' << e[3] << '\n';
    out << "CELL_TYPES " << mesh.elements.size() << '\n';
    for (std::size_t e = 0; e < mesh.elements.size(); ++e) out << "10\n";
    out << "POINT_DATA " << mesh.nodes.size() << "\nVECTORS displacement double\n";
    for (const auto& u : state.u) out << fmt::format("{:.10g} {:.10g} {:.10g}\n", u.x(), u.y(), u.z());
    out << "CELL_DATA " << mesh.elements.size() << "\nSCALARS domain int 1\nLOOKUP_TABLE default\n";
    for (const auto& d : mesh.domain_of_element) out << d.code() << '\n';
    out << "SCALARS von_mises double 1\nLOOKUP_TABLE default\n";
    for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
        const bool rigid = std::holds_alternative<Rigid>(model.material(mesh.domain_of_element[e]));
        out << fmt::format("{:.10g}\n", rigid ? 0.0 : von_mises(element_stress(model, state, static_cast<int>(e))));
    }
}

}  // namespace odonto::fem
