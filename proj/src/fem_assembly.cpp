#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/CholmodSupport>
#include <Eigen/SparseLU>

#include "odonto/fem.hpp"

namespace odonto::fem {

namespace {

using Mat12 = Eigen::Matrix<double, 12, 12>;
using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat36 = Eigen::Matrix<double, 3, 6>;

// Strain-displacement rows for one node (engineering shear, Voigt xx yy zz xy yz xz).
Eigen::Matrix<double, 6, 3> bmat(const Eigen::RowVector3d& g) {
    Eigen::Matrix<double, 6, 3> B = Eigen::Matrix<double, 6, 3>::Zero();
    B(0, 0) = g(0);
    B(1, 1) = g(1);
    B(2, 2) = g(2);
    B(3, 0) = g(1), B(3, 1) = g(0);
    B(4, 1) = g(2), B(4, 2) = g(1);
    B(5, 0) = g(2), B(5, 2) = g(0);
    return B;
}

Mat12 linear_stiffness(const Eigen::Matrix<double, 4, 3>& dN, double V, const Mat6& D) {
    Eigen::Matrix<double, 6, 12> B;
    for (int a = 0; a < 4; ++a) B.block<6, 3>(0, 3 * a) = bmat(dN.row(a));
    return V * B.transpose() * D * B;
}

bool is_rigid(const MaterialSpec& m) { return std::holds_alternative<Rigid>(m); }

struct Link {
    int group = -1;
    int size = 0;
    int body = -1;
    Mat36 G = Mat36::Zero();
};

}  // namespace

Assembler::Assembler(const FEModel& model) : model_(model), dofs_(rigid_couple(model)) {
    const auto& mesh = model.mesh;
    const int nn = static_cast<int>(mesh.nodes.size());

    node_group_.assign(nn, -1);
    for (int v = 0; v < nn; ++v)
        if (dofs_.node_dof[v] >= 0) {
            node_group_[v] = static_cast<int>(group_start_.size());
            group_start_.push_back(dofs_.node_dof[v]);
            group_size_.push_back(3);
        }
    std::vector<int> body_group;
    for (int d : dofs_.body_dof) {
        body_group.push_back(static_cast<int>(group_start_.size()));
        group_start_.push_back(d);
        group_size_.push_back(6);
    }
    for (int v = 0; v < nn; ++v)
        if (dofs_.node_body[v] >= 0) node_group_[v] = body_group[dofs_.node_body[v]];

    // Element classification and geometry.
    geom_.resize(mesh.elements.size());
    for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
        const auto& m = model.material(mesh.domain_of_element[e]);
        if (is_rigid(m)) continue;
        const auto p = mesh.element_points(e);
        Mat3 Jm;
        Jm << p[1] - p[0], p[2] - p[0], p[3] - p[0];
        const Mat3 inv = Jm.inverse();
        auto& g = geom_[e];
        g.volume = Jm.determinant() / 6.0;
        g.dN.row(1) = inv.row(0);
        g.dN.row(2) = inv.row(1);
        g.dN.row(3) = inv.row(2);
        g.dN.row(0) = -(inv.row(0) + inv.row(1) + inv.row(2));
        if (std::holds_alternative<MooneyRivlin>(m)) {
            hyper_elements_.push_back(static_cast<int>(e));
        } else {
            const bool touches_body =
                std::any_of(mesh.elements[e].begin(), mesh.elements[e].end(), [&](int v) { return dofs_.node_body[v] >= 0; });
            (touches_body ? linear_rigid_elements_ : linear_elements_).push_back(static_cast<int>(e));
        }
    }

    // Group connectivity.
    const int ng = static_cast<int>(group_start_.size());
    std::vector<std::vector<int>> adj(ng);
    auto connect = [&](const int* nodes, int k) {
        for (int i = 0; i < k; ++i) {
            const int a = node_group_[nodes[i]];
            if (a < 0) continue;
            for (int j = 0; j < k; ++j) {
                const int b = node_group_[nodes[j]];
                if (b >= 0) adj[a].push_back(b);
            }
        }
    };
    for (std::size_t e = 0; e < mesh.elements.size(); ++e)
        if (!is_rigid(model.material(mesh.domain_of_element[e]))) connect(mesh.elements[e].data(), 4);
    if (model.pressure_mode == PressureMode::Follower)
        for (const auto& l : model.loads)
            for (const auto& f : l.faces) connect(f.data(), 3);
    for (const auto& t : model.ties)
        for (const auto& p : t.pairs) {
            const int nodes[4] = {p.node, p.face[0], p.face[1], p.face[2]};
            connect(nodes, 4);
        }
    for (int g : body_group) adj[g].push_back(g);
    for (auto& a : adj) {
        std::sort(a.begin(), a.end());
        a.erase(std::unique(a.begin(), a.end()), a.end());
    }

    // Column-major pattern; group ids increase with their first DOF, so rows come out sorted.
    const int n = dofs_.n_dofs;
    linear_.resize(n, n);
    Eigen::VectorXi col_nnz = Eigen::VectorXi::Zero(n);
    for (int g = 0; g < ng; ++g) {
        int rows = 0;
        for (int h : adj[g]) rows += group_size_[h];
        for (int j = 0; j < group_size_[g]; ++j) col_nnz[group_start_[g] + j] = rows;
    }
    linear_.reserve(col_nnz);
    for (int g = 0; g < ng; ++g)
        for (int j = 0; j < group_size_[g]; ++j)
            for (int h : adj[g])
                for (int i = 0; i < group_size_[h]; ++i)
                    linear_.insert(group_start_[h] + i, group_start_[g] + j) = 0.0;
    linear_.makeCompressed();

    for (const auto& [v, axis] : model.rollers)
        if (dofs_.node_dof[v] >= 0) roller_dofs_.push_back(dofs_.node_dof[v] + axis);
    std::sort(roller_dofs_.begin(), roller_dofs_.end());
    roller_dofs_.erase(std::unique(roller_dofs_.begin(), roller_dofs_.end()), roller_dofs_.end());

    for (int e : linear_elements_) {
        const auto& m = std::get<IsotropicElastic>(model.material(mesh.domain_of_element[e]));
        const Mat12 Ke = linear_stiffness(geom_[e].dN, geom_[e].volume, linear_elastic_tangent(m));
        const auto& el = mesh.elements[e];
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b)
                if (node_group_[el[a]] >= 0 && node_group_[el[b]] >= 0)
                    add_block(linear_.valuePtr(), node_group_[el[a]], node_group_[el[b]], Ke.block<3, 3>(3 * a, 3 * b));
    }
}

int Assembler::position(int row, int col) const {
    const int* outer = linear_.outerIndexPtr();
    const int* inner = linear_.innerIndexPtr();
    const int* it = std::lower_bound(inner + outer[col], inner + outer[col + 1], row);
    return static_cast<int>(it - inner);
}

void Assembler::add_block(double* values, int ga, int gb, const Eigen::MatrixXd& M) const {
    const int r0 = group_start_[ga];
    for (int j = 0; j < M.cols(); ++j) {
        const int pos = position(r0, group_start_[gb] + j);
        for (int i = 0; i < M.rows(); ++i) values[pos + i] += M(i, j);
    }
}

void Assembler::assemble(const FEState& state, Eigen::VectorXd& R, SparseMatrix* K) const {
    const auto& mesh = model_.mesh;
    const auto& bodies = model_.bodies();
    const int n = dofs_.n_dofs;

    // Current lever arms of rigid nodes.
    auto link = [&](int v) {
        Link l;
        l.group = node_group_[v];
        if (l.group < 0) return l;
        l.size = group_size_[l.group];
        l.G.leftCols<3>().setIdentity();
        l.body = dofs_.node_body[v];
        if (l.body >= 0) {
            const Vec3 c = bodies[l.body].props.com + state.body_t[l.body];
            l.G.rightCols<3>() = -skew(state.position(model_, v) - c);
        }
        return l;
    };

    std::vector<Vec3> body_net(mesh.nodes.size(), Vec3::Zero());  // net residual force at rigid nodes
    double* values = nullptr;
    if (K) {
        *K = linear_;
        values = K->valuePtr();
    }

    // Constant small-strain part.
    Eigen::VectorXd U = Eigen::VectorXd::Zero(n);
    for (std::size_t v = 0; v < mesh.nodes.size(); ++v)
        if (dofs_.node_dof[v] >= 0) U.segment<3>(dofs_.node_dof[v]) = state.u[v];
    R = linear_ * U;

    // Scatter nodal contributions f (3k) and stiffness Kf (3k x 3k) of `nodes`.
    auto scatter = [&](const int* nodes, int k, const Eigen::VectorXd& f, const Eigen::MatrixXd* Kf) {
        Link L[4];
        for (int a = 0; a < k; ++a) L[a] = link(nodes[a]);
        for (int a = 0; a < k; ++a) {
            if (L[a].group < 0) continue;
            const Vec3 fa = f.segment<3>(3 * a);
            R.segment(group_start_[L[a].group], L[a].size) += L[a].G.leftCols(L[a].size).transpose() * fa;
            if (L[a].body >= 0) body_net[nodes[a]] += fa;
        }
        if (!Kf || !values) return;
        for (int a = 0; a < k; ++a) {
            if (L[a].group < 0) continue;
            for (int b = 0; b < k; ++b) {
                if (L[b].group < 0) continue;
                const Mat3 Kab = Kf->block<3, 3>(3 * a, 3 * b);
                if (L[a].body < 0 && L[b].body < 0) {
                    add_block(values, L[a].group, L[b].group, Kab);
                } else {
                    const Eigen::MatrixXd M = L[a].G.leftCols(L[a].size).transpose() * Kab * L[b].G.leftCols(L[b].size);
                    add_block(values, L[a].group, L[b].group, M);
                }
            }
        }
    };

    Eigen::VectorXd fe(12);
    Eigen::MatrixXd Ke(12, 12);
    for (int e : hyper_elements_) {
        const auto& el = mesh.elements[e];
        const auto& g = geom_[e];
        Mat3 F = Mat3::Identity();
        for (int a = 0; a < 4; ++a) F += state.u[el[a]] * g.dN.row(a);
        const auto& mat = std::get<MooneyRivlin>(model_.material(mesh.domain_of_element[e]));
        const auto r = neo_hookean_response(F, mat, e);
        const double J = F.determinant();
        const double v = J * g.volume;
        const Eigen::Matrix<double, 4, 3> gx = g.dN * F.inverse();  // spatial gradients (rows)
        for (int a = 0; a < 4; ++a) fe.segment<3>(3 * a) = v * r.sigma * gx.row(a).transpose();
        if (values) {
            Eigen::Matrix<double, 6, 12> B;
            for (int a = 0; a < 4; ++a) B.block<6, 3>(0, 3 * a) = bmat(gx.row(a));
            Ke = v * B.transpose() * r.c * B;
            const Eigen::Matrix4d geo = v * gx * r.sigma * gx.transpose();
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b) Ke.block<3, 3>(3 * a, 3 * b).diagonal().array() += geo(a, b);
        }
        scatter(el.data(), 4, fe, &Ke);
    }

    for (int e : linear_rigid_elements_) {
        const auto& el = mesh.elements[e];
        const auto& mat = std::get<IsotropicElastic>(model_.material(mesh.domain_of_element[e]));
        Ke = linear_stiffness(geom_[e].dN, geom_[e].volume, linear_elastic_tangent(mat));
        Vec12 ue;
        for (int a = 0; a < 4; ++a) ue.segment<3>(3 * a) = state.u[el[a]];
        fe = Ke * ue;
        scatter(el.data(), 4, fe, &Ke);
    }

    // Pressure (enters the residual with a minus sign).
    for (const auto& l : model_.loads) {
        const double p = state.load_factor * l.pressure();
        std::vector<Vec3> x;
        std::vector<Eigen::Matrix<double, 9, 9>> S;
        const bool follower = model_.pressure_mode == PressureMode::Follower;
        if (follower) {
            x.resize(mesh.nodes.size());
            for (const auto& f : l.faces)
                for (int v : f) x[v] = state.position(model_, v);
        }
        const auto forces = pressure_forces(follower ? x : mesh.nodes, l.faces, p, follower && values ? &S : nullptr);
        Eigen::VectorXd ff(9);
        Eigen::MatrixXd Kf(9, 9);
        for (std::size_t k = 0; k < l.faces.size(); ++k) {
            for (int a = 0; a < 3; ++a) ff.segment<3>(3 * a) = -forces[3 * k + a];
            if (!S.empty()) Kf = -S[k];
            scatter(l.faces[k].data(), 3, ff, S.empty() ? nullptr : &Kf);
        }
    }

    // Tied pairs: energy eps/2 |g|^2 + lambda . g with g = u_s - sum N_i u_i.
    for (std::size_t t = 0; t < model_.ties.size(); ++t) {
        const auto& tie = model_.ties[t];
        for (std::size_t k = 0; k < tie.pairs.size(); ++k) {
            const auto& p = tie.pairs[k];
            const int nodes[4] = {p.node, p.face[0], p.face[1], p.face[2]};
            const double w[4] = {1.0, -p.bary[0], -p.bary[1], -p.bary[2]};
            Vec3 gap = Vec3::Zero();
            for (int a = 0; a < 4; ++a) gap += w[a] * state.u[nodes[a]];
            const Vec3 force = p.penalty * gap + state.tie_lambda[t][k];
            Eigen::VectorXd ft(12);
            Eigen::MatrixXd Kt(12, 12);
            for (int a = 0; a < 4; ++a) {
                ft.segment<3>(3 * a) = w[a] * force;
                for (int b = 0; b < 4; ++b) Kt.block<3, 3>(3 * a, 3 * b) = p.penalty * w[a] * w[b] * Mat3::Identity();
            }
            scatter(nodes, 4, ft, &Kt);
        }
    }

    // Rotation of the lever arms: d(r x g)/dphi = [g]x [r]x.
    if (values)
        for (std::size_t b = 0; b < bodies.size(); ++b) {
            const Vec3 c = bodies[b].props.com + state.body_t[b];
            Mat3 Kg = Mat3::Zero();
            for (int v : bodies[b].nodes) Kg += skew(body_net[v]) * skew(state.position(model_, v) - c);
            Mat6 M = Mat6::Zero();
            M.block<3, 3>(3, 3) = Kg;
            const int g = node_group_[bodies[b].nodes.front()];
            add_block(values, g, g, M);
        }

    // Rollers: decoupled unit rows and columns (the pattern is structurally symmetric).
    for (int d : roller_dofs_) {
        R[d] = 0.0;
        if (!values) continue;
        const int* outer = K->outerIndexPtr();
        const int* inner = K->innerIndexPtr();
        for (int p = outer[d]; p < outer[d + 1]; ++p) {
            const int i = inner[p];
            values[p] = i == d ? 1.0 : 0.0;
            if (i != d) values[position(d, i)] = 0.0;
        }
    }
}

Eigen::VectorXd Assembler::external_force(const FEState& state) const {
    const auto& mesh = model_.mesh;
    const auto& bodies = model_.bodies();
    Eigen::VectorXd F = Eigen::VectorXd::Zero(dofs_.n_dofs);
    for (const auto& l : model_.loads) {
        std::vector<Vec3> x(mesh.nodes.size());
        for (const auto& f : l.faces)
            for (int v : f)
                x[v] = model_.pressure_mode == PressureMode::Follower ? state.position(model_, v) : mesh.nodes[v];
        const auto forces = pressure_forces(x, l.faces, state.load_factor * l.pressure());
        for (std::size_t k = 0; k < l.faces.size(); ++k)
            for (int a = 0; a < 3; ++a) {
                const int v = l.faces[k][a];
                const Vec3& f = forces[3 * k + a];
                if (dofs_.node_dof[v] >= 0) {
                    F.segment<3>(dofs_.node_dof[v]) += f;
                } else if (const int b = dofs_.node_body[v]; b >= 0) {
                    const Vec3 r = state.position(model_, v) - (bodies[b].props.com + state.body_t[b]);
                    F.segment<3>(dofs_.body_dof[b]) += f;
                    F.segment<3>(dofs_.body_dof[b] + 3) += r.cross(f);
                }
            }
    }
    for (int d : roller_dofs_) F[d] = 0.0;
    return F;
}

double Assembler::max_tie_gap(const FEState& state) const {
    double worst = 0.0;
    for (const auto& tie : model_.ties)
        for (const auto& p : tie.pairs) {
            const Vec3 gap = state.u[p.node] - p.bary[0] * state.u[p.face[0]] - p.bary[1] * state.u[p.face[1]] -
                             p.bary[2] * state.u[p.face[2]];
            worst = std::max(worst, gap.norm());
        }
    return worst;
}

// ------------------------------------------------------------- linear solver

void blas_override_anchor();

namespace {

using Cholmod = Eigen::CholmodDecomposition<SparseMatrix, Eigen::Lower>;

// Some optimised BLAS builds return wrong results inside CHOLMOD's supernodal kernels on some
// CPUs; factor a small SPD Laplacian once and use the simplicial kernels if that fails.
bool supernodal_works() {
    static const bool ok = [] {
        const int m = 8, n = m * m * m;
        auto id = [m](int i, int j, int k) { return (i * m + j) * m + k; };
        std::vector<Eigen::Triplet<double>> t;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j)
                for (int k = 0; k < m; ++k) {
                    const int a = id(i, j, k);
                    t.emplace_back(a, a, 6.01);
                    const int nb[3] = {i ? id(i - 1, j, k) : -1, j ? id(i, j - 1, k) : -1, k ? id(i, j, k - 1) : -1};
                    for (int b : nb)
                        if (b >= 0) t.emplace_back(a, b, -1.0), t.emplace_back(b, a, -1.0);
                }
        SparseMatrix A(n, n);
        A.setFromTriplets(t.begin(), t.end());
        Cholmod c;
        c.cholmod().print = 0;
        c.setMode(Eigen::CholmodSupernodalLLt);
        c.compute(A);
        if (c.info() != Eigen::Success) return false;
        const Eigen::VectorXd b = Eigen::VectorXd::Ones(n);
        return (A * c.solve(b) - b).norm() < 1e-10 * b.norm();
    }();
    return ok;
}

}  // namespace

struct LinearSolver::Impl {
    Cholmod chol;
    Eigen::Index analyzed_nnz = -1;
    Eigen::Index analyzed_n = -1;
    SparseMatrix K;
    bool chol_ok = false;
    std::unique_ptr<Eigen::SparseLU<SparseMatrix>> lu;

    Impl() {
        blas_override_anchor();
        chol.cholmod().print = 0;
        chol.setMode(supernodal_works() ? Eigen::CholmodSupernodalLLt : Eigen::CholmodSimplicialLLt);
    }

    void use_lu() {
        if (lu) return;
        lu = std::make_unique<Eigen::SparseLU<SparseMatrix>>();
        lu->compute(K);
        if (lu->info() != Eigen::Success) throw ConvergenceError("singular tangent matrix");
    }
};

LinearSolver::LinearSolver() : impl_(std::make_unique<Impl>()) {}
LinearSolver::~LinearSolver() = default;
LinearSolver::LinearSolver(LinearSolver&&) noexcept = default;
LinearSolver& LinearSolver::operator=(LinearSolver&&) noexcept = default;

void LinearSolver::factorize(const SparseMatrix& K) {
    auto& d = *impl_;
    d.K = K;
    d.lu.reset();
    const SparseMatrix Kt = K.transpose();
    const SparseMatrix S = 0.5 * (K + Kt);
    if (S.nonZeros() != d.analyzed_nnz || S.rows() != d.analyzed_n) {
        d.chol.analyzePattern(S);
        d.analyzed_nnz = S.nonZeros();
        d.analyzed_n = S.rows();
    }
    d.chol.factorize(S);
    d.chol_ok = d.chol.info() == Eigen::Success;
    if (!d.chol_ok) d.use_lu();
}

Eigen::VectorXd LinearSolver::solve(const Eigen::VectorXd& b) {
    auto& d = *impl_;
    const double bn = b.norm();
    if (bn == 0.0) return Eigen::VectorXd::Zero(b.size());
    if (d.lu) return d.lu->solve(b);
    // Defect correction: Cholesky of the symmetric part against the full matrix.
    Eigen::VectorXd x = d.chol.solve(b);
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 60; ++it) {
        const Eigen::VectorXd r = b - d.K * x;
        const double rn = r.norm();
        if (rn <= 1e-13 * bn) return x;
        if (!(rn < 0.9 * prev)) {  // stagnation at round-off is acceptable
            if (prev <= 1e-10 * bn) return x;
            break;
        }
        prev = rn;
        x += d.chol.solve(r);
    }
    d.use_lu();
    return d.lu->solve(b);
}

}  // namespace odonto::fem
