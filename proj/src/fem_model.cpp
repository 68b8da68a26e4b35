#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>
#include <unordered_map>

#include "json_util.hpp"
#include "odonto/fem.hpp"
#include "odonto/mesh_io.hpp"
#include "odonto/synth.hpp"

namespace odonto::fem {

using jsonutil::check_keys;
using jsonutil::json;
using jsonutil::read;

namespace {

double stiffness_scale(const MaterialSpec& m) {
    if (const auto* e = std::get_if<IsotropicElastic>(&m)) return e->E;
    if (const auto* h = std::get_if<MooneyRivlin>(&m)) return h->young();
    return 0.0;
}

bool is_rigid(const MaterialSpec& m) { return std::holds_alternative<Rigid>(m); }

// Closest point on triangle abc to p (barycentric weights of a, b, c).
Vec3 closest_bary(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0 && d2 <= 0) return {1, 0, 0};
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3) return {0, 1, 0};
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0) {
        const double v = d1 / (d1 - d3);
        return {1 - v, v, 0};
    }
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0 && d5 <= d6) return {0, 0, 1};
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0) {
        const double w = d2 / (d2 - d6);
        return {1 - w, 0, w};
    }
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return {0, 1 - w, w};
    }
    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    return {1 - v - w, v, w};
}

int parse_suffix(const std::string& name, const std::string& prefix) {
    if (name.rfind(prefix, 0) != 0) return -1;
    try {
        std::size_t used = 0;
        const int k = std::stoi(name.substr(prefix.size()), &used);
        return used == name.size() - prefix.size() ? k : -1;
    } catch (const std::exception&) {
        return -1;
    }
}

}  // namespace

// ---------------------------------------------------------------------- model

const MaterialSpec& FEModel::material(const mesh::Domain& d) const {
    const auto it = materials.find(d);
    if (it == materials.end()) throw InvalidInput("no material for domain " + d.name());
    return it->second;
}

int FEModel::body_index(int unn) const {
    for (std::size_t i = 0; i < bodies_.size(); ++i)
        if (bodies_[i].unn == unn) return static_cast<int>(i);
    throw InvalidInput("no rigid tooth " + std::to_string(unn));
}

void FEModel::finalize() {
    mesh.validate();
    for (const auto& d : mesh.domains()) {
        const auto& m = material(d);
        if (const auto* e = std::get_if<IsotropicElastic>(&m)) e->validate();
        if (const auto* h = std::get_if<MooneyRivlin>(&m)) h->validate();
        if (const auto* r = std::get_if<Rigid>(&m); r && !(r->density > 0.0))
            throw InvalidInput("rigid density must be positive");
    }

    bodies_.clear();
    std::vector<int> owner(mesh.nodes.size(), -1);
    for (const auto& d : mesh.domains()) {
        const auto* r = std::get_if<Rigid>(&material(d));
        if (!r) continue;
        RigidBody b;
        b.unn = d.kind == mesh::DomainKind::Tooth ? d.id : d.code();
        b.props = compute_center_of_mass(mesh, d, r->density);
        b.nodes = mesh.domain_nodes(d);
        for (int n : b.nodes) {
            if (owner[n] >= 0) throw InvalidInput("node " + std::to_string(n) + " belongs to two rigid bodies");
            owner[n] = static_cast<int>(bodies_.size());
        }
        bodies_.push_back(std::move(b));
    }

    std::sort(dirichlet.begin(), dirichlet.end());
    dirichlet.erase(std::unique(dirichlet.begin(), dirichlet.end()), dirichlet.end());
    if (dirichlet.empty()) throw InvalidInput("no Dirichlet nodes");
    for (int n : dirichlet) {
        if (n < 0 || n >= static_cast<int>(mesh.nodes.size())) throw InvalidInput("Dirichlet node out of range");
        if (owner[n] >= 0) throw InvalidInput("Dirichlet node " + std::to_string(n) + " lies on a rigid body");
    }
    for (const auto& [n, axis] : rollers) {
        if (n < 0 || n >= static_cast<int>(mesh.nodes.size()) || axis < 0 || axis > 2)
            throw InvalidInput("roller out of range");
        if (owner[n] >= 0) throw InvalidInput("roller node " + std::to_string(n) + " lies on a rigid body");
    }
    for (const auto& l : loads) {
        if (l.faces.empty()) throw InvalidInput("empty load face set");
        if (!(l.area > 0.0)) throw InvalidInput("load patch area must be positive");
        for (const auto& f : l.faces)
            for (int n : f)
                if (n < 0 || n >= static_cast<int>(mesh.nodes.size())) throw InvalidInput("load face node out of range");
    }
    rigid_couple(*this);  // coupling check
}

DofMap rigid_couple(const FEModel& model) {
    const auto& mesh = model.mesh;
    const int n = static_cast<int>(mesh.nodes.size());
    DofMap d;
    d.node_dof.assign(n, -1);
    d.node_body.assign(n, -1);
    const auto& bodies = model.bodies();
    for (std::size_t b = 0; b < bodies.size(); ++b)
        for (int v : bodies[b].nodes) d.node_body[v] = static_cast<int>(b);

    std::vector<char> deformable(n, 0);
    for (std::size_t e = 0; e < mesh.elements.size(); ++e)
        if (!is_rigid(model.material(mesh.domain_of_element[e])))
            for (int v : mesh.elements[e]) deformable[v] = 1;
    for (const auto& t : model.ties)
        for (const auto& p : t.pairs) {
            deformable[p.node] = 1;
            for (int v : p.face) deformable[v] = 1;
        }

    std::vector<char> fixed(n, 0);
    for (int v : model.dirichlet) fixed[v] = 1;

    int next = 0;
    for (int v = 0; v < n; ++v)
        if (deformable[v] && !fixed[v] && d.node_body[v] < 0) {
            d.node_dof[v] = next;
            next += 3;
            ++d.n_free_nodes;
        }
    for (std::size_t b = 0; b < bodies.size(); ++b) {
        const bool coupled =
            std::any_of(bodies[b].nodes.begin(), bodies[b].nodes.end(), [&](int v) { return deformable[v] != 0; });
        if (!coupled) throw InvalidInput("tooth " + std::to_string(bodies[b].unn) + " has no interface nodes");
        d.body_dof.push_back(next);
        next += 6;
    }
    d.n_dofs = next;
    return d;
}

// ----------------------------------------------------------------------- ties

TiedInterface make_tied_interface(const mesh::TetMesh& mesh, const std::map<mesh::Domain, MaterialSpec>& materials,
                                  const std::vector<mesh::Tri>& secondary_faces,
                                  const std::vector<mesh::Tri>& primary_faces, double penalty_factor,
                                  double max_distance) {
    if (secondary_faces.empty() || primary_faces.empty()) throw InvalidInput("tied interface needs both surfaces");
    if (!(penalty_factor > 0.0)) throw InvalidInput("penalty factor must be positive");

    std::vector<double> node_E(mesh.nodes.size(), 0.0);
    for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
        const auto it = materials.find(mesh.domain_of_element[e]);
        if (it == materials.end()) continue;
        const double E = stiffness_scale(it->second);
        for (int v : mesh.elements[e]) node_E[v] = std::max(node_E[v], E);
    }

    std::map<int, double> trib;  // secondary node -> tributary area
    for (const auto& f : secondary_faces) {
        const double a = mesh.face_area(f) / 3.0;
        for (int v : f) trib[v] += a;
    }

    // Uniform grid over primary faces.
    double cell = 0.0;
    for (const auto& f : primary_faces)
        for (int i = 0; i < 3; ++i)
            cell = std::max(cell, (mesh.nodes[f[i]] - mesh.nodes[f[(i + 1) % 3]]).norm());
    cell = std::max(cell, max_distance) + 1e-12;
    auto key = [&](const Vec3& p) {
        return std::array<long, 3>{static_cast<long>(std::floor(p.x() / cell)),
                                   static_cast<long>(std::floor(p.y() / cell)),
                                   static_cast<long>(std::floor(p.z() / cell))};
    };
    std::map<std::array<long, 3>, std::vector<int>> grid;
    for (std::size_t k = 0; k < primary_faces.size(); ++k) {
        Vec3 lo = mesh.nodes[primary_faces[k][0]], hi = lo;
        for (int v : primary_faces[k]) {
            lo = lo.cwiseMin(mesh.nodes[v]);
            hi = hi.cwiseMax(mesh.nodes[v]);
        }
        const auto a = key(lo), b = key(hi);
        for (long i = a[0]; i <= b[0]; ++i)
            for (long j = a[1]; j <= b[1]; ++j)
                for (long l = a[2]; l <= b[2]; ++l) grid[{i, j, l}].push_back(static_cast<int>(k));
    }

    TiedInterface t;
    t.penalty_factor = penalty_factor;
    for (const auto& [node, area] : trib) {
        const Vec3& p = mesh.nodes[node];
        const auto c = key(p);
        double best = std::numeric_limits<double>::infinity();
        TiedPair pair;
        pair.node = node;
        std::set<int> seen;
        for (long i = -1; i <= 1; ++i)
            for (long j = -1; j <= 1; ++j)
                for (long l = -1; l <= 1; ++l) {
                    const auto it = grid.find({c[0] + i, c[1] + j, c[2] + l});
                    if (it == grid.end()) continue;
                    for (int k : it->second) {
                        if (!seen.insert(k).second) continue;
                        const auto& f = primary_faces[k];
                        const Vec3 w = closest_bary(p, mesh.nodes[f[0]], mesh.nodes[f[1]], mesh.nodes[f[2]]);
                        const Vec3 q = w[0] * mesh.nodes[f[0]] + w[1] * mesh.nodes[f[1]] + w[2] * mesh.nodes[f[2]];
                        const double dist = (q - p).norm();
                        if (dist < best) {
                            best = dist;
                            pair.face = f;
                            pair.bary = w;
                        }
                    }
                }
        if (!(best <= max_distance))
            throw InvalidInput("tied node " + std::to_string(node) + " is " +
                               (std::isfinite(best) ? std::to_string(best) + " mm" : std::string("far")) +
                               " from the primary surface");
        const auto& f = pair.face;
        const double h = ((mesh.nodes[f[0]] - mesh.nodes[f[1]]).norm() + (mesh.nodes[f[1]] - mesh.nodes[f[2]]).norm() +
                          (mesh.nodes[f[2]] - mesh.nodes[f[0]]).norm()) /
                         3.0;
        double E = node_E[node];
        for (int v : f) E = std::max(E, node_E[v]);
        if (E <= 0.0) E = 1.0;
        pair.penalty = penalty_factor * E * area / h;
        t.pairs.push_back(pair);
    }
    return t;
}

// -------------------------------------------------------------------- builder

FEModel build_model(const mesh::TetMesh& mesh, const ModelOptions& opts) {
    FEModel m;
    m.mesh = mesh;
    for (const auto& d : mesh.domains()) {
        if (const auto it = opts.domain_materials.find(d.code()); it != opts.domain_materials.end()) {
            m.materials[d] = it->second;
            continue;
        }
        switch (d.kind) {
            case mesh::DomainKind::Tooth: m.materials[d] = opts.tooth; break;
            case mesh::DomainKind::Pdl: m.materials[d] = opts.pdl; break;
            case mesh::DomainKind::Bone: m.materials[d] = opts.bone; break;
            case mesh::DomainKind::Other: throw InvalidInput("no material for domain " + d.name());
        }
    }
    if (!mesh.boundary_sets.contains(synth::kDirichletSet))
        throw InvalidInput("mesh has no '" + synth::kDirichletSet + "' boundary set");
    m.dirichlet = mesh.set_nodes(synth::kDirichletSet);

    std::set<int> wanted(opts.loaded.begin(), opts.loaded.end());
    std::set<int> found;
    for (const auto& [name, set] : mesh.boundary_sets) {
        const int k = parse_suffix(name, "load_patch_");
        if (k < 0) continue;
        if (!wanted.empty() && !wanted.contains(k)) continue;
        PressureLoad l;
        l.tooth_unn = k;
        l.faces = set.faces;
        l.area = set.recorded_area.value_or(mesh.set_area(name));
        l.force = opts.force;
        m.loads.push_back(std::move(l));
        found.insert(k);
    }
    for (int k : wanted)
        if (!found.contains(k)) throw InvalidInput("tooth " + std::to_string(k) + " has no load patch");

    for (const auto& [name, set] : mesh.boundary_sets) {
        const int k = parse_suffix(name, "pb_");
        if (k < 0) continue;
        const auto socket = mesh.boundary_sets.find(synth::bone_socket_set(k));
        if (socket == mesh.boundary_sets.end()) continue;  // conforming interface
        auto t = make_tied_interface(mesh, m.materials, set.faces, socket->second.faces, opts.penalty_factor);
        t.name = name;
        t.gap_tol = opts.gap_tol;
        t.aug_rel_tol = opts.aug_rel_tol;
        m.ties.push_back(std::move(t));
    }
    m.pressure_mode = opts.pressure_mode;
    m.finalize();
    return m;
}

// ---------------------------------------------------------------------- state

FEState initial_state(const FEModel& model) {
    FEState s;
    s.u.assign(model.mesh.nodes.size(), Vec3::Zero());
    s.body_t.assign(model.bodies().size(), Vec3::Zero());
    s.body_q.assign(model.bodies().size(), Eigen::Quaterniond::Identity());
    for (const auto& t : model.ties) s.tie_lambda.emplace_back(t.pairs.size(), Vec3::Zero());
    return s;
}

void update_rigid_nodes(const FEModel& model, FEState& state) {
    const auto& bodies = model.bodies();
    for (std::size_t b = 0; b < bodies.size(); ++b) {
        const Vec3& c = bodies[b].props.com;
        const Mat3 R = state.body_q[b].toRotationMatrix();
        for (int v : bodies[b].nodes) {
            const Vec3& X = model.mesh.nodes[v];
            state.u[v] = c + state.body_t[b] + R * (X - c) - X;
        }
    }
}

void apply_increment(const FEModel& model, const DofMap& dofs, FEState& state, const Eigen::VectorXd& du) {
    for (std::size_t v = 0; v < dofs.node_dof.size(); ++v)
        if (dofs.node_dof[v] >= 0) state.u[v] += du.segment<3>(dofs.node_dof[v]);
    for (std::size_t b = 0; b < dofs.body_dof.size(); ++b) {
        const int k = dofs.body_dof[b];
        state.body_t[b] += du.segment<3>(k);
        const Vec3 phi = du.segment<3>(k + 3);
        const double angle = phi.norm();
        const Eigen::Quaterniond dq =
            angle > 0.0 ? Eigen::Quaterniond(Eigen::AngleAxisd(angle, phi / angle)) : Eigen::Quaterniond::Identity();
        state.body_q[b] = (dq * state.body_q[b]).normalized();
    }
    update_rigid_nodes(model, state);
}

// ----------------------------------------------------------------------- JSON

MaterialSpec material_from_json(const json& j) {
    if (!j.is_object() || !j.contains("type")) throw InvalidInput("material needs a 'type'");
    const std::string type = j.at("type").get<std::string>();
    if (type == "rigid") {
        check_keys(j, {"type", "density"}, "rigid material");
        Rigid r;
        read(j, "density", r.density);
        if (!(r.density > 0.0)) throw InvalidInput("rigid density must be positive");
        return r;
    }
    if (type == "isotropic_elastic") {
        check_keys(j, {"type", "E", "nu"}, "isotropic elastic material");
        IsotropicElastic e;
        read(j, "E", e.E);
        read(j, "nu", e.nu);
        e.validate();
        return e;
    }
    if (type == "mooney_rivlin") {
        check_keys(j, {"type", "c1", "c2", "k"}, "Mooney-Rivlin material");
        MooneyRivlin m;
        read(j, "c1", m.c1);
        read(j, "c2", m.c2);
        read(j, "k", m.k);
        m.validate();
        return m;
    }
    if (type == "neo_hookean") {
        check_keys(j, {"type", "E", "nu"}, "neo-Hookean material");
        double E = 0.0689, nu = 0.45;
        read(j, "E", E);
        read(j, "nu", nu);
        if (!(E > 0.0) || !(nu > -1.0 && nu < 0.5)) throw InvalidInput("neo-Hookean: need E > 0 and -1 < nu < 0.5");
        return MooneyRivlin::from_young(E, nu);
    }
    throw InvalidInput("unknown material type '" + type + "'");
}

json material_to_json(const MaterialSpec& m) {
    if (const auto* r = std::get_if<Rigid>(&m)) return {{"type", "rigid"}, {"density", r->density}};
    if (const auto* e = std::get_if<IsotropicElastic>(&m)) return {{"type", "isotropic_elastic"}, {"E", e->E}, {"nu", e->nu}};
    const auto& h = std::get<MooneyRivlin>(m);
    return {{"type", "mooney_rivlin"}, {"c1", h.c1}, {"c2", h.c2}, {"k", h.k}};
}

ModelOptions model_options_from_json(const json& j) {
    ModelOptions o;
    if (j.contains("materials")) {
        const auto& mj = j.at("materials");
        check_keys(mj, {"tooth", "pdl", "bone", "domains"}, "materials");
        if (mj.contains("tooth")) o.tooth = material_from_json(mj.at("tooth"));
        if (mj.contains("pdl")) o.pdl = material_from_json(mj.at("pdl"));
        if (mj.contains("bone")) o.bone = material_from_json(mj.at("bone"));
        if (mj.contains("domains")) {
            if (!mj.at("domains").is_object()) throw InvalidInput("materials.domains must be an object");
            for (const auto& [code, spec] : mj.at("domains").items()) {
                int c = 0;
                try {
                    c = std::stoi(code);
                } catch (const std::exception&) {
                    throw InvalidInput("bad domain code '" + code + "'");
                }
                o.domain_materials[c] = material_from_json(spec);
            }
        }
    }
    if (j.contains("loads")) {
        const auto& lj = j.at("loads");
        check_keys(lj, {"force", "teeth", "pressure"}, "loads");
        read(lj, "force", o.force);
        read(lj, "teeth", o.loaded);
        std::string mode = "follower";
        read(lj, "pressure", mode);
        if (mode == "follower") o.pressure_mode = PressureMode::Follower;
        else if (mode == "reference") o.pressure_mode = PressureMode::Reference;
        else throw InvalidInput("loads.pressure must be 'follower' or 'reference'");
        if (!(o.force >= 0.0)) throw InvalidInput("loads.force must be non-negative");
    }
    if (j.contains("ties")) {
        const auto& tj = j.at("ties");
        check_keys(tj, {"penalty_factor", "gap_tol", "aug_rel_tol"}, "ties");
        read(tj, "penalty_factor", o.penalty_factor);
        read(tj, "gap_tol", o.gap_tol);
        read(tj, "aug_rel_tol", o.aug_rel_tol);
    }
    return o;
}

FEModel model_from_json(const json& j, const std::string& base_dir) {
    check_keys(j, {"mesh", "materials", "loads", "ties"}, "model");
    if (!j.contains("mesh")) throw InvalidInput("model needs a 'mesh' entry");
    const auto& mj = j.at("mesh");
    check_keys(mj, {"node", "ele", "sets"}, "mesh");
    auto path = [&](const char* key) {
        if (!mj.contains(key)) throw InvalidInput(std::string("mesh needs '") + key + "'");
        std::filesystem::path p = mj.at(key).get<std::string>();
        return (p.is_absolute() ? p : std::filesystem::path(base_dir) / p).string();
    };
    auto m = mesh::load_tetgen(path("node"), path("ele"));
    if (mj.contains("sets")) mesh::load_boundary_sets(m, path("sets"));
    return build_model(m, model_options_from_json(j));
}

}  // namespace odonto::fem
