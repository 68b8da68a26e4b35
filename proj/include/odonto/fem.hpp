#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Geometry>
#include <Eigen/SparseCore>
#include <nlohmann/json_fwd.hpp>

#include "odonto/mesh.hpp"

namespace odonto::fem {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using SparseMatrix = Eigen::SparseMatrix<double>;

// ------------------------------------------------------------------ materials
// Units: mm, N, MPa, tonne/mm^3.

struct Rigid {
    double density = 1.0e-9;
};

struct IsotropicElastic {
    double E = 1500.0;
    double nu = 0.3;

    double lambda() const { return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)); }
    double mu() const { return E / (2.0 * (1.0 + nu)); }
    void validate() const;
};

/// W = C1 (I1~ - 3) + C2 (I2~ - 3) + K/2 (ln J)^2 with isochoric invariants I1~, I2~.
struct MooneyRivlin {
    double c1 = 0.011875;
    double c2 = 0.0;
    double k = 0.0689 / (3.0 * (1.0 - 2.0 * 0.45));

    /// Neo-Hookean parameters from small-strain constants: C1 = E / (4 (1 + nu)), K = E / (3 (1 - 2 nu)).
    static MooneyRivlin from_young(double E, double nu);
    /// Small-strain Young's modulus of the parameter set.
    double young() const;
    void validate() const;
};

using MaterialSpec = std::variant<Rigid, IsotropicElastic, MooneyRivlin>;

/// Clinical defaults: rigid teeth, neo-Hookean PDL, linear elastic bone.
struct DefaultMaterials {
    static MaterialSpec tooth() { return Rigid{}; }
    static MaterialSpec pdl() { return MooneyRivlin{}; }
    static MaterialSpec bone() { return IsotropicElastic{}; }
};

struct HyperelasticResponse {
    Mat3 sigma;  // Cauchy stress
    Mat6 c;      // spatial tangent, Voigt order xx yy zz xy yz xz
};

/// Throws ElementInversion(element, J) if det F <= 0.
HyperelasticResponse neo_hookean_response(const Mat3& F, const MooneyRivlin& m, int element = -1);
double strain_energy(const Mat3& F, const MooneyRivlin& m);
/// sigma = lambda tr(eps) I + 2 mu eps.
Mat3 linear_elastic_response(const Mat3& strain, const IsotropicElastic& m);
Mat6 linear_elastic_tangent(const IsotropicElastic& m);
double von_mises(const Mat3& sigma);

// --------------------------------------------------------------- rigid bodies

struct MassProperties {
    Vec3 com = Vec3::Zero();
    double volume = 0.0;
    double mass = 0.0;
    Mat3 inertia = Mat3::Zero();  // about the COM
};

MassProperties compute_center_of_mass(const mesh::TetMesh& mesh, const mesh::Domain& domain, double density);

struct RigidBody {
    int unn = 0;
    MassProperties props;
    std::vector<int> nodes;  // sorted
};

// ---------------------------------------------------------------------- loads

/// p = force / area.
double pressure_for_force(double force, double area);

enum class PressureMode { Follower, Reference };

/// Pressure on a face set; `force` (N) is the magnitude at load factor 1 and is converted with `area`.
struct PressureLoad {
    int tooth_unn = 0;  // 0 for loads on deformable surfaces
    std::vector<mesh::Tri> faces;
    double area = 0.0;
    double force = 1.0;
    double pressure() const { return pressure_for_force(force, area); }
};

/// Force -(p/6) (x21 x x31) on each face corner (pressure pushes against the outward normal);
/// entry 3k+a belongs to node faces[k][a].
/// If `stiffness` is given, receives per-face 9x9 blocks dF_ext/dx (follower) in face-node order.
std::vector<Vec3> pressure_forces(const std::vector<Vec3>& x, const std::vector<mesh::Tri>& faces, double p,
                                  std::vector<Eigen::Matrix<double, 9, 9>>* stiffness = nullptr);

// --------------------------------------------------------------------- ties

struct TiedPair {
    int node = -1;             // secondary node
    mesh::Tri face{};          // primary face
    Vec3 bary = Vec3::Zero();  // projection of the node onto the face at rest
    double penalty = 0.0;      // N/mm
};

struct TiedInterface {
    std::string name;
    std::vector<TiedPair> pairs;
    double penalty_factor = 1.0;
    double gap_tol = 1e-4;  // mm; augmentation stops when every gap is below this
    double aug_rel_tol = 0.0;  // optional: stop when the multiplier norm changes less than this fraction
    int max_augmentations = 50;
};

/// Node-to-face pairs by closest-point projection at rest. Penalty per node scales with the
/// stiffer adjacent material: factor * E * A_node / h. Throws InvalidInput if a node is farther
/// than `max_distance` from the primary surface.
TiedInterface make_tied_interface(const mesh::TetMesh& mesh, const std::map<mesh::Domain, MaterialSpec>& materials,
                                  const std::vector<mesh::Tri>& secondary_faces,
                                  const std::vector<mesh::Tri>& primary_faces, double penalty_factor = 1.0,
                                  double max_distance = 0.05);

// --------------------------------------------------------------------- model

struct SolverOptions {
    double newton_tol = 1e-8;  // ||R|| <= tol * ||F_ext||
    int max_iters = 25;
    int max_bisections = 4;
    // The factorised tangent is reused while each iteration shrinks the residual by at least
    // this factor; 0 forces a fresh tangent every iteration (full Newton).
    double refactor_ratio = 0.1;
};

class FEModel {
public:
    mesh::TetMesh mesh;
    std::map<mesh::Domain, MaterialSpec> materials;
    std::vector<int> dirichlet;  // fixed nodes
    std::vector<std::pair<int, int>> rollers;  // (node, axis): fixed along one axis only
    std::vector<PressureLoad> loads;
    std::vector<TiedInterface> ties;
    PressureMode pressure_mode = PressureMode::Follower;

    /// Checks invariants and computes rigid bodies; must be called after editing.
    void finalize();
    const std::vector<RigidBody>& bodies() const { return bodies_; }
    const MaterialSpec& material(const mesh::Domain& d) const;
    int body_index(int unn) const;

private:
    std::vector<RigidBody> bodies_;
};

struct ModelOptions {
    MaterialSpec tooth = DefaultMaterials::tooth();
    MaterialSpec pdl = DefaultMaterials::pdl();
    MaterialSpec bone = DefaultMaterials::bone();
    double force = 1.0;          // N per loaded tooth at load factor 1
    std::vector<int> loaded;     // empty = every tooth with a bracket patch
    double penalty_factor = 1.0;
    double gap_tol = 1e-4;
    double aug_rel_tol = 0.0;
    PressureMode pressure_mode = PressureMode::Follower;
    std::map<int, MaterialSpec> domain_materials;  // by domain code; overrides the three above
};

/// Model for a synthetic or imported assembly using the standard boundary-set names
/// (load_patch_k, gamma_D, and pb_k/socket_k ties when present).
FEModel build_model(const mesh::TetMesh& mesh, const ModelOptions& opts = {});

// --------------------------------------------------------------------- state

struct FEState {
    std::vector<Vec3> u;  // displacement of every node (rigid nodes follow their body)
    std::vector<Vec3> body_t;
    std::vector<Eigen::Quaterniond> body_q;
    std::vector<std::vector<Vec3>> tie_lambda;  // augmented-Lagrangian multipliers per tie pair
    double load_factor = 0.0;
    double residual_norm = 0.0;
    int iterations = 0;  // Newton iterations spent on this state

    Vec3 position(const FEModel& m, int node) const { return m.mesh.nodes[node] + u[node]; }
};

FEState initial_state(const FEModel& model);

/// Degree-of-freedom layout: 3 per free deformable node, then 6 per rigid body
/// (translation, spatial rotation increment). Dirichlet nodes carry no DOFs.
struct DofMap {
    std::vector<int> node_dof;   // -1 if fixed or rigid
    std::vector<int> node_body;  // -1 if not on a rigid body
    std::vector<int> body_dof;
    int n_dofs = 0;
    int n_free_nodes = 0;
};

/// Throws InvalidInput if a tooth has no nodes shared with (or tied to) deformable material.
DofMap rigid_couple(const FEModel& model);

/// Applies a DOF increment: u += du on free nodes, t += dt, q <- exp(dphi) q (normalised),
/// then refreshes rigid node displacements.
void apply_increment(const FEModel& model, const DofMap& dofs, FEState& state, const Eigen::VectorXd& du);
void update_rigid_nodes(const FEModel& model, FEState& state);

/// Residual (internal - external) and tangent at a state. Holds the sparsity pattern and the
/// constant linear-elastic stiffness; build once per model.
class Assembler {
public:
    explicit Assembler(const FEModel& model);
    const DofMap& dofs() const { return dofs_; }
    int n_dofs() const { return dofs_.n_dofs; }

    /// Throws ElementInversion for det F <= 0.
    void assemble(const FEState& state, Eigen::VectorXd& residual, SparseMatrix* tangent) const;
    Eigen::VectorXd external_force(const FEState& state) const;
    /// Largest tie gap (mm) at a state.
    double max_tie_gap(const FEState& state) const;

private:
    struct ElementGeometry {
        Eigen::Matrix<double, 4, 3> dN;  // reference shape-function gradients
        double volume = 0.0;
    };
    const FEModel& model_;
    DofMap dofs_;
    std::vector<int> group_start_, group_size_, node_group_;  // DOF groups: free node (3) or body (6)
    SparseMatrix linear_;                  // constant small-strain stiffness of elements off rigid bodies;
                                           // its pattern is the full (structurally symmetric) pattern
    std::vector<int> hyper_elements_, linear_elements_, linear_rigid_elements_;
    std::vector<int> roller_dofs_;
    std::vector<ElementGeometry> geom_;    // indexed like mesh.elements

    int position(int row, int col) const;
    void add_block(double* values, int ga, int gb, const Eigen::MatrixXd& M) const;
};

/// Sparse linear solve of K x = b with K nearly symmetric: Cholesky of the symmetric part plus
/// defect correction, falling back to LU.
class LinearSolver {
public:
    LinearSolver();
    ~LinearSolver();
    LinearSolver(LinearSolver&&) noexcept;
    LinearSolver& operator=(LinearSolver&&) noexcept;
    /// Factorises K (kept for later solves).
    void factorize(const SparseMatrix& K);
    /// Solves with the last factorised matrix.
    Eigen::VectorXd solve(const Eigen::VectorXd& b);
    Eigen::VectorXd solve(const SparseMatrix& K, const Eigen::VectorXd& b) {
        factorize(K);
        return solve(b);
    }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Load ramped linearly over n_steps; one state per step. Throws ConvergenceError.
std::vector<FEState> solve_quasistatic(const FEModel& model, int n_steps, const SolverOptions& opts = {});

/// Continuation through increasing load factors. Levels that fail after all bisections are
/// returned empty and the path continues from the last converged state.
std::vector<std::optional<FEState>> solve_path(const FEModel& model, const std::vector<double>& load_factors,
                                               const SolverOptions& opts = {});

// ------------------------------------------------------------------- output

struct RigidTransform {
    Vec3 translation = Vec3::Zero();  // mm, COM displacement
    double angle_deg = 0.0;           // [0, 180]
    Vec3 axis = Vec3::UnitZ();        // unit; +z when the angle is zero
};

RigidTransform extract_rigid_transform(const FEModel& model, const FEState& state, int unn);

/// Von Mises stress per element of a deformable domain (Cauchy stress). Throws InvalidInput for rigid domains.
std::vector<double> von_mises_field(const FEModel& model, const FEState& state, const mesh::Domain& domain);
/// Cauchy stress of one deformable element.
Mat3 element_stress(const FEModel& model, const FEState& state, int element);

/// Internal nodal forces of deformable elements and ties (all nodes).
std::vector<Vec3> internal_nodal_forces(const FEModel& model, const FEState& state);

/// Net reaction force on the Dirichlet nodes.
Vec3 reaction_force(const FEModel& model, const FEState& state);

/// Legacy VTK unstructured grid with displacement and von Mises fields.
void write_vtk(const FEModel& model, const FEState& state, const std::string& path);

/// Model description JSON (paths relative to `base_dir`).
FEModel model_from_json(const nlohmann::json& j, const std::string& base_dir);
ModelOptions model_options_from_json(const nlohmann::json& j);
MaterialSpec material_from_json(const nlohmann::json& j);
nlohmann::json material_to_json(const MaterialSpec& m);

}  // namespace odonto::fem
