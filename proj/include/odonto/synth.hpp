#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "odonto/mesh.hpp"

namespace odonto::synth {

/// Placement of a tooth in the jaw frame. Local coordinates are (mesial, buccal, occlusal);
/// the frame is improper (left-handed) for right-side teeth so that mirror pairs share local geometry.
struct Frame {
    Vec3 origin = Vec3::Zero();
    Vec3 mesial = Vec3::UnitX();
    Vec3 buccal = Vec3::UnitY();
    Vec3 axis = Vec3::UnitZ();

    Vec3 to_world(const Vec3& local) const { return origin + mesial * local.x() + buccal * local.y() + axis * local.z(); }
    Vec3 to_local(const Vec3& world) const {
        const Vec3 d = world - origin;
        return {d.dot(mesial), d.dot(buccal), d.dot(axis)};
    }
    bool left_handed() const { return mesial.cross(buccal).dot(axis) < 0.0; }
    /// Default frame for a tooth at the origin; mesial points to -x for right-side teeth.
    static Frame standard(int unn);
};

/// Parametric tooth: frustum root below the CEJ (local z = 0) and a bulging crown above it.
/// Radii are bucco-lingual semi-axes; two-rooted teeth get an oblong root footprint.
struct ToothTemplate {
    int unn = 24;
    double crown_height = 9.0;  // mm, CEJ to occlusal face
    double root_length = 12.5;  // mm, CEJ to apex
    double root_radius_top = 2.4;
    double root_radius_bottom = 0.8;
    double crown_radius = 2.8;  // mesio-distal semi-width at the height of contour
    int n_roots = 1;
    double patch_width = 3.0;   // bracket patch, mm along the crown surface
    double patch_height = 3.0;
    std::optional<Frame> frame;

    void validate() const;
    bool right_side() const { return unn >= 25; }

    // Cross-section semi-axes (mesio-distal, bucco-lingual) at local height z.
    double root_md(double z) const;
    double root_bl(double z) const;
    double crown_md(double z) const;
    double crown_bl(double z) const;
};

/// Typical mandibular tooth for a UNN (17-32); right-side teeth mirror their left partner.
ToothTemplate default_tooth(int unn);

/// Edge-length targets (mm) per domain. Defaults are coarser than the clinical table so that a
/// full dentition solves on a laptop; `table1()` returns the clinical values.
struct MeshSizing {
    double tooth_edge = 0.8;
    double pdl_edge = 0.2;
    double bone_edge_near = 0.8;
    double bone_edge_far = 2.0;

    static MeshSizing table1() { return {0.4, 0.1, 0.4, 2.0}; }
    MeshSizing scaled(double f) const { return {tooth_edge * f, pdl_edge * f, bone_edge_near * f, bone_edge_far * f}; }
};

struct PatientTemplate {
    std::string patient_id = "patient";
    std::vector<ToothTemplate> teeth;
    double pdl_thickness = 0.2;
    double bone_depth_below_apex = 3.0;  // bone under the deepest PDL apex
    double bone_wall = 1.5;              // bucco-lingual bone beyond the widest socket
    double interproximal_bone = 1.2;     // minimum bone between neighbouring sockets
    double crown_gap = 0.3;              // clearance between neighbouring crowns
    double arch_radius = 25.0;           // curvature radius of the parabolic arch at the midline
    MeshSizing sizing;
    double max_radius_edge = 8.0;        // every generated element must satisfy this
    int refinement_level = 0;            // element count grows by refinement_factor per level
    double refinement_factor = 2.0;
    bool tied_pdl_bone = false;          // duplicate nodes on the PDL-bone interface (tied, not shared)

    void validate() const;
    const ToothTemplate& tooth(int unn) const;
};

/// Single incisor (UNN 24) patient.
PatientTemplate default_single_tooth_patient();
/// Full mandibular dentition 17-32 with default teeth.
PatientTemplate default_full_patient();

/// Jaw-frame placement of each tooth along a parabolic arch (same order as `patient.teeth`).
std::vector<Frame> arch_layout(const PatientTemplate& patient);

// Boundary-set names.
std::string patch_set(int unn);       // bracket patch on tooth `unn`
std::string tooth_pdl_set(int unn);   // tooth -> PDL interface (outward from tooth)
std::string pdl_bone_set(int unn);    // PDL -> bone interface, PDL-side nodes
std::string bone_socket_set(int unn); // bone side of the PDL-bone interface (tied meshes only)
inline const std::string kDirichletSet = "gamma_D";

/// Closed tooth surface with faces labelled "crown", "root" and "load_patch".
mesh::SurfaceMesh synth_tooth(const ToothTemplate& tooth, const MeshSizing& sizing = {});

/// PDL shell around the faces labelled "root": inner surface = root faces (reversed),
/// outer surface = vertex-normal offset by `thickness`, closed by a rim strip at the CEJ.
/// Faces are labelled "inner", "outer" and "rim"; inner vertices are copies of the root vertices.
mesh::SurfaceMesh synth_pdl(const mesh::SurfaceMesh& tooth_surface, double thickness);

struct AssemblyInfo {
    struct Tooth {
        int unn = 0;
        Frame frame;
        double crown_height = 0.0;
        double patch_area = 0.0;
    };
    std::vector<Tooth> teeth;
    double bone_depth = 0.0;
};

/// Conforming tooth/PDL/bone TET4 assembly with boundary sets for every bracket patch,
/// the tooth-PDL and PDL-bone interfaces and the bone bottom (gamma_D).
mesh::TetMesh synth_assembly(const PatientTemplate& patient, AssemblyInfo* info = nullptr);

struct FamilyRule {
    std::string suffix;
    double crown_height_scale = 1.0;
    double root_scale = 1.0;  // root length and radii
};

/// Crown +-20 %, roots -+20 %.
std::vector<FamilyRule> default_family_rules();
std::vector<PatientTemplate> patient_family(const PatientTemplate& base, const std::vector<FamilyRule>& rules);

// JSON (schema in README).
PatientTemplate patient_from_json(const nlohmann::json& j);
nlohmann::json patient_to_json(const PatientTemplate& p);
std::vector<FamilyRule> family_rules_from_json(const nlohmann::json& j);
AssemblyInfo assembly_info_from_json(const nlohmann::json& j);
nlohmann::json assembly_info_to_json(const AssemblyInfo& info);

}  // namespace odonto::synth
