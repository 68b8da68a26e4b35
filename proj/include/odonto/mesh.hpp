#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "odonto/common.hpp"

namespace odonto::mesh {

using Tri = std::array<int, 3>;
using Tet = std::array<int, 4>;

/// Triangulated surface in millimetres.
struct SurfaceMesh {
    std::vector<Vec3> vertices;
    std::vector<Tri> triangles;
    /// Either empty or one tag per triangle ("crown", "root", "load_patch", ...).
    std::vector<std::string> face_labels;

    /// Throws InvalidInput on out-of-range indices, non-finite coordinates or zero-area faces.
    void validate() const;

    double face_area(std::size_t f) const;
    /// Unnormalised outward normal, |n| = 2 * area.
    Vec3 face_normal(std::size_t f) const;
    double area() const;
    /// Sum of face areas whose label equals `label`.
    double labeled_area(const std::string& label) const;
    /// Signed enclosed volume (divergence theorem); positive for outward-oriented closed surfaces.
    double enclosed_volume() const;

    /// V - E + F.
    int euler_characteristic() const;
    /// Every edge is shared by exactly two faces with opposite orientation.
    bool is_closed_manifold() const;
};

enum class DomainKind { Tooth, Pdl, Bone, Other };

/// Element region tag. Integer codes are used as TetGen region attributes:
/// bone = 1, tooth k = k, PDL of tooth k = 100 + k, anything else = 1000 + id.
struct Domain {
    DomainKind kind = DomainKind::Other;
    int id = 0;  // tooth UNN for Tooth/Pdl, free identifier for Other

    static Domain tooth(int unn) { return {DomainKind::Tooth, unn}; }
    static Domain pdl(int unn) { return {DomainKind::Pdl, unn}; }
    static Domain bone() { return {DomainKind::Bone, 0}; }

    int code() const;
    static Domain from_code(int code);
    std::string name() const;

    friend bool operator==(const Domain&, const Domain&) = default;
    friend auto operator<=>(const Domain& a, const Domain& b) { return a.code() <=> b.code(); }
};

/// Named set of oriented boundary triangles. `recorded_area` holds a measured area
/// (bracket patches) so the load conversion does not depend on re-measurement.
struct BoundarySet {
    std::vector<Tri> faces;
    std::optional<double> recorded_area;
};

/// Labelled TET4 mesh.
struct TetMesh {
    std::vector<Vec3> nodes;
    std::vector<Tet> elements;
    std::vector<Domain> domain_of_element;
    std::map<std::string, BoundarySet> boundary_sets;

    /// Checks index ranges, positive volumes, one domain per element and that
    /// every boundary-set face is a face of some element.
    void validate() const;

    std::vector<Domain> domains() const;
    std::vector<int> elements_in(const Domain& d) const;
    std::vector<int> elements_of_kind(DomainKind k) const;
    std::array<Vec3, 4> element_points(std::size_t e) const;
    double element_volume(std::size_t e) const;
    double face_area(const Tri& f) const;
    double set_area(const std::string& name) const;
    /// Sorted unique node ids referenced by a boundary set.
    std::vector<int> set_nodes(const std::string& name) const;
    /// Sorted unique node ids referenced by elements of `d`.
    std::vector<int> domain_nodes(const Domain& d) const;
    /// Boundary faces of the sub-mesh made of `elements` (outward oriented).
    std::vector<Tri> boundary_faces(const std::vector<int>& elements) const;
    std::size_t count_elements(DomainKind k) const;
};

/// Signed volume dot(p1-p0, (p2-p0) x (p3-p0)) / 6.
double tet_volume(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3);
double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);

}  // namespace odonto::mesh
