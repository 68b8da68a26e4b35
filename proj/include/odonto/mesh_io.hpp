#pragma once

#include <string>

#include "odonto/mesh.hpp"

namespace odonto::mesh {

/// Vertices closer than this (mm) are merged when loading STL files.
inline constexpr double kStlWeldTolerance = 1e-6;

/// Reads ASCII or binary (little-endian, 50-byte records) STL and welds duplicate vertices.
/// Faces that collapse under welding are dropped.
SurfaceMesh load_stl(const std::string& path, double weld_tol = kStlWeldTolerance);
void save_stl_binary(const SurfaceMesh& mesh, const std::string& path);
void save_stl_ascii(const SurfaceMesh& mesh, const std::string& path);

/// Merges vertices within `tol` of an earlier vertex (first occurrence wins).
SurfaceMesh weld(const std::vector<Vec3>& points, const std::vector<Tri>& tris, double tol);

/// Reads a TetGen .node/.ele pair. The index base is taken from the first node index.
/// Inverted elements are reoriented; the first element attribute (if any) is the domain code.
TetMesh load_tetgen(const std::string& node_path, const std::string& ele_path);
/// Writes 0-based .node/.ele files with the domain code as a region attribute.
void save_tetgen(const TetMesh& mesh, const std::string& node_path, const std::string& ele_path);

/// Boundary-set sidecar: {"sets": {name: {"faces": [[a,b,c],...], "area": A?}}} with 0-based node ids.
void save_boundary_sets(const TetMesh& mesh, const std::string& path);
void load_boundary_sets(TetMesh& mesh, const std::string& path);

}  // namespace odonto::mesh
