#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "atsdf/geometry.hpp"

namespace atsdf {

using Face = std::array<std::int32_t, 3>;

/// Indexed triangle mesh with per-face unit normals (right-hand winding).
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<Vec3> face_normals;

  std::size_t face_count() const noexcept { return faces.size(); }
  std::array<Vec3, 3> triangle(std::size_t f) const {
    const Face& t = faces[f];
    return {vertices[t[0]], vertices[t[1]], vertices[t[2]]};
  }
  Vec3 centroid(std::size_t f) const;
  double area(std::size_t f) const;
  double total_area() const;
  /// Recomputes face_normals from the winding.
  void compute_normals();
  /// Throws kInvalidArgument on out-of-range indices.
  void validate() const;
};

/// Unordered pairs (i < j) of faces sharing exactly two vertex indices,
/// sorted lexicographically.
struct FaceAdjacency {
  std::vector<std::pair<std::int32_t, std::int32_t>> edges;

  /// Per-face neighbor lists derived from edges.
  std::vector<std::vector<std::int32_t>> neighbors(std::size_t face_count) const;
};

FaceAdjacency build_adjacency(const TriangleMesh& mesh);

/// Drops vertices no face references, preserving the order of the rest.
void remove_unreferenced_vertices(TriangleMesh& mesh);

}  // namespace atsdf
