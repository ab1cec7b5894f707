#include "atsdf/mesh.hpp"

#include <algorithm>

namespace atsdf {

Vec3 TriangleMesh::centroid(std::size_t f) const {
  const auto t = triangle(f);
  return (t[0] + t[1] + t[2]) / 3.0;
}

double TriangleMesh::area(std::size_t f) const {
  const auto t = triangle(f);
  return 0.5 * (t[1] - t[0]).cross(t[2] - t[0]).norm();
}

double TriangleMesh::total_area() const {
  double a = 0.0;
  for (std::size_t f = 0; f < faces.size(); ++f) a += area(f);
  return a;
}

void TriangleMesh::compute_normals() {
  face_normals.resize(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto t = triangle(f);
    const Vec3 n = (t[1] - t[0]).cross(t[2] - t[0]);
    const double len = n.norm();
    face_normals[f] = len > 0 ? Vec3(n / len) : Vec3::UnitZ();
  }
}

void TriangleMesh::validate() const {
  const auto nv = static_cast<std::int32_t>(vertices.size());
  for (const Face& f : faces) {
    for (auto i : f) {
      if (i < 0 || i >= nv) throw Error(ErrorCode::kInvalidArgument, "mesh: face index out of range");
    }
  }
  if (!face_normals.empty() && face_normals.size() != faces.size()) {
    throw Error(ErrorCode::kInvalidArgument, "mesh: normal count mismatch");
  }
}

std::vector<std::vector<std::int32_t>> FaceAdjacency::neighbors(std::size_t face_count) const {
  std::vector<std::vector<std::int32_t>> out(face_count);
  for (const auto& [i, j] : edges) {
    out[static_cast<std::size_t>(i)].push_back(j);
    out[static_cast<std::size_t>(j)].push_back(i);
  }
  return out;
}

FaceAdjacency build_adjacency(const TriangleMesh& mesh) {
  // (min vertex, max vertex, face) for every face edge, sorted so faces on the
  // same mesh edge are contiguous.
  struct EdgeRef {
    std::int32_t a, b, face;
    auto operator<=>(const EdgeRef&) const = default;
  };
  std::vector<EdgeRef> refs;
  refs.reserve(mesh.faces.size() * 3);
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Face& t = mesh.faces[f];
    for (int k = 0; k < 3; ++k) {
      const auto u = t[k];
      const auto v = t[(k + 1) % 3];
      if (u == v) continue;
      refs.push_back({std::min(u, v), std::max(u, v), static_cast<std::int32_t>(f)});
    }
  }
  std::sort(refs.begin(), refs.end());

  auto shared_vertices = [&](std::int32_t f, std::int32_t g) {
    int count = 0;
    for (auto u : mesh.faces[static_cast<std::size_t>(f)]) {
      for (auto v : mesh.faces[static_cast<std::size_t>(g)]) {
        if (u == v) {
          ++count;
          break;
        }
      }
    }
    return count;
  };

  FaceAdjacency adj;
  for (std::size_t lo = 0; lo < refs.size();) {
    std::size_t hi = lo;
    while (hi < refs.size() && refs[hi].a == refs[lo].a && refs[hi].b == refs[lo].b) ++hi;
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t j = i + 1; j < hi; ++j) {
        const auto f = std::min(refs[i].face, refs[j].face);
        const auto g = std::max(refs[i].face, refs[j].face);
        if (f != g && shared_vertices(f, g) == 2) adj.edges.emplace_back(f, g);
      }
    }
    lo = hi;
  }
  std::sort(adj.edges.begin(), adj.edges.end());
  adj.edges.erase(std::unique(adj.edges.begin(), adj.edges.end()), adj.edges.end());
  return adj;
}

void remove_unreferenced_vertices(TriangleMesh& mesh) {
  std::vector<std::int32_t> remap(mesh.vertices.size(), -1);
  for (const Face& f : mesh.faces) {
    for (auto i : f) remap[static_cast<std::size_t>(i)] = 0;
  }
  std::int32_t next = 0;
  for (std::size_t i = 0; i < remap.size(); ++i) {
    if (remap[i] == 0) {
      mesh.vertices[static_cast<std::size_t>(next)] = mesh.vertices[i];
      remap[i] = next++;
    }
  }
  mesh.vertices.resize(static_cast<std::size_t>(next));
  for (Face& f : mesh.faces) {
    for (auto& i : f) i = remap[static_cast<std::size_t>(i)];
  }
}

}  // namespace atsdf
