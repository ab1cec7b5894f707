#include "atsdf/mesher.hpp"

#include <unordered_map>

#include "atsdf/parallel.hpp"
#include "mc_tables.hpp"

namespace atsdf {
namespace {

constexpr int kCornerOffset[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                     {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {3, 2}, {0, 3}, {4, 5}, {5, 6},
                                     {7, 6}, {4, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

/// Global identity of a vertex: a grid edge (min corner + axis 0..2) or, when
/// the zero crossing falls exactly on a voxel center, that voxel (axis 3).
struct VertexKey {
  std::int32_t x, y, z, axis;
  bool operator==(const VertexKey&) const = default;
};

struct VertexKeyHash {
  std::size_t operator()(const VertexKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(k.x) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint32_t>(k.y) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint32_t>(k.z) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.axis) + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

struct BlockPatch {
  std::vector<std::pair<VertexKey, Vec3>> vertices;
  std::vector<std::array<VertexKey, 3>> triangles;
};

}  // namespace

TriangleMesh extract_mesh(const TsdfVolume& volume, double iso_weight_min) {
  auto lock = volume.read_snapshot();

  bool any_observed = false;
  for (const auto& b : volume.blocks()) {
    for (const auto& v : b.voxels) {
      if (v.observed()) {
        any_observed = true;
        break;
      }
    }
    if (any_observed) break;
  }
  if (!any_observed) throw Error(ErrorCode::kEmptyVolume, "extract_mesh: volume has no observed voxels");

  const std::vector<BlockCoord> coords = volume.sorted_block_coords();
  std::vector<BlockPatch> patches(coords.size());

  parallel_for(0, coords.size(), [&](std::size_t bi) {
    const BlockCoord bc = coords[bi];
    const VoxelBlock& block = *volume.find_block(bc);
    BlockPatch& patch = patches[bi];
    const Vec3i base(bc.x * kBlockSide, bc.y * kBlockSide, bc.z * kBlockSide);

    for (int lz = 0; lz < kBlockSide; ++lz) {
      for (int ly = 0; ly < kBlockSide; ++ly) {
        for (int lx = 0; lx < kBlockSide; ++lx) {
          if (block.at(lx, ly, lz).weight < iso_weight_min) continue;
          const Vec3i cell = base + Vec3i(lx, ly, lz);
          float f[8];
          int cube = 0;
          bool complete = true;
          for (int c = 0; c < 8; ++c) {
            const Vec3i g = cell + Vec3i(kCornerOffset[c][0], kCornerOffset[c][1], kCornerOffset[c][2]);
            const bool inside = lx + kCornerOffset[c][0] < kBlockSide && ly + kCornerOffset[c][1] < kBlockSide &&
                                lz + kCornerOffset[c][2] < kBlockSide;
            const Voxel* v = inside ? &block.at(lx + kCornerOffset[c][0], ly + kCornerOffset[c][1],
                                                lz + kCornerOffset[c][2])
                                    : volume.voxel(g);
            if (v == nullptr || v->weight < iso_weight_min) {
              complete = false;
              break;
            }
            f[c] = v->tsdf;
            if (f[c] < 0.0f) cube |= 1 << c;
          }
          if (!complete || cube == 0 || cube == 255) continue;

          VertexKey keys[12];
          const int edges = detail::kEdgeTable[cube];
          for (int e = 0; e < 12; ++e) {
            if (!(edges & (1 << e))) continue;
            const int c0 = kEdgeCorners[e][0];
            const int c1 = kEdgeCorners[e][1];
            const Vec3i g0 = cell + Vec3i(kCornerOffset[c0][0], kCornerOffset[c0][1], kCornerOffset[c0][2]);
            const Vec3i g1 = cell + Vec3i(kCornerOffset[c1][0], kCornerOffset[c1][1], kCornerOffset[c1][2]);
            // Corner c0 is always the lower-index end of the grid edge.
            const double f0 = f[c0];
            const double f1 = f[c1];
            const double t = f0 / (f0 - f1);
            int axis = 0;
            while (g1[axis] == g0[axis]) ++axis;
            VertexKey key{g0.x(), g0.y(), g0.z(), axis};
            Vec3 pos;
            if (t <= 0.0) {
              key = {g0.x(), g0.y(), g0.z(), 3};
              pos = volume.voxel_center(g0);
            } else if (t >= 1.0) {
              key = {g1.x(), g1.y(), g1.z(), 3};
              pos = volume.voxel_center(g1);
            } else {
              const Vec3 p0 = volume.voxel_center(g0);
              const Vec3 p1 = volume.voxel_center(g1);
              pos = p0 + t * (p1 - p0);
            }
            keys[e] = key;
            patch.vertices.emplace_back(key, pos);
          }
          const int* tri = detail::kTriTable[cube];
          for (int i = 0; tri[i] != -1; i += 3) {
            // Reversed table winding: normals point toward positive tsdf.
            patch.triangles.push_back({keys[tri[i]], keys[tri[i + 2]], keys[tri[i + 1]]});
          }
        }
      }
    }
  });

  TriangleMesh mesh;
  std::unordered_map<VertexKey, std::int32_t, VertexKeyHash> lookup;
  for (const BlockPatch& patch : patches) {
    for (const auto& [key, pos] : patch.vertices) {
      if (lookup.emplace(key, static_cast<std::int32_t>(mesh.vertices.size())).second) {
        mesh.vertices.push_back(pos);
      }
    }
    for (const auto& tri : patch.triangles) {
      const Face face{lookup.at(tri[0]), lookup.at(tri[1]), lookup.at(tri[2])};
      if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) continue;
      const Vec3& a = mesh.vertices[face[0]];
      const Vec3 n = (mesh.vertices[face[1]] - a).cross(mesh.vertices[face[2]] - a);
      if (0.5 * n.norm() < 1e-12) continue;
      mesh.faces.push_back(face);
    }
  }
  remove_unreferenced_vertices(mesh);
  mesh.compute_normals();
  return mesh;
}

}  // namespace atsdf
