#pragma once

#include "atsdf/mesh.hpp"
#include "atsdf/volume.hpp"

namespace atsdf {

inline constexpr double kDefaultIsoWeightMin = 1.0;

/// Marching cubes at tsdf = 0. A cell is meshed only when all eight corner
/// voxels carry weight >= iso_weight_min; cells straddling block borders read
/// their corners from the neighboring blocks, and vertices are welded by
/// global grid-edge identity. Throws kEmptyVolume if no voxel is observed.
TriangleMesh extract_mesh(const TsdfVolume& volume, double iso_weight_min = kDefaultIsoWeightMin);

}  // namespace atsdf
