#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "atsdf/geometry.hpp"

namespace atsdf {

// ---------------------------------------------------------------------------
// Incremental point statistics
// ---------------------------------------------------------------------------

/// Count, mean and sample covariance (n - 1 denominator) of a point set.
struct BlockStatistics {
  std::int64_t n = 0;
  Vec3 mean = Vec3::Zero();
  Mat3 covariance = Mat3::Zero();

  static BlockStatistics from_point(const Vec3& p);
  /// Two-pass batch statistics of a point set.
  static BlockStatistics from_points(std::span<const Vec3> points);
};

/// Statistics of the union of the two underlying point sets. Throws
/// kEmptyMerge when both are empty.
BlockStatistics merge_statistics(const BlockStatistics& a, const BlockStatistics& b);

struct PlaneEstimate {
  Vec3 normal = Vec3::UnitZ();
  double flatness = 0.0;
  std::array<double, 3> eigenvalues{};  // descending
};

/// PCA plane of the statistics. The normal is the least dominant axis oriented
/// toward the sensor; flatness is 1 - lambda3 / lambda2. Throws
/// kDegenerateStatistics for n < 3 or lambda2 <= tol.
PlaneEstimate estimate_plane(const BlockStatistics& stats, const Vec3& sensor_pos, double tol = 1e-12);

// ---------------------------------------------------------------------------
// Truncation and weighting
// ---------------------------------------------------------------------------

struct TruncationConfig {
  double eps_min = 0.10;
  double eps_max = 0.30;
  double k = 64.0;

  /// Constant truncation: eps_min == eps_max.
  static TruncationConfig fixed(double eps) { return {eps, eps, 64.0}; }
  void validate() const;
};

/// clamp(k * flatness / n * eps_max, eps_min, eps_max); eps_max when n == 0.
double adaptive_truncation(double flatness, std::int64_t n, const TruncationConfig& cfg);

inline constexpr double kDefaultMinWeight = 0.05;

/// Incidence cosine between the normal and the direction to the sensor,
/// clamped to [w_min, 1].
double measurement_weight(const Vec3& normal, const Vec3& sensor_pos, const Vec3& point,
                          double w_min = kDefaultMinWeight);

// ---------------------------------------------------------------------------
// Voxel blocks
// ---------------------------------------------------------------------------

inline constexpr int kBlockSide = 8;
inline constexpr int kBlockVoxels = kBlockSide * kBlockSide * kBlockSide;

struct Voxel {
  float tsdf = 0.0f;
  float weight = 0.0f;

  bool observed() const noexcept { return weight > 0.0f; }
};

struct BlockCoord {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;

  friend auto operator<=>(const BlockCoord&, const BlockCoord&) = default;
};

struct VoxelBlock {
  BlockCoord coord;
  std::array<Voxel, kBlockVoxels> voxels{};
  BlockStatistics stats;

  static constexpr int index(int x, int y, int z) noexcept {
    return x + kBlockSide * (y + kBlockSide * z);
  }
  Voxel& at(int x, int y, int z) noexcept { return voxels[index(x, y, z)]; }
  const Voxel& at(int x, int y, int z) const noexcept { return voxels[index(x, y, z)]; }
};

/// Open-addressed (linear probing) map from block coordinate to a dense
/// index. Lookups compare full coordinates, so distinct blocks never alias.
class BlockHashMap {
 public:
  static constexpr std::int32_t kMissing = -1;

  BlockHashMap();

  std::int32_t find(const BlockCoord& c) const noexcept;
  /// Inserts c -> value unless present; returns the stored value.
  std::int32_t insert(const BlockCoord& c, std::int32_t value);
  std::size_t size() const noexcept { return size_; }
  std::size_t capacity() const noexcept { return slots_.size(); }
  void clear();

 private:
  struct Slot {
    BlockCoord key;
    std::int32_t value = kMissing;
  };
  static std::uint64_t hash(const BlockCoord& c) noexcept;
  void grow();

  std::vector<Slot> slots_;
  std::size_t size_ = 0;
};

struct VolumeConfig {
  double voxel_size = 0.025;
  TruncationConfig truncation;
  double min_weight = kDefaultMinWeight;
  std::size_t max_blocks = std::size_t{1} << 24;
  double plane_tol = 1e-12;
  /// Behind-surface extent capped at eps_min.
  bool limit_behind = true;
  /// Linear weight drop-off behind the surface, zero at -eps.
  bool weight_dropoff = true;

  void validate() const;
};

struct IntegrationStats {
  std::size_t points = 0;
  std::size_t voxel_updates = 0;
  std::size_t blocks_allocated = 0;
  std::size_t degenerate_blocks = 0;
};

class TsdfVolume {
 public:
  explicit TsdfVolume(VolumeConfig config);
  TsdfVolume(TsdfVolume&&) noexcept = default;
  TsdfVolume& operator=(TsdfVolume&&) noexcept = default;

  const VolumeConfig& config() const noexcept { return config_; }
  double voxel_size() const noexcept { return config_.voxel_size; }
  double block_size() const noexcept { return config_.voxel_size * kBlockSide; }

  std::size_t block_count() const noexcept { return blocks_.size(); }
  /// Blocks in allocation order.
  std::span<const VoxelBlock> blocks() const noexcept { return blocks_; }
  std::vector<BlockCoord> sorted_block_coords() const;
  const VoxelBlock* find_block(const BlockCoord& c) const noexcept;
  VoxelBlock& get_or_allocate(const BlockCoord& c);

  BlockCoord block_of_point(const Vec3& p) const noexcept;
  Vec3i voxel_of_point(const Vec3& p) const noexcept;
  Vec3 voxel_center(const Vec3i& v) const noexcept;
  /// Voxel by global index, nullptr if its block is not allocated.
  const Voxel* voxel(const Vec3i& v) const noexcept;

  /// Fuses one scan of world-frame points measured from sensor_pos:
  /// statistics first, then per-block truncation, then ray carving.
  IntegrationStats integrate_scan(std::span<const Vec3> points, const Vec3& sensor_pos);

  /// Shared lock held by readers (mesh extraction) so that no integration pass
  /// can overlap the read.
  std::shared_lock<std::shared_mutex> read_snapshot() const { return std::shared_lock(*mutex_); }

  void save(std::ostream& out) const;
  void save(const std::string& path) const;
  static TsdfVolume load(std::istream& in);
  static TsdfVolume load(const std::string& path);

 private:
  VolumeConfig config_;
  std::vector<VoxelBlock> blocks_;
  BlockHashMap index_;
  std::unique_ptr<std::shared_mutex> mutex_;
};

}  // namespace atsdf
