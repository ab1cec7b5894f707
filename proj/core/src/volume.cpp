#include "atsdf/volume.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "atsdf/parallel.hpp"

namespace atsdf {

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

BlockStatistics BlockStatistics::from_point(const Vec3& p) {
  BlockStatistics s;
  s.n = 1;
  s.mean = p;
  return s;
}

BlockStatistics BlockStatistics::from_points(std::span<const Vec3> points) {
  BlockStatistics s;
  s.n = static_cast<std::int64_t>(points.size());
  if (s.n == 0) return s;
  for (const auto& p : points) s.mean += p;
  s.mean /= static_cast<double>(s.n);
  if (s.n < 2) return s;
  for (const auto& p : points) {
    const Vec3 d = p - s.mean;
    s.covariance.noalias() += d * d.transpose();
  }
  s.covariance /= static_cast<double>(s.n - 1);
  return s;
}

BlockStatistics merge_statistics(const BlockStatistics& a, const BlockStatistics& b) {
  const std::int64_t n = a.n + b.n;
  if (n <= 0) throw Error(ErrorCode::kEmptyMerge, "merge of two empty statistics");
  if (b.n == 0) return a;
  if (a.n == 0) return b;

  const double na = static_cast<double>(a.n);
  const double nb = static_cast<double>(b.n);
  BlockStatistics out;
  out.n = n;
  out.mean = (na * a.mean + nb * b.mean) / (na + nb);
  const Vec3 da = out.mean - a.mean;
  const Vec3 db = out.mean - b.mean;
  out.covariance = ((na - 1.0) * a.covariance + (nb - 1.0) * b.covariance +
                    na * da * da.transpose() + nb * db * db.transpose()) /
                   (na + nb - 1.0);
  // Keep exact symmetry; the rank-one updates are symmetric only up to rounding.
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

PlaneEstimate estimate_plane(const BlockStatistics& stats, const Vec3& sensor_pos, double tol) {
  if (stats.n < 3) {
    throw Error(ErrorCode::kDegenerateStatistics, "plane estimate needs at least 3 points");
  }
  Eigen::SelfAdjointEigenSolver<Mat3> solver(stats.covariance);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::kDegenerateStatistics, "eigen decomposition failed");
  }
  const Vec3 ev = solver.eigenvalues();  // ascending
  const double l1 = std::max(ev[2], 0.0);
  const double l2 = std::max(ev[1], 0.0);
  const double l3 = std::max(ev[0], 0.0);
  if (!(l2 > tol)) {
    throw Error(ErrorCode::kDegenerateStatistics, "second eigenvalue below tolerance");
  }
  PlaneEstimate plane;
  plane.eigenvalues = {l1, l2, l3};
  plane.flatness = std::clamp(1.0 - l3 / l2, 0.0, 1.0);
  Vec3 v3 = solver.eigenvectors().col(0).normalized();
  plane.normal = v3.dot(sensor_pos - stats.mean) > 0 ? v3 : Vec3(-v3);
  return plane;
}

// ---------------------------------------------------------------------------
// Truncation and weighting
// ---------------------------------------------------------------------------

void TruncationConfig::validate() const {
  if (!(eps_min > 0) || !(eps_min <= eps_max) || !std::isfinite(eps_max)) {
    throw Error(ErrorCode::kConfig, "truncation: require 0 < eps_min <= eps_max");
  }
  if (!(k > 0) || !std::isfinite(k)) throw Error(ErrorCode::kConfig, "truncation: require k > 0");
}

double adaptive_truncation(double flatness, std::int64_t n, const TruncationConfig& cfg) {
  if (n <= 0) return cfg.eps_max;
  const double eps = cfg.k * flatness / static_cast<double>(n) * cfg.eps_max;
  return std::clamp(eps, cfg.eps_min, cfg.eps_max);
}

double measurement_weight(const Vec3& normal, const Vec3& sensor_pos, const Vec3& point, double w_min) {
  const Vec3 to_sensor = sensor_pos - point;
  const double len = to_sensor.norm();
  if (!(len > 0)) return 1.0;
  return std::clamp(normal.dot(to_sensor) / len, w_min, 1.0);
}

// ---------------------------------------------------------------------------
// Hash map
// ---------------------------------------------------------------------------

BlockHashMap::BlockHashMap() { slots_.resize(1024); }

std::uint64_t BlockHashMap::hash(const BlockCoord& c) noexcept {
  std::uint64_t h = static_cast<std::uint32_t>(c.x) * 73856093ULL ^
                    static_cast<std::uint32_t>(c.y) * 19349669ULL ^
                    static_cast<std::uint32_t>(c.z) * 83492791ULL;
  // splitmix finalizer spreads the low bits used for masking.
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return h;
}

std::int32_t BlockHashMap::find(const BlockCoord& c) const noexcept {
  const std::size_t mask = slots_.size() - 1;
  for (std::size_t i = hash(c) & mask;; i = (i + 1) & mask) {
    const Slot& s = slots_[i];
    if (s.value == kMissing) return kMissing;
    if (s.key == c) return s.value;
  }
}

std::int32_t BlockHashMap::insert(const BlockCoord& c, std::int32_t value) {
  if ((size_ + 1) * 2 > slots_.size()) grow();
  const std::size_t mask = slots_.size() - 1;
  for (std::size_t i = hash(c) & mask;; i = (i + 1) & mask) {
    Slot& s = slots_[i];
    if (s.value == kMissing) {
      s.key = c;
      s.value = value;
      ++size_;
      return value;
    }
    if (s.key == c) return s.value;
  }
}

void BlockHashMap::grow() {
  std::vector<Slot> old;
  old.swap(slots_);
  slots_.assign(old.size() * 2, Slot{});
  size_ = 0;
  for (const Slot& s : old) {
    if (s.value != kMissing) insert(s.key, s.value);
  }
}

void BlockHashMap::clear() {
  slots_.assign(1024, Slot{});
  size_ = 0;
}

// ---------------------------------------------------------------------------
// Volume
// ---------------------------------------------------------------------------

void VolumeConfig::validate() const {
  if (!(voxel_size > 0) || !std::isfinite(voxel_size)) {
    throw Error(ErrorCode::kConfig, "volume: voxel_size must be positive");
  }
  truncation.validate();
  if (!(min_weight > 0 && min_weight <= 1)) throw Error(ErrorCode::kConfig, "volume: min_weight in (0, 1]");
  if (max_blocks == 0) throw Error(ErrorCode::kConfig, "volume: max_blocks must be positive");
}

TsdfVolume::TsdfVolume(VolumeConfig config)
    : config_(config), mutex_(std::make_unique<std::shared_mutex>()) {
  config_.validate();
}

namespace {

std::int32_t floor_div(std::int32_t a, std::int32_t b) {
  std::int32_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

BlockCoord block_of_voxel(const Vec3i& v) {
  return {floor_div(v.x(), kBlockSide), floor_div(v.y(), kBlockSide), floor_div(v.z(), kBlockSide)};
}

int local_index(const Vec3i& v, const BlockCoord& b) {
  return VoxelBlock::index(v.x() - b.x * kBlockSide, v.y() - b.y * kBlockSide, v.z() - b.z * kBlockSide);
}

struct VoxelUpdate {
  Vec3i voxel;
  float sdf;
  float weight;
};

/// Visits every voxel pierced by the segment a -> b (grid units, voxel i
/// spans [i, i + 1)).
template <typename Visit>
void traverse_segment(const Vec3& a, const Vec3& b, Visit&& visit) {
  Vec3i cur(static_cast<int>(std::floor(a.x())), static_cast<int>(std::floor(a.y())),
            static_cast<int>(std::floor(a.z())));
  const Vec3i last(static_cast<int>(std::floor(b.x())), static_cast<int>(std::floor(b.y())),
                   static_cast<int>(std::floor(b.z())));
  const Vec3 dir = b - a;
  Vec3i step;
  Vec3 t_max;
  Vec3 t_delta;
  for (int i = 0; i < 3; ++i) {
    if (dir[i] > 0) {
      step[i] = 1;
      t_delta[i] = 1.0 / dir[i];
      t_max[i] = (cur[i] + 1 - a[i]) / dir[i];
    } else if (dir[i] < 0) {
      step[i] = -1;
      t_delta[i] = -1.0 / dir[i];
      t_max[i] = (cur[i] - a[i]) / dir[i];
    } else {
      step[i] = 0;
      t_delta[i] = std::numeric_limits<double>::infinity();
      t_max[i] = std::numeric_limits<double>::infinity();
    }
  }
  const int max_steps = (last - cur).cwiseAbs().sum() + 1;
  for (int s = 0; s < max_steps; ++s) {
    visit(cur);
    if (cur == last) break;
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    if (t_max[axis] > 1.0) break;
    cur[axis] += step[axis];
    t_max[axis] += t_delta[axis];
  }
}

}  // namespace

BlockCoord TsdfVolume::block_of_point(const Vec3& p) const noexcept {
  return block_of_voxel(voxel_of_point(p));
}

Vec3i TsdfVolume::voxel_of_point(const Vec3& p) const noexcept {
  const Vec3 g = p / config_.voxel_size;
  return {static_cast<int>(std::floor(g.x())), static_cast<int>(std::floor(g.y())),
          static_cast<int>(std::floor(g.z()))};
}

Vec3 TsdfVolume::voxel_center(const Vec3i& v) const noexcept {
  return (v.cast<double>() + Vec3::Constant(0.5)) * config_.voxel_size;
}

const VoxelBlock* TsdfVolume::find_block(const BlockCoord& c) const noexcept {
  const auto idx = index_.find(c);
  return idx == BlockHashMap::kMissing ? nullptr : &blocks_[static_cast<std::size_t>(idx)];
}

VoxelBlock& TsdfVolume::get_or_allocate(const BlockCoord& c) {
  const auto idx = index_.find(c);
  if (idx != BlockHashMap::kMissing) return blocks_[static_cast<std::size_t>(idx)];
  if (blocks_.size() >= config_.max_blocks) {
    throw Error(ErrorCode::kAllocationLimit,
                "volume: block cap of " + std::to_string(config_.max_blocks) + " reached");
  }
  index_.insert(c, static_cast<std::int32_t>(blocks_.size()));
  VoxelBlock& block = blocks_.emplace_back();
  block.coord = c;
  return block;
}

const Voxel* TsdfVolume::voxel(const Vec3i& v) const noexcept {
  const BlockCoord b = block_of_voxel(v);
  const VoxelBlock* block = find_block(b);
  return block ? &block->voxels[static_cast<std::size_t>(local_index(v, b))] : nullptr;
}

std::vector<BlockCoord> TsdfVolume::sorted_block_coords() const {
  std::vector<BlockCoord> coords;
  coords.reserve(blocks_.size());
  for (const auto& b : blocks_) coords.push_back(b.coord);
  std::sort(coords.begin(), coords.end());
  return coords;
}

IntegrationStats TsdfVolume::integrate_scan(std::span<const Vec3> points, const Vec3& sensor_pos) {
  std::unique_lock lock(*mutex_);
  IntegrationStats report;
  report.points = points.size();
  if (points.empty()) return report;
  for (const auto& p : points) {
    if (!p.allFinite()) throw Error(ErrorCode::kInvalidArgument, "integrate_scan: non-finite point");
  }
  const std::size_t blocks_before = blocks_.size();

  // 1. Bin points by block and merge each bin's batch statistics.
  std::vector<std::pair<BlockCoord, std::uint32_t>> binned(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    binned[i] = {block_of_point(points[i]), static_cast<std::uint32_t>(i)};
  }
  std::sort(binned.begin(), binned.end());

  struct BlockTruncation {
    double eps;
    bool degenerate;
    Vec3 normal;
  };
  std::vector<std::int32_t> point_block(points.size());
  std::vector<BlockTruncation> truncation;
  std::vector<Vec3> bin_points;
  for (std::size_t lo = 0; lo < binned.size();) {
    std::size_t hi = lo;
    bin_points.clear();
    while (hi < binned.size() && binned[hi].first == binned[lo].first) {
      bin_points.push_back(points[binned[hi].second]);
      point_block[binned[hi].second] = static_cast<std::int32_t>(truncation.size());
      ++hi;
    }
    VoxelBlock& block = get_or_allocate(binned[lo].first);
    block.stats = merge_statistics(block.stats, BlockStatistics::from_points(bin_points));

    // 2. Local truncation from the accumulated statistics.
    BlockTruncation t{config_.truncation.eps_max, true, Vec3::Zero()};
    try {
      const PlaneEstimate plane = estimate_plane(block.stats, sensor_pos, config_.plane_tol);
      t = {adaptive_truncation(plane.flatness, block.stats.n, config_.truncation), false, plane.normal};
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateStatistics) throw;
      ++report.degenerate_blocks;
    }
    truncation.push_back(t);
    lo = hi;
  }

  // 3. Carve along each measurement ray: per-point update lists.
  const double inv_vs = 1.0 / config_.voxel_size;
  std::vector<std::vector<VoxelUpdate>> per_point(points.size());
  parallel_for(0, points.size(), [&](std::size_t i) {
    const Vec3& p = points[i];
    const Vec3 ray = p - sensor_pos;
    const double range = ray.norm();
    if (!(range > 0)) return;
    const Vec3 dir = ray / range;
    const BlockTruncation& t = truncation[static_cast<std::size_t>(point_block[i])];
    const double eps = t.eps;
    const float w = t.degenerate ? 1.0f
                                 : static_cast<float>(measurement_weight(t.normal, sensor_pos, p,
                                                                          config_.min_weight));
    const Vec3 a = p - dir * std::min(eps, range);
    // Behind the surface the band stops at eps_min and the weight falls off
    // linearly from one voxel to eps.
    const double behind = config_.limit_behind ? std::min(eps, config_.truncation.eps_min) : eps;
    const double falloff = eps - config_.voxel_size;
    const Vec3 b = p + dir * behind;
    auto& out = per_point[i];
    traverse_segment(a * inv_vs, b * inv_vs, [&](const Vec3i& v) {
      const double d = (p - voxel_center(v)).dot(dir);
      if (d > eps || d < -behind) return;
      float wv = w;
      if (config_.weight_dropoff && d < -config_.voxel_size && falloff > 0) {
        wv = static_cast<float>(w * (eps + d) / falloff);
        if (!(wv > 0)) return;
      }
      out.push_back({v, static_cast<float>(d), wv});
    });
  });

  // Allocate touched blocks and bin updates per block, preserving point order.
  std::vector<std::int32_t> update_block;
  std::size_t total = 0;
  for (const auto& u : per_point) total += u.size();
  update_block.reserve(total);
  std::vector<std::size_t> counts;
  for (const auto& list : per_point) {
    for (const auto& u : list) {
      const BlockCoord bc = block_of_voxel(u.voxel);
      auto idx = index_.find(bc);
      if (idx == BlockHashMap::kMissing) {
        get_or_allocate(bc);
        idx = static_cast<std::int32_t>(blocks_.size() - 1);
      }
      update_block.push_back(idx);
    }
  }
  counts.assign(blocks_.size() + 1, 0);
  for (auto b : update_block) ++counts[static_cast<std::size_t>(b) + 1];
  std::partial_sum(counts.begin(), counts.end(), counts.begin());
  std::vector<std::pair<int, VoxelUpdate>> by_block(total);
  {
    std::vector<std::size_t> cursor(counts.begin(), counts.end() - 1);
    std::size_t k = 0;
    for (const auto& list : per_point) {
      for (const auto& u : list) {
        const auto b = static_cast<std::size_t>(update_block[k++]);
        by_block[cursor[b]++] = {local_index(u.voxel, blocks_[b].coord), u};
      }
    }
  }
  per_point.clear();

  // 4. Each block is owned by one worker while its updates are applied.
  parallel_for(0, blocks_.size(), [&](std::size_t b) {
    VoxelBlock& block = blocks_[b];
    for (std::size_t k = counts[b]; k < counts[b + 1]; ++k) {
      const auto& [li, u] = by_block[k];
      Voxel& vox = block.voxels[static_cast<std::size_t>(li)];
      const double w_old = vox.weight;
      const double w_new = w_old + u.weight;
      vox.tsdf = static_cast<float>((w_old * vox.tsdf + static_cast<double>(u.weight) * u.sdf) / w_new);
      vox.weight = static_cast<float>(w_new);
    }
  });

  report.voxel_updates = total;
  report.blocks_allocated = blocks_.size() - blocks_before;
  return report;
}

// ---------------------------------------------------------------------------
// Serialization: little-endian "ATSF" format
// ---------------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "volume I/O assumes a little-endian host");

constexpr char kMagic[4] = {'A', 'T', 'S', 'F'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::kFormat, "volume: truncated file");
  return v;
}

}  // namespace

void TsdfVolume::save(std::ostream& out) const {
  auto lock = read_snapshot();
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<double>(out, config_.voxel_size);
  put<double>(out, config_.truncation.eps_min);
  put<double>(out, config_.truncation.eps_max);
  put<double>(out, config_.truncation.k);
  put<std::uint64_t>(out, blocks_.size());
  for (const BlockCoord& c : sorted_block_coords()) {
    const VoxelBlock& b = *find_block(c);
    put<std::int32_t>(out, c.x);
    put<std::int32_t>(out, c.y);
    put<std::int32_t>(out, c.z);
    for (const Voxel& v : b.voxels) {
      put<float>(out, v.tsdf);
      put<float>(out, v.weight);
    }
    put<std::int64_t>(out, b.stats.n);
    for (int i = 0; i < 3; ++i) put<double>(out, b.stats.mean[i]);
    const Mat3& m = b.stats.covariance;
    for (double v : {m(0, 0), m(0, 1), m(0, 2), m(1, 1), m(1, 2), m(2, 2)}) put<double>(out, v);
  }
  if (!out) throw Error(ErrorCode::kIo, "volume: write failed");
}

void TsdfVolume::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path);
  save(out);
}

TsdfVolume TsdfVolume::load(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorCode::kFormat, "volume: bad magic");
  if (get<std::uint32_t>(in) != kVersion) throw Error(ErrorCode::kFormat, "volume: unsupported version");
  VolumeConfig cfg;
  cfg.voxel_size = get<double>(in);
  cfg.truncation.eps_min = get<double>(in);
  cfg.truncation.eps_max = get<double>(in);
  cfg.truncation.k = get<double>(in);
  TsdfVolume volume(cfg);
  const auto count = get<std::uint64_t>(in);
  if (count > cfg.max_blocks) throw Error(ErrorCode::kAllocationLimit, "volume: file exceeds block cap");
  for (std::uint64_t i = 0; i < count; ++i) {
    BlockCoord c;
    c.x = get<std::int32_t>(in);
    c.y = get<std::int32_t>(in);
    c.z = get<std::int32_t>(in);
    VoxelBlock& b = volume.get_or_allocate(c);
    for (Voxel& v : b.voxels) {
      v.tsdf = get<float>(in);
      v.weight = get<float>(in);
    }
    b.stats.n = get<std::int64_t>(in);
    for (int k = 0; k < 3; ++k) b.stats.mean[k] = get<double>(in);
    double u[6];
    for (double& x : u) x = get<double>(in);
    b.stats.covariance << u[0], u[1], u[2], u[1], u[3], u[4], u[2], u[4], u[5];
  }
  return volume;
}

TsdfVolume TsdfVolume::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return load(in);
}

}  // namespace atsdf
