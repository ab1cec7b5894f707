#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atsdf/mesh.hpp"

namespace atsdf {

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length; hit distances are then metric
};

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void extend(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  bool contains(const Aabb& b) const {
    return (lo.array() <= b.lo.array()).all() && (hi.array() >= b.hi.array()).all();
  }
};

struct RayHit {
  std::int32_t face = -1;
  double t = 0.0;
};

/// Two-sided Moller-Trumbore test; accepts hits with t in (t_min, t_max) and
/// barycentrics on the closed triangle.
std::optional<double> intersect_triangle(const Ray& ray, const Vec3& a, const Vec3& b, const Vec3& c,
                                         double t_min, double t_max);

/// Median-split bounding volume hierarchy over mesh faces. Owns a copy of the
/// triangle geometry and is immutable after construction.
class Bvh {
 public:
  struct Node {
    Aabb box;
    std::int32_t first = 0;  // leaf: offset into face_order; inner: left child
    std::int32_t count = 0;  // leaf: number of faces; inner: 0
    bool leaf() const noexcept { return count > 0; }
  };

  static constexpr int kMaxDepth = 64;

  explicit Bvh(const TriangleMesh& mesh, int leaf_size = 4);

  /// All faces hit by the ray inside (t_min, t_max), sorted by face id.
  std::vector<RayHit> intersect_all(const Ray& ray, double t_min, double t_max) const;
  std::optional<RayHit> closest_hit(const Ray& ray, double t_min, double t_max) const;
  /// True if any face other than `ignore_face` is hit inside (t_min, t_max).
  bool occluded(const Ray& ray, double t_min, double t_max, std::int32_t ignore_face = -1) const;

  std::span<const Node> nodes() const noexcept { return nodes_; }
  std::span<const std::int32_t> face_order() const noexcept { return order_; }
  std::size_t face_count() const noexcept { return tris_.size(); }
  int depth() const noexcept { return depth_; }
  Aabb face_box(std::int32_t f) const;

 private:
  template <typename Visit>
  void traverse(const Ray& ray, double t_min, double& t_max, Visit&& visit) const;

  std::vector<std::array<Vec3, 3>> tris_;
  std::vector<Node> nodes_;
  std::vector<std::int32_t> order_;
  int depth_ = 0;
};

/// Brute-force reference: every face hit, sorted by face id.
std::vector<RayHit> intersect_all_linear(const TriangleMesh& mesh, const Ray& ray, double t_min, double t_max);

struct VisibleView {
  std::int32_t frame_id = 0;
  double area_px = 0.0;
  double cos_incidence = 0.0;
};

/// For each face, the frames in which it is visible (in camera order).
struct VisibilityTable {
  std::vector<std::vector<VisibleView>> faces;

  std::size_t visible_pairs() const;
  /// CSV with header "face_id,frame_id,area_px2,cos".
  void write_csv(std::ostream& out) const;
  void write_csv(const std::string& path) const;
  static VisibilityTable read_csv(std::istream& in, std::size_t face_count);
  static VisibilityTable read_csv(const std::string& path, std::size_t face_count);
};

struct VisibilityConfig {
  double min_cos = 0.05;
  double occlusion_bias = 1e-4;
};

/// A face is visible in a frame iff all vertices project into the image, its
/// normal faces the camera with cosine >= min_cos, and the ray from the camera
/// center to the face centroid hits no other face closer than the centroid
/// minus the bias. Faces with zero projected area are dropped.
VisibilityTable compute_visibility(const TriangleMesh& mesh, const Bvh& bvh, std::span<const CameraFrame> cameras,
                                   const VisibilityConfig& cfg = {});

}  // namespace atsdf
