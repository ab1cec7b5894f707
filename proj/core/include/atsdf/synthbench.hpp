#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atsdf/mesh.hpp"
#include "atsdf/semantic.hpp"
#include "atsdf/visibility.hpp"

namespace atsdf {

enum class PrimitiveType { kSphere, kBox, kPlane, kCylinder };

/// Analytic shape in its local frame, placed by `pose` (local to world).
///   sphere:   radius = size.x()
///   box:      full edge lengths = size
///   plane:    local z = 0, normal +z (size unused)
///   cylinder: axis local z, radius = size.x(), height = size.z()
struct Primitive {
  PrimitiveType type = PrimitiveType::kSphere;
  RigidPose pose;
  Vec3 size = Vec3::Ones();
  std::array<std::uint8_t, 3> color{200, 200, 200};
  std::int32_t class_id = 1;

  double signed_distance(const Vec3& p) const;
  /// Nearest intersection with t in (t_min, t_max) and the outward normal.
  std::optional<std::pair<double, Vec3>> intersect(const Ray& ray, double t_min, double t_max) const;
};

struct SceneHit {
  std::size_t primitive = 0;
  double t = 0.0;
  Vec3 normal;
};

/// Scene JSON:
///   {"sky_class": 0, "sky_color": [r,g,b], "light": [x,y,z],
///    "primitives": [{"type": "sphere", "center": [..], "radius": 2,
///                    "color": [..], "class": 2}, ...]}
/// Box entries use "size": [sx,sy,sz], cylinders "radius" and "height",
/// planes "point" and "normal"; boxes and cylinders accept "yaw_deg".
struct SceneSpec {
  std::vector<Primitive> primitives;
  std::int32_t sky_class = 0;
  std::array<std::uint8_t, 3> sky_color{135, 180, 230};
  Vec3 light = Vec3(0.3, 0.5, 1.0).normalized();

  /// Union distance: minimum over primitives (+inf for an empty scene).
  double signed_distance(const Vec3& p) const;
  std::optional<SceneHit> intersect(const Ray& ray, double t_min = 0.0,
                                    double t_max = std::numeric_limits<double>::infinity()) const;
  /// Class of the primitive whose surface is nearest to p.
  std::int32_t classify(const Vec3& p) const;
  void validate(const ClassPalette* palette = nullptr) const;

  std::string to_json() const;
  static SceneSpec from_json(const std::string& text);
  static SceneSpec load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Ground plane z = 0, a 2 m sphere resting on it and a 4 x 2 x 1 m box.
  static SceneSpec benchmark();
};

/// Palette matching SceneSpec::benchmark(): sky, ground, sphere, box.
ClassPalette benchmark_palette();

/// Sensor frame: x forward, y left, z up. A ray per (beam, azimuth step).
struct BeamPattern {
  std::vector<double> elevations;  // radians
  double azimuth_step = 0.2 * M_PI / 180.0;
  double sigma = 0.01;
  double min_range = 0.5;
  double max_range = 100.0;

  /// `beams` elevations evenly spaced over [lo_deg, hi_deg].
  static BeamPattern uniform(int beams, double lo_deg = -25.0, double hi_deg = 15.0);
  int azimuth_count() const;
  void validate() const;
};

/// World-frame returns: nearest hit along each ray plus N(0, sigma) range
/// noise; misses and ranges outside [min_range, max_range] are dropped, as
/// are points outside `crop` when given. Deterministic per seed.
std::vector<Vec3> simulate_scan(const SceneSpec& scene, const RigidPose& sensor_pose, const BeamPattern& pattern,
                                std::uint64_t seed, const std::optional<Aabb>& crop = std::nullopt);

/// Circular drive around `center`: scans at rate_hz while moving at speed
/// along a circle of the given radius, sensor at `height` above ground.
struct OrbitProtocol {
  double radius = 10.0;
  double speed = 5.0;
  double rate_hz = 10.0;
  double height = 2.3;
  Vec3 center = Vec3::Zero();

  int scan_count() const;
  std::vector<RigidPose> sensor_poses() const;
};

enum class RenderMode { kColor, kLabel };

struct CameraSpec {
  int frame_id = 0;
  int width = 0;
  int height = 0;
  Intrinsics intrinsics;
  RigidPose pose;  // camera-to-world
};

/// `count` cameras evenly spaced on the orbit circle at sensor height, all
/// looking at `target`; frame ids 0..count-1.
std::vector<CameraSpec> orbit_cameras(const OrbitProtocol& orbit, int count, int width, int height, double fov_deg,
                                      const Vec3& target);

/// One primary ray per pixel center. Color mode: primitive color with
/// Lambert shading (ambient 0.3); label mode: class id, sky class for misses.
std::vector<CameraFrame> render_frames(const SceneSpec& scene, std::span<const CameraSpec> cameras, RenderMode mode);

struct ErrorReport {
  std::vector<double> distances;
  double max = 0.0;
  double mean = 0.0;
  double rms = 0.0;
  double bin_width = 0.005;
  std::vector<std::size_t> histogram;

  std::string to_json() const;
  std::string histogram_csv() const;
};

/// Per-vertex |signed distance| to the scene, restricted to vertices inside
/// `region` when given.
ErrorReport mesh_error(const TriangleMesh& mesh, const SceneSpec& scene,
                       const std::optional<Aabb>& region = std::nullopt, double bin_width = 0.005);

/// Closed box mesh with `n` x `n` quads per side, outward winding.
TriangleMesh make_box_mesh(const Vec3& center, const Vec3& size, int n);
/// Square grid in the plane z = center.z(), normals +z.
TriangleMesh make_grid_mesh(const Vec3& center, double extent, int n);
/// Latitude/longitude sphere with vertices exactly on the surface.
TriangleMesh make_sphere_mesh(const Vec3& center, double radius, int stacks, int slices);
/// Concatenates meshes, offsetting indices.
TriangleMesh merge_meshes(std::span<const TriangleMesh> parts);

}  // namespace atsdf
