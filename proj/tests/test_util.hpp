#pragma once

#include <filesystem>
#include <limits>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "atsdf/geometry.hpp"
#include "atsdf/mesh.hpp"
#include "atsdf/raster.hpp"
#include "atsdf/synthbench.hpp"

namespace atsdf::test {

inline CameraFrame make_camera(int width, int height, double f, const RigidPose& pose, int channels = 3,
                               std::uint8_t fill = 0, int frame_id = 0) {
  CameraFrame cam;
  cam.intrinsics = {f, f, 0.5 * width, 0.5 * height};
  cam.pose = pose;
  cam.image = Image8(width, height, channels, fill);
  cam.frame_id = frame_id;
  return cam;
}

inline TriangleMesh tetrahedron() {
  TriangleMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  m.faces = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
  m.compute_normals();
  return m;
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

inline Vec3 random_vec(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("atsdf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Blank single-channel frames for the given camera specs.
inline std::vector<CameraFrame> cameras_from(std::span<const CameraSpec> specs) {
  std::vector<CameraFrame> out;
  for (const auto& s : specs) {
    CameraFrame c;
    c.intrinsics = s.intrinsics;
    c.pose = s.pose;
    c.image = Image8(s.width, s.height, 1);
    c.frame_id = s.frame_id;
    out.push_back(std::move(c));
  }
  return out;
}

/// Depth-buffer oracle: face visible iff it passes the projection and facing
/// tests and the z-buffer at its centroid pixel is not nearer than the face's
/// own depth at that pixel center.
inline std::vector<std::set<int>> zbuffer_visibility(const TriangleMesh& m, std::span<const CameraFrame> cams,
                                              double min_cos) {
  std::vector<std::set<int>> vis(m.face_count());
  for (const auto& cam : cams) {
    const int w = cam.width(), h = cam.height();
    std::vector<double> zbuf(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity());
    const RigidPose to_cam = cam.pose.inverse();
    for (std::size_t f = 0; f < m.face_count(); ++f) {
      const auto tri = m.triangle(f);
      std::array<Vec3, 3> pc;
      std::array<Vec2, 3> px{Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
      bool ok = true;
      for (int k = 0; k < 3; ++k) {
        pc[k] = to_cam.apply(tri[k]);
        if (pc[k].z() <= 1e-3) ok = false;
        else px[k] = Vec2(cam.intrinsics.fx * pc[k].x() / pc[k].z() + cam.intrinsics.cx,
                          cam.intrinsics.fy * pc[k].y() / pc[k].z() + cam.intrinsics.cy);
      }
      if (!ok) continue;
      rasterize_triangle(px[0], px[1], px[2], w, h, [&](int x, int y, const Vec3& b) {
        const double inv_z = b[0] / pc[0].z() + b[1] / pc[1].z() + b[2] / pc[2].z();
        double& z = zbuf[static_cast<std::size_t>(y) * w + x];
        z = std::min(z, 1.0 / inv_z);
      });
    }
    for (std::size_t f = 0; f < m.face_count(); ++f) {
      const auto tri = m.triangle(f);
      bool inside = true;
      for (const auto& v : tri) inside = inside && project(cam, v).has_value();
      if (!inside) continue;
      const Vec3 c = m.centroid(f);
      if (m.face_normals[f].dot((cam.center() - c).normalized()) < min_cos) continue;
      const auto p = *project(cam, c);
      const int x = static_cast<int>(p.x()), y = static_cast<int>(p.y());
      const Vec3 ray((x + 0.5 - cam.intrinsics.cx) / cam.intrinsics.fx,
                     (y + 0.5 - cam.intrinsics.cy) / cam.intrinsics.fy, 1.0);
      const Vec3 a = to_cam.apply(tri[0]);
      const Vec3 n = (to_cam.apply(tri[1]) - a).cross(to_cam.apply(tri[2]) - a);
      const double z_self = n.dot(a) / n.dot(ray);
      const double z = zbuf[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
      if (z_self <= z * (1 + 1e-6)) vis[f].insert(cam.frame_id);
    }
  }
  return vis;
}

}  // namespace atsdf::test
