#pragma once

#include <array>
#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "atsdf/image.hpp"

namespace atsdf {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using Mat3 = Eigen::Matrix3d;
using Vec3i = Eigen::Vector3i;

/// Rigid transform x -> R x + t. Camera and sensor poses map local to world.
class RigidPose {
 public:
  RigidPose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  RigidPose(const Mat3& rotation, const Vec3& translation);

  static RigidPose from_quaternion(const Eigen::Quaterniond& q, const Vec3& t);
  /// Camera-to-world pose for a camera at `eye` looking at `target`
  /// (+z forward, +x right, +y down, `up` roughly opposite to +y).
  static RigidPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

  const Mat3& rotation() const noexcept { return rotation_; }
  const Vec3& translation() const noexcept { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 rotate(const Vec3& d) const { return rotation_ * d; }
  RigidPose inverse() const;
  /// (this * other)(x) == this(other(x))
  RigidPose operator*(const RigidPose& other) const;
  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation_); }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

/// Pinhole camera with an image payload. Rectified images only; +z forward,
/// +x right, +y down, pixel origin top-left. Pixel (i, j) spans [i, i+1) x
/// [j, j+1), so its center sits at (i + 0.5, j + 0.5).
struct CameraFrame {
  Intrinsics intrinsics;
  RigidPose pose;  // camera-to-world
  Image8 image;
  int frame_id = 0;

  int width() const noexcept { return image.width(); }
  int height() const noexcept { return image.height(); }
  Vec3 center() const { return pose.translation(); }
};

/// Throws kInvalidArgument if intrinsics violate fx, fy > 0 or the principal
/// point is outside the image.
void validate_camera(const CameraFrame& camera);

/// Pinhole projection of a camera-frame point; nullopt for non-positive depth.
std::optional<Vec2> project_camera_point(const Intrinsics& k, const Vec3& p_cam);

/// World point to pixel, or nullopt when behind the camera or outside the
/// image rectangle [0, width) x [0, height).
std::optional<Vec2> project(const CameraFrame& camera, const Vec3& point);

/// Inverse of project at a known camera-frame depth.
Vec3 unproject(const CameraFrame& camera, const Vec2& pixel, double depth);

/// Area in pixels^2 of the projected triangle. Throws kDegenerateProjection if
/// any vertex fails to project.
double triangle_area_px(const CameraFrame& camera, const std::array<Vec3, 3>& tri);

double shoelace_area(const Vec2& a, const Vec2& b, const Vec2& c);

}  // namespace atsdf
