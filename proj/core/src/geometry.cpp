#include "atsdf/geometry.hpp"

#include <cmath>
#include <string>

namespace atsdf {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDegenerateProjection: return "degenerate-projection";
    case ErrorCode::kEmptyMerge: return "empty-merge";
    case ErrorCode::kDegenerateStatistics: return "degenerate-statistics";
    case ErrorCode::kAllocationLimit: return "allocation-limit";
    case ErrorCode::kEmptyVolume: return "empty-volume";
    case ErrorCode::kNoCandidates: return "no-candidates";
    case ErrorCode::kSingularSystem: return "singular-system";
    case ErrorCode::kAtlasOverflow: return "atlas-overflow";
    case ErrorCode::kUnknownClass: return "unknown-class";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kConfig: return "config";
  }
  return "unknown";
}

RigidPose::RigidPose(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "pose: non-finite entries");
  }
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-9 || std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidArgument, "pose: rotation is not orthonormal");
  }
}

RigidPose RigidPose::from_quaternion(const Eigen::Quaterniond& q, const Vec3& t) {
  if (q.norm() < 1e-12) {
    throw Error(ErrorCode::kInvalidArgument, "pose: zero quaternion");
  }
  return RigidPose(q.normalized().toRotationMatrix(), t);
}

RigidPose RigidPose::look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-12) {
    throw Error(ErrorCode::kInvalidArgument, "look_at: view direction parallel to up");
  }
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return RigidPose(r, eye);
}

RigidPose RigidPose::inverse() const {
  const Mat3 rt = rotation_.transpose();
  return RigidPose(rt, -(rt * translation_));
}

RigidPose RigidPose::operator*(const RigidPose& other) const {
  // Re-orthonormalize to keep long products inside the 1e-9 tolerance.
  const Eigen::Quaterniond q(rotation_ * other.rotation_);
  return RigidPose(q.normalized().toRotationMatrix(), rotation_ * other.translation_ + translation_);
}

void validate_camera(const CameraFrame& camera) {
  const auto& k = camera.intrinsics;
  if (!(k.fx > 0) || !(k.fy > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "camera: focal lengths must be positive");
  }
  if (!(k.cx >= 0 && k.cx < camera.width() && k.cy >= 0 && k.cy < camera.height())) {
    throw Error(ErrorCode::kInvalidArgument,
                "camera " + std::to_string(camera.frame_id) + ": principal point outside image");
  }
}

std::optional<Vec2> project_camera_point(const Intrinsics& k, const Vec3& p_cam) {
  if (!(p_cam.z() > 0)) return std::nullopt;
  return Vec2(k.fx * p_cam.x() / p_cam.z() + k.cx, k.fy * p_cam.y() / p_cam.z() + k.cy);
}

std::optional<Vec2> project(const CameraFrame& camera, const Vec3& point) {
  const Vec3 p_cam = camera.pose.rotation().transpose() * (point - camera.pose.translation());
  auto px = project_camera_point(camera.intrinsics, p_cam);
  if (!px) return std::nullopt;
  const double u = px->x();
  const double v = px->y();
  if (!(u >= 0 && v >= 0 && u < camera.width() && v < camera.height())) return std::nullopt;
  return px;
}

Vec3 unproject(const CameraFrame& camera, const Vec2& pixel, double depth) {
  const auto& k = camera.intrinsics;
  const Vec3 p_cam((pixel.x() - k.cx) / k.fx * depth, (pixel.y() - k.cy) / k.fy * depth, depth);
  return camera.pose.apply(p_cam);
}

double shoelace_area(const Vec2& a, const Vec2& b, const Vec2& c) {
  return 0.5 * std::abs((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
}

double triangle_area_px(const CameraFrame& camera, const std::array<Vec3, 3>& tri) {
  std::array<Vec2, 3> px;
  for (int i = 0; i < 3; ++i) {
    auto p = project(camera, tri[i]);
    if (!p) {
      throw Error(ErrorCode::kDegenerateProjection, "triangle vertex does not project into the image");
    }
    px[i] = *p;
  }
  return shoelace_area(px[0], px[1], px[2]);
}

}  // namespace atsdf
