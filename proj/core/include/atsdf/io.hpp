#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "atsdf/geometry.hpp"
#include "atsdf/mesh.hpp"

namespace atsdf {

/// 8-bit PNG with 1, 3 or 4 channels; 16-bit inputs are reduced to 8 bits and
/// palette/gray-alpha inputs expanded.
Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

/// Binary PPM (P6, maxval 255) and PGM (P5).
Image8 read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image8& image);

/// Dispatches on the extension (.png, .ppm, .pgm).
Image8 read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image8& image);

enum class PlyFormat { kAscii, kBinary };

/// Optional per-face attributes written next to vertex_indices.
struct PlyFaceAttributes {
  std::vector<std::int32_t> class_id;
  std::vector<std::array<std::uint8_t, 3>> color;
};

/// Vertex positions as double, faces as uchar-count int lists.
void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh, PlyFormat format,
               const PlyFaceAttributes& attributes = {});
/// Reads ascii or binary_little_endian PLY with float/double x y z vertices
/// and triangle faces; other properties are skipped.
TriangleMesh read_ply(const std::filesystem::path& path);

/// Point cloud as binary little-endian PLY with double x y z.
void write_point_cloud(const std::filesystem::path& path, const std::vector<Vec3>& points);
std::vector<Vec3> read_point_cloud(const std::filesystem::path& path);

struct TrajectoryEntry {
  double timestamp = 0.0;
  RigidPose pose;
};

/// One line per pose: "timestamp tx ty tz qx qy qz qw"; '#' starts a comment.
std::vector<TrajectoryEntry> read_trajectory(const std::filesystem::path& path);
void write_trajectory(const std::filesystem::path& path, const std::vector<TrajectoryEntry>& entries);

/// Writes `bytes` to `path` via "<path>.partial" and an atomic rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

/// Frame manifest JSON:
///   {"frames": [{"id": 0, "image": "f000.png", "width": 640, "height": 480,
///                "intrinsics": {"fx":..,"fy":..,"cx":..,"cy":..},
///                "pose": {"t": [x,y,z], "q": [qx,qy,qz,qw]}}, ...]}
/// Image paths are relative to the manifest directory.
struct ManifestEntry {
  int id = 0;
  std::string image;
  int width = 0;
  int height = 0;
  Intrinsics intrinsics;
  RigidPose pose;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
/// Loads every frame image named in the manifest.
std::vector<CameraFrame> load_frames(const std::filesystem::path& manifest_path);

}  // namespace atsdf
