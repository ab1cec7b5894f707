#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "atsdf/io.hpp"
#include "atsdf/mesh.hpp"
#include "atsdf/visibility.hpp"

namespace atsdf {

struct ClassInfo {
  std::int32_t id = 0;
  std::string name;
  std::array<std::uint8_t, 3> color{0, 0, 0};
};

/// Palette JSON: {"classes": [{"id": 0, "name": "sky", "color": [r, g, b]}, ...]}
struct ClassPalette {
  std::vector<ClassInfo> classes;  // indexed by id

  std::size_t size() const noexcept { return classes.size(); }
  /// Ids must be dense 0..N-1 in order and N >= 2.
  void validate() const;
  std::string to_json() const;
  static ClassPalette from_json(const std::string& text);
  static ClassPalette load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Projected area per (face, class), face-major.
struct LabelVotes {
  std::size_t classes = 0;
  std::vector<double> area;

  std::size_t face_count() const noexcept { return classes ? area.size() / classes : 0; }
  bool observed(std::size_t face) const;
  /// Row-normalized votes; unobserved faces get the uniform row 1/N.
  std::vector<double> distribution(std::size_t face) const;
};

/// Every visible (face, frame) pair votes with its projected area for the
/// class under the projected centroid pixel. Label frames carry class ids in
/// channel 0. Throws kUnknownClass for ids outside the palette.
LabelVotes accumulate_votes(const TriangleMesh& mesh, const VisibilityTable& visibility,
                            std::span<const CameraFrame> label_frames, const ClassPalette& palette);

struct SemanticLabels {
  std::vector<std::int32_t> face_class;
  std::vector<double> confidence;
  double energy = 0.0;
};

/// Potts MRF over all faces with every class as a candidate and unary equal
/// to the negative vote distribution.
SemanticLabels fuse_labels(const FaceAdjacency& adjacency, const LabelVotes& votes, double lambda_sem = 0.5);

/// PLY with per-face class_id and palette color.
void write_labeled_ply(const std::filesystem::path& path, const TriangleMesh& mesh, const SemanticLabels& labels,
                       const ClassPalette& palette, PlyFormat format = PlyFormat::kBinary);
/// {"classes": [...names], "counts": [...], "faces": [{"class": c, "confidence": p}, ...]}
void write_label_report(const std::filesystem::path& path, const SemanticLabels& labels,
                        const ClassPalette& palette);

}  // namespace atsdf
