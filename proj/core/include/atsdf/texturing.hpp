#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atsdf/mesh.hpp"
#include "atsdf/mrf.hpp"
#include "atsdf/visibility.hpp"

namespace atsdf {

/// Radial gain g(r) = 1 + a r^2 + b r^4 + c r^6 with
/// r = |(u,v) - center| / |center|, pixel (x, y) sitting at u = x, v = y.
/// Without an explicit center the image midpoint ((w-1)/2, (h-1)/2) is used,
/// which puts the corner pixels at r = 1.
struct VignettingModel {
  double a = -0.3;
  double b = 0.0;
  double c = 0.0;
  std::optional<Vec2> center;

  static VignettingModel identity() { return {0.0, 0.0, 0.0, std::nullopt}; }
  double gain(double r) const noexcept;
  double radius(double u, double v, int width, int height) const noexcept;
  /// Throws kInvalidArgument unless g(r) > 0 on [0, 1].
  void validate() const;
};

/// out = g(r) * in per channel, rounded and saturated to [0, 255].
Image8 vignetting_correct(const Image8& image, const VignettingModel& model);
/// Synthetic vignette: out = in / g(r), rounded and saturated.
Image8 vignetting_apply(const Image8& image, const VignettingModel& model);

/// Grayscale Sobel gradient magnitude (replicated borders).
ImageF gradient_magnitude(const Image8& image);

/// Projection of a face into a frame; corners may fall outside the image.
std::array<Vec2, 3> project_face(const CameraFrame& frame, const std::array<Vec3, 3>& tri);

/// Sum of gradient magnitude over pixels whose centers fall inside the
/// projected triangle; a face covering no pixel center uses the pixel under
/// its projected centroid.
double face_quality(const ImageF& gradient, const std::array<Vec2, 3>& px);

/// Mean RGB of the projected triangle, sampled the same way as face_quality.
Vec3 face_mean_color(const Image8& image, const std::array<Vec2, 3>& px);

/// HSV in [0,1]^3 mapped onto the cone (s cos 2πh, s sin 2πh, v), which keeps
/// hue circular and gives grays a well defined position.
Vec3 rgb_to_hsv_cone(const Vec3& rgb);

struct PhotoConsistencyConfig {
  double tau_sq = 9.0;          // squared Mahalanobis threshold
  double min_fraction = 0.3;    // never keep fewer than max(2, ceil(fraction * views))
  double min_variance = 6e-5;   // covariance floor per axis, about (2/255)^2
};

/// Indices (ascending) of the views kept by the consistency check. Each pass
/// scores every surviving view against the mean and covariance of the other
/// survivors and drops the single worst view while its squared distance
/// exceeds tau_sq.
std::vector<std::size_t> photo_consistency_keep(std::span<const Vec3> rgb_means,
                                                const PhotoConsistencyConfig& cfg = {});

/// Maps frame ids to positions in a frame list; throws on duplicate ids.
class FrameIndex {
 public:
  explicit FrameIndex(std::span<const CameraFrame> frames);
  /// Position of `frame_id`, throws kInvalidArgument if unknown.
  std::size_t at(std::int32_t frame_id) const;

 private:
  std::vector<std::pair<std::int32_t, std::size_t>> sorted_;
};

/// Applies photo_consistency_keep to every face of the table.
VisibilityTable photo_consistency_filter(const TriangleMesh& mesh, const VisibilityTable& visibility,
                                         std::span<const CameraFrame> frames,
                                         const PhotoConsistencyConfig& cfg = {});

inline constexpr std::int32_t kNoFrame = -1;

struct FaceViewAssignment {
  std::vector<std::int32_t> frame;  // frame id per face or kNoFrame
  double energy = 0.0;

  std::size_t none_count() const;
};

struct ViewCandidate {
  std::int32_t frame_id = 0;
  double quality = 0.0;
};

/// MRF over faces with candidates: unary = -quality, Potts weight lambda_view
/// on face adjacency. Faces without candidates get kNoFrame.
FaceViewAssignment select_views_from_quality(std::size_t face_count, const FaceAdjacency& adjacency,
                                             const std::vector<std::vector<ViewCandidate>>& candidates,
                                             double lambda_view);

/// Face quality from Sobel gradients of each visible frame, then
/// select_views_from_quality.
FaceViewAssignment select_views(const TriangleMesh& mesh, const FaceAdjacency& adjacency,
                                const VisibilityTable& visibility, std::span<const CameraFrame> frames,
                                double lambda_view = 10.0);

/// Connected runs of adjacent faces textured from one frame.
struct Chart {
  std::int32_t frame_id = 0;
  std::vector<std::int32_t> faces;
};

struct ChartSet {
  std::vector<Chart> charts;
  std::vector<std::int32_t> face_chart;  // -1 for kNoFrame faces
};

ChartSet build_charts(const TriangleMesh& mesh, const FaceAdjacency& adjacency, const FaceViewAssignment& assignment);

/// Per-channel least squares over (vertex, chart) instances:
///   sum_seams (f_l + g_l - f_r - g_r)^2 + lambda_seam * sum_edges (g_i - g_j)^2
/// where the second sum runs over mesh edges inside each chart.
struct SeamLevelSystem {
  struct Instance {
    std::int32_t vertex = 0;
    std::int32_t chart = 0;
  };
  struct SeamTerm {
    std::int32_t left = 0;   // instance index
    std::int32_t right = 0;  // instance index
    Vec3 f_left = Vec3::Zero();
    Vec3 f_right = Vec3::Zero();
  };

  std::vector<Instance> instances;
  std::vector<SeamTerm> seams;
  std::vector<std::pair<std::int32_t, std::int32_t>> interior_edges;
  double lambda_seam = 0.1;

  /// Instance of (vertex, chart), or -1.
  std::int32_t find(std::int32_t vertex, std::int32_t chart) const;
  double objective(const std::vector<Vec3>& g) const;
  /// Max abs entry of the normal-equation residual (A g - b) over channels.
  double normal_residual(const std::vector<Vec3>& g) const;

  /// Sorted (vertex, chart) -> instance lookup, filled by build_seam_system.
  std::vector<std::pair<std::int64_t, std::int32_t>> lookup;
};

/// Samples f along seam edges of the given (vignetting-corrected) frames.
SeamLevelSystem build_seam_system(const TriangleMesh& mesh, const FaceAdjacency& adjacency, const ChartSet& charts,
                                  std::span<const CameraFrame> frames, double lambda_seam = 0.1);

/// Minimum-norm minimizer: each connected component is solved exactly with
/// one pinned instance and shifted to zero mean. Throws kSingularSystem if
/// the residual check fails.
std::vector<Vec3> solve_seam_system(const SeamLevelSystem& system);

struct AtlasConfig {
  int page_size = 4096;
  int padding = 2;
  int max_pages = 16;
  std::uint8_t fallback_gray = 128;
};

struct TextureAtlas {
  int page_size = 0;
  std::vector<Image8> pages;                  // RGB
  std::vector<std::int32_t> face_page;        // -1 for fallback faces
  std::vector<std::array<Vec2, 3>> face_uv;   // [0,1]^2, v up
  std::vector<std::int32_t> none_faces;
};

/// Packs every chart into shelf-packed pages sampled 1:1 from its frame and
/// adds the interpolated seam correction per texel. Throws kAtlasOverflow
/// when the charts need more than max_pages pages or one chart is larger
/// than a page.
TextureAtlas bake_atlas(const TriangleMesh& mesh, const ChartSet& charts, std::span<const CameraFrame> frames,
                        const SeamLevelSystem& system, const std::vector<Vec3>& corrections,
                        const AtlasConfig& cfg = {});

/// Writes <stem>.obj, <stem>.mtl, <stem>_page<k>.png and <stem>_faces.json
/// (face -> frame id, -1 for fallback faces) into `dir`.
void write_textured_obj(const std::filesystem::path& dir, const std::string& stem, const TriangleMesh& mesh,
                        const TextureAtlas& atlas, const FaceViewAssignment& assignment);

}  // namespace atsdf
