#include "atsdf/texturing.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "atsdf/io.hpp"
#include "atsdf/parallel.hpp"
#include "atsdf/raster.hpp"
#include "json.hpp"

namespace atsdf {

namespace {

std::uint8_t saturate(double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); }

}  // namespace

double VignettingModel::gain(double r) const noexcept {
  const double r2 = r * r;
  return 1.0 + r2 * (a + r2 * (b + r2 * c));
}

double VignettingModel::radius(double u, double v, int width, int height) const noexcept {
  const Vec2 ctr = center.value_or(Vec2((width - 1) / 2.0, (height - 1) / 2.0));
  const double norm = ctr.norm();
  if (norm == 0.0) return 0.0;
  return std::hypot(u - ctr.x(), v - ctr.y()) / norm;
}

void VignettingModel::validate() const {
  if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(c)) {
    throw Error(ErrorCode::kInvalidArgument, "vignetting: non-finite coefficient");
  }
  // g as a cubic in s = r^2 on [0, 1]: check the ends and interior critical points.
  std::vector<double> s_values{0.0, 1.0};
  if (c != 0.0) {
    const double disc = 4 * b * b - 12 * a * c;
    if (disc >= 0) {
      s_values.push_back((-2 * b + std::sqrt(disc)) / (6 * c));
      s_values.push_back((-2 * b - std::sqrt(disc)) / (6 * c));
    }
  } else if (b != 0.0) {
    s_values.push_back(-a / (2 * b));
  }
  for (double s : s_values) {
    if (s < 0.0 || s > 1.0) continue;
    if (!(1.0 + s * (a + s * (b + s * c)) > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "vignetting: gain must stay positive for r in [0, 1]");
    }
  }
}

namespace {

template <typename Op>
Image8 apply_gain(const Image8& image, const VignettingModel& model, Op op) {
  model.validate();
  Image8 out(image.width(), image.height(), image.channels());
  parallel_for(0, static_cast<std::size_t>(image.height()), [&](std::size_t yy) {
    const int y = static_cast<int>(yy);
    for (int x = 0; x < image.width(); ++x) {
      const double g = model.gain(model.radius(x, y, image.width(), image.height()));
      for (int ch = 0; ch < image.channels(); ++ch) out.at(x, y, ch) = saturate(op(image.at(x, y, ch), g));
    }
  });
  return out;
}

}  // namespace

Image8 vignetting_correct(const Image8& image, const VignettingModel& model) {
  return apply_gain(image, model, [](double v, double g) { return v * g; });
}

Image8 vignetting_apply(const Image8& image, const VignettingModel& model) {
  return apply_gain(image, model, [](double v, double g) { return v / g; });
}

ImageF gradient_magnitude(const Image8& image) {
  const int w = image.width();
  const int h = image.height();
  ImageF gray(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      gray.at(x, y, 0) = image.channels() >= 3 ? static_cast<float>(0.299 * image.at(x, y, 0) +
                                                                    0.587 * image.at(x, y, 1) +
                                                                    0.114 * image.at(x, y, 2))
                                               : static_cast<float>(image.at(x, y, 0));
    }
  }
  ImageF out(w, h, 1);
  auto g = [&](int x, int y) { return static_cast<double>(gray.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1), 0)); };
  parallel_for(0, static_cast<std::size_t>(h), [&](std::size_t yy) {
    const int y = static_cast<int>(yy);
    for (int x = 0; x < w; ++x) {
      const double gx = (g(x + 1, y - 1) + 2 * g(x + 1, y) + g(x + 1, y + 1)) -
                        (g(x - 1, y - 1) + 2 * g(x - 1, y) + g(x - 1, y + 1));
      const double gy = (g(x - 1, y + 1) + 2 * g(x, y + 1) + g(x + 1, y + 1)) -
                        (g(x - 1, y - 1) + 2 * g(x, y - 1) + g(x + 1, y - 1));
      out.at(x, y, 0) = static_cast<float>(std::sqrt(gx * gx + gy * gy));
    }
  });
  return out;
}

namespace {

Vec2 project_unclipped(const CameraFrame& frame, const Vec3& p) {
  auto q = project_camera_point(frame.intrinsics,
                                frame.pose.rotation().transpose() * (p - frame.pose.translation()));
  if (!q) throw Error(ErrorCode::kDegenerateProjection, "projection: point behind the camera");
  return *q;
}

}  // namespace

std::array<Vec2, 3> project_face(const CameraFrame& frame, const std::array<Vec3, 3>& tri) {
  return {project_unclipped(frame, tri[0]), project_unclipped(frame, tri[1]), project_unclipped(frame, tri[2])};
}

namespace {

template <typename Fn>
void for_face_pixels(int width, int height, const std::array<Vec2, 3>& px, Fn&& fn) {
  const int n = rasterize_triangle(px[0], px[1], px[2], width, height, [&](int x, int y, const Vec3&) { fn(x, y); });
  if (n > 0) return;
  const Vec2 c = (px[0] + px[1] + px[2]) / 3.0;
  fn(std::clamp(static_cast<int>(std::floor(c.x())), 0, width - 1),
     std::clamp(static_cast<int>(std::floor(c.y())), 0, height - 1));
}

}  // namespace

double face_quality(const ImageF& gradient, const std::array<Vec2, 3>& px) {
  double sum = 0.0;
  for_face_pixels(gradient.width(), gradient.height(), px, [&](int x, int y) { sum += gradient.at(x, y, 0); });
  return sum;
}

Vec3 face_mean_color(const Image8& image, const std::array<Vec2, 3>& px) {
  Vec3 sum = Vec3::Zero();
  int n = 0;
  for_face_pixels(image.width(), image.height(), px, [&](int x, int y) {
    for (int ch = 0; ch < 3; ++ch) sum[ch] += image.at(x, y, std::min(ch, image.channels() - 1));
    ++n;
  });
  return sum / n;
}

Vec3 rgb_to_hsv_cone(const Vec3& rgb) {
  const Vec3 c = rgb / 255.0;
  const double mx = c.maxCoeff();
  const double mn = c.minCoeff();
  const double delta = mx - mn;
  double hue = 0.0;
  if (delta > 0) {
    if (mx == c[0]) {
      hue = std::fmod((c[1] - c[2]) / delta, 6.0);
    } else if (mx == c[1]) {
      hue = (c[2] - c[0]) / delta + 2.0;
    } else {
      hue = (c[0] - c[1]) / delta + 4.0;
    }
    hue /= 6.0;
  }
  const double sat = mx > 0 ? delta / mx : 0.0;
  const double angle = 2.0 * M_PI * hue;
  return {sat * std::cos(angle), sat * std::sin(angle), mx};
}

std::vector<std::size_t> photo_consistency_keep(std::span<const Vec3> rgb_means, const PhotoConsistencyConfig& cfg) {
  const std::size_t n = rgb_means.size();
  std::vector<std::size_t> keep(n);
  std::iota(keep.begin(), keep.end(), 0);
  if (n <= 2) return keep;
  const auto floor_count =
      std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(cfg.min_fraction * static_cast<double>(n))));
  std::vector<Vec3> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = rgb_to_hsv_cone(rgb_means[i]);

  while (keep.size() > floor_count) {
    Vec3 s1 = Vec3::Zero();
    Mat3 s2 = Mat3::Zero();
    for (std::size_t i : keep) {
      s1 += x[i];
      s2 += x[i] * x[i].transpose();
    }
    const double others = static_cast<double>(keep.size() - 1);
    double worst = -1.0;
    std::size_t worst_pos = 0;
    for (std::size_t pos = 0; pos < keep.size(); ++pos) {
      const Vec3& xi = x[keep[pos]];
      const Vec3 mean = (s1 - xi) / others;
      Mat3 cov = Mat3::Zero();
      if (others > 1) cov = (s2 - xi * xi.transpose() - others * mean * mean.transpose()) / (others - 1);
      cov = 0.5 * (cov + cov.transpose());
      cov.diagonal().array() += cfg.min_variance;
      const Vec3 d = xi - mean;
      const double d2 = d.dot(cov.ldlt().solve(d));
      if (d2 > worst) {
        worst = d2;
        worst_pos = pos;
      }
    }
    if (!(worst > cfg.tau_sq)) break;
    keep.erase(keep.begin() + static_cast<std::ptrdiff_t>(worst_pos));
  }
  return keep;
}

FrameIndex::FrameIndex(std::span<const CameraFrame> frames) {
  for (std::size_t i = 0; i < frames.size(); ++i) sorted_.emplace_back(frames[i].frame_id, i);
  std::sort(sorted_.begin(), sorted_.end());
  for (std::size_t i = 1; i < sorted_.size(); ++i) {
    if (sorted_[i].first == sorted_[i - 1].first) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate frame id " + std::to_string(sorted_[i].first));
    }
  }
}

std::size_t FrameIndex::at(std::int32_t frame_id) const {
  auto it = std::lower_bound(sorted_.begin(), sorted_.end(), std::make_pair(frame_id, std::size_t{0}));
  if (it == sorted_.end() || it->first != frame_id) {
    throw Error(ErrorCode::kInvalidArgument, "unknown frame id " + std::to_string(frame_id));
  }
  return it->second;
}

VisibilityTable photo_consistency_filter(const TriangleMesh& mesh, const VisibilityTable& visibility,
                                         std::span<const CameraFrame> frames, const PhotoConsistencyConfig& cfg) {
  if (visibility.faces.size() != mesh.faces.size()) {
    throw Error(ErrorCode::kInvalidArgument, "photo_consistency_filter: visibility/mesh size mismatch");
  }
  const FrameIndex index(frames);
  VisibilityTable out;
  out.faces.resize(mesh.faces.size());
  parallel_for(0, mesh.faces.size(), [&](std::size_t f) {
    const auto& views = visibility.faces[f];
    if (views.size() <= 2) {
      out.faces[f] = views;
      return;
    }
    const auto tri = mesh.triangle(f);
    std::vector<Vec3> colors;
    colors.reserve(views.size());
    for (const auto& v : views) {
      const CameraFrame& frame = frames[index.at(v.frame_id)];
      colors.push_back(face_mean_color(frame.image, project_face(frame, tri)));
    }
    for (std::size_t k : photo_consistency_keep(colors, cfg)) out.faces[f].push_back(views[k]);
  });
  return out;
}

std::size_t FaceViewAssignment::none_count() const {
  return static_cast<std::size_t>(std::count(frame.begin(), frame.end(), kNoFrame));
}

FaceViewAssignment select_views_from_quality(std::size_t face_count, const FaceAdjacency& adjacency,
                                             const std::vector<std::vector<ViewCandidate>>& candidates,
                                             double lambda_view) {
  if (candidates.size() != face_count) throw Error(ErrorCode::kInvalidArgument, "select_views: size mismatch");
  std::vector<std::int32_t> node(face_count, -1);
  MrfProblem problem;
  problem.lambda = lambda_view;
  for (std::size_t f = 0; f < face_count; ++f) {
    if (candidates[f].empty()) continue;
    node[f] = static_cast<std::int32_t>(problem.nodes.size());
    MrfNode n;
    for (const auto& c : candidates[f]) {
      n.labels.push_back(c.frame_id);
      n.costs.push_back(-c.quality);
    }
    problem.nodes.push_back(std::move(n));
  }
  for (const auto& [a, b] : adjacency.edges) {
    const std::int32_t na = node[static_cast<std::size_t>(a)];
    const std::int32_t nb = node[static_cast<std::size_t>(b)];
    if (na >= 0 && nb >= 0) problem.edges.emplace_back(na, nb);
  }
  FaceViewAssignment out;
  out.frame.assign(face_count, kNoFrame);
  if (problem.nodes.empty()) return out;
  const MrfResult result = solve_mrf(problem);
  for (std::size_t f = 0; f < face_count; ++f) {
    if (node[f] >= 0) out.frame[f] = result.labels[static_cast<std::size_t>(node[f])];
  }
  out.energy = result.energy;
  return out;
}

FaceViewAssignment select_views(const TriangleMesh& mesh, const FaceAdjacency& adjacency,
                                const VisibilityTable& visibility, std::span<const CameraFrame> frames,
                                double lambda_view) {
  if (visibility.faces.size() != mesh.faces.size()) {
    throw Error(ErrorCode::kInvalidArgument, "select_views: visibility/mesh size mismatch");
  }
  const FrameIndex index(frames);
  std::vector<ImageF> gradients(frames.size());
  parallel_for(0, frames.size(), [&](std::size_t i) { gradients[i] = gradient_magnitude(frames[i].image); });
  std::vector<std::vector<ViewCandidate>> candidates(mesh.faces.size());
  parallel_for(0, mesh.faces.size(), [&](std::size_t f) {
    const auto tri = mesh.triangle(f);
    for (const auto& v : visibility.faces[f]) {
      const std::size_t i = index.at(v.frame_id);
      candidates[f].push_back({v.frame_id, face_quality(gradients[i], project_face(frames[i], tri))});
    }
  });
  return select_views_from_quality(mesh.faces.size(), adjacency, candidates, lambda_view);
}

ChartSet build_charts(const TriangleMesh& mesh, const FaceAdjacency& adjacency, const FaceViewAssignment& assignment) {
  const std::size_t n = mesh.faces.size();
  if (assignment.frame.size() != n) throw Error(ErrorCode::kInvalidArgument, "build_charts: size mismatch");
  const auto neighbors = adjacency.neighbors(n);
  ChartSet out;
  out.face_chart.assign(n, -1);
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (assignment.frame[seed] == kNoFrame || out.face_chart[seed] >= 0) continue;
    const auto id = static_cast<std::int32_t>(out.charts.size());
    Chart chart{assignment.frame[seed], {}};
    std::vector<std::int32_t> stack{static_cast<std::int32_t>(seed)};
    out.face_chart[seed] = id;
    while (!stack.empty()) {
      const std::int32_t f = stack.back();
      stack.pop_back();
      chart.faces.push_back(f);
      for (std::int32_t g : neighbors[static_cast<std::size_t>(f)]) {
        const auto gu = static_cast<std::size_t>(g);
        if (out.face_chart[gu] < 0 && assignment.frame[gu] == chart.frame_id) {
          out.face_chart[gu] = id;
          stack.push_back(g);
        }
      }
    }
    std::sort(chart.faces.begin(), chart.faces.end());
    out.charts.push_back(std::move(chart));
  }
  return out;
}

namespace {

std::int64_t instance_key(std::int32_t vertex, std::int32_t chart) {
  return (static_cast<std::int64_t>(vertex) << 32) | static_cast<std::uint32_t>(chart);
}

Vec3 sample_rgb(const Image8& image, const Vec2& p) {
  Vec3 out;
  for (int ch = 0; ch < 3; ++ch) out[ch] = sample_bilinear(image, p.x(), p.y(), std::min(ch, image.channels() - 1));
  return out;
}

}  // namespace

std::int32_t SeamLevelSystem::find(std::int32_t vertex, std::int32_t chart) const {
  const std::int64_t key = instance_key(vertex, chart);
  auto it = std::lower_bound(lookup.begin(), lookup.end(), std::make_pair(key, std::int32_t{-1}));
  if (it == lookup.end() || it->first != key) return -1;
  return it->second;
}

double SeamLevelSystem::objective(const std::vector<Vec3>& g) const {
  double e = 0.0;
  for (const SeamTerm& s : seams) {
    e += (s.f_left + g[static_cast<std::size_t>(s.left)] - s.f_right - g[static_cast<std::size_t>(s.right)])
             .squaredNorm();
  }
  for (const auto& [i, j] : interior_edges) {
    e += lambda_seam * (g[static_cast<std::size_t>(i)] - g[static_cast<std::size_t>(j)]).squaredNorm();
  }
  return e;
}

double SeamLevelSystem::normal_residual(const std::vector<Vec3>& g) const {
  // Half the gradient of the objective: A g - b.
  std::vector<Vec3> r(instances.size(), Vec3::Zero());
  for (const SeamTerm& s : seams) {
    const Vec3 d = s.f_left + g[static_cast<std::size_t>(s.left)] - s.f_right - g[static_cast<std::size_t>(s.right)];
    r[static_cast<std::size_t>(s.left)] += d;
    r[static_cast<std::size_t>(s.right)] -= d;
  }
  for (const auto& [i, j] : interior_edges) {
    const Vec3 d = lambda_seam * (g[static_cast<std::size_t>(i)] - g[static_cast<std::size_t>(j)]);
    r[static_cast<std::size_t>(i)] += d;
    r[static_cast<std::size_t>(j)] -= d;
  }
  double worst = 0.0;
  for (const Vec3& v : r) worst = std::max(worst, v.cwiseAbs().maxCoeff());
  return worst;
}

SeamLevelSystem build_seam_system(const TriangleMesh& mesh, const FaceAdjacency& adjacency, const ChartSet& charts,
                                  std::span<const CameraFrame> frames, double lambda_seam) {
  if (!(lambda_seam > 0) || !std::isfinite(lambda_seam)) {
    throw Error(ErrorCode::kInvalidArgument, "seam leveling: lambda_seam must be positive");
  }
  const FrameIndex index(frames);
  SeamLevelSystem sys;
  sys.lambda_seam = lambda_seam;

  std::vector<std::int64_t> keys;
  for (std::size_t c = 0; c < charts.charts.size(); ++c) {
    for (std::int32_t f : charts.charts[c].faces) {
      for (std::int32_t v : mesh.faces[static_cast<std::size_t>(f)]) {
        keys.push_back(instance_key(v, static_cast<std::int32_t>(c)));
      }
    }
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  sys.instances.reserve(keys.size());
  sys.lookup.reserve(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    sys.instances.push_back({static_cast<std::int32_t>(keys[i] >> 32), static_cast<std::int32_t>(keys[i] & 0xffffffff)});
    sys.lookup.emplace_back(keys[i], static_cast<std::int32_t>(i));
  }

  for (std::size_t c = 0; c < charts.charts.size(); ++c) {
    for (std::int32_t f : charts.charts[c].faces) {
      const Face& t = mesh.faces[static_cast<std::size_t>(f)];
      for (int k = 0; k < 3; ++k) {
        std::int32_t a = sys.find(t[static_cast<std::size_t>(k)], static_cast<std::int32_t>(c));
        std::int32_t b = sys.find(t[static_cast<std::size_t>((k + 1) % 3)], static_cast<std::int32_t>(c));
        if (a > b) std::swap(a, b);
        sys.interior_edges.emplace_back(a, b);
      }
    }
  }
  std::sort(sys.interior_edges.begin(), sys.interior_edges.end());
  sys.interior_edges.erase(std::unique(sys.interior_edges.begin(), sys.interior_edges.end()),
                           sys.interior_edges.end());

  // Hat-weighted color samples along each seam edge, accumulated per
  // (vertex, left chart, right chart).
  struct Accum {
    std::int32_t vertex, left, right;
    Vec3 sum_left, sum_right;
    double weight;
  };
  std::vector<Accum> acc;
  for (const auto& [fa, fb] : adjacency.edges) {
    std::int32_t cl = charts.face_chart[static_cast<std::size_t>(fa)];
    std::int32_t cr = charts.face_chart[static_cast<std::size_t>(fb)];
    if (cl < 0 || cr < 0 || cl == cr) continue;
    if (cl > cr) std::swap(cl, cr);
    const Face& ta = mesh.faces[static_cast<std::size_t>(fa)];
    const Face& tb = mesh.faces[static_cast<std::size_t>(fb)];
    std::array<std::int32_t, 2> shared{};
    int ns = 0;
    for (std::int32_t v : ta) {
      if (ns < 2 && std::find(tb.begin(), tb.end(), v) != tb.end()) shared[static_cast<std::size_t>(ns++)] = v;
    }
    if (ns != 2) continue;
    const CameraFrame& frame_l = frames[index.at(charts.charts[static_cast<std::size_t>(cl)].frame_id)];
    const CameraFrame& frame_r = frames[index.at(charts.charts[static_cast<std::size_t>(cr)].frame_id)];
    const Vec3& p0 = mesh.vertices[static_cast<std::size_t>(shared[0])];
    const Vec3& p1 = mesh.vertices[static_cast<std::size_t>(shared[1])];
    const double len = std::max((project_unclipped(frame_l, p1) - project_unclipped(frame_l, p0)).norm(),
                                (project_unclipped(frame_r, p1) - project_unclipped(frame_r, p0)).norm());
    const int samples = std::max(3, static_cast<int>(std::ceil(len)));
    Accum a0{shared[0], cl, cr, Vec3::Zero(), Vec3::Zero(), 0.0};
    Accum a1{shared[1], cl, cr, Vec3::Zero(), Vec3::Zero(), 0.0};
    for (int k = 0; k < samples; ++k) {
      const double t = (k + 0.5) / samples;
      const Vec3 q = p0 + t * (p1 - p0);
      const Vec3 col_l = sample_rgb(frame_l.image, project_unclipped(frame_l, q));
      const Vec3 col_r = sample_rgb(frame_r.image, project_unclipped(frame_r, q));
      a0.sum_left += (1 - t) * col_l;
      a0.sum_right += (1 - t) * col_r;
      a0.weight += 1 - t;
      a1.sum_left += t * col_l;
      a1.sum_right += t * col_r;
      a1.weight += t;
    }
    acc.push_back(a0);
    acc.push_back(a1);
  }
  std::sort(acc.begin(), acc.end(), [](const Accum& x, const Accum& y) {
    return std::tie(x.vertex, x.left, x.right) < std::tie(y.vertex, y.left, y.right);
  });
  for (std::size_t i = 0; i < acc.size();) {
    Accum total = acc[i];
    std::size_t j = i + 1;
    for (; j < acc.size() && acc[j].vertex == total.vertex && acc[j].left == total.left &&
           acc[j].right == total.right;
         ++j) {
      total.sum_left += acc[j].sum_left;
      total.sum_right += acc[j].sum_right;
      total.weight += acc[j].weight;
    }
    sys.seams.push_back({sys.find(total.vertex, total.left), sys.find(total.vertex, total.right),
                         total.sum_left / total.weight, total.sum_right / total.weight});
    i = j;
  }
  return sys;
}

std::vector<Vec3> solve_seam_system(const SeamLevelSystem& sys) {
  const std::size_t n = sys.instances.size();
  std::vector<Vec3> g(n, Vec3::Zero());
  if (n == 0) return g;

  std::vector<std::int32_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto root = [&](std::int32_t x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  auto unite = [&](std::int32_t a, std::int32_t b) {
    a = root(a);
    b = root(b);
    if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  };
  for (const auto& s : sys.seams) unite(s.left, s.right);
  for (const auto& [i, j] : sys.interior_edges) unite(i, j);

  // The lowest instance of each component is pinned to zero; the rest form
  // an SPD system.
  std::vector<std::int32_t> comp(n);
  std::vector<std::int32_t> reduced(n, -1);
  int unknowns = 0;
  for (std::size_t i = 0; i < n; ++i) {
    comp[i] = root(static_cast<std::int32_t>(i));
    if (comp[i] != static_cast<std::int32_t>(i)) reduced[i] = unknowns++;
  }
  if (unknowns > 0) {
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(unknowns, 3);
    auto couple = [&](std::int32_t i, std::int32_t j, double w) {
      const std::int32_t ri = reduced[static_cast<std::size_t>(i)];
      const std::int32_t rj = reduced[static_cast<std::size_t>(j)];
      if (ri >= 0) trip.emplace_back(ri, ri, w);
      if (rj >= 0) trip.emplace_back(rj, rj, w);
      if (ri >= 0 && rj >= 0) {
        trip.emplace_back(ri, rj, -w);
        trip.emplace_back(rj, ri, -w);
      }
    };
    for (const auto& s : sys.seams) {
      couple(s.left, s.right, 1.0);
      const Vec3 d = s.f_left - s.f_right;
      if (reduced[static_cast<std::size_t>(s.left)] >= 0) rhs.row(reduced[static_cast<std::size_t>(s.left)]) -= d.transpose();
      if (reduced[static_cast<std::size_t>(s.right)] >= 0) rhs.row(reduced[static_cast<std::size_t>(s.right)]) += d.transpose();
    }
    for (const auto& [i, j] : sys.interior_edges) couple(i, j, sys.lambda_seam);
    Eigen::SparseMatrix<double> a(unknowns, unknowns);
    a.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(a);
    if (solver.info() != Eigen::Success) throw Error(ErrorCode::kSingularSystem, "seam leveling: factorization failed");
    Eigen::MatrixXd x = solver.solve(rhs);
    // One step of iterative refinement.
    const Eigen::MatrixXd r = rhs - a * x;
    x += solver.solve(r);
    for (std::size_t i = 0; i < n; ++i) {
      if (reduced[i] >= 0) g[i] = x.row(reduced[i]).transpose();
    }
  }

  std::vector<Vec3> sum(n, Vec3::Zero());
  std::vector<double> count(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    sum[static_cast<std::size_t>(comp[i])] += g[i];
    count[static_cast<std::size_t>(comp[i])] += 1.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    g[i] -= sum[static_cast<std::size_t>(comp[i])] / count[static_cast<std::size_t>(comp[i])];
  }
  const double residual = sys.normal_residual(g);
  if (!(residual <= 1e-8)) {
    throw Error(ErrorCode::kSingularSystem, "seam leveling: normal-equation residual too large");
  }
  return g;
}

TextureAtlas bake_atlas(const TriangleMesh& mesh, const ChartSet& charts, std::span<const CameraFrame> frames,
                        const SeamLevelSystem& system, const std::vector<Vec3>& corrections, const AtlasConfig& cfg) {
  if (cfg.page_size < 8 || cfg.padding < 0 || cfg.max_pages < 0) {
    throw Error(ErrorCode::kInvalidArgument, "bake_atlas: bad atlas configuration");
  }
  if (corrections.size() != system.instances.size()) {
    throw Error(ErrorCode::kInvalidArgument, "bake_atlas: correction count mismatch");
  }
  const FrameIndex index(frames);
  const std::size_t nf = mesh.faces.size();
  TextureAtlas atlas;
  atlas.page_size = cfg.page_size;
  atlas.face_page.assign(nf, -1);
  atlas.face_uv.assign(nf, {Vec2::Zero(), Vec2::Zero(), Vec2::Zero()});
  for (std::size_t f = 0; f < nf; ++f) {
    if (charts.face_chart[f] < 0) atlas.none_faces.push_back(static_cast<std::int32_t>(f));
  }

  struct Placement {
    int x0 = 0, y0 = 0, w = 0, h = 0;  // source-frame rectangle
    int page = 0, ox = 0, oy = 0;      // atlas position
    std::vector<std::array<Vec2, 3>> px;
  };
  const std::size_t nc = charts.charts.size();
  std::vector<Placement> place(nc);
  parallel_for(0, nc, [&](std::size_t c) {
    const Chart& chart = charts.charts[c];
    const CameraFrame& frame = frames[index.at(chart.frame_id)];
    Placement& p = place[c];
    double min_x = std::numeric_limits<double>::infinity(), min_y = min_x;
    double max_x = -min_x, max_y = -min_x;
    for (std::int32_t f : chart.faces) {
      p.px.push_back(project_face(frame, mesh.triangle(static_cast<std::size_t>(f))));
      for (const Vec2& q : p.px.back()) {
        min_x = std::min(min_x, q.x());
        min_y = std::min(min_y, q.y());
        max_x = std::max(max_x, q.x());
        max_y = std::max(max_y, q.y());
      }
    }
    p.x0 = static_cast<int>(std::floor(min_x)) - cfg.padding;
    p.y0 = static_cast<int>(std::floor(min_y)) - cfg.padding;
    p.w = static_cast<int>(std::ceil(max_x)) + cfg.padding - p.x0;
    p.h = static_cast<int>(std::ceil(max_y)) + cfg.padding - p.y0;
  });

  std::vector<std::size_t> order(nc);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(place[b].h, place[b].w, a) < std::tie(place[a].h, place[a].w, b);
  });
  int page = 0, cursor_x = 0, cursor_y = 0, shelf_h = 0;
  int pages = nc > 0 ? 1 : 0;
  for (std::size_t c : order) {
    Placement& p = place[c];
    if (p.w > cfg.page_size || p.h > cfg.page_size) {
      throw Error(ErrorCode::kAtlasOverflow, "bake_atlas: chart larger than an atlas page");
    }
    if (cursor_x + p.w > cfg.page_size) {
      cursor_x = 0;
      cursor_y += shelf_h;
      shelf_h = 0;
    }
    if (cursor_y + p.h > cfg.page_size) {
      ++page;
      cursor_x = cursor_y = shelf_h = 0;
    }
    pages = page + 1;
    p.page = page;
    p.ox = cursor_x;
    p.oy = cursor_y;
    cursor_x += p.w;
    shelf_h = std::max(shelf_h, p.h);
  }
  if (pages > cfg.max_pages) {
    throw Error(ErrorCode::kAtlasOverflow, "bake_atlas: charts need " + std::to_string(pages) + " pages, budget is " +
                                               std::to_string(cfg.max_pages));
  }
  atlas.pages.assign(static_cast<std::size_t>(pages), Image8(cfg.page_size, cfg.page_size, 3, 0));

  const double size = cfg.page_size;
  parallel_for(0, nc, [&](std::size_t c) {
    const Chart& chart = charts.charts[c];
    const CameraFrame& frame = frames[index.at(chart.frame_id)];
    const Placement& p = place[c];
    Image8& target = atlas.pages[static_cast<std::size_t>(p.page)];
    std::vector<Vec3> color(static_cast<std::size_t>(p.w) * p.h, Vec3::Zero());
    std::vector<char> filled(color.size(), 0);
    const Vec2 shift(p.x0, p.y0);
    auto source = [&](int tx, int ty) {
      return sample_rgb(frame.image, Vec2(p.x0 + tx + 0.5, p.y0 + ty + 0.5));
    };
    for (std::size_t k = 0; k < chart.faces.size(); ++k) {
      const auto f = static_cast<std::size_t>(chart.faces[k]);
      const Face& t = mesh.faces[f];
      std::array<Vec3, 3> g;
      for (std::size_t v = 0; v < 3; ++v) {
        g[v] = corrections[static_cast<std::size_t>(system.find(t[v], static_cast<std::int32_t>(c)))];
      }
      const auto& px = p.px[k];
      const std::array<Vec2, 3> local{px[0] - shift, px[1] - shift, px[2] - shift};
      const int n = rasterize_triangle(local[0], local[1], local[2], p.w, p.h, [&](int x, int y, const Vec3& bary) {
        const std::size_t i = static_cast<std::size_t>(y) * p.w + x;
        color[i] = source(x, y) + bary[0] * g[0] + bary[1] * g[1] + bary[2] * g[2];
        filled[i] = 1;
      });
      if (n == 0) {
        const Vec2 ctr = (local[0] + local[1] + local[2]) / 3.0;
        const int x = std::clamp(static_cast<int>(std::floor(ctr.x())), 0, p.w - 1);
        const int y = std::clamp(static_cast<int>(std::floor(ctr.y())), 0, p.h - 1);
        const std::size_t i = static_cast<std::size_t>(y) * p.w + x;
        if (!filled[i]) {
          color[i] = source(x, y) + (g[0] + g[1] + g[2]) / 3.0;
          filled[i] = 1;
        }
      }
      for (std::size_t v = 0; v < 3; ++v) {
        const Vec2 uv_px = local[v] + Vec2(p.ox, p.oy);
        atlas.face_uv[f][v] = Vec2(uv_px.x() / size, 1.0 - uv_px.y() / size);
      }
      atlas.face_page[f] = p.page;
    }
    // Grow the chart into its padding ring by averaging filled neighbors.
    bool missing = true;
    while (missing) {
      missing = false;
      std::vector<char> next = filled;
      std::vector<Vec3> next_color = color;
      for (int y = 0; y < p.h; ++y) {
        for (int x = 0; x < p.w; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * p.w + x;
          if (filled[i]) continue;
          Vec3 sum = Vec3::Zero();
          int cnt = 0;
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const int nx = x + dx, ny = y + dy;
              if (nx < 0 || ny < 0 || nx >= p.w || ny >= p.h) continue;
              const std::size_t j = static_cast<std::size_t>(ny) * p.w + nx;
              if (filled[j]) {
                sum += color[j];
                ++cnt;
              }
            }
          }
          if (cnt > 0) {
            next_color[i] = sum / cnt;
            next[i] = 1;
          } else {
            missing = true;
          }
        }
      }
      filled.swap(next);
      color.swap(next_color);
    }
    for (int y = 0; y < p.h; ++y) {
      for (int x = 0; x < p.w; ++x) {
        const Vec3& col = color[static_cast<std::size_t>(y) * p.w + x];
        for (int ch = 0; ch < 3; ++ch) target.at(p.ox + x, p.oy + y, ch) = saturate(col[ch]);
      }
    }
  });
  return atlas;
}

void write_textured_obj(const std::filesystem::path& dir, const std::string& stem, const TriangleMesh& mesh,
                        const TextureAtlas& atlas, const FaceViewAssignment& assignment) {
  std::filesystem::create_directories(dir);
  char buf[256];
  std::string mtl;
  for (std::size_t k = 0; k < atlas.pages.size(); ++k) {
    const std::string png = stem + "_page" + std::to_string(k) + ".png";
    std::filesystem::path partial = dir / png;
    partial += ".partial";
    write_png(partial, atlas.pages[k]);
    std::filesystem::rename(partial, dir / png);
    mtl += "newmtl page" + std::to_string(k) + "\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd " + png + "\n\n";
  }
  mtl += "newmtl fallback\nKa 0.5 0.5 0.5\nKd 0.5 0.5 0.5\nKs 0 0 0\nillum 1\n";
  write_file_atomic(dir / (stem + ".mtl"), mtl);

  std::string obj = "mtllib " + stem + ".mtl\n";
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    obj += buf;
  }
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    if (atlas.face_page[f] < 0) continue;
    for (const Vec2& uv : atlas.face_uv[f]) {
      std::snprintf(buf, sizeof(buf), "vt %.9f %.9f\n", uv.x(), uv.y());
      obj += buf;
    }
  }
  std::int32_t current = -2;
  std::size_t vt = 1;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const std::int32_t pg = atlas.face_page[f];
    if (pg != current) {
      obj += pg < 0 ? std::string("usemtl fallback\n") : "usemtl page" + std::to_string(pg) + "\n";
      current = pg;
    }
    const Face& t = mesh.faces[f];
    if (pg < 0) {
      std::snprintf(buf, sizeof(buf), "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
    } else {
      std::snprintf(buf, sizeof(buf), "f %d/%zu %d/%zu %d/%zu\n", t[0] + 1, vt, t[1] + 1, vt + 1, t[2] + 1, vt + 2);
      vt += 3;
    }
    obj += buf;
  }
  write_file_atomic(dir / (stem + ".obj"), obj);

  nlohmann::json sidecar{{"face_frame", assignment.frame},
                         {"fallback_faces", atlas.none_faces},
                         {"pages", atlas.pages.size()},
                         {"page_size", atlas.page_size}};
  write_file_atomic(dir / (stem + "_faces.json"), sidecar.dump() + "\n");
}

}  // namespace atsdf
