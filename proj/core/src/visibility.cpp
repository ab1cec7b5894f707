#include "atsdf/visibility.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <istream>
#include <ostream>
#include <string>

#include "atsdf/parallel.hpp"

namespace atsdf {

std::optional<double> intersect_triangle(const Ray& ray, const Vec3& a, const Vec3& b, const Vec3& c,
                                         double t_min, double t_max) {
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 p = ray.direction.cross(e2);
  const double det = e1.dot(p);
  if (det == 0.0) return std::nullopt;
  const double inv_det = 1.0 / det;
  const Vec3 s = ray.origin - a;
  const double u = s.dot(p) * inv_det;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = ray.direction.dot(q) * inv_det;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv_det;
  if (!(t > t_min && t < t_max)) return std::nullopt;
  return t;
}

namespace {

// Conservative slab test; the far distance is widened by 3 ulps-worth so a
// triangle hit is never culled by rounding in the box test.
bool hit_box(const Aabb& box, const Ray& ray, const Vec3& inv_dir, double t0, double t1) {
  constexpr double kWiden = 1.0 + 6.0 * std::numeric_limits<double>::epsilon();
  for (int i = 0; i < 3; ++i) {
    if (ray.direction[i] == 0.0) {
      if (ray.origin[i] < box.lo[i] || ray.origin[i] > box.hi[i]) return false;
      continue;
    }
    double tn = (box.lo[i] - ray.origin[i]) * inv_dir[i];
    double tf = (box.hi[i] - ray.origin[i]) * inv_dir[i];
    if (tn > tf) std::swap(tn, tf);
    tf *= kWiden;
    t0 = std::max(t0, tn);
    t1 = std::min(t1, tf);
    if (t0 > t1) return false;
  }
  return true;
}

Aabb padded(Aabb box) {
  const double scale = std::max(box.lo.cwiseAbs().maxCoeff(), box.hi.cwiseAbs().maxCoeff());
  const double pad = 1e-9 * (1.0 + scale);
  box.lo.array() -= pad;
  box.hi.array() += pad;
  return box;
}

}  // namespace

Aabb Bvh::face_box(std::int32_t f) const {
  Aabb box;
  for (const Vec3& v : tris_[static_cast<std::size_t>(f)]) box.extend(v);
  return padded(box);
}

Bvh::Bvh(const TriangleMesh& mesh, int leaf_size) {
  if (mesh.faces.empty()) throw Error(ErrorCode::kInvalidArgument, "bvh: empty mesh");
  if (leaf_size < 1) throw Error(ErrorCode::kInvalidArgument, "bvh: leaf_size must be >= 1");
  mesh.validate();
  const std::size_t n = mesh.faces.size();
  tris_.resize(n);
  std::vector<Vec3> centroids(n);
  std::vector<Aabb> boxes(n);
  for (std::size_t f = 0; f < n; ++f) {
    tris_[f] = mesh.triangle(f);
    centroids[f] = (tris_[f][0] + tris_[f][1] + tris_[f][2]) / 3.0;
    boxes[f] = face_box(static_cast<std::int32_t>(f));
  }
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0);

  struct Task {
    std::int32_t node, begin, end, depth;
  };
  nodes_.reserve(2 * n / static_cast<std::size_t>(leaf_size) + 1);
  nodes_.push_back({});
  std::vector<Task> stack{{0, 0, static_cast<std::int32_t>(n), 1}};
  while (!stack.empty()) {
    const Task task = stack.back();
    stack.pop_back();
    depth_ = std::max(depth_, static_cast<int>(task.depth));
    Aabb box;
    Aabb centroid_box;
    for (std::int32_t i = task.begin; i < task.end; ++i) {
      box.extend(boxes[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])]);
      centroid_box.extend(centroids[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])]);
    }
    nodes_[static_cast<std::size_t>(task.node)].box = box;
    const std::int32_t count = task.end - task.begin;
    if (count <= leaf_size || task.depth >= kMaxDepth) {
      nodes_[static_cast<std::size_t>(task.node)].first = task.begin;
      nodes_[static_cast<std::size_t>(task.node)].count = count;
      continue;
    }
    int axis = 0;
    const Vec3 extent = centroid_box.hi - centroid_box.lo;
    if (extent[1] > extent[axis]) axis = 1;
    if (extent[2] > extent[axis]) axis = 2;
    const std::int32_t mid = task.begin + count / 2;
    std::nth_element(order_.begin() + task.begin, order_.begin() + mid, order_.begin() + task.end,
                     [&](std::int32_t l, std::int32_t r) {
                       const double cl = centroids[static_cast<std::size_t>(l)][axis];
                       const double cr = centroids[static_cast<std::size_t>(r)][axis];
                       return cl < cr || (cl == cr && l < r);
                     });
    const auto left = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({});
    nodes_.push_back({});
    nodes_[static_cast<std::size_t>(task.node)].first = left;
    nodes_[static_cast<std::size_t>(task.node)].count = 0;
    stack.push_back({left + 1, mid, task.end, task.depth + 1});
    stack.push_back({left, task.begin, mid, task.depth + 1});
  }
}

template <typename Visit>
void Bvh::traverse(const Ray& ray, double t_min, double& t_max, Visit&& visit) const {
  const Vec3 inv_dir = ray.direction.cwiseInverse();
  std::int32_t stack[2 * kMaxDepth + 2];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[static_cast<std::size_t>(stack[--top])];
    if (!hit_box(node.box, ray, inv_dir, t_min, t_max)) continue;
    if (node.leaf()) {
      for (std::int32_t i = node.first; i < node.first + node.count; ++i) {
        if (visit(order_[static_cast<std::size_t>(i)])) return;
      }
    } else {
      stack[top++] = node.first + 1;
      stack[top++] = node.first;
    }
  }
}

std::vector<RayHit> Bvh::intersect_all(const Ray& ray, double t_min, double t_max) const {
  std::vector<RayHit> hits;
  traverse(ray, t_min, t_max, [&](std::int32_t f) {
    const auto& t = tris_[static_cast<std::size_t>(f)];
    if (auto d = intersect_triangle(ray, t[0], t[1], t[2], t_min, t_max)) hits.push_back({f, *d});
    return false;
  });
  std::sort(hits.begin(), hits.end(), [](const RayHit& a, const RayHit& b) { return a.face < b.face; });
  return hits;
}

std::optional<RayHit> Bvh::closest_hit(const Ray& ray, double t_min, double t_max) const {
  std::optional<RayHit> best;
  // Searching with an open upper bound slightly past the current best keeps
  // ties deterministic: equal distances resolve to the lowest face id.
  double limit = t_max;
  traverse(ray, t_min, limit, [&](std::int32_t f) {
    const auto& t = tris_[static_cast<std::size_t>(f)];
    if (auto d = intersect_triangle(ray, t[0], t[1], t[2], t_min, t_max)) {
      if (!best || *d < best->t || (*d == best->t && f < best->face)) {
        best = RayHit{f, *d};
        limit = std::nextafter(*d, std::numeric_limits<double>::infinity());
      }
    }
    return false;
  });
  return best;
}

bool Bvh::occluded(const Ray& ray, double t_min, double t_max, std::int32_t ignore_face) const {
  bool hit = false;
  traverse(ray, t_min, t_max, [&](std::int32_t f) {
    if (f == ignore_face) return false;
    const auto& t = tris_[static_cast<std::size_t>(f)];
    hit = intersect_triangle(ray, t[0], t[1], t[2], t_min, t_max).has_value();
    return hit;
  });
  return hit;
}

std::vector<RayHit> intersect_all_linear(const TriangleMesh& mesh, const Ray& ray, double t_min, double t_max) {
  std::vector<RayHit> hits;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto t = mesh.triangle(f);
    if (auto d = intersect_triangle(ray, t[0], t[1], t[2], t_min, t_max)) {
      hits.push_back({static_cast<std::int32_t>(f), *d});
    }
  }
  return hits;
}

std::size_t VisibilityTable::visible_pairs() const {
  std::size_t n = 0;
  for (const auto& f : faces) n += f.size();
  return n;
}

void VisibilityTable::write_csv(std::ostream& out) const {
  out << "face_id,frame_id,area_px2,cos\n";
  char buf[128];
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (const auto& v : faces[f]) {
      std::snprintf(buf, sizeof(buf), "%zu,%d,%.17g,%.17g\n", f, v.frame_id, v.area_px, v.cos_incidence);
      out << buf;
    }
  }
}

void VisibilityTable::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path);
  write_csv(out);
}

VisibilityTable VisibilityTable::read_csv(std::istream& in, std::size_t face_count) {
  VisibilityTable table;
  table.faces.resize(face_count);
  std::string line;
  if (!std::getline(in, line) || line != "face_id,frame_id,area_px2,cos") {
    throw Error(ErrorCode::kFormat, "visibility csv: bad header");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    unsigned long long face = 0;
    int frame = 0;
    double area = 0.0;
    double cos = 0.0;
    if (std::sscanf(line.c_str(), "%llu,%d,%lf,%lf", &face, &frame, &area, &cos) != 4 || face >= face_count) {
      throw Error(ErrorCode::kFormat, "visibility csv: bad line " + std::to_string(lineno));
    }
    table.faces[face].push_back({frame, area, cos});
  }
  return table;
}

VisibilityTable VisibilityTable::read_csv(const std::string& path, std::size_t face_count) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return read_csv(in, face_count);
}

VisibilityTable compute_visibility(const TriangleMesh& mesh, const Bvh& bvh, std::span<const CameraFrame> cameras,
                                   const VisibilityConfig& cfg) {
  for (const auto& cam : cameras) validate_camera(cam);
  if (bvh.face_count() != mesh.faces.size()) {
    throw Error(ErrorCode::kInvalidArgument, "visibility: bvh was built for a different mesh");
  }
  TriangleMesh normals_source;
  const std::vector<Vec3>* normals = &mesh.face_normals;
  if (mesh.face_normals.size() != mesh.faces.size()) {
    normals_source = mesh;
    normals_source.compute_normals();
    normals = &normals_source.face_normals;
  }

  VisibilityTable table;
  table.faces.resize(mesh.faces.size());
  parallel_for(0, mesh.faces.size(), [&](std::size_t f) {
    const auto tri = mesh.triangle(f);
    const Vec3 centroid = (tri[0] + tri[1] + tri[2]) / 3.0;
    const Vec3& normal = (*normals)[f];
    for (const CameraFrame& cam : cameras) {
      std::array<Vec2, 3> px;
      bool inside = true;
      for (int k = 0; k < 3 && inside; ++k) {
        auto p = project(cam, tri[static_cast<std::size_t>(k)]);
        if (p) {
          px[static_cast<std::size_t>(k)] = *p;
        } else {
          inside = false;
        }
      }
      if (!inside) continue;
      const Vec3 to_cam = cam.center() - centroid;
      const double dist = to_cam.norm();
      if (!(dist > 0)) continue;
      const double cosine = normal.dot(to_cam) / dist;
      if (cosine < cfg.min_cos) continue;
      const Ray ray{cam.center(), -to_cam / dist};
      if (bvh.occluded(ray, 0.0, dist - cfg.occlusion_bias, static_cast<std::int32_t>(f))) continue;
      const double area = shoelace_area(px[0], px[1], px[2]);
      if (!(area > 0)) continue;
      table.faces[f].push_back({cam.frame_id, area, cosine});
    }
  });
  return table;
}

}  // namespace atsdf
