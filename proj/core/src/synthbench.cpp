#include "atsdf/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>

#include "atsdf/io.hpp"
#include "atsdf/parallel.hpp"
#include "json.hpp"

namespace atsdf {

using nlohmann::json;

namespace {

std::optional<std::pair<double, Vec3>> pick(std::initializer_list<std::pair<double, Vec3>> hits, double t_min,
                                            double t_max) {
  std::optional<std::pair<double, Vec3>> best;
  for (const auto& h : hits) {
    if (h.first > t_min && h.first < t_max && (!best || h.first < best->first)) best = h;
  }
  return best;
}

double box_sdf(const Vec3& p, const Vec3& half) {
  const Vec3 q = p.cwiseAbs() - half;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

double Primitive::signed_distance(const Vec3& world) const {
  const Vec3 p = pose.rotation().transpose() * (world - pose.translation());
  switch (type) {
    case PrimitiveType::kSphere: return p.norm() - size.x();
    case PrimitiveType::kBox: return box_sdf(p, 0.5 * size);
    case PrimitiveType::kPlane: return p.z();
    case PrimitiveType::kCylinder: {
      const Vec2 d(std::hypot(p.x(), p.y()) - size.x(), std::abs(p.z()) - 0.5 * size.z());
      return std::min(std::max(d.x(), d.y()), 0.0) + d.cwiseMax(0.0).norm();
    }
  }
  return std::numeric_limits<double>::infinity();
}

std::optional<std::pair<double, Vec3>> Primitive::intersect(const Ray& ray, double t_min, double t_max) const {
  const Mat3& r = pose.rotation();
  const Vec3 o = r.transpose() * (ray.origin - pose.translation());
  const Vec3 d = r.transpose() * ray.direction;
  std::optional<std::pair<double, Vec3>> hit;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  switch (type) {
    case PrimitiveType::kSphere: {
      const double rad = size.x();
      const double b = o.dot(d);
      const double c = o.squaredNorm() - rad * rad;
      const double disc = b * b - c;
      if (disc < 0) return std::nullopt;
      const double s = std::sqrt(disc);
      const double t0 = -b - s;
      const double t1 = -b + s;
      hit = pick({{t0, (o + t0 * d) / rad}, {t1, (o + t1 * d) / rad}}, t_min, t_max);
      break;
    }
    case PrimitiveType::kBox: {
      const Vec3 half = 0.5 * size;
      double t_near = -kInf, t_far = kInf;
      int near_axis = -1, far_axis = -1;
      double near_sign = 0, far_sign = 0;
      for (int i = 0; i < 3; ++i) {
        if (d[i] == 0.0) {
          if (std::abs(o[i]) > half[i]) return std::nullopt;
          continue;
        }
        double ta = (-half[i] - o[i]) / d[i];
        double tb = (half[i] - o[i]) / d[i];
        double sa = -1, sb = 1;
        if (ta > tb) {
          std::swap(ta, tb);
          std::swap(sa, sb);
        }
        if (ta > t_near) {
          t_near = ta;
          near_axis = i;
          near_sign = sa;
        }
        if (tb < t_far) {
          t_far = tb;
          far_axis = i;
          far_sign = sb;
        }
      }
      if (t_near > t_far || near_axis < 0 || far_axis < 0) return std::nullopt;
      Vec3 n_near = Vec3::Zero(), n_far = Vec3::Zero();
      n_near[near_axis] = near_sign;
      n_far[far_axis] = far_sign;
      hit = pick({{t_near, n_near}, {t_far, n_far}}, t_min, t_max);
      break;
    }
    case PrimitiveType::kPlane: {
      if (d.z() == 0.0) return std::nullopt;
      hit = pick({{-o.z() / d.z(), Vec3::UnitZ()}}, t_min, t_max);
      break;
    }
    case PrimitiveType::kCylinder: {
      const double rad = size.x();
      const double half_h = 0.5 * size.z();
      std::vector<std::pair<double, Vec3>> cands;
      const double a = d.x() * d.x() + d.y() * d.y();
      if (a > 0) {
        const double b = o.x() * d.x() + o.y() * d.y();
        const double c = o.x() * o.x() + o.y() * o.y() - rad * rad;
        const double disc = b * b - a * c;
        if (disc >= 0) {
          for (double sgn : {-1.0, 1.0}) {
            const double t = (-b + sgn * std::sqrt(disc)) / a;
            const Vec3 p = o + t * d;
            if (std::abs(p.z()) <= half_h) cands.emplace_back(t, Vec3(p.x() / rad, p.y() / rad, 0.0));
          }
        }
      }
      if (d.z() != 0.0) {
        for (double sgn : {-1.0, 1.0}) {
          const double t = (sgn * half_h - o.z()) / d.z();
          const Vec3 p = o + t * d;
          if (p.x() * p.x() + p.y() * p.y() <= rad * rad) cands.emplace_back(t, Vec3(0, 0, sgn));
        }
      }
      for (const auto& c : cands) {
        if (c.first > t_min && c.first < t_max && (!hit || c.first < hit->first)) hit = c;
      }
      break;
    }
  }
  if (hit) hit->second = r * hit->second;
  return hit;
}

double SceneSpec::signed_distance(const Vec3& p) const {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& prim : primitives) d = std::min(d, prim.signed_distance(p));
  return d;
}

std::optional<SceneHit> SceneSpec::intersect(const Ray& ray, double t_min, double t_max) const {
  std::optional<SceneHit> best;
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    if (auto h = primitives[i].intersect(ray, t_min, best ? best->t : t_max)) best = SceneHit{i, h->first, h->second};
  }
  return best;
}

std::int32_t SceneSpec::classify(const Vec3& p) const {
  double best = std::numeric_limits<double>::infinity();
  std::int32_t cls = sky_class;
  for (const auto& prim : primitives) {
    const double d = std::abs(prim.signed_distance(p));
    if (d < best) {
      best = d;
      cls = prim.class_id;
    }
  }
  return cls;
}

void SceneSpec::validate(const ClassPalette* palette) const {
  for (const auto& p : primitives) {
    if (!p.size.allFinite() || (p.type != PrimitiveType::kPlane && (p.size.array() <= 0).any())) {
      throw Error(ErrorCode::kInvalidArgument, "scene: primitive dimensions must be positive and finite");
    }
    if (!p.pose.translation().allFinite()) throw Error(ErrorCode::kInvalidArgument, "scene: non-finite pose");
    if (p.class_id < 0 || (palette && static_cast<std::size_t>(p.class_id) >= palette->size())) {
      throw Error(ErrorCode::kUnknownClass, "scene: primitive class outside the palette");
    }
  }
  if (sky_class < 0 || (palette && static_cast<std::size_t>(sky_class) >= palette->size())) {
    throw Error(ErrorCode::kUnknownClass, "scene: sky class outside the palette");
  }
}

namespace {

const char* type_name(PrimitiveType t) {
  switch (t) {
    case PrimitiveType::kSphere: return "sphere";
    case PrimitiveType::kBox: return "box";
    case PrimitiveType::kPlane: return "plane";
    case PrimitiveType::kCylinder: return "cylinder";
  }
  return "";
}

Vec3 vec3(const json& j) {
  const auto a = j.get<std::array<double, 3>>();
  return {a[0], a[1], a[2]};
}

json to_j(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

double yaw_of(const Mat3& r) { return std::atan2(r(1, 0), r(0, 0)) * 180.0 / M_PI; }

RigidPose yaw_pose(double yaw_deg, const Vec3& t) {
  return RigidPose(Eigen::AngleAxisd(yaw_deg * M_PI / 180.0, Vec3::UnitZ()).toRotationMatrix(), t);
}

}  // namespace

std::string SceneSpec::to_json() const {
  json prims = json::array();
  for (const auto& p : primitives) {
    json j{{"type", type_name(p.type)}, {"color", p.color}, {"class", p.class_id}};
    switch (p.type) {
      case PrimitiveType::kSphere:
        j["center"] = to_j(p.pose.translation());
        j["radius"] = p.size.x();
        break;
      case PrimitiveType::kBox:
        j["center"] = to_j(p.pose.translation());
        j["size"] = to_j(p.size);
        j["yaw_deg"] = yaw_of(p.pose.rotation());
        break;
      case PrimitiveType::kPlane:
        j["point"] = to_j(p.pose.translation());
        j["normal"] = to_j(p.pose.rotation().col(2));
        break;
      case PrimitiveType::kCylinder:
        j["center"] = to_j(p.pose.translation());
        j["radius"] = p.size.x();
        j["height"] = p.size.z();
        j["yaw_deg"] = yaw_of(p.pose.rotation());
        break;
    }
    prims.push_back(j);
  }
  return json{{"sky_class", sky_class}, {"sky_color", sky_color}, {"light", to_j(light)}, {"primitives", prims}}
             .dump(2) +
         "\n";
}

SceneSpec SceneSpec::from_json(const std::string& text) {
  SceneSpec s;
  try {
    const json doc = json::parse(text);
    s.sky_class = doc.value("sky_class", 0);
    if (doc.contains("sky_color")) s.sky_color = doc["sky_color"].get<std::array<std::uint8_t, 3>>();
    if (doc.contains("light")) {
      const Vec3 l = vec3(doc["light"]);
      s.light = std::abs(l.norm() - 1.0) < 1e-12 ? l : l.normalized();
    }
    for (const auto& j : doc.at("primitives")) {
      Primitive p;
      const std::string type = j.at("type").get<std::string>();
      if (j.contains("color")) p.color = j["color"].get<std::array<std::uint8_t, 3>>();
      p.class_id = j.value("class", 1);
      if (type == "sphere") {
        p.type = PrimitiveType::kSphere;
        p.pose = RigidPose(Mat3::Identity(), vec3(j.at("center")));
        p.size = Vec3::Constant(j.at("radius").get<double>());
      } else if (type == "box") {
        p.type = PrimitiveType::kBox;
        p.pose = yaw_pose(j.value("yaw_deg", 0.0), vec3(j.at("center")));
        p.size = vec3(j.at("size"));
      } else if (type == "plane") {
        p.type = PrimitiveType::kPlane;
        const Vec3 n = vec3(j.at("normal")).normalized();
        const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), n);
        p.pose = RigidPose(q.normalized().toRotationMatrix(), vec3(j.at("point")));
        p.size = Vec3::Ones();
      } else if (type == "cylinder") {
        p.type = PrimitiveType::kCylinder;
        p.pose = yaw_pose(j.value("yaw_deg", 0.0), vec3(j.at("center")));
        const double rad = j.at("radius").get<double>();
        p.size = Vec3(rad, rad, j.at("height").get<double>());
      } else {
        throw Error(ErrorCode::kFormat, "scene: unknown primitive type " + type);
      }
      s.primitives.push_back(p);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("scene: ") + e.what());
  }
  s.validate();
  return s;
}

SceneSpec SceneSpec::load(const std::filesystem::path& path) { return from_json(read_file(path)); }

void SceneSpec::save(const std::filesystem::path& path) const { write_file_atomic(path, to_json()); }

SceneSpec SceneSpec::benchmark() {
  SceneSpec s;
  Primitive ground;
  ground.type = PrimitiveType::kPlane;
  ground.color = {120, 120, 110};
  ground.class_id = 1;
  Primitive sphere;
  sphere.type = PrimitiveType::kSphere;
  sphere.pose = RigidPose(Mat3::Identity(), Vec3(-2.5, 0.0, 2.0));
  sphere.size = Vec3::Constant(2.0);
  sphere.color = {200, 70, 60};
  sphere.class_id = 2;
  Primitive box;
  box.type = PrimitiveType::kBox;
  box.pose = RigidPose(Mat3::Identity(), Vec3(3.0, 0.0, 0.5));
  box.size = Vec3(4.0, 2.0, 1.0);
  box.color = {60, 90, 200};
  box.class_id = 3;
  s.primitives = {ground, sphere, box};
  return s;
}

ClassPalette benchmark_palette() {
  ClassPalette p;
  p.classes = {{0, "sky", {135, 180, 230}},
               {1, "ground", {128, 64, 128}},
               {2, "sphere", {220, 20, 60}},
               {3, "box", {0, 0, 142}}};
  return p;
}

BeamPattern BeamPattern::uniform(int beams, double lo_deg, double hi_deg) {
  BeamPattern p;
  for (int i = 0; i < beams; ++i) {
    const double f = beams == 1 ? 0.5 : static_cast<double>(i) / (beams - 1);
    p.elevations.push_back((lo_deg + f * (hi_deg - lo_deg)) * M_PI / 180.0);
  }
  p.validate();
  return p;
}

int BeamPattern::azimuth_count() const {
  return static_cast<int>(std::ceil(2.0 * M_PI / azimuth_step - 1e-9));
}

void BeamPattern::validate() const {
  if (elevations.empty() || elevations.size() > 256) {
    throw Error(ErrorCode::kInvalidArgument, "beam pattern: need 1..256 beams");
  }
  if (!(sigma >= 0) || !(azimuth_step > 0) || !(min_range >= 0) || !(max_range > min_range)) {
    throw Error(ErrorCode::kInvalidArgument, "beam pattern: invalid noise, step or range limits");
  }
}

std::vector<Vec3> simulate_scan(const SceneSpec& scene, const RigidPose& sensor_pose, const BeamPattern& pattern,
                                std::uint64_t seed, const std::optional<Aabb>& crop) {
  pattern.validate();
  const std::size_t beams = pattern.elevations.size();
  const int az_count = pattern.azimuth_count();
  std::vector<std::vector<Vec3>> rings(beams);
  parallel_for(0, beams, [&](std::size_t b) {
    std::mt19937_64 rng(splitmix64(seed ^ splitmix64(b + 1)));
    std::normal_distribution<double> noise(0.0, pattern.sigma);
    const double el = pattern.elevations[b];
    for (int k = 0; k < az_count; ++k) {
      const double az = k * pattern.azimuth_step;
      const Vec3 local(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      const Ray ray{sensor_pose.translation(), sensor_pose.rotate(local)};
      const auto hit = scene.intersect(ray, 0.0, pattern.max_range);
      if (!hit) continue;
      const double range = hit->t + (pattern.sigma > 0 ? noise(rng) : 0.0);
      if (range < pattern.min_range || range > pattern.max_range) continue;
      const Vec3 p = ray.origin + range * ray.direction;
      if (crop && ((p.array() < crop->lo.array()).any() || (p.array() > crop->hi.array()).any())) continue;
      rings[b].push_back(p);
    }
  });
  std::vector<Vec3> out;
  for (const auto& r : rings) out.insert(out.end(), r.begin(), r.end());
  return out;
}

int OrbitProtocol::scan_count() const {
  if (!(radius > 0) || !(speed > 0) || !(rate_hz > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "orbit: radius, speed and rate must be positive");
  }
  return static_cast<int>(std::ceil(2.0 * M_PI * radius * rate_hz / speed - 1e-9));
}

std::vector<RigidPose> OrbitProtocol::sensor_poses() const {
  const int n = scan_count();
  const double step = speed / (rate_hz * radius);
  std::vector<RigidPose> poses;
  poses.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double theta = i * step;
    const Vec3 pos = center + Vec3(radius * std::cos(theta), radius * std::sin(theta), height);
    poses.emplace_back(Eigen::AngleAxisd(theta + M_PI / 2, Vec3::UnitZ()).toRotationMatrix(), pos);
  }
  return poses;
}

std::vector<CameraSpec> orbit_cameras(const OrbitProtocol& orbit, int count, int width, int height, double fov_deg,
                                      const Vec3& target) {
  std::vector<CameraSpec> cams;
  const double f = 0.5 * width / std::tan(0.5 * fov_deg * M_PI / 180.0);
  for (int j = 0; j < count; ++j) {
    const double theta = 2.0 * M_PI * j / count;
    const Vec3 eye = orbit.center + Vec3(orbit.radius * std::cos(theta), orbit.radius * std::sin(theta), orbit.height);
    CameraSpec c;
    c.frame_id = j;
    c.width = width;
    c.height = height;
    c.intrinsics = {f, f, 0.5 * width, 0.5 * height};
    c.pose = RigidPose::look_at(eye, target, Vec3::UnitZ());
    cams.push_back(c);
  }
  return cams;
}

std::vector<CameraFrame> render_frames(const SceneSpec& scene, std::span<const CameraSpec> cameras, RenderMode mode) {
  std::vector<CameraFrame> frames;
  for (const CameraSpec& cam : cameras) {
    CameraFrame frame;
    frame.frame_id = cam.frame_id;
    frame.intrinsics = cam.intrinsics;
    frame.pose = cam.pose;
    frame.image = Image8(cam.width, cam.height, mode == RenderMode::kColor ? 3 : 1);
    validate_camera(frame);
    const Intrinsics& k = cam.intrinsics;
    parallel_for(0, static_cast<std::size_t>(cam.height), [&](std::size_t yy) {
      const int y = static_cast<int>(yy);
      for (int x = 0; x < cam.width; ++x) {
        const Vec3 d_cam((x + 0.5 - k.cx) / k.fx, (y + 0.5 - k.cy) / k.fy, 1.0);
        const Ray ray{cam.pose.translation(), cam.pose.rotate(d_cam.normalized())};
        const auto hit = scene.intersect(ray);
        if (mode == RenderMode::kLabel) {
          frame.image.at(x, y, 0) =
              static_cast<std::uint8_t>(hit ? scene.primitives[hit->primitive].class_id : scene.sky_class);
          continue;
        }
        if (!hit) {
          for (int ch = 0; ch < 3; ++ch) frame.image.at(x, y, ch) = scene.sky_color[static_cast<std::size_t>(ch)];
          continue;
        }
        Vec3 n = hit->normal;
        if (n.dot(ray.direction) > 0) n = -n;
        const double shade = 0.3 + 0.7 * std::max(0.0, n.dot(scene.light));
        const auto& col = scene.primitives[hit->primitive].color;
        for (int ch = 0; ch < 3; ++ch) {
          frame.image.at(x, y, ch) =
              static_cast<std::uint8_t>(std::clamp(std::round(col[static_cast<std::size_t>(ch)] * shade), 0.0, 255.0));
        }
      }
    });
    frames.push_back(std::move(frame));
  }
  return frames;
}

std::string ErrorReport::to_json() const {
  return json{{"vertices", distances.size()}, {"max", max},       {"mean", mean},
              {"rms", rms},                   {"bin_width", bin_width}, {"histogram", histogram}}
             .dump(2) +
         "\n";
}

std::string ErrorReport::histogram_csv() const {
  std::string out = "bin_lo,bin_hi,count\n";
  char buf[96];
  for (std::size_t i = 0; i < histogram.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%zu\n", i * bin_width, (i + 1) * bin_width, histogram[i]);
    out += buf;
  }
  return out;
}

ErrorReport mesh_error(const TriangleMesh& mesh, const SceneSpec& scene, const std::optional<Aabb>& region,
                       double bin_width) {
  if (!(bin_width > 0)) throw Error(ErrorCode::kInvalidArgument, "mesh_error: bin width must be positive");
  ErrorReport rep;
  rep.bin_width = bin_width;
  for (const Vec3& v : mesh.vertices) {
    if (region && ((v.array() < region->lo.array()).any() || (v.array() > region->hi.array()).any())) continue;
    rep.distances.push_back(std::abs(scene.signed_distance(v)));
  }
  double sum = 0.0, sum_sq = 0.0;
  for (double d : rep.distances) {
    rep.max = std::max(rep.max, d);
    sum += d;
    sum_sq += d * d;
  }
  if (!rep.distances.empty()) {
    rep.mean = sum / static_cast<double>(rep.distances.size());
    rep.rms = std::sqrt(sum_sq / static_cast<double>(rep.distances.size()));
  }
  const auto bins = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(rep.max / bin_width)));
  rep.histogram.assign(bins, 0);
  for (double d : rep.distances) {
    ++rep.histogram[std::min(bins - 1, static_cast<std::size_t>(d / bin_width))];
  }
  return rep;
}

namespace {

/// Appends a quad grid spanning origin + [0,1]^2 (u, v) with n x n cells,
/// oriented so that its normal agrees with `outward`.
void add_grid(TriangleMesh& mesh, std::map<std::array<std::int64_t, 3>, std::int32_t>& weld, const Vec3& origin,
              const Vec3& u, const Vec3& v, int n, const Vec3& outward, double quantum) {
  std::vector<std::int32_t> idx(static_cast<std::size_t>((n + 1) * (n + 1)));
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      const Vec3 p = origin + (static_cast<double>(i) / n) * u + (static_cast<double>(j) / n) * v;
      const std::array<std::int64_t, 3> key{std::llround(p.x() / quantum), std::llround(p.y() / quantum),
                                            std::llround(p.z() / quantum)};
      auto [it, inserted] = weld.emplace(key, static_cast<std::int32_t>(mesh.vertices.size()));
      if (inserted) mesh.vertices.push_back(p);
      idx[static_cast<std::size_t>(j * (n + 1) + i)] = it->second;
    }
  }
  const bool flip = u.cross(v).dot(outward) < 0;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const std::int32_t a = idx[static_cast<std::size_t>(j * (n + 1) + i)];
      const std::int32_t b = idx[static_cast<std::size_t>(j * (n + 1) + i + 1)];
      const std::int32_t c = idx[static_cast<std::size_t>((j + 1) * (n + 1) + i + 1)];
      const std::int32_t d = idx[static_cast<std::size_t>((j + 1) * (n + 1) + i)];
      if (flip) {
        mesh.faces.push_back({a, c, b});
        mesh.faces.push_back({a, d, c});
      } else {
        mesh.faces.push_back({a, b, c});
        mesh.faces.push_back({a, c, d});
      }
    }
  }
}

}  // namespace

TriangleMesh make_box_mesh(const Vec3& center, const Vec3& size, int n) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "make_box_mesh: n must be >= 1");
  TriangleMesh mesh;
  std::map<std::array<std::int64_t, 3>, std::int32_t> weld;
  const Vec3 lo = center - 0.5 * size;
  const double quantum = 1e-9 * (1.0 + size.maxCoeff());
  for (int axis = 0; axis < 3; ++axis) {
    const int a1 = (axis + 1) % 3;
    const int a2 = (axis + 2) % 3;
    Vec3 u = Vec3::Zero(), v = Vec3::Zero();
    u[a1] = size[a1];
    v[a2] = size[a2];
    for (int side = 0; side < 2; ++side) {
      Vec3 origin = lo;
      origin[axis] += side * size[axis];
      Vec3 outward = Vec3::Zero();
      outward[axis] = side ? 1.0 : -1.0;
      add_grid(mesh, weld, origin, u, v, n, outward, quantum);
    }
  }
  mesh.compute_normals();
  return mesh;
}

TriangleMesh make_grid_mesh(const Vec3& center, double extent, int n) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "make_grid_mesh: n must be >= 1");
  TriangleMesh mesh;
  std::map<std::array<std::int64_t, 3>, std::int32_t> weld;
  add_grid(mesh, weld, center - Vec3(0.5 * extent, 0.5 * extent, 0.0), Vec3(extent, 0, 0), Vec3(0, extent, 0), n,
           Vec3::UnitZ(), 1e-9 * (1.0 + extent));
  mesh.compute_normals();
  return mesh;
}

TriangleMesh make_sphere_mesh(const Vec3& center, double radius, int stacks, int slices) {
  if (stacks < 2 || slices < 3) throw Error(ErrorCode::kInvalidArgument, "make_sphere_mesh: too few segments");
  TriangleMesh mesh;
  mesh.vertices.push_back(center + Vec3(0, 0, radius));
  for (int i = 1; i < stacks; ++i) {
    const double phi = M_PI * i / stacks;
    for (int j = 0; j < slices; ++j) {
      const double theta = 2.0 * M_PI * j / slices;
      mesh.vertices.push_back(center + radius * Vec3(std::sin(phi) * std::cos(theta),
                                                     std::sin(phi) * std::sin(theta), std::cos(phi)));
    }
  }
  mesh.vertices.push_back(center + Vec3(0, 0, -radius));
  const auto south = static_cast<std::int32_t>(mesh.vertices.size() - 1);
  auto ring = [&](int i, int j) { return 1 + (i - 1) * slices + (j % slices); };
  auto add = [&](std::int32_t a, std::int32_t b, std::int32_t c) {
    const Vec3 n = (mesh.vertices[b] - mesh.vertices[a]).cross(mesh.vertices[c] - mesh.vertices[a]);
    const Vec3 out = (mesh.vertices[a] + mesh.vertices[b] + mesh.vertices[c]) / 3.0 - center;
    if (n.dot(out) >= 0) {
      mesh.faces.push_back({a, b, c});
    } else {
      mesh.faces.push_back({a, c, b});
    }
  };
  for (int j = 0; j < slices; ++j) {
    add(0, ring(1, j), ring(1, j + 1));
    add(south, ring(stacks - 1, j + 1), ring(stacks - 1, j));
  }
  for (int i = 1; i < stacks - 1; ++i) {
    for (int j = 0; j < slices; ++j) {
      add(ring(i, j), ring(i + 1, j), ring(i + 1, j + 1));
      add(ring(i, j), ring(i + 1, j + 1), ring(i, j + 1));
    }
  }
  mesh.compute_normals();
  return mesh;
}

TriangleMesh merge_meshes(std::span<const TriangleMesh> parts) {
  TriangleMesh out;
  for (const auto& m : parts) {
    const auto offset = static_cast<std::int32_t>(out.vertices.size());
    out.vertices.insert(out.vertices.end(), m.vertices.begin(), m.vertices.end());
    for (const Face& f : m.faces) out.faces.push_back({f[0] + offset, f[1] + offset, f[2] + offset});
  }
  out.compute_normals();
  return out;
}

}  // namespace atsdf
