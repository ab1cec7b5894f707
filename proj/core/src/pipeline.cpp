#include "atsdf/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "atsdf/io.hpp"
#include "atsdf/mesher.hpp"
#include "atsdf/parallel.hpp"
#include "atsdf/semantic.hpp"
#include "atsdf/synthbench.hpp"
#include "atsdf/volume.hpp"
#include "json.hpp"
#include "toml.hpp"

namespace atsdf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::pair<Stage, std::string_view>, 7> kStageNames{{
    {Stage::kSimulate, "simulate"},
    {Stage::kReconstruct, "reconstruct"},
    {Stage::kMesh, "mesh"},
    {Stage::kVisibility, "visibility"},
    {Stage::kTexture, "texture"},
    {Stage::kSemantic, "semantic"},
    {Stage::kEvaluate, "evaluate"},
}};

Error config_error(const std::string& what) { return Error(ErrorCode::kConfig, what); }

// ---------------------------------------------------------------------------
// Field table
// ---------------------------------------------------------------------------

void assign(double& out, const json& j, const std::string& key) {
  if (!j.is_number()) throw config_error(key + ": expected a number");
  out = j.get<double>();
}

void assign(int& out, const json& j, const std::string& key) {
  if (!j.is_number_integer()) throw config_error(key + ": expected an integer");
  const auto v = j.get<std::int64_t>();
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw config_error(key + ": out of range");
  }
  out = static_cast<int>(v);
}

void assign(unsigned& out, const json& j, const std::string& key) {
  if (!j.is_number_integer() || j.get<std::int64_t>() < 0) throw config_error(key + ": expected an integer >= 0");
  out = j.get<unsigned>();
}

void assign(std::uint64_t& out, const json& j, const std::string& key) {
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
    throw config_error(key + ": expected an integer >= 0");
  }
  out = j.get<std::uint64_t>();
}

void assign(bool& out, const json& j, const std::string& key) {
  if (!j.is_boolean()) throw config_error(key + ": expected true or false");
  out = j.get<bool>();
}

void assign(fs::path& out, const json& j, const std::string& key) {
  if (!j.is_string()) throw config_error(key + ": expected a string");
  out = j.get<std::string>();
}

void assign(std::array<double, 3>& out, const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3) throw config_error(key + ": expected an array of 3 numbers");
  for (std::size_t i = 0; i < 3; ++i) assign(out[i], j[i], key);
}

json to_value(const fs::path& p) { return p.generic_string(); }
template <typename T>
json to_value(const T& v) {
  return v;
}

struct Field {
  const char* key;
  bool affects_output;
  void (*set)(PipelineConfig&, const json&);
  json (*get)(const PipelineConfig&);
};

#define ATSDF_FIELD(name, member, affects)                                              \
  Field {                                                                               \
    name, affects, [](PipelineConfig& c, const json& j) { assign(c.member, j, name); }, \
        [](const PipelineConfig& c) { return to_value(c.member); }                      \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      ATSDF_FIELD("seed", seed, true),
      ATSDF_FIELD("threads", threads, false),
      ATSDF_FIELD("output_dir", output_dir, false),
      ATSDF_FIELD("stages.simulate", stages.simulate, true),
      ATSDF_FIELD("stages.reconstruct", stages.reconstruct, true),
      ATSDF_FIELD("stages.mesh", stages.mesh, true),
      ATSDF_FIELD("stages.visibility", stages.visibility, true),
      ATSDF_FIELD("stages.texture", stages.texture, true),
      ATSDF_FIELD("stages.semantic", stages.semantic, true),
      ATSDF_FIELD("stages.evaluate", stages.evaluate, true),
      ATSDF_FIELD("paths.scans", paths.scans, true),
      ATSDF_FIELD("paths.trajectory", paths.trajectory, true),
      ATSDF_FIELD("paths.frames", paths.frames, true),
      ATSDF_FIELD("paths.labels", paths.labels, true),
      ATSDF_FIELD("paths.palette", paths.palette, true),
      ATSDF_FIELD("paths.scene", paths.scene, true),
      ATSDF_FIELD("volume.voxel_size", volume.voxel_size, true),
      ATSDF_FIELD("volume.eps_min", volume.eps_min, true),
      ATSDF_FIELD("volume.eps_max", volume.eps_max, true),
      ATSDF_FIELD("volume.k", volume.k, true),
      ATSDF_FIELD("volume.min_weight", volume.min_weight, true),
      ATSDF_FIELD("volume.iso_weight_min", volume.iso_weight_min, true),
      ATSDF_FIELD("volume.max_blocks", volume.max_blocks, true),
      ATSDF_FIELD("volume.limit_behind", volume.limit_behind, true),
      ATSDF_FIELD("volume.weight_dropoff", volume.weight_dropoff, true),
      ATSDF_FIELD("visibility.min_cos", visibility.min_cos, true),
      ATSDF_FIELD("visibility.occlusion_bias", visibility.occlusion_bias, true),
      ATSDF_FIELD("texture.lambda_view", texture.lambda_view, true),
      ATSDF_FIELD("texture.lambda_seam", texture.lambda_seam, true),
      ATSDF_FIELD("texture.vignetting_a", texture.vignetting_a, true),
      ATSDF_FIELD("texture.vignetting_b", texture.vignetting_b, true),
      ATSDF_FIELD("texture.vignetting_c", texture.vignetting_c, true),
      ATSDF_FIELD("texture.tau_sq", texture.tau_sq, true),
      ATSDF_FIELD("texture.min_fraction", texture.min_fraction, true),
      ATSDF_FIELD("texture.page_size", texture.page_size, true),
      ATSDF_FIELD("texture.max_pages", texture.max_pages, true),
      ATSDF_FIELD("semantic.lambda_sem", semantic.lambda_sem, true),
      ATSDF_FIELD("evaluate.region_min", evaluate.region_min, true),
      ATSDF_FIELD("evaluate.region_max", evaluate.region_max, true),
      ATSDF_FIELD("evaluate.bin_width", evaluate.bin_width, true),
      ATSDF_FIELD("simulate.scene", simulate.scene, true),
      ATSDF_FIELD("simulate.beams", simulate.beams, true),
      ATSDF_FIELD("simulate.elevation_min_deg", simulate.elevation_min_deg, true),
      ATSDF_FIELD("simulate.elevation_max_deg", simulate.elevation_max_deg, true),
      ATSDF_FIELD("simulate.azimuth_step_deg", simulate.azimuth_step_deg, true),
      ATSDF_FIELD("simulate.sigma", simulate.sigma, true),
      ATSDF_FIELD("simulate.max_range", simulate.max_range, true),
      ATSDF_FIELD("simulate.radius", simulate.radius, true),
      ATSDF_FIELD("simulate.speed", simulate.speed, true),
      ATSDF_FIELD("simulate.rate_hz", simulate.rate_hz, true),
      ATSDF_FIELD("simulate.height", simulate.height, true),
      ATSDF_FIELD("simulate.crop_min", simulate.crop_min, true),
      ATSDF_FIELD("simulate.crop_max", simulate.crop_max, true),
      ATSDF_FIELD("simulate.cameras", simulate.cameras, true),
      ATSDF_FIELD("simulate.width", simulate.width, true),
      ATSDF_FIELD("simulate.image_height", simulate.image_height, true),
      ATSDF_FIELD("simulate.fov_deg", simulate.fov_deg, true),
      ATSDF_FIELD("simulate.target", simulate.target, true),
  };
  return table;
}

#undef ATSDF_FIELD

const Field* find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (key == f.key) return &f;
  }
  return nullptr;
}

void apply_document(PipelineConfig& cfg, const json& doc) {
  if (!doc.is_object()) throw config_error("config: top level must be a table");
  for (const auto& [name, value] : doc.items()) {
    if (value.is_object()) {
      for (const auto& [sub, v] : value.items()) {
        const std::string key = name + "." + sub;
        const Field* f = find_field(key);
        if (!f) throw config_error("config: unknown key '" + key + "'");
        f->set(cfg, v);
      }
    } else {
      const Field* f = find_field(name);
      if (!f) throw config_error("config: unknown key '" + name + "'");
      f->set(cfg, value);
    }
  }
}

json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json out = json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = toml_to_json(v);
    return out;
  }
  if (const auto* a = node.as_array()) {
    json out = json::array();
    for (const auto& v : *a) out.push_back(toml_to_json(v));
    return out;
  }
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  if (const auto* v = node.as_string()) return v->get();
  throw config_error("config: unsupported TOML value type");
}

std::string env_name(const std::string& key) {
  std::string out = kEnvPrefix;
  for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

Vec3 vec(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

fs::path sim_dir(const PipelineConfig& c) { return c.output_dir / "sim"; }
fs::path volume_path(const PipelineConfig& c) { return c.output_dir / "volume.atsf"; }
fs::path mesh_path(const PipelineConfig& c) { return c.output_dir / "mesh.ply"; }
fs::path visibility_path(const PipelineConfig& c) { return c.output_dir / "visibility.csv"; }
fs::path label_visibility_path(const PipelineConfig& c) { return c.output_dir / "visibility_labels.csv"; }
fs::path label_report_path(const PipelineConfig& c) { return c.output_dir / "labels.json"; }

fs::path or_default(const fs::path& configured, const fs::path& fallback) {
  return configured.empty() ? fallback : configured;
}

/// Writes through "<path>.partial" and renames on success; a failed writer
/// leaves the .partial file behind.
template <typename Writer>
void publish(const fs::path& path, Writer&& write) {
  fs::path partial = path;
  partial += ".partial";
  write(partial);
  std::error_code ec;
  fs::rename(partial, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot rename " + partial.string() + ": " + ec.message());
}

void write_metrics(const PipelineConfig& cfg, Stage stage, const json& metrics) {
  const fs::path dir = cfg.output_dir / "metrics";
  fs::create_directories(dir);
  write_file_atomic(dir / (std::string(stage_name(stage)) + ".json"), metrics.dump(2) + "\n");
}

std::uint64_t scan_seed(std::uint64_t seed, std::size_t i) {
  return seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(i) + 1));
}

std::vector<fs::path> list_scans(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ply") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

TriangleMesh load_mesh(const PipelineConfig& cfg) { return read_ply(mesh_path(cfg)); }

std::string fmt_index(const char* pattern, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, i);
  return buf;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

json stage_simulate(const PipelineConfig& cfg, std::ostream& log) {
  const auto& s = cfg.simulate;
  const SceneSpec scene = s.scene.empty() ? SceneSpec::benchmark() : SceneSpec::load(s.scene);
  const ClassPalette palette = cfg.paths.palette.empty() || !fs::exists(cfg.paths.palette)
                                   ? benchmark_palette()
                                   : ClassPalette::load(cfg.paths.palette);
  scene.validate(&palette);

  BeamPattern pattern = BeamPattern::uniform(s.beams, s.elevation_min_deg, s.elevation_max_deg);
  pattern.azimuth_step = s.azimuth_step_deg * M_PI / 180.0;
  pattern.sigma = s.sigma;
  pattern.max_range = s.max_range;
  pattern.validate();
  OrbitProtocol orbit;
  orbit.radius = s.radius;
  orbit.speed = s.speed;
  orbit.rate_hz = s.rate_hz;
  orbit.height = s.height;
  Aabb crop;
  crop.lo = vec(s.crop_min);
  crop.hi = vec(s.crop_max);

  const fs::path dir = sim_dir(cfg);
  fs::create_directories(dir / "scans");
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "labels");

  const auto poses = orbit.sensor_poses();
  std::vector<TrajectoryEntry> trajectory;
  std::size_t points = 0;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const auto cloud = simulate_scan(scene, poses[i], pattern, scan_seed(cfg.seed, i), crop);
    points += cloud.size();
    write_point_cloud(dir / "scans" / fmt_index("scan_%04zu.ply", i), cloud);
    trajectory.push_back({static_cast<double>(i) / s.rate_hz, poses[i]});
  }
  write_trajectory(dir / "trajectory.txt", trajectory);
  log << "simulate: " << poses.size() << " scans, " << points << " points\n";

  const auto cams = orbit_cameras(orbit, s.cameras, s.width, s.image_height, s.fov_deg, vec(s.target));
  const auto color = render_frames(scene, cams, RenderMode::kColor);
  const auto label = render_frames(scene, cams, RenderMode::kLabel);
  const VignettingModel vignette = cfg.vignetting();
  std::vector<ManifestEntry> color_manifest;
  std::vector<ManifestEntry> label_manifest;
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const std::string color_name = fmt_index("color_%03zu.png", i);
    const std::string label_name = fmt_index("label_%03zu.png", i);
    publish(dir / "frames" / color_name,
            [&](const fs::path& p) { write_png(p, vignetting_apply(color[i].image, vignette)); });
    publish(dir / "labels" / label_name, [&](const fs::path& p) { write_png(p, label[i].image); });
    const ManifestEntry base{cams[i].frame_id, "", cams[i].width, cams[i].height, cams[i].intrinsics, cams[i].pose};
    color_manifest.push_back(base);
    color_manifest.back().image = color_name;
    label_manifest.push_back(base);
    label_manifest.back().image = label_name;
  }
  write_manifest(dir / "frames" / "frames.json", color_manifest);
  write_manifest(dir / "labels" / "labels.json", label_manifest);
  palette.save(dir / "palette.json");
  scene.save(dir / "scene.json");
  log << "simulate: " << cams.size() << " camera frames\n";

  return {{"scans", poses.size()}, {"points", points}, {"frames", cams.size()}, {"beams", s.beams}};
}

json stage_reconstruct(const PipelineConfig& cfg, std::ostream& log) {
  const auto scans = list_scans(cfg.scans_dir());
  const auto trajectory = read_trajectory(cfg.trajectory_path());
  if (scans.size() != trajectory.size()) {
    throw Error(ErrorCode::kFormat, "reconstruct: " + std::to_string(scans.size()) + " scans but " +
                                        std::to_string(trajectory.size()) + " trajectory entries");
  }
  VolumeConfig vc;
  vc.voxel_size = cfg.volume.voxel_size;
  vc.truncation = {cfg.volume.eps_min, cfg.volume.eps_max, cfg.volume.k};
  vc.min_weight = cfg.volume.min_weight;
  vc.max_blocks = cfg.volume.max_blocks;
  vc.limit_behind = cfg.volume.limit_behind;
  vc.weight_dropoff = cfg.volume.weight_dropoff;
  TsdfVolume volume(vc);
  IntegrationStats total;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    const auto cloud = read_point_cloud(scans[i]);
    const IntegrationStats s = volume.integrate_scan(cloud, trajectory[i].pose.translation());
    total.points += s.points;
    total.voxel_updates += s.voxel_updates;
    total.blocks_allocated += s.blocks_allocated;
    total.degenerate_blocks += s.degenerate_blocks;
  }
  publish(volume_path(cfg), [&](const fs::path& p) { volume.save(p.string()); });
  log << "reconstruct: " << scans.size() << " scans, " << volume.block_count() << " blocks\n";
  return {{"scans", scans.size()},
          {"points", total.points},
          {"voxel_updates", total.voxel_updates},
          {"blocks", volume.block_count()},
          {"degenerate_block_updates", total.degenerate_blocks}};
}

json stage_mesh(const PipelineConfig& cfg, std::ostream& log) {
  const TsdfVolume volume = TsdfVolume::load(volume_path(cfg).string());
  const TriangleMesh mesh = extract_mesh(volume, cfg.volume.iso_weight_min);
  const FaceAdjacency adjacency = build_adjacency(mesh);
  publish(mesh_path(cfg), [&](const fs::path& p) { write_ply(p, mesh, PlyFormat::kBinary); });
  log << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.faces.size() << " faces\n";
  return {{"vertices", mesh.vertices.size()},
          {"faces", mesh.faces.size()},
          {"area", mesh.total_area()},
          {"adjacent_pairs", adjacency.edges.size()}};
}

json stage_visibility(const PipelineConfig& cfg, std::ostream& log) {
  const TriangleMesh mesh = load_mesh(cfg);
  const Bvh bvh(mesh);
  VisibilityConfig vc;
  vc.min_cos = cfg.visibility.min_cos;
  vc.occlusion_bias = cfg.visibility.occlusion_bias;
  json metrics{{"faces", mesh.faces.size()}, {"bvh_depth", bvh.depth()}};
  auto one = [&](const fs::path& manifest, const fs::path& out, const char* name) {
    const auto frames = load_frames(manifest);
    const VisibilityTable table = compute_visibility(mesh, bvh, frames, vc);
    std::size_t seen = 0;
    for (const auto& f : table.faces) seen += f.empty() ? 0 : 1;
    publish(out, [&](const fs::path& p) { table.write_csv(p.string()); });
    metrics[name] = {{"frames", frames.size()}, {"pairs", table.visible_pairs()}, {"visible_faces", seen}};
    log << "visibility: " << name << " " << table.visible_pairs() << " pairs\n";
  };
  one(cfg.frames_path(), visibility_path(cfg), "color");
  if (fs::exists(cfg.labels_path())) one(cfg.labels_path(), label_visibility_path(cfg), "labels");
  return metrics;
}

json stage_texture(const PipelineConfig& cfg, std::ostream& log) {
  const TriangleMesh mesh = load_mesh(cfg);
  const FaceAdjacency adjacency = build_adjacency(mesh);
  auto frames = load_frames(cfg.frames_path());
  const VignettingModel vignette = cfg.vignetting();
  for (auto& f : frames) f.image = vignetting_correct(f.image, vignette);
  const VisibilityTable visibility = VisibilityTable::read_csv(visibility_path(cfg).string(), mesh.faces.size());

  PhotoConsistencyConfig pc;
  pc.tau_sq = cfg.texture.tau_sq;
  pc.min_fraction = cfg.texture.min_fraction;
  const VisibilityTable filtered = photo_consistency_filter(mesh, visibility, frames, pc);
  const FaceViewAssignment assignment = select_views(mesh, adjacency, filtered, frames, cfg.texture.lambda_view);
  const ChartSet charts = build_charts(mesh, adjacency, assignment);
  const SeamLevelSystem system = build_seam_system(mesh, adjacency, charts, frames, cfg.texture.lambda_seam);
  const std::vector<Vec3> corrections = solve_seam_system(system);
  AtlasConfig ac;
  ac.page_size = cfg.texture.page_size;
  ac.max_pages = cfg.texture.max_pages;
  const TextureAtlas atlas = bake_atlas(mesh, charts, frames, system, corrections, ac);
  write_textured_obj(cfg.output_dir, "textured", mesh, atlas, assignment);
  log << "texture: " << charts.charts.size() << " charts, " << atlas.pages.size() << " pages, "
      << assignment.none_count() << " untextured faces\n";

  const std::vector<Vec3> zero(system.instances.size(), Vec3::Zero());
  return {{"faces", mesh.faces.size()},
          {"candidate_views", visibility.visible_pairs()},
          {"consistent_views", filtered.visible_pairs()},
          {"untextured_faces", assignment.none_count()},
          {"view_energy", assignment.energy},
          {"charts", charts.charts.size()},
          {"seam_terms", system.seams.size()},
          {"seam_objective_before", system.objective(zero)},
          {"seam_objective_after", system.objective(corrections)},
          {"seam_residual", system.normal_residual(corrections)},
          {"pages", atlas.pages.size()}};
}

json stage_semantic(const PipelineConfig& cfg, std::ostream& log) {
  const TriangleMesh mesh = load_mesh(cfg);
  const FaceAdjacency adjacency = build_adjacency(mesh);
  const auto frames = load_frames(cfg.labels_path());
  const ClassPalette palette = ClassPalette::load(cfg.palette_path());
  const VisibilityTable visibility =
      VisibilityTable::read_csv(label_visibility_path(cfg).string(), mesh.faces.size());
  const LabelVotes votes = accumulate_votes(mesh, visibility, frames, palette);
  const SemanticLabels labels = fuse_labels(adjacency, votes, cfg.semantic.lambda_sem);
  publish(cfg.output_dir / "labeled.ply", [&](const fs::path& p) { write_labeled_ply(p, mesh, labels, palette); });
  publish(label_report_path(cfg), [&](const fs::path& p) { write_label_report(p, labels, palette); });

  std::size_t unobserved = 0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) unobserved += votes.observed(f) ? 0 : 1;
  std::vector<std::size_t> per_class(palette.size(), 0);
  for (std::int32_t c : labels.face_class) ++per_class[static_cast<std::size_t>(c)];
  json counts = json::object();
  for (const auto& c : palette.classes) counts[c.name] = per_class[static_cast<std::size_t>(c.id)];
  log << "semantic: " << mesh.faces.size() << " faces, " << unobserved << " unobserved\n";
  return {{"faces", mesh.faces.size()}, {"unobserved_faces", unobserved}, {"energy", labels.energy}, {"counts", counts}};
}

json stage_evaluate(const PipelineConfig& cfg, std::ostream& log) {
  const TriangleMesh mesh = load_mesh(cfg);
  const SceneSpec scene = SceneSpec::load(cfg.scene_path());
  Aabb region;
  region.lo = vec(cfg.evaluate.region_min);
  region.hi = vec(cfg.evaluate.region_max);
  const ErrorReport report = mesh_error(mesh, scene, region, cfg.evaluate.bin_width);
  publish(cfg.output_dir / "error_report.json", [&](const fs::path& p) { write_file_atomic(p, report.to_json()); });
  publish(cfg.output_dir / "error_histogram.csv",
          [&](const fs::path& p) { write_file_atomic(p, report.histogram_csv()); });
  json metrics{{"vertices", report.distances.size()}, {"max", report.max}, {"mean", report.mean}, {"rms", report.rms}};

  if (fs::exists(label_report_path(cfg))) {
    const json doc = json::parse(read_file(label_report_path(cfg)));
    const auto& faces = doc.at("faces");
    if (faces.size() == mesh.faces.size()) {
      std::size_t inside = 0;
      std::size_t correct = 0;
      for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const Vec3 c = mesh.centroid(f);
        if ((c.array() < region.lo.array()).any() || (c.array() > region.hi.array()).any()) continue;
        ++inside;
        correct += faces[f].at("class").get<std::int32_t>() == scene.classify(c) ? 1 : 0;
      }
      metrics["semantic_faces"] = inside;
      metrics["semantic_accuracy"] = inside ? static_cast<double>(correct) / static_cast<double>(inside) : 0.0;
    }
  }
  log << "evaluate: max " << report.max << " m, rms " << report.rms << " m over " << report.distances.size()
      << " vertices\n";
  return metrics;
}

class StageError : public Error {
 public:
  StageError(Stage stage, ErrorCode code, const std::string& what) : Error(code, what), stage_(stage) {}
  Stage stage() const noexcept { return stage_; }

 private:
  Stage stage_;
};

}  // namespace

std::string_view stage_name(Stage stage) noexcept {
  for (const auto& [s, name] : kStageNames) {
    if (s == stage) return name;
  }
  return "unknown";
}

std::optional<Stage> stage_from_name(std::string_view name) noexcept {
  for (const auto& [s, n] : kStageNames) {
    if (n == name) return s;
  }
  return std::nullopt;
}

EnvLookup system_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

std::vector<std::string> PipelineConfig::keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.emplace_back(f.key);
  return out;
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw config_error(std::string("config: ") + e.what());
  }
  PipelineConfig cfg;
  apply_document(cfg, doc);
  return cfg;
}

PipelineConfig PipelineConfig::from_toml(const std::string& text) {
  json doc;
  try {
    doc = toml_to_json(toml::parse(text));
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config: " << e.description() << " at line " << e.source().begin.line;
    throw config_error(msg.str());
  }
  PipelineConfig cfg;
  apply_document(cfg, doc);
  return cfg;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  const std::string text = read_file(path);
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".toml") return from_toml(text);
  if (ext == ".json") return from_json(text);
  throw config_error("config: unknown extension '" + ext + "' (expected .json or .toml)");
}

void PipelineConfig::apply_env(const EnvLookup& env) {
  for (const Field& f : fields()) {
    const std::string name = env_name(f.key);
    const auto value = env(name);
    if (!value) continue;
    json j = json::parse(*value, nullptr, false);
    if (j.is_discarded()) j = *value;
    try {
      f.set(*this, j);
    } catch (const Error& e) {
      throw config_error(name + ": " + e.what());
    }
  }
}

std::string PipelineConfig::to_json() const {
  json out = json::object();
  for (const Field& f : fields()) {
    if (!f.affects_output) continue;
    const std::string key = f.key;
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      out[key] = f.get(*this);
    } else {
      out[key.substr(0, dot)][key.substr(dot + 1)] = f.get(*this);
    }
  }
  return out.dump(2) + "\n";
}

void PipelineConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw config_error("config: " + what);
  };
  require(volume.voxel_size > 0 && volume.voxel_size <= 10, "volume.voxel_size must be in (0, 10]");
  require(volume.eps_min > 0, "volume.eps_min must be > 0");
  require(volume.eps_min <= volume.eps_max, "volume.eps_min must be <= volume.eps_max");
  require(volume.k > 0, "volume.k must be > 0");
  require(volume.min_weight > 0 && volume.min_weight <= 1, "volume.min_weight must be in (0, 1]");
  require(volume.iso_weight_min >= 0, "volume.iso_weight_min must be >= 0");
  require(volume.max_blocks >= 1, "volume.max_blocks must be >= 1");
  require(visibility.min_cos >= 0 && visibility.min_cos < 1, "visibility.min_cos must be in [0, 1)");
  require(visibility.occlusion_bias >= 0, "visibility.occlusion_bias must be >= 0");
  require(texture.lambda_view >= 0, "texture.lambda_view must be >= 0");
  require(texture.lambda_seam > 0, "texture.lambda_seam must be > 0");
  require(texture.tau_sq > 0, "texture.tau_sq must be > 0");
  require(texture.min_fraction >= 0 && texture.min_fraction <= 1, "texture.min_fraction must be in [0, 1]");
  require(texture.page_size >= 64 && texture.page_size <= 16384, "texture.page_size must be in [64, 16384]");
  require(texture.max_pages >= 1, "texture.max_pages must be >= 1");
  try {
    vignetting().validate();
  } catch (const Error& e) {
    throw config_error(std::string("config: texture.vignetting: ") + e.what());
  }
  require(semantic.lambda_sem >= 0, "semantic.lambda_sem must be >= 0");
  for (int i = 0; i < 3; ++i) {
    require(evaluate.region_min[i] <= evaluate.region_max[i], "evaluate.region_min must be <= region_max");
    require(simulate.crop_min[i] <= simulate.crop_max[i], "simulate.crop_min must be <= crop_max");
  }
  require(evaluate.bin_width > 0, "evaluate.bin_width must be > 0");
  require(simulate.beams >= 1 && simulate.beams <= 256, "simulate.beams must be in [1, 256]");
  require(simulate.elevation_min_deg <= simulate.elevation_max_deg, "simulate elevation range is empty");
  require(simulate.azimuth_step_deg > 0 && simulate.azimuth_step_deg <= 360, "simulate.azimuth_step_deg must be in (0, 360]");
  require(simulate.sigma >= 0, "simulate.sigma must be >= 0");
  require(simulate.max_range > 0, "simulate.max_range must be > 0");
  require(simulate.radius > 0 && simulate.speed > 0 && simulate.rate_hz > 0,
          "simulate.radius, speed and rate_hz must be > 0");
  require(simulate.cameras >= 0, "simulate.cameras must be >= 0");
  require(simulate.width >= 1 && simulate.image_height >= 1, "simulate image size must be positive");
  require(simulate.fov_deg > 0 && simulate.fov_deg < 180, "simulate.fov_deg must be in (0, 180)");
}

fs::path PipelineConfig::scans_dir() const { return or_default(paths.scans, sim_dir(*this) / "scans"); }
fs::path PipelineConfig::trajectory_path() const {
  return or_default(paths.trajectory, sim_dir(*this) / "trajectory.txt");
}
fs::path PipelineConfig::frames_path() const {
  return or_default(paths.frames, sim_dir(*this) / "frames" / "frames.json");
}
fs::path PipelineConfig::labels_path() const {
  return or_default(paths.labels, sim_dir(*this) / "labels" / "labels.json");
}
fs::path PipelineConfig::palette_path() const { return or_default(paths.palette, sim_dir(*this) / "palette.json"); }
fs::path PipelineConfig::scene_path() const { return or_default(paths.scene, sim_dir(*this) / "scene.json"); }

std::vector<Stage> enabled_stages(const PipelineConfig& config, std::span<const Stage> requested) {
  const auto& s = config.stages;
  std::vector<Stage> out;
  for (const auto& [stage, name] : kStageNames) {
    if (std::find(requested.begin(), requested.end(), stage) == requested.end()) continue;
    const bool on = stage == Stage::kSimulate      ? s.simulate
                    : stage == Stage::kReconstruct ? s.reconstruct
                    : stage == Stage::kMesh        ? s.mesh
                    : stage == Stage::kVisibility  ? s.visibility
                    : stage == Stage::kTexture     ? s.texture
                    : stage == Stage::kSemantic    ? s.semantic
                                                   : s.evaluate;
    if (on) out.push_back(stage);
  }
  return out;
}

void validate_run(const PipelineConfig& config, std::span<const Stage> stages) {
  config.validate();
  auto runs = [&](Stage s) { return std::find(stages.begin(), stages.end(), s) != stages.end(); };
  auto before = [&](Stage producer, Stage consumer) {
    return runs(producer) && static_cast<int>(producer) < static_cast<int>(consumer);
  };
  auto need = [&](Stage consumer, const fs::path& path, Stage producer) {
    if (before(producer, consumer) || fs::exists(path)) return;
    throw config_error("config: stage '" + std::string(stage_name(consumer)) + "' needs " + path.string() +
                       ", which does not exist and is not produced by an earlier stage");
  };
  if (!config.simulate.scene.empty() && runs(Stage::kSimulate) && !fs::exists(config.simulate.scene)) {
    throw config_error("config: simulate.scene " + config.simulate.scene.string() + " does not exist");
  }
  if (runs(Stage::kReconstruct)) {
    need(Stage::kReconstruct, config.scans_dir(), Stage::kSimulate);
    need(Stage::kReconstruct, config.trajectory_path(), Stage::kSimulate);
  }
  if (runs(Stage::kMesh)) need(Stage::kMesh, volume_path(config), Stage::kReconstruct);
  if (runs(Stage::kVisibility)) {
    need(Stage::kVisibility, mesh_path(config), Stage::kMesh);
    need(Stage::kVisibility, config.frames_path(), Stage::kSimulate);
  }
  if (runs(Stage::kTexture)) {
    need(Stage::kTexture, mesh_path(config), Stage::kMesh);
    need(Stage::kTexture, config.frames_path(), Stage::kSimulate);
    need(Stage::kTexture, visibility_path(config), Stage::kVisibility);
  }
  if (runs(Stage::kSemantic)) {
    need(Stage::kSemantic, mesh_path(config), Stage::kMesh);
    need(Stage::kSemantic, config.labels_path(), Stage::kSimulate);
    need(Stage::kSemantic, config.palette_path(), Stage::kSimulate);
    need(Stage::kSemantic, label_visibility_path(config), Stage::kVisibility);
  }
  if (runs(Stage::kEvaluate)) {
    need(Stage::kEvaluate, mesh_path(config), Stage::kMesh);
    need(Stage::kEvaluate, config.scene_path(), Stage::kSimulate);
  }
}

void execute(const PipelineConfig& config, std::span<const Stage> stages, std::ostream& log) {
  validate_run(config, stages);
  fs::create_directories(config.output_dir);
  fs::remove(config.output_dir / "error.json");
  set_thread_count(config.threads);
  write_file_atomic(config.output_dir / "config.json", config.to_json());
  for (Stage stage : stages) {
    json metrics;
    try {
      switch (stage) {
        case Stage::kSimulate: metrics = stage_simulate(config, log); break;
        case Stage::kReconstruct: metrics = stage_reconstruct(config, log); break;
        case Stage::kMesh: metrics = stage_mesh(config, log); break;
        case Stage::kVisibility: metrics = stage_visibility(config, log); break;
        case Stage::kTexture: metrics = stage_texture(config, log); break;
        case Stage::kSemantic: metrics = stage_semantic(config, log); break;
        case Stage::kEvaluate: metrics = stage_evaluate(config, log); break;
      }
      write_metrics(config, stage, metrics);
    } catch (const Error& e) {
      throw StageError(stage, e.code(), e.what());
    } catch (const fs::filesystem_error& e) {
      throw StageError(stage, ErrorCode::kIo, e.what());
    } catch (const json::exception& e) {
      throw StageError(stage, ErrorCode::kFormat, e.what());
    } catch (const std::bad_alloc&) {
      throw StageError(stage, ErrorCode::kAllocationLimit, "out of memory");
    }
  }
}

int run(const PipelineConfig& config, std::span<const Stage> stages, std::ostream& log) {
  std::string stage = "config";
  ErrorCode code = ErrorCode::kConfig;
  std::string message;
  try {
    execute(config, stages, log);
    return 0;
  } catch (const StageError& e) {
    stage = std::string(stage_name(e.stage()));
    code = e.code();
    message = e.what();
  } catch (const Error& e) {
    code = e.code();
    message = e.what();
  } catch (const std::exception& e) {
    code = ErrorCode::kIo;
    message = e.what();
  }
  log << "error: [" << stage << "] " << message << "\n";
  try {
    fs::create_directories(config.output_dir);
    write_file_atomic(config.output_dir / "error.json",
                      json{{"stage", stage}, {"code", std::string(to_string(code))}, {"message", message}}.dump(2) +
                          "\n");
  } catch (const std::exception& e) {
    log << "error: cannot write error.json: " << e.what() << "\n";
  }
  return code == ErrorCode::kConfig ? 2 : 1;
}

}  // namespace atsdf
