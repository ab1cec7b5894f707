#include "atsdf/semantic.hpp"

#include <cmath>

#include "atsdf/mrf.hpp"
#include "atsdf/parallel.hpp"
#include "json.hpp"

namespace atsdf {

using nlohmann::json;

void ClassPalette::validate() const {
  if (classes.size() < 2) throw Error(ErrorCode::kInvalidArgument, "palette: need at least 2 classes");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].id != static_cast<std::int32_t>(i)) {
      throw Error(ErrorCode::kInvalidArgument, "palette: class ids must be dense 0..N-1 in order");
    }
  }
}

std::string ClassPalette::to_json() const {
  json arr = json::array();
  for (const auto& c : classes) arr.push_back({{"id", c.id}, {"name", c.name}, {"color", c.color}});
  return json{{"classes", arr}}.dump(2) + "\n";
}

ClassPalette ClassPalette::from_json(const std::string& text) {
  ClassPalette p;
  try {
    const json doc = json::parse(text);
    for (const auto& c : doc.at("classes")) {
      p.classes.push_back(
          {c.at("id").get<std::int32_t>(), c.value("name", std::string{}), c.at("color").get<std::array<std::uint8_t, 3>>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("palette: ") + e.what());
  }
  std::sort(p.classes.begin(), p.classes.end(), [](const ClassInfo& a, const ClassInfo& b) { return a.id < b.id; });
  p.validate();
  return p;
}

ClassPalette ClassPalette::load(const std::filesystem::path& path) { return from_json(read_file(path)); }

void ClassPalette::save(const std::filesystem::path& path) const { write_file_atomic(path, to_json()); }

bool LabelVotes::observed(std::size_t face) const {
  for (std::size_t c = 0; c < classes; ++c) {
    if (area[face * classes + c] > 0) return true;
  }
  return false;
}

std::vector<double> LabelVotes::distribution(std::size_t face) const {
  std::vector<double> row(area.begin() + static_cast<std::ptrdiff_t>(face * classes),
                          area.begin() + static_cast<std::ptrdiff_t>((face + 1) * classes));
  double total = 0.0;
  for (double v : row) total += v;
  for (double& v : row) v = total > 0 ? v / total : 1.0 / static_cast<double>(classes);
  return row;
}

LabelVotes accumulate_votes(const TriangleMesh& mesh, const VisibilityTable& visibility,
                            std::span<const CameraFrame> label_frames, const ClassPalette& palette) {
  palette.validate();
  if (visibility.faces.size() != mesh.faces.size()) {
    throw Error(ErrorCode::kInvalidArgument, "accumulate_votes: visibility/mesh size mismatch");
  }
  std::vector<std::pair<std::int32_t, std::size_t>> index;
  for (std::size_t i = 0; i < label_frames.size(); ++i) index.emplace_back(label_frames[i].frame_id, i);
  std::sort(index.begin(), index.end());

  LabelVotes votes;
  votes.classes = palette.size();
  votes.area.assign(mesh.faces.size() * votes.classes, 0.0);
  parallel_for(0, mesh.faces.size(), [&](std::size_t f) {
    const Vec3 centroid = mesh.centroid(f);
    for (const VisibleView& v : visibility.faces[f]) {
      auto it = std::lower_bound(index.begin(), index.end(), std::make_pair(v.frame_id, std::size_t{0}));
      if (it == index.end() || it->first != v.frame_id) {
        throw Error(ErrorCode::kInvalidArgument, "accumulate_votes: unknown frame id " + std::to_string(v.frame_id));
      }
      const CameraFrame& frame = label_frames[it->second];
      const auto px = project(frame, centroid);
      if (!px) continue;
      const int x = static_cast<int>(std::floor(px->x()));
      const int y = static_cast<int>(std::floor(px->y()));
      const std::uint8_t cls = frame.image.at(x, y, 0);
      if (cls >= votes.classes) {
        throw Error(ErrorCode::kUnknownClass, "label frame " + std::to_string(v.frame_id) + " has class id " +
                                                  std::to_string(cls) + " outside the palette");
      }
      votes.area[f * votes.classes + cls] += v.area_px;
    }
  });
  return votes;
}

SemanticLabels fuse_labels(const FaceAdjacency& adjacency, const LabelVotes& votes, double lambda_sem) {
  const std::size_t n = votes.face_count();
  MrfProblem problem;
  problem.lambda = lambda_sem;
  problem.nodes.resize(n);
  std::vector<std::vector<double>> rows(n);
  for (std::size_t f = 0; f < n; ++f) {
    rows[f] = votes.distribution(f);
    MrfNode& node = problem.nodes[f];
    for (std::size_t c = 0; c < votes.classes; ++c) {
      node.labels.push_back(static_cast<std::int32_t>(c));
      node.costs.push_back(-rows[f][c]);
    }
  }
  problem.edges = adjacency.edges;
  SemanticLabels out;
  if (n == 0) return out;
  const MrfResult result = solve_mrf(problem);
  out.face_class = result.labels;
  out.energy = result.energy;
  out.confidence.resize(n);
  for (std::size_t f = 0; f < n; ++f) out.confidence[f] = rows[f][static_cast<std::size_t>(out.face_class[f])];
  return out;
}

void write_labeled_ply(const std::filesystem::path& path, const TriangleMesh& mesh, const SemanticLabels& labels,
                       const ClassPalette& palette, PlyFormat format) {
  PlyFaceAttributes attrs;
  attrs.class_id = labels.face_class;
  for (std::int32_t c : labels.face_class) attrs.color.push_back(palette.classes.at(static_cast<std::size_t>(c)).color);
  write_ply(path, mesh, format, attrs);
}

void write_label_report(const std::filesystem::path& path, const SemanticLabels& labels,
                        const ClassPalette& palette) {
  json names = json::array();
  std::vector<std::size_t> counts(palette.size(), 0);
  for (const auto& c : palette.classes) names.push_back(c.name);
  json faces = json::array();
  for (std::size_t f = 0; f < labels.face_class.size(); ++f) {
    ++counts.at(static_cast<std::size_t>(labels.face_class[f]));
    faces.push_back({{"class", labels.face_class[f]}, {"confidence", labels.confidence[f]}});
  }
  write_file_atomic(path, json{{"classes", names}, {"counts", counts}, {"faces", faces}}.dump() + "\n");
}

}  // namespace atsdf
