#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "atsdf/mrf.hpp"
#include "atsdf/semantic.hpp"
#include "atsdf/synthbench.hpp"
#include "test_util.hpp"

namespace atsdf {
namespace {

ClassPalette palette(int n) {
  ClassPalette p;
  for (int i = 0; i < n; ++i) {
    p.classes.push_back({i, "c" + std::to_string(i),
                         {static_cast<std::uint8_t>(40 * i), static_cast<std::uint8_t>(255 - 40 * i), 7}});
  }
  return p;
}

TriangleMesh facing_triangle(double z) {
  TriangleMesh m;
  m.vertices = {Vec3(-0.5, -0.5, z), Vec3(0.5, -0.5, z), Vec3(0, 1.0, z)};
  m.faces = {{0, 2, 1}};
  m.compute_normals();
  return m;
}

/// Label frame at the origin looking down +z, filled with one class.
CameraFrame label_frame(int id, std::uint8_t cls) { return test::make_camera(100, 100, 50, RigidPose(), 1, cls, id); }

LabelVotes votes_from_rows(const std::vector<std::vector<double>>& rows) {
  LabelVotes v;
  v.classes = rows.front().size();
  for (const auto& r : rows) v.area.insert(v.area.end(), r.begin(), r.end());
  return v;
}

FaceAdjacency chain(int n) {
  FaceAdjacency a;
  for (int i = 0; i + 1 < n; ++i) a.edges.emplace_back(i, i + 1);
  return a;
}

TEST(Votes, AreaWeightedDistribution) {
  const auto mesh = facing_triangle(2);
  const std::vector<CameraFrame> frames{label_frame(0, 1), label_frame(1, 1), label_frame(2, 2)};
  VisibilityTable vis;
  vis.faces = {{{0, 5.0, 1.0}, {1, 3.0, 1.0}, {2, 2.0, 1.0}}};
  const auto votes = accumulate_votes(mesh, vis, frames, palette(4));
  ASSERT_TRUE(votes.observed(0));
  const auto d = votes.distribution(0);
  EXPECT_DOUBLE_EQ(d[1], 0.8);
  EXPECT_DOUBLE_EQ(d[2], 0.2);
  EXPECT_DOUBLE_EQ(d[0] + d[3], 0.0);
}

TEST(Votes, InvisibleFaceIsUniform) {
  const auto mesh = facing_triangle(2);
  VisibilityTable vis;
  vis.faces = {{}};
  const auto votes = accumulate_votes(mesh, vis, std::vector<CameraFrame>{}, palette(4));
  EXPECT_FALSE(votes.observed(0));
  EXPECT_EQ(votes.distribution(0), (std::vector<double>(4, 0.25)));
}

TEST(Votes, SingleViewIsOneHot) {
  const auto mesh = facing_triangle(2);
  const std::vector<CameraFrame> frames{label_frame(4, 3)};
  VisibilityTable vis;
  vis.faces = {{{4, 17.0, 1.0}}};
  EXPECT_EQ(accumulate_votes(mesh, vis, frames, palette(4)).distribution(0), (std::vector<double>{0, 0, 0, 1}));
}

TEST(Votes, UnknownClassRejected) {
  const auto mesh = facing_triangle(2);
  const std::vector<CameraFrame> frames{label_frame(0, 9)};
  VisibilityTable vis;
  vis.faces = {{{0, 1.0, 1.0}}};
  try {
    accumulate_votes(mesh, vis, frames, palette(4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownClass);
  }
}

TEST(Votes, RowsAreProbabilityVectors) {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(0, 50);
  std::vector<std::vector<double>> rows(100, std::vector<double>(5));
  for (auto& r : rows)
    for (auto& x : r) x = rng() % 3 ? 0.0 : u(rng);
  const auto votes = votes_from_rows(rows);
  for (std::size_t f = 0; f < rows.size(); ++f) {
    const auto d = votes.distribution(f);
    EXPECT_NEAR(std::accumulate(d.begin(), d.end(), 0.0), 1.0, 1e-9);
  }
}

TEST(Fuse, ZeroLambdaIsArgmaxWithLowestTie) {
  const auto votes = votes_from_rows({{1, 3, 3, 0}, {0, 0, 0, 0}, {5, 0, 0, 1}});
  const auto labels = fuse_labels(chain(3), votes, 0.0);
  EXPECT_EQ(labels.face_class, (std::vector<std::int32_t>{1, 0, 0}));
  EXPECT_DOUBLE_EQ(labels.confidence[0], 3.0 / 7.0);
  EXPECT_DOUBLE_EQ(labels.confidence[1], 0.25);
}

TEST(Fuse, InvisibleFaceTakesNeighborClass) {
  // Face 2 is unobserved; every neighbor votes class 3.
  FaceAdjacency adj;
  adj.edges = {{0, 2}, {1, 2}, {2, 3}};
  const auto votes = votes_from_rows({{0, 0, 0, 1}, {0, 0, 0, 1}, {0, 0, 0, 0}, {0, 1, 0, 4}});
  const auto labels = fuse_labels(adj, votes, 0.5);
  EXPECT_EQ(labels.face_class[2], 3);
}

TEST(Fuse, StripMatchesExhaustive) {
  std::mt19937_64 rng(72);
  std::uniform_real_distribution<double> u(0, 10);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> rows(6, std::vector<double>(3));
    for (auto& r : rows)
      for (auto& x : r) x = u(rng);
    if (trial % 4 == 0) rows[2].assign(3, 0.0);
    const auto votes = votes_from_rows(rows);
    const double lambda = 0.2 * (trial % 5);
    const auto labels = fuse_labels(chain(6), votes, lambda);

    MrfProblem p;
    for (std::size_t f = 0; f < rows.size(); ++f) {
      const auto d = votes.distribution(f);
      MrfNode node;
      for (int c = 0; c < 3; ++c) {
        node.labels.push_back(c);
        node.costs.push_back(-d[static_cast<std::size_t>(c)]);
      }
      p.nodes.push_back(node);
    }
    p.edges = chain(6).edges;
    p.lambda = lambda;
    const auto ex = solve_mrf_exhaustive(p);
    EXPECT_EQ(labels.face_class, ex.labels) << trial;
    EXPECT_NEAR(labels.energy, ex.energy, 1e-12);
  }
}

TEST(Fuse, ClassPermutationEquivariance) {
  std::mt19937_64 rng(73);
  std::uniform_real_distribution<double> u(0, 10);
  const int n = 10, classes = 4;
  std::vector<std::vector<double>> rows(n, std::vector<double>(classes));
  for (auto& r : rows)
    for (auto& x : r) x = rng() % 2 ? u(rng) : 0.0;
  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<std::vector<double>> permuted(n, std::vector<double>(classes));
  for (int f = 0; f < n; ++f)
    for (int c = 0; c < classes; ++c) permuted[f][perm[c]] = rows[f][c];
  const auto a = fuse_labels(chain(n), votes_from_rows(rows), 0.3);
  const auto b = fuse_labels(chain(n), votes_from_rows(permuted), 0.3);
  for (int f = 0; f < n; ++f) EXPECT_EQ(b.face_class[f], perm[a.face_class[f]]);
}

TEST(Fuse, RecoversNoiseFreeSceneLabels) {
  const SceneSpec scene = SceneSpec::benchmark();
  const std::vector<TriangleMesh> parts{make_grid_mesh(Vec3(0, 0, 0), 12, 48),
                                        make_sphere_mesh(Vec3(-2.5, 0, 2), 2.0, 24, 48),
                                        make_box_mesh(Vec3(3, 0, 0.5), Vec3(4, 2, 1), 8)};
  const TriangleMesh mesh = merge_meshes(parts);
  OrbitProtocol orbit;
  orbit.radius = 10;
  const auto specs = orbit_cameras(orbit, 8, 320, 240, 70, Vec3(0, 0, 1));
  const auto frames = render_frames(scene, specs, RenderMode::kLabel);
  const auto vis = compute_visibility(mesh, Bvh(mesh), frames);
  const auto votes = accumulate_votes(mesh, vis, frames, benchmark_palette());
  const auto adj = build_adjacency(mesh);
  std::size_t unsmoothed = 0;
  for (double lambda : {0.0, 0.5, 1.0}) {
    const auto labels = fuse_labels(adj, votes, lambda);
    std::size_t correct = 0, observed = 0, observed_correct = 0;
    for (std::size_t f = 0; f < mesh.face_count(); ++f) {
      const bool ok = labels.face_class[f] == scene.classify(mesh.centroid(f));
      correct += ok;
      if (votes.observed(f)) {
        ++observed;
        observed_correct += ok;
      }
    }
    EXPECT_GE(static_cast<double>(observed_correct), 0.99 * static_cast<double>(observed)) << lambda;
    // Unobserved faces are filled from their neighbors once smoothing is on.
    if (lambda == 0)
      unsmoothed = correct;
    else
      EXPECT_GT(correct, unsmoothed) << lambda;
  }
}

TEST(Palette, JsonRoundTripAndValidation) {
  const ClassPalette p = benchmark_palette();
  const ClassPalette q = ClassPalette::from_json(p.to_json());
  ASSERT_EQ(q.size(), p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(q.classes[i].name, p.classes[i].name);
    EXPECT_EQ(q.classes[i].color, p.classes[i].color);
  }
  ClassPalette bad = p;
  bad.classes[2].id = 7;
  EXPECT_THROW(bad.validate(), Error);
  EXPECT_THROW(palette(1).validate(), Error);
}

TEST(Output, LabeledPlyAndReport) {
  const auto mesh = test::tetrahedron();
  SemanticLabels labels;
  labels.face_class = {0, 1, 1, 2};
  labels.confidence = {1, 0.5, 0.5, 0.25};
  const auto dir = test::temp_dir("semantic_out");
  write_labeled_ply(dir / "l.ply", mesh, labels, palette(3));
  EXPECT_EQ(read_ply(dir / "l.ply").face_count(), 4u);
  write_label_report(dir / "l.json", labels, palette(3));
  const std::string report = read_file(dir / "l.json");
  EXPECT_NE(report.find("\"counts\""), std::string::npos);
  EXPECT_NE(report.find("c2"), std::string::npos);
}

}  // namespace
}  // namespace atsdf
