#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <unordered_map>

#include "atsdf/mesher.hpp"
#include "test_util.hpp"

namespace atsdf {
namespace {

using Sdf = std::function<double(const Vec3&)>;

/// Writes sdf (clamped to +-band) into every voxel of [lo, hi] whose |sdf| is
/// below band, with the given weight.
TsdfVolume analytic_volume(double voxel, const Vec3& lo, const Vec3& hi, double band, const Sdf& sdf,
                           float weight = 1.0f) {
  VolumeConfig cfg;
  cfg.voxel_size = voxel;
  TsdfVolume vol(cfg);
  const Vec3i a = vol.voxel_of_point(lo);
  const Vec3i b = vol.voxel_of_point(hi);
  for (int z = a.z(); z <= b.z(); ++z)
    for (int y = a.y(); y <= b.y(); ++y)
      for (int x = a.x(); x <= b.x(); ++x) {
        const Vec3i v(x, y, z);
        const double d = sdf(vol.voxel_center(v));
        if (std::abs(d) >= band) continue;
        const BlockCoord bc = vol.block_of_point(vol.voxel_center(v));
        VoxelBlock& block = vol.get_or_allocate(bc);
        Voxel& vox = block.at(x - bc.x * kBlockSide, y - bc.y * kBlockSide, z - bc.z * kBlockSide);
        vox.tsdf = static_cast<float>(d);
        vox.weight = weight;
      }
  return vol;
}

Vec3 closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

std::map<std::pair<int, int>, int> edge_use(const TriangleMesh& m) {
  std::map<std::pair<int, int>, int> use;
  for (const auto& f : m.faces)
    for (int k = 0; k < 3; ++k) ++use[{std::min(f[k], f[(k + 1) % 3]), std::max(f[k], f[(k + 1) % 3])}];
  return use;
}

class SphereMesh : public ::testing::Test {
 protected:
  static constexpr double kRadius = 2.0;
  static constexpr double kVoxel = 0.025;

  static void SetUpTestSuite() {
    const Sdf sdf = [](const Vec3& p) { return p.norm() - kRadius; };
    volume_ = new TsdfVolume(analytic_volume(kVoxel, Vec3::Constant(-2.2), Vec3::Constant(2.2), 4 * kVoxel, sdf));
    mesh_ = new TriangleMesh(extract_mesh(*volume_));
  }
  static void TearDownTestSuite() {
    delete mesh_;
    delete volume_;
  }

  static TsdfVolume* volume_;
  static TriangleMesh* mesh_;
};

TsdfVolume* SphereMesh::volume_ = nullptr;
TriangleMesh* SphereMesh::mesh_ = nullptr;

TEST_F(SphereMesh, Watertight) {
  ASSERT_GT(mesh_->face_count(), 10000u);
  for (const auto& [edge, count] : edge_use(*mesh_)) {
    ASSERT_EQ(count, 2) << edge.first << "-" << edge.second;
  }
}

TEST_F(SphereMesh, HausdorffWithinOneVoxel) {
  double max_out = 0;
  for (const auto& v : mesh_->vertices) max_out = std::max(max_out, std::abs(v.norm() - kRadius));
  EXPECT_LE(max_out, kVoxel);

  // Sphere -> mesh direction with face buckets.
  const double cell = 0.1;
  auto key = [&](const Vec3& p) {
    return std::array<int, 3>{static_cast<int>(std::floor(p.x() / cell)), static_cast<int>(std::floor(p.y() / cell)),
                              static_cast<int>(std::floor(p.z() / cell))};
  };
  std::map<std::array<int, 3>, std::vector<std::size_t>> buckets;
  for (std::size_t f = 0; f < mesh_->face_count(); ++f) buckets[key(mesh_->centroid(f))].push_back(f);
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0, 1);
  double max_in = 0;
  for (int i = 0; i < 3000; ++i) {
    const Vec3 s = Vec3(n(rng), n(rng), n(rng)).normalized() * kRadius;
    const auto k = key(s);
    double best = 1e9;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto it = buckets.find({k[0] + dx, k[1] + dy, k[2] + dz});
          if (it == buckets.end()) continue;
          for (auto f : it->second) {
            const auto t = mesh_->triangle(f);
            best = std::min(best, (closest_on_triangle(s, t[0], t[1], t[2]) - s).norm());
          }
        }
    max_in = std::max(max_in, best);
  }
  EXPECT_LE(max_in, kVoxel);
}

TEST_F(SphereMesh, VerticesOnInterpolatedZeroCrossing) {
  for (const auto& v : mesh_->vertices) {
    const Vec3 g = v / kVoxel - Vec3::Constant(0.5);
    const Vec3i base(static_cast<int>(std::floor(g.x())), static_cast<int>(std::floor(g.y())),
                     static_cast<int>(std::floor(g.z())));
    const Vec3 t = g - base.cast<double>();
    double value = 0;
    for (int c = 0; c < 8; ++c) {
      const Vec3i o(c & 1, (c >> 1) & 1, (c >> 2) & 1);
      double w = 1;
      for (int a = 0; a < 3; ++a) w *= o[a] ? t[a] : 1 - t[a];
      if (w == 0) continue;
      const Voxel* vox = volume_->voxel(base + o);
      ASSERT_NE(vox, nullptr);
      value += w * vox->tsdf;
    }
    ASSERT_LE(std::abs(value), 1e-6 * kVoxel);
  }
}

TEST_F(SphereMesh, NormalsPointOutwardAndNoZeroArea) {
  for (std::size_t f = 0; f < mesh_->face_count(); ++f) {
    EXPECT_GT(mesh_->face_normals[f].dot(mesh_->centroid(f).normalized()), 0.5);
    EXPECT_GE(mesh_->area(f), 1e-12);
  }
}

TEST_F(SphereMesh, VerticesWelded) {
  std::set<std::array<long long, 3>> seen;
  for (const auto& v : mesh_->vertices) {
    const std::array<long long, 3> k{std::llround(v.x() * 1e7), std::llround(v.y() * 1e7), std::llround(v.z() * 1e7)};
    EXPECT_TRUE(seen.insert(k).second);
  }
}

TEST_F(SphereMesh, ManifoldAdjacencyDegreeAtMostThree) {
  const auto adj = build_adjacency(*mesh_);
  EXPECT_EQ(adj.edges.size(), mesh_->face_count() * 3 / 2);
  for (const auto& nb : adj.neighbors(mesh_->face_count())) EXPECT_LE(nb.size(), 3u);
}

TEST_F(SphereMesh, Deterministic) {
  const TriangleMesh again = extract_mesh(*volume_);
  EXPECT_EQ(again.faces, mesh_->faces);
  ASSERT_EQ(again.vertices.size(), mesh_->vertices.size());
  for (std::size_t i = 0; i < again.vertices.size(); ++i) EXPECT_EQ(again.vertices[i], mesh_->vertices[i]);
}

TEST(ExtractMesh, PlaneBandNormals) {
  const Vec3 n = Vec3(0.2, 0.1, 1.0).normalized();
  const double voxel = 0.05;
  const Sdf sdf = [&](const Vec3& p) { return n.dot(p) - 0.013; };
  const TsdfVolume vol = analytic_volume(voxel, Vec3(-1, -1, -0.5), Vec3(1, 1, 0.5), 4 * voxel, sdf);
  const TriangleMesh mesh = extract_mesh(vol);
  ASSERT_GT(mesh.face_count(), 500u);
  const double cos5 = std::cos(5.0 * M_PI / 180.0);
  for (const auto& fn : mesh.face_normals) EXPECT_GE(fn.dot(n), cos5);
}

TEST(ExtractMesh, LowWeightCellsSkipped) {
  const Sdf sdf = [](const Vec3& p) { return p.z() - 0.013; };
  const TsdfVolume vol = analytic_volume(0.05, Vec3(-1, -1, -0.5), Vec3(1, 1, 0.5), 0.2, sdf, 0.5f);
  EXPECT_EQ(extract_mesh(vol).face_count(), 0u);
  EXPECT_GT(extract_mesh(vol, 0.5).face_count(), 0u);
}

TEST(ExtractMesh, EmptyVolumeThrows) {
  TsdfVolume vol(VolumeConfig{});
  vol.get_or_allocate({0, 0, 0});
  try {
    extract_mesh(vol);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyVolume);
  }
}

TEST(ExtractMesh, IntegratedPlaneScan) {
  VolumeConfig cfg;
  cfg.voxel_size = 0.05;
  TsdfVolume vol(cfg);
  std::vector<Vec3> pts;
  for (double x = -1; x <= 1; x += 0.01)
    for (double y = -1; y <= 1; y += 0.01) pts.emplace_back(x, y, 0.3);
  for (int i = 0; i < 3; ++i) vol.integrate_scan(pts, Vec3(0, 0, 3));
  const TriangleMesh mesh = extract_mesh(vol);
  ASSERT_GT(mesh.face_count(), 100u);
  for (const auto& v : mesh.vertices) EXPECT_NEAR(v.z(), 0.3, 0.05);
}

// ---------------------------------------------------------------------------
// Adjacency
// ---------------------------------------------------------------------------

TEST(Adjacency, TwoTrianglesShareOneEdge) {
  TriangleMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 0)};
  m.faces = {{0, 1, 2}, {1, 3, 2}};
  const auto adj = build_adjacency(m);
  ASSERT_EQ(adj.edges.size(), 1u);
  EXPECT_EQ(adj.edges[0], std::make_pair(0, 1));
}

TEST(Adjacency, TetrahedronHasSixPairs) { EXPECT_EQ(build_adjacency(test::tetrahedron()).edges.size(), 6u); }

TEST(Adjacency, MatchesBruteForce) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    TriangleMesh m;
    const int nv = 6 + static_cast<int>(rng() % 20);
    for (int i = 0; i < nv; ++i) m.vertices.push_back(test::random_vec(rng, 0, 1));
    const int nf = 5 + static_cast<int>(rng() % 60);
    while (static_cast<int>(m.faces.size()) < nf) {
      const Face f{static_cast<int>(rng() % nv), static_cast<int>(rng() % nv), static_cast<int>(rng() % nv)};
      if (f[0] != f[1] && f[1] != f[2] && f[0] != f[2]) m.faces.push_back(f);
    }
    std::vector<std::pair<std::int32_t, std::int32_t>> oracle;
    for (int i = 0; i < nf; ++i)
      for (int j = i + 1; j < nf; ++j) {
        int shared = 0;
        for (auto u : m.faces[i])
          for (auto v : m.faces[j]) shared += u == v;
        if (shared == 2) oracle.emplace_back(i, j);
      }
    EXPECT_EQ(build_adjacency(m).edges, oracle);
  }
}

TEST(Adjacency, NeighborsAreSymmetric) {
  const auto m = test::tetrahedron();
  const auto nb = build_adjacency(m).neighbors(m.face_count());
  for (std::size_t f = 0; f < nb.size(); ++f) {
    EXPECT_EQ(nb[f].size(), 3u);
    for (auto g : nb[f]) {
      EXPECT_NE(std::find(nb[g].begin(), nb[g].end(), static_cast<std::int32_t>(f)), nb[g].end());
    }
  }
}

}  // namespace
}  // namespace atsdf
