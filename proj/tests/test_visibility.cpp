#include <gtest/gtest.h>

#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "atsdf/raster.hpp"
#include "atsdf/synthbench.hpp"
#include "atsdf/visibility.hpp"
#include "test_util.hpp"

namespace atsdf {
namespace {

TriangleMesh single_face(double z) {
  TriangleMesh m;
  m.vertices = {Vec3(-0.5, -0.5, z), Vec3(0.5, -0.5, z), Vec3(0, 1.0, z)};
  // Normal toward -z, i.e. toward a camera at the origin looking down +z.
  m.faces = {{0, 2, 1}};
  m.compute_normals();
  return m;
}

TriangleMesh two_box_scene() {
  const std::vector<TriangleMesh> parts{make_box_mesh(Vec3(-1.5, 0, 1), Vec3(2, 2, 2), 8),
                                        make_box_mesh(Vec3(2, 1, 0.75), Vec3(1.5, 3, 1.5), 8),
                                        make_grid_mesh(Vec3(0, 0, 0), 12, 24)};
  return merge_meshes(parts);
}

TEST(Bvh, SingleFaceIsOneLeaf) {
  const auto m = single_face(1);
  const Bvh bvh(m);
  ASSERT_EQ(bvh.nodes().size(), 1u);
  EXPECT_TRUE(bvh.nodes()[0].leaf());
  const Aabb box = bvh.face_box(0);
  EXPECT_EQ(bvh.nodes()[0].box.lo, box.lo);
  EXPECT_EQ(bvh.nodes()[0].box.hi, box.hi);
  EXPECT_TRUE(box.contains(Aabb{Vec3(-0.5, -0.5, 1), Vec3(0.5, 1.0, 1)}));
  EXPECT_LT((box.hi - box.lo - Vec3(1, 1.5, 0)).norm(), 1e-6);
}

TEST(Bvh, RayThroughTetrahedronHitsTwoFaces) {
  const auto m = test::tetrahedron();
  const Bvh bvh(m);
  const Vec3 center(0.25, 0.25, 0.25);
  const Ray ray{Vec3(-1, -0.5, -0.7), (center - Vec3(-1, -0.5, -0.7)).normalized()};
  EXPECT_EQ(bvh.intersect_all(ray, 0, 100).size(), 2u);
}

TEST(Bvh, StructureInvariants) {
  const auto m = two_box_scene();
  const Bvh bvh(m);
  EXPECT_LE(bvh.depth(), Bvh::kMaxDepth);
  std::vector<int> seen(m.face_count(), 0);
  const auto nodes = bvh.nodes();
  for (const auto& n : nodes) {
    if (n.leaf()) {
      for (int i = 0; i < n.count; ++i) {
        const auto f = bvh.face_order()[static_cast<std::size_t>(n.first + i)];
        ++seen[static_cast<std::size_t>(f)];
        EXPECT_TRUE(n.box.contains(bvh.face_box(f)));
      }
    } else {
      EXPECT_TRUE(n.box.contains(nodes[static_cast<std::size_t>(n.first)].box));
      EXPECT_TRUE(n.box.contains(nodes[static_cast<std::size_t>(n.first + 1)].box));
    }
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Bvh, MatchesLinearScanExactly) {
  std::vector<TriangleMesh> parts{make_sphere_mesh(Vec3(0, 0, 0), 1.0, 40, 60),
                                  make_box_mesh(Vec3(0.5, 0.2, 0.1), Vec3(1.2, 0.8, 1.5), 6)};
  for (int i = 0; i < 2; ++i) parts.push_back(make_grid_mesh(Vec3(0, 0, -1.0 + i * 0.5), 3, 12));
  const auto m = merge_meshes(parts);
  ASSERT_GE(m.face_count(), 5000u);
  const Bvh bvh(m);
  std::mt19937_64 rng(41);
  int with_hits = 0;
  for (int i = 0; i < 10000; ++i) {
    const Vec3 o = test::random_vec(rng, -3, 3);
    const Vec3 target = test::random_vec(rng, -1, 1);
    const Ray ray{o, (target - o).normalized()};
    const auto a = bvh.intersect_all(ray, 0, 100);
    const auto b = intersect_all_linear(m, ray, 0, 100);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      ASSERT_EQ(a[k].face, b[k].face);
      ASSERT_EQ(a[k].t, b[k].t);
    }
    if (!b.empty()) {
      ++with_hits;
      const auto closest = bvh.closest_hit(ray, 0, 100);
      ASSERT_TRUE(closest);
      double best = std::numeric_limits<double>::infinity();
      for (const auto& h : b) best = std::min(best, h.t);
      EXPECT_EQ(closest->t, best);
      EXPECT_TRUE(bvh.occluded(ray, 0, 100));
    } else {
      EXPECT_FALSE(bvh.occluded(ray, 0, 100));
    }
  }
  EXPECT_GT(with_hits, 3000);
}

TEST(Visibility, HeadOnSingleFace) {
  const auto m = single_face(2);
  const Bvh bvh(m);
  const std::vector<CameraFrame> cams{test::make_camera(200, 200, 100, RigidPose(), 1)};
  const auto table = compute_visibility(m, bvh, cams);
  ASSERT_EQ(table.faces.size(), 1u);
  ASSERT_EQ(table.faces[0].size(), 1u);
  EXPECT_NEAR(table.faces[0][0].cos_incidence, 1.0, 1e-12);
  // 0.75 m^2 at 2 m depth with f = 100: 1875 px^2.
  EXPECT_NEAR(table.faces[0][0].area_px, 1875.0, 1e-6);
}

TEST(Visibility, BackFacingAndOutOfImageRejected) {
  auto m = single_face(2);
  std::swap(m.faces[0][1], m.faces[0][2]);
  m.compute_normals();
  const std::vector<CameraFrame> cams{test::make_camera(200, 200, 100, RigidPose(), 1)};
  EXPECT_TRUE(compute_visibility(m, Bvh(m), cams).faces[0].empty());
  const auto far = single_face(0.3);
  EXPECT_TRUE(compute_visibility(far, Bvh(far), cams).faces[0].empty());
}

TEST(Visibility, OccluderHidesFace) {
  const std::vector<TriangleMesh> parts{single_face(3), single_face(2)};
  const auto m = merge_meshes(parts);
  const std::vector<CameraFrame> cams{test::make_camera(400, 400, 100, RigidPose(), 1)};
  const auto table = compute_visibility(m, Bvh(m), cams);
  EXPECT_TRUE(table.faces[0].empty());
  EXPECT_EQ(table.faces[1].size(), 1u);
}

TEST(Visibility, AgreesWithZBufferOracle) {
  const auto m = two_box_scene();
  OrbitProtocol orbit;
  orbit.radius = 8;
  orbit.height = 2.3;
  const auto specs = orbit_cameras(orbit, 8, 480, 360, 70, Vec3(0, 0, 0.5));
  const auto cams = test::cameras_from(specs);
  const auto table = compute_visibility(m, Bvh(m), cams);
  const auto oracle = test::zbuffer_visibility(m, cams, 0.05);
  std::size_t agree = 0, total = 0, visible = 0;
  for (std::size_t f = 0; f < m.face_count(); ++f) {
    std::set<int> got;
    for (const auto& v : table.faces[f]) got.insert(v.frame_id);
    visible += got.size();
    for (const auto& cam : cams) {
      ++total;
      agree += got.count(cam.frame_id) == oracle[f].count(cam.frame_id);
    }
  }
  EXPECT_GT(visible, total / 10);
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(total), 0.995) << agree << "/" << total;
}

TEST(Visibility, DeletingAFaceNeverHidesAnother) {
  const auto m = two_box_scene();
  OrbitProtocol orbit;
  orbit.radius = 8;
  const auto cams = test::cameras_from(orbit_cameras(orbit, 4, 320, 240, 70, Vec3(0, 0, 0.5)));
  const auto before = compute_visibility(m, Bvh(m), cams);
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t removed = rng() % m.face_count();
    TriangleMesh cut = m;
    cut.faces.erase(cut.faces.begin() + static_cast<std::ptrdiff_t>(removed));
    cut.compute_normals();
    const auto after = compute_visibility(cut, Bvh(cut), cams);
    for (std::size_t f = 0; f < cut.face_count(); ++f) {
      const std::size_t orig = f < removed ? f : f + 1;
      std::set<int> now;
      for (const auto& v : after.faces[f]) now.insert(v.frame_id);
      for (const auto& v : before.faces[orig]) EXPECT_TRUE(now.count(v.frame_id));
    }
  }
}

TEST(Visibility, DeterministicAndCsvRoundTrip) {
  const auto m = two_box_scene();
  OrbitProtocol orbit;
  orbit.radius = 8;
  const auto cams = test::cameras_from(orbit_cameras(orbit, 4, 320, 240, 70, Vec3(0, 0, 0.5)));
  const Bvh bvh(m);
  const auto a = compute_visibility(m, bvh, cams);
  const auto b = compute_visibility(m, bvh, cams);
  std::ostringstream sa, sb;
  a.write_csv(sa);
  b.write_csv(sb);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(sa.str().substr(0, 27), "face_id,frame_id,area_px2,c");

  std::istringstream in(sa.str());
  const auto back = VisibilityTable::read_csv(in, m.face_count());
  ASSERT_EQ(back.faces.size(), a.faces.size());
  EXPECT_EQ(back.visible_pairs(), a.visible_pairs());
  for (std::size_t f = 0; f < a.faces.size(); ++f) {
    ASSERT_EQ(back.faces[f].size(), a.faces[f].size());
    for (std::size_t k = 0; k < a.faces[f].size(); ++k) {
      EXPECT_EQ(back.faces[f][k].frame_id, a.faces[f][k].frame_id);
      EXPECT_EQ(back.faces[f][k].area_px, a.faces[f][k].area_px);
      EXPECT_EQ(back.faces[f][k].cos_incidence, a.faces[f][k].cos_incidence);
    }
  }

  std::istringstream bad("face_id,frame_id,area_px2,cos\n0,1,abc,0.5\n");
  EXPECT_THROW(VisibilityTable::read_csv(bad, m.face_count()), Error);
}

}  // namespace
}  // namespace atsdf
