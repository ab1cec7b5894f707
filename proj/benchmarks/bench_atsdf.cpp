#include <benchmark/benchmark.h>

#include <random>

#include "atsdf/mesher.hpp"
#include "atsdf/mrf.hpp"
#include "atsdf/synthbench.hpp"
#include "atsdf/visibility.hpp"
#include "atsdf/volume.hpp"

namespace atsdf {
namespace {

struct ScanFixture {
  SceneSpec scene = SceneSpec::benchmark();
  RigidPose pose = OrbitProtocol{}.sensor_poses().front();
  std::vector<Vec3> points;

  ScanFixture() {
    Aabb crop;
    crop.lo = Vec3(-6, -6, -1);
    crop.hi = Vec3(6, 6, 5);
    points = simulate_scan(scene, pose, BeamPattern::uniform(64), 1, crop);
  }
};

const ScanFixture& scan() {
  static const ScanFixture f;
  return f;
}

void BM_SimulateScan(benchmark::State& state) {
  const SceneSpec scene = SceneSpec::benchmark();
  const RigidPose pose = OrbitProtocol{}.sensor_poses().front();
  const BeamPattern pattern = BeamPattern::uniform(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(simulate_scan(scene, pose, pattern, 1));
}
BENCHMARK(BM_SimulateScan)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_IntegrateScan(benchmark::State& state) {
  const auto& f = scan();
  VolumeConfig cfg;
  cfg.voxel_size = state.range(0) / 1000.0;
  for (auto _ : state) {
    TsdfVolume vol(cfg);
    vol.integrate_scan(f.points, f.pose.translation());
    benchmark::DoNotOptimize(vol.block_count());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.points.size()));
}
BENCHMARK(BM_IntegrateScan)->Arg(25)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_ExtractMesh(benchmark::State& state) {
  const auto& f = scan();
  VolumeConfig cfg;
  TsdfVolume vol(cfg);
  vol.integrate_scan(f.points, f.pose.translation());
  for (auto _ : state) benchmark::DoNotOptimize(extract_mesh(vol));
}
BENCHMARK(BM_ExtractMesh)->Unit(benchmark::kMillisecond);

TriangleMesh bvh_mesh() {
  const std::vector<TriangleMesh> parts{make_sphere_mesh(Vec3(-2.5, 0, 2), 2, 60, 120),
                                        make_box_mesh(Vec3(3, 0, 0.5), Vec3(4, 2, 1), 20),
                                        make_grid_mesh(Vec3::Zero(), 12, 60)};
  return merge_meshes(parts);
}

void BM_BvhBuild(benchmark::State& state) {
  const TriangleMesh m = bvh_mesh();
  for (auto _ : state) benchmark::DoNotOptimize(Bvh(m));
  state.counters["faces"] = static_cast<double>(m.face_count());
}
BENCHMARK(BM_BvhBuild)->Unit(benchmark::kMillisecond);

void BM_BvhClosestHit(benchmark::State& state) {
  const TriangleMesh m = bvh_mesh();
  const Bvh bvh(m);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Ray> rays(4096);
  for (auto& r : rays) r = {Vec3(10 * u(rng), 10 * u(rng), 3 + u(rng)), Vec3(u(rng), u(rng), -1).normalized()};
  for (auto _ : state)
    for (const auto& r : rays) benchmark::DoNotOptimize(bvh.closest_hit(r, 0, 100));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rays.size()));
}
BENCHMARK(BM_BvhClosestHit);

void BM_SolveMrfGrid(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> cost(0, 1);
  MrfProblem p;
  for (int i = 0; i < n * n; ++i) {
    MrfNode node;
    for (int l = 0; l < 4; ++l) {
      node.labels.push_back(l);
      node.costs.push_back(cost(rng));
    }
    p.nodes.push_back(node);
    if (i % n + 1 < n) p.edges.emplace_back(i, i + 1);
    if (i + n < n * n) p.edges.emplace_back(i, i + n);
  }
  p.lambda = 0.3;
  for (auto _ : state) benchmark::DoNotOptimize(solve_mrf(p));
}
BENCHMARK(BM_SolveMrfGrid)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace atsdf

BENCHMARK_MAIN();
