#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "travgrid/eval.hpp"
#include "travgrid/labeling.hpp"
#include "travgrid/pipeline.hpp"
#include "travgrid/synthworld.hpp"
#include "travgrid/terrain.hpp"

using namespace travgrid;
using namespace travgrid::synth;

namespace {

SceneSpec flat_spec() {
  SceneSpec s;
  s.extent_x = 20.0;
  s.extent_y = 20.0;
  s.random_regions = 0;
  s.ground_amplitude = 0.0;
  s.noise_sigma = 0.0;
  return s;
}

std::vector<labeling::VehiclePose> straight_poses(double x0, double x1, double y) {
  std::vector<labeling::VehiclePose> out;
  for (int i = 0; x0 + 0.2 * i <= x1; ++i) {
    labeling::VehiclePose p;
    p.stamp = 0.1 * i;
    p.body_to_world.translation() = Eigen::Vector3d(x0 + 0.2 * i, y, 0.0);
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("all-ground noiseless scene is flat and traversable") {
  const Scene scene(flat_spec());
  for (double x = -9.5; x < 10; x += 1.3)
    for (double y = -9.5; y < 10; y += 1.7) {
      CHECK(scene.height(x, y) == 0.0);
      CHECK(scene.terrain_at(x, y) == TerrainClass::kGround);
    }
  const auto g = scene.world_geometry(0.2);
  const auto levels = pipeline::world_ground_truth(scene, g, eval::LevelMapping::defaults(), 3);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) CHECK(levels(r, c) == Level::kTraversable);
}

TEST_CASE("same seed gives an identical scene") {
  SceneSpec s;
  const Scene a(s), b(s);
  REQUIRE(a.regions().size() == b.regions().size());
  for (std::size_t i = 0; i < a.regions().size(); ++i) {
    CHECK(a.regions()[i].x0 == b.regions()[i].x0);
    CHECK(a.regions()[i].y1 == b.regions()[i].y1);
    CHECK(a.regions()[i].terrain == b.regions()[i].terrain);
  }
  for (double x = -50; x < 50; x += 3.1) CHECK(a.height(x, 7.3) == b.height(x, 7.3));
  s.seed = 43;
  const Scene c(s);
  bool differs = c.regions().size() != a.regions().size();
  for (std::size_t i = 0; !differs && i < a.regions().size(); ++i) differs = a.regions()[i].x0 != c.regions()[i].x0;
  CHECK(differs);
}

TEST_CASE("obstacle blocks rise at least the configured height") {
  auto s = flat_spec();
  s.ground_amplitude = 0.12;
  s.regions = {{TerrainClass::kObstacle, 2.0, 2.0, 6.0, 6.0}};
  const Scene scene(s);
  double inside = 0.0, ground = 0.0;
  int n = 0;
  for (double x = 2.05; x < 6; x += 0.1)
    for (double y = 2.05; y < 6; y += 0.1) {
      inside += scene.height(x, y);
      ground += scene.ground_height(x, y);
      ++n;
    }
  CHECK(inside / n - ground / n >= s.obstacle_height);
}

TEST_CASE("overlapping regions are rejected") {
  auto s = flat_spec();
  s.regions = {{TerrainClass::kBush, 0, 0, 3, 3}, {TerrainClass::kDitch, 2, 2, 5, 5}};
  CHECK_THROWS_AS(Scene{s}, SceneError);
  s.regions = {{TerrainClass::kBush, 0, 0, 3, 3}, {TerrainClass::kDitch, 3, 0, 5, 3}};
  CHECK_NOTHROW(Scene{s});
  s.noise_sigma = -0.1;
  CHECK_THROWS(Scene{s});
}

TEST_CASE("noiseless dense scans fuse to the surface") {
  auto s = flat_spec();
  s.ground_amplitude = 0.12;
  s.regions = {{TerrainClass::kBush, 2, -4, 6, 4}};
  s.scan_density = 200.0;
  const Scene scene(s);
  const auto poses = straight_poses(-3, -3, 0);
  const auto scans = simulate_scans(scene, poses);
  REQUIRE(scans.size() == 1);
  REQUIRE(!scans[0].points.empty());
  for (const auto& p : scans[0].points) CHECK(std::abs(p.z() - scene.height(p.x(), p.y())) < 1e-12);

  // Single-point cells: the fused mean is the surface height at that point.
  terrain::ElevationGrid grid(MapGeometry::centered(20.0, 0.2));
  terrain::fuse_points(grid, scans[0].points);
  for (const auto& p : scans[0].points) {
    const auto cell = grid.geometry().cell_of(p.x(), p.y());
    REQUIRE(cell);
    const auto& e = grid.at(cell->row, cell->col);
    if (e.count == 1) CHECK(std::abs(e.mean - scene.height(p.x(), p.y())) < 1e-6);
  }
}

TEST_CASE("zero density yields empty frames and repeated frames accumulate") {
  auto s = flat_spec();
  s.scan_density = 0.0;
  const auto poses = straight_poses(-2, 2, 0);
  const auto empty = simulate_scans(Scene(s), poses);
  REQUIRE(!empty.empty());
  for (const auto& f : empty) CHECK(f.points.empty());

  s.scan_density = 40.0;
  const Scene scene(s);
  const auto still = straight_poses(0, 0, 0);
  auto twice = still;
  twice.push_back(still[0]);
  twice.back().stamp = 0.5;
  const auto frames = simulate_scans(scene, twice);
  REQUIRE(frames.size() == 2);
  terrain::ElevationGrid one(MapGeometry::centered(20.0, 0.2)), two(MapGeometry::centered(20.0, 0.2));
  terrain::fuse_points(one, frames[0].points);
  terrain::fuse_points(two, frames[0].points);
  terrain::fuse_points(two, frames[1].points);
  std::size_t n1 = 0, n2 = 0;
  for (int r = 0; r < 100; ++r)
    for (int c = 0; c < 100; ++c) {
      n1 += one.at(r, c).count;
      n2 += two.at(r, c).count;
      CHECK(two.at(r, c).count >= one.at(r, c).count);
    }
  CHECK(n2 == frames[0].points.size() + frames[1].points.size());
  CHECK(n2 > n1);
}

TEST_CASE("planned footprint covers only traversable cells") {
  SceneSpec s;
  const Scene scene(s);
  const auto g = scene.world_geometry(0.2);
  const auto levels = pipeline::world_ground_truth(scene, g, eval::LevelMapping::defaults(), 3);
  TrajectoryParams tp;
  const auto poses = plan_trajectory(scene, g, levels, tp, 42);
  REQUIRE(poses.size() > 100);
  const double y = poses.front().body_to_world.translation().y();
  const auto fp = labeling::Footprint::rectangle(tp.footprint_length, tp.footprint_track);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    CHECK(poses[i].body_to_world.translation().y() == y);
    if (i > 0) CHECK(poses[i].stamp - poses[i - 1].stamp == doctest::Approx(0.1));
    if (i % 10 != 0) continue;
    labeling::Quad q;
    const auto ring = fp.ring();
    for (int k = 0; k < 4; ++k) q[k] = (poses[i].body_to_world * ring[k]).head<2>();
    for (const auto& cell : labeling::rasterize_footprint(q, g)) CHECK(levels(cell.row, cell.col) == Level::kTraversable);
  }
  const auto again = plan_trajectory(scene, g, levels, tp, 42);
  CHECK(again.back().body_to_world.translation() == poses.back().body_to_world.translation());
}

TEST_CASE("blocked world has no corridor") {
  auto s = flat_spec();
  s.regions = {{TerrainClass::kObstacle, -10, -10, 10, 10}};
  const Scene scene(s);
  const auto g = scene.world_geometry(0.2);
  const auto levels = pipeline::world_ground_truth(scene, g, eval::LevelMapping::defaults(), 3);
  TrajectoryParams tp;
  tp.x_start = -5;
  tp.x_end = 5;
  CHECK_THROWS_AS(plan_trajectory(scene, g, levels, tp, 1), SceneError);
}

TEST_CASE("scan file round-trips") {
  std::vector<ScanFrame> frames(2);
  frames[0].stamp = 0.5;
  frames[0].points = {{1, 2, 3}, {-0.25, 4e-9, 7}};
  frames[1].stamp = 1.0;
  const auto path = std::filesystem::temp_directory_path() / "travgrid_scans.tpts";
  write_scans(path, frames);
  const auto back = read_scans(path);
  std::filesystem::remove(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].stamp == 0.5);
  CHECK(back[0].points == frames[0].points);
  CHECK(back[1].points.empty());
}
