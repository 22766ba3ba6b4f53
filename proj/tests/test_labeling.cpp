#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>

#include <Eigen/Geometry>

#include "oracles.hpp"
#include "travgrid/labeling.hpp"

using namespace travgrid;
using namespace travgrid::labeling;

namespace {

VehiclePose pose(double t, Eigen::Vector3d translation, double yaw = 0.0) {
  VehiclePose p;
  p.stamp = t;
  p.body_to_world = Eigen::Isometry3d::Identity();
  p.body_to_world.rotate(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()));
  p.body_to_world.pretranslate(translation);
  return p;
}

MapGeometry square_map(int n, double r = 0.2) {
  MapGeometry g;
  g.resolution = r;
  g.width = g.height = n;
  return g;
}

terrain::FeatureMap known_map(const MapGeometry& g) {
  auto m = terrain::FeatureMap::empty(g);
  for (std::size_t i = 0; i < m.known.size(); ++i) m.known[i] = 1;
  return m;
}

}  // namespace

TEST_CASE("identity poses leave the footprint unchanged") {
  const auto fp = Footprint::rectangle(2.4, 2.0);
  const auto out = transform_footprint(fp, pose(0, {0, 0, 0}), pose(0, {0, 0, 0}));
  const auto ring = fp.ring();
  for (int i = 0; i < 4; ++i) CHECK((out[i] - ring[i]).norm() == 0.0);
}

TEST_CASE("translated past pose shifts the footprint") {
  Footprint fp{{2, 0, 0}, {2, 0, 0}, {2, 0, 0}, {2, 0, 0}};
  const auto out = transform_footprint(fp, pose(0, {1, 0, 0}), pose(1, {0, 0, 0}));
  CHECK((out[0] - Eigen::Vector3d(3, 0, 0)).norm() < 1e-12);
}

TEST_CASE("current pose yawed by 90 degrees rotates into its frame") {
  Footprint fp{{1, 0, 0}, {1, 0, 0}, {1, 0, 0}, {1, 0, 0}};
  const auto current = pose(0, {0, 0, 0}, std::numbers::pi / 2);
  const auto out = transform_footprint(fp, pose(0, {0, 0, 0}), current);
  // Matrix-product oracle.
  const Eigen::Vector3d expect =
      current.body_to_world.matrix().inverse().block<3, 3>(0, 0) * Eigen::Vector3d(1, 0, 0);
  CHECK((out[0] - Eigen::Vector3d(0, -1, 0)).norm() < 1e-12);
  CHECK((out[0] - expect).norm() < 1e-12);
}

TEST_CASE("transform with the same pose twice is the identity") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-5, 5);
  const auto fp = Footprint::rectangle(2.4, 2.0);
  for (int i = 0; i < 20; ++i) {
    const auto p = pose(0, {u(rng), u(rng), u(rng)}, u(rng));
    const auto out = transform_footprint(fp, p, p);
    for (int j = 0; j < 4; ++j) CHECK((out[j] - fp.ring()[j]).norm() < 1e-12);
  }
}

TEST_CASE("non-orthonormal rotation is rejected") {
  VehiclePose p;
  p.body_to_world.linear() << 2, 0, 0, 0, 1, 0, 0, 0, 1;
  CHECK_THROWS_AS(validate_pose(p), std::invalid_argument);
  VehiclePose mirror;
  mirror.body_to_world.linear() << -1, 0, 0, 0, 1, 0, 0, 0, 1;
  CHECK_THROWS_AS(validate_pose(mirror), std::invalid_argument);
  const auto fp = Footprint::rectangle(1, 1);
  CHECK_THROWS(transform_footprint(fp, p, pose(0, {0, 0, 0})));
}

TEST_CASE("aligned unit square covers 25 cells") {
  const auto g = square_map(10);
  const Quad q{Eigen::Vector2d(0, 0), {1, 0}, {1, 1}, {0, 1}};
  const auto cells = rasterize_footprint(q, g);
  CHECK(cells.size() == 25);
  const auto oracle = oracle::cells_inside(q, g);
  CHECK(std::set<CellIndex>(cells.begin(), cells.end()) == oracle);
}

TEST_CASE("degenerate quad rasterizes to nothing") {
  const auto g = square_map(10);
  const Quad q{Eigen::Vector2d(0.5, 0.5), {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}};
  CHECK(rasterize_footprint(q, g).empty());
  const Quad line{Eigen::Vector2d(0, 0.5), {1, 0.5}, {2, 0.5}, {0.5, 0.5}};
  CHECK(rasterize_footprint(line, g).empty());
}

TEST_CASE("random convex quads match the brute-force oracle") {
  std::mt19937_64 rng(5);
  const auto g = square_map(40);
  for (int i = 0; i < 100; ++i) {
    const auto q = oracle::random_convex_quad(rng, 8.0);
    const auto cells = rasterize_footprint(q, g);
    CHECK(std::set<CellIndex>(cells.begin(), cells.end()) == oracle::cells_inside(q, g));
  }
}

TEST_CASE("centers on shared edges are claimed exactly once") {
  // Two unit squares sharing the edge x = 0.5, which passes through centers.
  const auto g = square_map(10);
  const Quad left{Eigen::Vector2d(-0.5, 0.0), {0.5, 0.0}, {0.5, 1.0}, {-0.5, 1.0}};
  const Quad right{Eigen::Vector2d(0.5, 0.0), {1.5, 0.0}, {1.5, 1.0}, {0.5, 1.0}};
  const auto a = rasterize_footprint(left, g);
  const auto b = rasterize_footprint(right, g);
  std::set<CellIndex> sa(a.begin(), a.end());
  for (const auto& c : b) CHECK(sa.count(c) == 0);
}

TEST_CASE("straight traverse yields a band about one track wide") {
  const auto g = square_map(100);  // 20 m, origin at 0
  auto map = known_map(g);
  std::vector<VehiclePose> poses;
  for (int i = 0; i <= 100; ++i) poses.push_back(pose(i * 0.1, {2.0 + 0.16 * i, 10.0, 0}));
  const auto current = pose(5.0, {0, 0, 0});
  const auto ann = annotate_map(map, poses, current, Footprint::rectangle(2.4, 2.0));
  // Column through the middle of the traverse: 2.0 m track at 0.2 m -> 10 cells.
  int rows = 0;
  for (int r = 0; r < g.height; ++r) rows += ann.labels(r, 50) == CellLabel::kPositive;
  CHECK(rows == 10);
  for (int r = 0; r < g.height; ++r) {
    if (ann.labels(r, 50) == CellLabel::kPositive) CHECK(std::abs(g.center_y(r) - 10.0) < 1.0);
  }
}

TEST_CASE("empty pose list gives no positives") {
  const auto g = square_map(20);
  const auto ann = annotate_map(known_map(g), {}, pose(0, {0, 0, 0}), Footprint::rectangle(1, 1));
  CHECK(ann.warned_no_poses);
  for (std::size_t i = 0; i < ann.labels.size(); ++i) CHECK(ann.labels[i] == CellLabel::kUnlabeled);
}

TEST_CASE("overlapping footprints form a set union") {
  const auto g = square_map(30);
  const auto map = known_map(g);
  const auto fp = Footprint::rectangle(1.0, 1.0);
  const std::vector<VehiclePose> a = {pose(0.0, {2, 3, 0})};
  const std::vector<VehiclePose> b = {pose(0.1, {2.4, 3, 0})};
  const std::vector<VehiclePose> both = {a[0], b[0]};
  const auto cur = pose(0.0, {0, 0, 0});
  const auto la = annotate_map(map, a, cur, fp).labels;
  const auto lb = annotate_map(map, b, cur, fp).labels;
  const auto lu = annotate_map(map, both, cur, fp).labels;
  for (std::size_t i = 0; i < lu.size(); ++i) {
    const bool expect = la[i] == CellLabel::kPositive || lb[i] == CellLabel::kPositive;
    CHECK((lu[i] == CellLabel::kPositive) == expect);
  }
}

TEST_CASE("positive labels lie inside some transformed footprint") {
  const auto g = square_map(60);
  const auto map = known_map(g);
  const auto fp = Footprint::rectangle(2.4, 2.0);
  std::vector<VehiclePose> poses;
  for (int i = 0; i < 40; ++i) poses.push_back(pose(i * 0.1, {3 + 0.1 * i, 4 + 0.05 * i, 0}, 0.02 * i));
  const auto cur = pose(2.0, {1, 1, 0}, 0.1);
  const auto ann = annotate_map(map, poses, cur, fp);
  std::set<CellIndex> union_cells;
  for (const auto& p : poses) {
    const auto ring = transform_footprint(fp, p, cur);
    const Quad q{ring[0].head<2>(), ring[1].head<2>(), ring[2].head<2>(), ring[3].head<2>()};
    for (const auto& c : oracle::cells_inside(q, g)) union_cells.insert(c);
  }
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      if (ann.labels(r, c) == CellLabel::kPositive) CHECK(union_cells.count({r, c}) == 1);
    }
  }
}

TEST_CASE("token pseudo labels follow the center cell") {
  const auto g = square_map(22);
  const auto map = known_map(g);
  Grid<CellLabel> labels(22, 22, CellLabel::kUnlabeled);
  labels(5, 5) = CellLabel::kPositive;  // center of patch (0, 0)
  PatchLayout layout;
  layout.window = 2;
  const auto tokens = extract_tokens(map, labels, layout, 3);
  REQUIRE(tokens.size() == 4);
  CHECK(tokens[0].positive);
  CHECK(tokens[0].pseudo_label(4) == std::vector<float>{1, 0, 0, 0});
  CHECK(tokens[0].soft_label == std::vector<float>{1, 0, 0, 0});
  CHECK_FALSE(tokens[1].positive);
  CHECK(tokens[1].pseudo_label(4) == std::vector<float>{1, 1, 1, 1});
  CHECK(tokens[1].soft_label == std::vector<float>{0.25f, 0.25f, 0.25f, 0.25f});
  CHECK(tokens[0].id.frame == 3);
}

TEST_CASE("220-cell padded map gives 400 patches") {
  const auto g = square_map(220);
  const auto tokens = extract_tokens(known_map(g), Grid<CellLabel>(220, 220, CellLabel::kUnlabeled),
                                     PatchLayout{}, 0);
  CHECK(tokens.size() == 400);
  std::set<TokenId> ids;
  for (const auto& t : tokens) ids.insert(t.id);
  CHECK(ids.size() == 400);
  std::set<std::uint32_t> windows;
  for (const auto& t : tokens) windows.insert(t.id.window);
  CHECK(windows.size() == 4);
}

TEST_CASE("patches with unknown centers are dropped; maps below one patch are empty") {
  const auto g = square_map(22);
  auto map = known_map(g);
  map.known(5, 5) = 0;
  PatchLayout layout;
  layout.window = 2;
  CHECK(extract_tokens(map, Grid<CellLabel>(22, 22), layout, 0).size() == 3);
  const auto tiny = square_map(5);
  CHECK(extract_tokens(known_map(tiny), Grid<CellLabel>(5, 5), layout, 0).empty());
}

TEST_CASE("even patch size is rejected") {
  PatchLayout layout;
  layout.patch_size = 10;
  CHECK_THROWS(layout.validate());
}

TEST_CASE("token and pose files round-trip bit-exactly") {
  const auto g = square_map(22);
  auto map = known_map(g);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> n;
  for (auto& ch : map.channels) {
    for (std::size_t i = 0; i < ch.size(); ++i) ch[i] = n(rng);
  }
  Grid<CellLabel> labels(22, 22, CellLabel::kUnlabeled);
  labels(16, 5) = CellLabel::kPositive;
  PatchLayout layout;
  layout.window = 2;
  TokenDataset ds{layout, extract_tokens(map, labels, layout, 9)};
  ds.tokens[1].soft_label = {0.1f, 0.2f, 0.3f, 0.4f};
  const auto dir = std::filesystem::temp_directory_path();
  write_tokens(dir / "travgrid_rt.ttok", ds);
  const auto back = read_tokens(dir / "travgrid_rt.ttok");
  REQUIRE(back.tokens.size() == ds.tokens.size());
  CHECK(back.layout.patch_size == layout.patch_size);
  for (std::size_t i = 0; i < ds.tokens.size(); ++i) {
    CHECK(back.tokens[i].id == ds.tokens[i].id);
    CHECK(back.tokens[i].center == ds.tokens[i].center);
    CHECK(back.tokens[i].features == ds.tokens[i].features);
    CHECK(back.tokens[i].positive == ds.tokens[i].positive);
    CHECK(back.tokens[i].soft_label == ds.tokens[i].soft_label);
  }

  std::vector<VehiclePose> poses = {pose(0.1, {1.5, -2.25, 0.125}, 0.3), pose(0.2, {1.7, -2.0, 0.1}, -1.1)};
  write_poses_csv(dir / "travgrid_rt.csv", poses);
  const auto pb = read_poses_csv(dir / "travgrid_rt.csv");
  REQUIRE(pb.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(pb[i].stamp == poses[i].stamp);
    CHECK((pb[i].body_to_world.matrix() - poses[i].body_to_world.matrix()).norm() < 1e-12);
  }
  std::filesystem::remove(dir / "travgrid_rt.ttok");
  std::filesystem::remove(dir / "travgrid_rt.csv");
}
