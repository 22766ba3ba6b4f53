#include <doctest.h>

#include <cmath>
#include <random>

#include "travgrid/eval.hpp"

using namespace travgrid;
using namespace travgrid::eval;

namespace {

Grid<std::uint8_t> row_grid(std::initializer_list<int> v) {
  Grid<std::uint8_t> g(static_cast<int>(v.size()), 1);
  std::size_t i = 0;
  for (int x : v) g[i++] = static_cast<std::uint8_t>(x);
  return g;
}

Grid<Level> level_row(std::initializer_list<Level> v) {
  Grid<Level> g(static_cast<int>(v.size()), 1);
  std::size_t i = 0;
  for (Level x : v) g[i++] = x;
  return g;
}

terrain::FeatureMap flat_map(int n) {
  MapGeometry g;
  g.width = n;
  g.height = n;
  auto m = terrain::FeatureMap::empty(g);
  for (auto& k : m.known.data()) k = 1;
  return m;
}

constexpr Level T = Level::kTraversable;
constexpr Level R = Level::kRisky;
constexpr Level N = Level::kNonTraversable;

}  // namespace

TEST_CASE("ground truth grouping") {
  SemanticGrid s;
  s.geometry.width = 4;
  s.geometry.height = 1;
  s.vocabulary = {"grass", "bush", "tree"};
  s.samples = {{0, 0, 0}, {1, 1}, {0, 2}, {}};
  const auto gt = build_ground_truth(s, LevelMapping::defaults());
  CHECK(gt[0] == T);
  CHECK(gt[1] == R);
  CHECK(gt[2] == N);
  CHECK(gt[3] == Level::kUnknown);

  s.vocabulary.push_back("lava");
  s.samples[3] = {3};
  try {
    (void)build_ground_truth(s, LevelMapping::defaults());
    FAIL("expected UnmappedLabel");
  } catch (const UnmappedLabel& e) {
    CHECK(std::string(e.what()).find("lava") != std::string::npos);
  }
}

TEST_CASE("two-level toy score") {
  const auto s = match_and_score(row_grid({1, 1, 2, 1}), level_row({T, T, R, R}), 2);
  CHECK(s.mapping == std::vector<Level>{T, R});
  CHECK(s.pa == doctest::Approx(0.75));
  CHECK(s.iou[0] == doctest::Approx(2.0 / 3.0));
  CHECK(s.iou[1] == doctest::Approx(0.5));
  CHECK(s.miou == doctest::Approx((2.0 / 3.0 + 0.5) / 2.0));
  CHECK(s.miou == doctest::Approx(0.5833).epsilon(1e-3));
}

TEST_CASE("constant prediction over balanced levels") {
  const auto s = match_and_score(row_grid({1, 1, 1, 1, 1, 1}), level_row({T, T, R, R, N, N}), 4);
  CHECK(s.pa == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("perfect prediction under identity") {
  const auto s = match_and_score(row_grid({1, 2, 3, 3, 1}), level_row({T, R, N, N, T}), 3);
  CHECK(s.pa == 1.0);
  CHECK(s.miou == 1.0);
}

TEST_CASE("unknown cells are skipped and misaligned grids rejected") {
  const auto s = match_and_score(row_grid({1, 0, 2, 2}), level_row({T, T, Level::kUnknown, R}), 2);
  CHECK(s.cells == 2);
  CHECK(s.pa == 1.0);
  CHECK_THROWS(match_and_score(row_grid({1, 2}), level_row({T, R, N}), 2));
}

TEST_CASE("scores are invariant to relabeling classes 2..K") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> cls(1, 4), lvl(1, 3);
  Grid<std::uint8_t> pred(30, 20);
  Grid<Level> gt(30, 20);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred[i] = static_cast<std::uint8_t>(cls(rng));
    gt[i] = static_cast<Level>(lvl(rng));
  }
  const std::array<int, 5> perm = {0, 1, 4, 2, 3};
  auto relabeled = pred;
  for (auto& v : relabeled.data()) v = static_cast<std::uint8_t>(perm[v]);
  const auto a = match_and_score(pred, gt, 4);
  const auto b = match_and_score(relabeled, gt, 4);
  CHECK(a.pa == b.pa);
  CHECK(a.miou == b.miou);
  CHECK(a.pa >= 0.0);
  CHECK(a.miou <= 1.0);
}

TEST_CASE("accumulated frames equal one concatenated frame") {
  ScoreAccumulator acc(2);
  acc.add(row_grid({1, 1}), level_row({T, T}));
  acc.add(row_grid({2, 1}), level_row({R, R}));
  const auto joint = match_and_score(row_grid({1, 1, 2, 1}), level_row({T, T, R, R}), 2);
  CHECK(acc.score().pa == joint.pa);
  CHECK(acc.score().miou == joint.miou);
}

TEST_CASE("rule baseline") {
  auto m = flat_map(5);
  const RuleThresholds t;
  auto out = rule_baseline(m, t);
  for (auto v : out.data()) CHECK(v == static_cast<std::uint8_t>(T));
  m.channels[terrain::kNormalAngle](2, 3) = static_cast<float>(t.normal_angle_hard + 0.1);
  m.channels[terrain::kElevationRange](1, 1) = static_cast<float>(t.elevation_range + 0.05);
  m.known(4, 4) = 0;
  out = rule_baseline(m, t);
  CHECK(out(2, 3) == static_cast<std::uint8_t>(N));
  CHECK(out(1, 1) == static_cast<std::uint8_t>(R));
  CHECK(out(4, 4) == 0);
  CHECK(out(0, 0) == static_cast<std::uint8_t>(T));
}

TEST_CASE("projection of separated clusters") {
  std::mt19937_64 rng(9);
  std::normal_distribution<float> g(0.0f, 0.05f);
  std::vector<float> e;
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) {
    const int c = i % 2;
    const float x = (c == 0 ? 1.0f : 0.0f) + g(rng);
    const float y = (c == 1 ? 1.0f : 0.0f) + g(rng);
    e.insert(e.end(), {x, y, 0.0f});
    labels.push_back(c);
  }
  const auto p = project_embeddings(e, 3, labels, 2);
  REQUIRE(p.silhouette);
  CHECK(*p.silhouette > 0.5);
}

TEST_CASE("identical embeddings have no silhouette") {
  std::vector<float> e(10 * 4, 0.5f);
  std::vector<int> labels = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  const auto p = project_embeddings(e, 4, labels, 2);
  CHECK_FALSE(p.silhouette);
  for (const auto& c : p.coords) CHECK(c.norm() == 0.0);
  CHECK_THROWS(project_embeddings(std::vector<float>(2 * 4, 0.5f), 4, {0, 1}, 2));
}

TEST_CASE("projected unit vectors stay within the centered bound") {
  std::mt19937_64 rng(10);
  std::normal_distribution<float> g;
  std::vector<float> e;
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) {
    std::vector<float> v(8);
    float n = 0.0f;
    for (auto& x : v) {
      x = g(rng) + (i % 3 == 0 ? 2.0f : 0.0f);
      n += x * x;
    }
    for (auto& x : v) e.push_back(x / std::sqrt(n));
    labels.push_back(i % 3);
  }
  const auto p = project_embeddings(e, 8, labels, 3);
  // Centered coordinates of unit vectors satisfy |p| <= |x - mean| <= 2.
  for (const auto& c : p.coords) CHECK(c.norm() <= 2.0 + 1e-9);
}
