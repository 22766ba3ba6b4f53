#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "travgrid/grid.hpp"
#include "travgrid/labeling.hpp"
#include "travgrid/synthworld.hpp"
#include "travgrid/terrain.hpp"

namespace travgrid::eval {

using synth::Level;
inline constexpr int kLevels = 3;

const char* level_name(Level level);  // "traversable", "risky", "non-traversable"

struct UnmappedLabel : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Semantic label -> traversability level table.
struct LevelMapping {
  std::map<std::string, Level> table;

  static LevelMapping defaults();
  Level level(const std::string& label) const;  // throws UnmappedLabel
};

// Semantic labels of the points falling in each cell, as vocabulary ids.
struct SemanticGrid {
  MapGeometry geometry;
  std::vector<std::string> vocabulary;
  std::vector<std::vector<std::uint16_t>> samples;  // per cell, row-major
};

// sub x sub evenly spaced samples per cell, taken from the scene at
// map_to_world * (x, y, 0). Samples outside the scene are skipped.
SemanticGrid sample_semantics(const synth::Scene& scene, const MapGeometry& geometry,
                              const Eigen::Isometry3d& map_to_world, int sub = 3);

// Traversable when every sample maps to traversable, risky when every sample
// maps to risky, otherwise non-traversable; cells without samples unknown.
Grid<Level> build_ground_truth(const SemanticGrid& semantics, const LevelMapping& mapping);

// Rows predicted class (1..K), columns GT level.
struct ClassLevelCounts {
  int classes = 0;
  std::vector<std::array<std::uint64_t, kLevels>> counts;
};

using ConfusionMatrix = std::array<std::array<std::uint64_t, kLevels>, kLevels>;  // [pred][gt]

struct Score {
  double pa = 0.0;
  double miou = 0.0;
  std::array<double, kLevels> iou{};
  std::array<bool, kLevels> level_present{};
  std::vector<Level> mapping;  // mapping[k] for predicted class k+1
  ClassLevelCounts overlap;
  ConfusionMatrix confusion{};
  std::uint64_t cells = 0;
};

// `predicted` holds classes 1..K with 0 = unknown. Cells unknown on either
// side are skipped. Class 1 is pinned to traversable; every other class goes
// to its maximum-overlap level (ties to the lower level). mIoU averages the
// levels present in prediction or ground truth. Throws on shape mismatch.
Score match_and_score(const Grid<std::uint8_t>& predicted, const Grid<Level>& truth, int classes);

// Accumulates several frames into one score.
class ScoreAccumulator {
 public:
  explicit ScoreAccumulator(int classes);
  void add(const Grid<std::uint8_t>& predicted, const Grid<Level>& truth);
  Score score() const;
  const ClassLevelCounts& counts() const { return counts_; }

 private:
  int classes_;
  ClassLevelCounts counts_;
};

Score score_from_counts(const ClassLevelCounts& counts);
// Scores under a fixed class -> level mapping (e.g. identity for level grids).
Score score_with_mapping(const ClassLevelCounts& counts, std::vector<Level> mapping);

// Per-patch classes broadcast over the patch's M x M cells, restricted to
// known map cells. `classes` are 0-based, one per token.
Grid<std::uint8_t> paint_patches(const terrain::FeatureMap& map,
                                 const std::vector<labeling::PatchToken>& tokens,
                                 const std::vector<int>& classes, int patch_size);

struct RuleThresholds {
  // Soft limits: all under => traversable.
  double elevation_range = 0.15;
  double normal_angle = 0.2;
  double concavity = 0.1;
  // Hard limits: any over => non-traversable.
  double elevation_range_hard = 0.6;
  double normal_angle_hard = 0.7;
  double concavity_hard = 0.5;
};

// Soft limits set to the 95th percentile of delta z, theta_n and |theta_c| over
// positive cells; hard limits keep their defaults. Returns the defaults when
// no positive cell is known.
RuleThresholds calibrate_thresholds(const std::vector<terrain::FeatureMap>& maps,
                                    const std::vector<Grid<labeling::CellLabel>>& labels,
                                    RuleThresholds base = {});

// Level grid (1..3, 0 unknown) from thresholded features.
Grid<std::uint8_t> rule_baseline(const terrain::FeatureMap& map, const RuleThresholds& t);

struct Projection {
  std::vector<Eigen::Vector2d> coords;
  Eigen::Vector2d explained_variance = Eigen::Vector2d::Zero();
  std::optional<double> silhouette;  // empty when undefined
};

// Top-2 principal components of the rows of `embeddings` (N x D row-major)
// and the silhouette score of the projected points under `labels`. Throws
// when fewer than classes + 1 embeddings are given.
Projection project_embeddings(const std::vector<float>& embeddings, int dim,
                              const std::vector<int>& labels, int classes,
                              std::size_t max_silhouette_points = 2000);

// Mean silhouette over points; empty when fewer than two labels occur or all
// points coincide.
std::optional<double> silhouette(const std::vector<Eigen::Vector2d>& points,
                                 const std::vector<int>& labels);

void write_score_header(std::ostream& os);
void write_score_row(std::ostream& os, const std::string& name, const Score& s);
// Human-readable class -> level table with overlap counts.
void write_mapping_report(std::ostream& os, const Score& s);

}  // namespace travgrid::eval
