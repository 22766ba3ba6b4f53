#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "travgrid/grid.hpp"

namespace travgrid::terrain {

inline constexpr double kVarianceFloor = 1e-4;

// Running Gaussian elevation statistics of one grid cell (Welford moments
// plus observed extremes).
struct ElevationCell {
  std::uint32_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;
  double z_min = std::numeric_limits<double>::infinity();
  double z_max = -std::numeric_limits<double>::infinity();

  bool observed() const { return count > 0; }

  // Population variance; a single sample reports the floor instead of 0.
  double variance() const {
    if (count == 0) return 0.0;
    if (count < 2) return kVarianceFloor;
    return m2 / count;
  }

  void add(double z);
  // Combines two independent summaries (parallel-moment merge).
  void merge(const ElevationCell& other);
};

struct FuseReport {
  std::size_t accepted = 0;
  std::size_t out_of_bounds = 0;
};

class ElevationGrid {
 public:
  ElevationGrid() = default;
  explicit ElevationGrid(const MapGeometry& geometry)
      : geometry_(geometry), cells_(geometry.width, geometry.height) {}

  const MapGeometry& geometry() const { return geometry_; }
  ElevationCell& at(int row, int col) { return cells_(row, col); }
  const ElevationCell& at(int row, int col) const { return cells_(row, col); }
  const Grid<ElevationCell>& cells() const { return cells_; }

  std::size_t observed_count() const;

 private:
  MapGeometry geometry_;
  Grid<ElevationCell> cells_;
};

// Points must already be expressed in the grid's frame.
FuseReport fuse_points(ElevationGrid& grid, std::span<const Eigen::Vector3d> points);

struct InferenceParams {
  double kernel_length = 0.6;   // support radius of the sparse kernel, m
  double range_sigma = 0.3;     // bilateral elevation bandwidth, m
  double prior_variance = 0.01; // added as beta / sum(w), m^2
};

// Compactly supported sparse kernel; zero for d >= length.
double sparse_kernel(double d, double length);

struct DenseElevation {
  Grid<double> mean;
  Grid<double> variance;
  Grid<std::uint8_t> supported;
};

DenseElevation infer_dense(const ElevationGrid& grid, const InferenceParams& params = {});

enum Channel : int {
  kObservedMean = 0,
  kObservedVariance,
  kPredictedMean,
  kPredictedVariance,
  kElevationRange,
  kNormalAngle,
  kConcavityAngle,
  kChannelCount
};

const char* channel_name(int channel);

struct FeatureMap {
  MapGeometry geometry;
  std::array<Grid<float>, kChannelCount> channels;
  Grid<std::uint8_t> known;
  Grid<std::uint8_t> observed;

  static FeatureMap empty(const MapGeometry& geometry);
  std::size_t known_count() const;
};

FeatureMap compute_features(const ElevationGrid& grid, const DenseElevation& dense,
                            int threads = 1);

// Convenience: infer_dense followed by compute_features.
FeatureMap build_feature_map(const ElevationGrid& grid, const InferenceParams& params = {},
                             int threads = 1);

// Bird's-eye-view map: per-cell observed statistics only. Inferred channels
// stay zero and exactly the observed cells are known.
FeatureMap build_bev_map(const ElevationGrid& grid);

}  // namespace travgrid::terrain
