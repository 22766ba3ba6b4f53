#include "travgrid/terrain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "travgrid/threads.hpp"

namespace travgrid::terrain {

void ElevationCell::add(double z) {
  ++count;
  const double delta = z - mean;
  mean += delta / count;
  m2 += delta * (z - mean);
  z_min = std::min(z_min, z);
  z_max = std::max(z_max, z);
}

void ElevationCell::merge(const ElevationCell& other) {
  if (other.count == 0) return;
  if (count == 0) {
    *this = other;
    return;
  }
  const double n_a = count;
  const double n_b = other.count;
  const double n = n_a + n_b;
  const double delta = other.mean - mean;
  mean += delta * n_b / n;
  m2 += other.m2 + delta * delta * n_a * n_b / n;
  count += other.count;
  z_min = std::min(z_min, other.z_min);
  z_max = std::max(z_max, other.z_max);
}

std::size_t ElevationGrid::observed_count() const {
  return static_cast<std::size_t>(std::count_if(
      cells_.data().begin(), cells_.data().end(), [](const auto& c) { return c.observed(); }));
}

FuseReport fuse_points(ElevationGrid& grid, std::span<const Eigen::Vector3d> points) {
  FuseReport report;
  const auto& geo = grid.geometry();
  for (const auto& p : points) {
    const auto cell = geo.cell_of(p.x(), p.y());
    if (!cell) {
      ++report.out_of_bounds;
      continue;
    }
    grid.at(cell->row, cell->col).add(p.z());
    ++report.accepted;
  }
  return report;
}

double sparse_kernel(double d, double length) {
  if (d >= length) return 0.0;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double u = d / length;
  return (2.0 + std::cos(two_pi * u)) * (1.0 - u) / 3.0 + std::sin(two_pi * u) / two_pi;
}

namespace {

struct KernelTap {
  int dr;
  int dc;
  double weight;
};

std::vector<KernelTap> kernel_taps(double resolution, double length) {
  std::vector<KernelTap> taps;
  const int reach = static_cast<int>(std::ceil(length / resolution));
  for (int dr = -reach; dr <= reach; ++dr) {
    for (int dc = -reach; dc <= reach; ++dc) {
      const double d = resolution * std::sqrt(static_cast<double>(dr * dr + dc * dc));
      const double k = sparse_kernel(d, length);
      if (k > 0.0) taps.push_back({dr, dc, k});
    }
  }
  return taps;
}

}  // namespace

DenseElevation infer_dense(const ElevationGrid& grid, const InferenceParams& params) {
  const auto& geo = grid.geometry();
  DenseElevation out{Grid<double>(geo.width, geo.height, 0.0),
                     Grid<double>(geo.width, geo.height, 0.0),
                     Grid<std::uint8_t>(geo.width, geo.height, 0)};
  const auto taps = kernel_taps(geo.resolution, params.kernel_length);
  const double inv_two_sr2 = 1.0 / (2.0 * params.range_sigma * params.range_sigma);

  for (int row = 0; row < geo.height; ++row) {
    for (int col = 0; col < geo.width; ++col) {
      // first pass: plain kernel-weighted mean
      double k_sum = 0.0;
      double k_mean = 0.0;
      for (const auto& t : taps) {
        const int r = row + t.dr;
        const int c = col + t.dc;
        if (!geo.contains(r, c)) continue;
        const auto& cell = grid.at(r, c);
        if (!cell.observed()) continue;
        k_sum += t.weight;
        k_mean += t.weight * cell.mean;
      }
      if (k_sum <= 0.0) continue;
      k_mean /= k_sum;

      // second pass: bilateral weights around the first-pass mean
      double w_sum = 0.0;
      double mu = 0.0;
      for (const auto& t : taps) {
        const int r = row + t.dr;
        const int c = col + t.dc;
        if (!geo.contains(r, c)) continue;
        const auto& cell = grid.at(r, c);
        if (!cell.observed()) continue;
        const double dz = cell.mean - k_mean;
        const double w = t.weight * std::exp(-dz * dz * inv_two_sr2);
        w_sum += w;
        mu += w * cell.mean;
      }
      if (w_sum <= 0.0) continue;
      mu /= w_sum;

      double var = 0.0;
      for (const auto& t : taps) {
        const int r = row + t.dr;
        const int c = col + t.dc;
        if (!geo.contains(r, c)) continue;
        const auto& cell = grid.at(r, c);
        if (!cell.observed()) continue;
        const double dz = cell.mean - k_mean;
        const double w = t.weight * std::exp(-dz * dz * inv_two_sr2);
        const double dev = cell.mean - mu;
        var += w * (cell.variance() + dev * dev);
      }
      out.mean(row, col) = mu;
      out.variance(row, col) = var / w_sum + params.prior_variance / w_sum;
      out.supported(row, col) = 1;
    }
  }
  return out;
}

const char* channel_name(int channel) {
  switch (channel) {
    case kObservedMean: return "observed_mean";
    case kObservedVariance: return "observed_variance";
    case kPredictedMean: return "predicted_mean";
    case kPredictedVariance: return "predicted_variance";
    case kElevationRange: return "elevation_range";
    case kNormalAngle: return "normal_angle";
    case kConcavityAngle: return "concavity_angle";
    default: return "unknown";
  }
}

FeatureMap FeatureMap::empty(const MapGeometry& geometry) {
  FeatureMap map;
  map.geometry = geometry;
  for (auto& ch : map.channels) ch = Grid<float>(geometry.width, geometry.height, 0.0f);
  map.known = Grid<std::uint8_t>(geometry.width, geometry.height, 0);
  map.observed = Grid<std::uint8_t>(geometry.width, geometry.height, 0);
  return map;
}

std::size_t FeatureMap::known_count() const {
  return static_cast<std::size_t>(std::count(known.data().begin(), known.data().end(), 1));
}

namespace {

struct LocalShape {
  bool valid = false;
  double normal_angle = 0.0;
  double concavity = 0.0;
};

LocalShape local_shape(const MapGeometry& geo, const DenseElevation& dense, int row, int col) {
  LocalShape shape;
  if (!dense.supported(row, col)) return shape;

  // Least-squares plane z = a*dx + b*dy + c over the supported 3x3 neighborhood.
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atb = Eigen::Vector3d::Zero();
  int n = 0;
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc) {
      const int r = row + dr;
      const int c = col + dc;
      if (!geo.contains(r, c) || !dense.supported(r, c)) continue;
      const Eigen::Vector3d a(dc * geo.resolution, dr * geo.resolution, 1.0);
      ata += a * a.transpose();
      atb += a * dense.mean(r, c);
      ++n;
    }
  }
  if (n < 3) return shape;
  Eigen::FullPivLU<Eigen::Matrix3d> lu(ata);
  if (lu.rank() < 3) return shape;
  const Eigen::Vector3d plane = lu.solve(atb);

  const Eigen::Vector3d normal = Eigen::Vector3d(-plane.x(), -plane.y(), 1.0).normalized();
  shape.normal_angle = std::acos(std::clamp(normal.z(), -1.0, 1.0));

  // Signed concavity: neighbors rising above the tangent plane give positive angles.
  const Eigen::Vector3d p_i(0.0, 0.0, dense.mean(row, col));
  constexpr std::array<std::array<int, 2>, 4> four{{{0, 1}, {1, 0}, {0, -1}, {-1, 0}}};
  double sum = 0.0;
  int m = 0;
  for (const auto& [dr, dc] : four) {
    const int r = row + dr;
    const int c = col + dc;
    if (!geo.contains(r, c) || !dense.supported(r, c)) continue;
    const Eigen::Vector3d d =
        Eigen::Vector3d(dc * geo.resolution, dr * geo.resolution, dense.mean(r, c)) - p_i;
    const double cosang = std::clamp(normal.dot(d) / d.norm(), -1.0, 1.0);
    sum += std::numbers::pi / 2.0 - std::acos(cosang);
    ++m;
  }
  shape.concavity = m > 0 ? sum / m : 0.0;
  shape.valid = true;
  return shape;
}

}  // namespace

FeatureMap compute_features(const ElevationGrid& grid, const DenseElevation& dense, int threads) {
  const auto& geo = grid.geometry();
  FeatureMap map = FeatureMap::empty(geo);
  parallel_rows(geo.height, threads, [&](int begin, int end) {
    for (int row = begin; row < end; ++row) {
      for (int col = 0; col < geo.width; ++col) {
        const auto& cell = grid.at(row, col);
        map.observed(row, col) = cell.observed() ? 1 : 0;
        const LocalShape shape = local_shape(geo, dense, row, col);
        if (!shape.valid) continue;
        map.known(row, col) = 1;
        if (cell.observed()) {
          map.channels[kObservedMean](row, col) = static_cast<float>(cell.mean);
          map.channels[kObservedVariance](row, col) = static_cast<float>(cell.variance());
          map.channels[kElevationRange](row, col) = static_cast<float>(cell.z_max - cell.z_min);
        }
        map.channels[kPredictedMean](row, col) = static_cast<float>(dense.mean(row, col));
        map.channels[kPredictedVariance](row, col) = static_cast<float>(dense.variance(row, col));
        map.channels[kNormalAngle](row, col) = static_cast<float>(shape.normal_angle);
        map.channels[kConcavityAngle](row, col) = static_cast<float>(shape.concavity);
      }
    }
  });
  return map;
}

FeatureMap build_feature_map(const ElevationGrid& grid, const InferenceParams& params,
                             int threads) {
  return compute_features(grid, infer_dense(grid, params), threads);
}

FeatureMap build_bev_map(const ElevationGrid& grid) {
  FeatureMap bev = FeatureMap::empty(grid.geometry());
  for (std::size_t i = 0; i < bev.known.size(); ++i) {
    const auto& cell = grid.cells()[i];
    if (!cell.observed()) continue;
    bev.known[i] = 1;
    bev.observed[i] = 1;
    bev.channels[kObservedMean][i] = static_cast<float>(cell.mean);
    bev.channels[kObservedVariance][i] = static_cast<float>(cell.variance());
    bev.channels[kElevationRange][i] = static_cast<float>(cell.z_max - cell.z_min);
  }
  return bev;
}

}  // namespace travgrid::terrain
