#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "travgrid/grid.hpp"
#include "travgrid/labeling.hpp"

namespace travgrid::synth {

enum class TerrainClass : std::uint8_t { kGround = 0, kBush = 1, kObstacle = 2, kDitch = 3 };

const char* terrain_class_name(TerrainClass c);  // "ground", "bush", "obstacle", "ditch"
TerrainClass parse_terrain_class(const std::string& name);
// Semantic label a class carries in the ground-truth pipeline.
const char* semantic_label(TerrainClass c);  // "grass", "bush", "rock", "ditch"

// Axis-aligned rectangle in world meters, [x0, x1) x [y0, y1).
struct Region {
  TerrainClass terrain = TerrainClass::kBush;
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool overlaps(const Region& o) const {
    return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
  }
};

struct SceneError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SceneSpec {
  std::uint64_t seed = 42;
  double extent_x = 120.0;  // world spans [-extent_x/2, extent_x/2)
  double extent_y = 48.0;
  // Explicit layout; everything outside the regions is ground. When empty,
  // `random_regions` non-overlapping regions are drawn from the seed.
  std::vector<Region> regions;
  int random_regions = 14;
  double region_min = 9.0;  // random region side lengths, m
  double region_max = 16.0;
  double region_gap = 2.0;       // min spacing between random regions, m
  double corridor_half_width = 3.0;  // ground band kept free around y = 0

  double ground_amplitude = 0.12;  // low-frequency undulation, m
  double ground_wavelength = 16.0;
  double bush_height = 0.35;       // mean rise over the ground, m
  double bush_roughness = 0.25;    // high-frequency amplitude, m
  double bush_wavelength = 0.4;
  double obstacle_height = 1.5;
  double obstacle_roughness = 0.08;
  double ditch_depth = 0.8;
  // Random ditches are trenches along x with this width range; the bottom
  // is parabolic across the trench.
  double ditch_width_min = 2.0;
  double ditch_width_max = 4.0;

  double noise_sigma = 0.03;        // sigma_z of scan points, m
  double scan_density = 40.0;       // points per m^2 at close range
  double density_range = 6.0;       // density falls as (r0 / r)^2 beyond r0, m
  double sensor_range = 25.0;
  double sensor_height = 1.8;

  // Rejects negative noise, non-positive extents, and overlapping regions.
  void validate() const;
};

class Scene {
 public:
  explicit Scene(SceneSpec spec);  // builds the region layout

  const SceneSpec& spec() const { return spec_; }
  const std::vector<Region>& regions() const { return regions_; }

  TerrainClass terrain_at(double x, double y) const;
  const Region* region_at(double x, double y) const;  // nullptr on open ground
  double height(double x, double y) const;
  double ground_height(double x, double y) const;
  bool in_bounds(double x, double y) const;

  // World raster at the given resolution, covering the scene extent.
  MapGeometry world_geometry(double resolution) const;

 private:
  double roughness(double x, double y, double wavelength, std::uint64_t salt) const;

  SceneSpec spec_;
  std::vector<Region> regions_;
  Eigen::Vector4d phases_;
};

// Ground-truth traversability levels.
enum class Level : std::uint8_t { kUnknown = 0, kTraversable = 1, kRisky = 2, kNonTraversable = 3 };

struct ScanFrame {
  double stamp = 0.0;
  std::vector<Eigen::Vector3d> points;  // world frame
};

struct ScanParams {
  double period = 0.5;  // s between scans
};

// One frame per `period` along the pose sequence (starting with the first
// pose). Points are drawn per 0.2 m sampling cell within sensor range with a
// Poisson count of density * area * min(1, (r0/r)^2), uniform in the cell,
// elevation = surface + N(0, sigma_z).
std::vector<ScanFrame> simulate_scans(const Scene& scene,
                                      const std::vector<labeling::VehiclePose>& poses,
                                      const ScanParams& params = {});

struct TrajectoryParams {
  double speed = 2.0;  // m/s
  double rate = 10.0;  // Hz
  double x_start = -40.0;
  double x_end = 40.0;
  double footprint_length = 2.4;
  double footprint_track = 2.0;
  int margin_cells = 1;
};

// Straight constant-speed path along +x. The lateral offset is drawn from the
// seed among offsets whose footprint (plus margin) covers only traversable
// cells of `levels`; throws SceneError when no such corridor exists.
std::vector<labeling::VehiclePose> plan_trajectory(const Scene& scene, const MapGeometry& geometry,
                                                   const Grid<Level>& levels,
                                                   const TrajectoryParams& params,
                                                   std::uint64_t seed);

// Points file "TPTS" v1, little-endian: char[4] magic, u32 version, u32 frame
// count, then per frame: f64 stamp, u64 point count, f64[3] x, y, z per point.
void write_scans(const std::filesystem::path& path, const std::vector<ScanFrame>& frames);
std::vector<ScanFrame> read_scans(const std::filesystem::path& path);

}  // namespace travgrid::synth
