#include "travgrid/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "travgrid/map_io.hpp"

namespace travgrid::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Lattice value in [-1, 1].
double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  const std::uint64_t h =
      splitmix(seed ^ splitmix(static_cast<std::uint64_t>(ix) * 0x100000001b3ULL ^
                               splitmix(static_cast<std::uint64_t>(iy))));
  return static_cast<double>(h >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

}  // namespace

const char* terrain_class_name(TerrainClass c) {
  switch (c) {
    case TerrainClass::kGround: return "ground";
    case TerrainClass::kBush: return "bush";
    case TerrainClass::kObstacle: return "obstacle";
    case TerrainClass::kDitch: return "ditch";
  }
  return "ground";
}

TerrainClass parse_terrain_class(const std::string& name) {
  for (auto c : {TerrainClass::kGround, TerrainClass::kBush, TerrainClass::kObstacle,
                 TerrainClass::kDitch}) {
    if (name == terrain_class_name(c)) return c;
  }
  throw SceneError("unknown terrain class '" + name + "'");
}

const char* semantic_label(TerrainClass c) {
  switch (c) {
    case TerrainClass::kGround: return "grass";
    case TerrainClass::kBush: return "bush";
    case TerrainClass::kObstacle: return "rock";
    case TerrainClass::kDitch: return "ditch";
  }
  return "grass";
}

void SceneSpec::validate() const {
  if (!(extent_x > 0.0) || !(extent_y > 0.0)) throw SceneError("scene extent must be > 0");
  if (!(noise_sigma >= 0.0)) throw SceneError("noise sigma must be >= 0");
  if (!(scan_density >= 0.0)) throw SceneError("scan density must be >= 0");
  if (!(sensor_range > 0.0) || !(density_range > 0.0)) throw SceneError("sensor ranges must be > 0");
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto& r = regions[i];
    if (!(r.x1 > r.x0) || !(r.y1 > r.y0)) {
      throw SceneError("region " + std::to_string(i) + " is empty");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (r.overlaps(regions[j])) {
        throw SceneError("regions " + std::to_string(j) + " and " + std::to_string(i) +
                         " overlap");
      }
    }
  }
  if (regions.empty() && random_regions > 0 &&
      !(region_min > 0.0 && region_max >= region_min && ditch_width_min > 0.0 &&
        ditch_width_max >= ditch_width_min)) {
    throw SceneError("random region sizes must satisfy 0 < min <= max");
  }
}

Scene::Scene(SceneSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::mt19937_64 rng(spec_.seed);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  for (int i = 0; i < 4; ++i) phases_[i] = phase(rng);

  regions_ = spec_.regions;
  if (!regions_.empty() || spec_.random_regions <= 0) return;

  // Classes cycle so the three non-ground kinds stay balanced.
  const TerrainClass cycle[] = {TerrainClass::kBush, TerrainClass::kObstacle, TerrainClass::kDitch};
  std::uniform_real_distribution<double> size(spec_.region_min, spec_.region_max);
  std::uniform_real_distribution<double> ditch_width(spec_.ditch_width_min, spec_.ditch_width_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double hx = spec_.extent_x / 2.0;
  const double hy = spec_.extent_y / 2.0;
  const double band = hy - spec_.corridor_half_width;
  for (int attempt = 0; attempt < 4000 && static_cast<int>(regions_.size()) < spec_.random_regions;
       ++attempt) {
    Region r;
    r.terrain = cycle[regions_.size() % 3];
    const double w = size(rng);
    const double drawn = size(rng);
    const double h = std::min(r.terrain == TerrainClass::kDitch ? ditch_width(rng) : drawn, band);
    const bool upper = unit(rng) < 0.5;
    r.x0 = -hx + unit(rng) * (2.0 * hx - w);
    r.x1 = r.x0 + w;
    const double off = unit(rng) * (band - h);
    if (upper) {
      r.y0 = spec_.corridor_half_width + off;
      r.y1 = r.y0 + h;
    } else {
      r.y1 = -spec_.corridor_half_width - off;
      r.y0 = r.y1 - h;
    }
    Region padded = r;
    padded.x0 -= spec_.region_gap;
    padded.y0 -= spec_.region_gap;
    padded.x1 += spec_.region_gap;
    padded.y1 += spec_.region_gap;
    if (std::none_of(regions_.begin(), regions_.end(),
                     [&](const Region& o) { return padded.overlaps(o); })) {
      regions_.push_back(r);
    }
  }
}

bool Scene::in_bounds(double x, double y) const {
  return x >= -spec_.extent_x / 2.0 && x < spec_.extent_x / 2.0 && y >= -spec_.extent_y / 2.0 &&
         y < spec_.extent_y / 2.0;
}

const Region* Scene::region_at(double x, double y) const {
  for (const auto& r : regions_) {
    if (r.contains(x, y)) return &r;
  }
  return nullptr;
}

TerrainClass Scene::terrain_at(double x, double y) const {
  const Region* r = region_at(x, y);
  return r ? r->terrain : TerrainClass::kGround;
}

double Scene::roughness(double x, double y, double wavelength, std::uint64_t salt) const {
  const double u = x / wavelength;
  const double v = y / wavelength;
  const double fu = std::floor(u);
  const double fv = std::floor(v);
  const auto ix = static_cast<std::int64_t>(fu);
  const auto iy = static_cast<std::int64_t>(fv);
  const double tu = smooth(u - fu);
  const double tv = smooth(v - fv);
  const std::uint64_t s = splitmix(spec_.seed ^ salt);
  const double a = lattice(ix, iy, s) * (1 - tu) + lattice(ix + 1, iy, s) * tu;
  const double b = lattice(ix, iy + 1, s) * (1 - tu) + lattice(ix + 1, iy + 1, s) * tu;
  return a * (1 - tv) + b * tv;
}

double Scene::ground_height(double x, double y) const {
  const double l = spec_.ground_wavelength;
  return spec_.ground_amplitude * (0.6 * std::sin(kTwoPi * x / l + phases_[0]) +
                                   0.4 * std::sin(kTwoPi * y / (0.7 * l) + phases_[1]));
}

double Scene::height(double x, double y) const {
  const double g = ground_height(x, y);
  switch (terrain_at(x, y)) {
    case TerrainClass::kGround: return g;
    case TerrainClass::kBush:
      return g + spec_.bush_height +
             spec_.bush_roughness * roughness(x, y, spec_.bush_wavelength, 0xb5);
    case TerrainClass::kObstacle:
      // Texture only adds height, so a block never dips below obstacle_height.
      return g + spec_.obstacle_height +
             spec_.obstacle_roughness * 0.5 * (1.0 + roughness(x, y, 0.5, 0x0b));
    case TerrainClass::kDitch: {
      const Region* r = region_at(x, y);
      const double half = 0.5 * (r->y1 - r->y0);
      const double u = (y - 0.5 * (r->y0 + r->y1)) / half;
      return g - spec_.ditch_depth * (1.0 - 0.5 * u * u);
    }
  }
  return g;
}

MapGeometry Scene::world_geometry(double resolution) const {
  MapGeometry g;
  g.resolution = resolution;
  g.width = static_cast<int>(std::lround(spec_.extent_x / resolution));
  g.height = static_cast<int>(std::lround(spec_.extent_y / resolution));
  g.origin = {-spec_.extent_x / 2.0, -spec_.extent_y / 2.0};
  return g;
}

std::vector<ScanFrame> simulate_scans(const Scene& scene,
                                      const std::vector<labeling::VehiclePose>& poses,
                                      const ScanParams& params) {
  const auto& spec = scene.spec();
  std::vector<ScanFrame> frames;
  if (poses.empty()) return frames;
  constexpr double kCell = 0.2;
  const double range = spec.sensor_range;
  double next = poses.front().stamp;
  for (const auto& pose : poses) {
    if (pose.stamp + 1e-9 < next) continue;
    next += params.period;
    ScanFrame frame;
    frame.stamp = pose.stamp;
    std::mt19937_64 rng(splitmix(spec.seed ^ splitmix(frames.size() + 0x5ca7)));
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Eigen::Vector3d s = pose.body_to_world.translation();
    const int n = static_cast<int>(std::ceil(range / kCell));
    for (int j = -n; j < n; ++j) {
      for (int i = -n; i < n; ++i) {
        const double cx = s.x() + (i + 0.5) * kCell;
        const double cy = s.y() + (j + 0.5) * kCell;
        const double r = std::hypot(cx - s.x(), cy - s.y());
        if (r > range || !scene.in_bounds(cx, cy)) continue;
        const double falloff = r > spec.density_range ? std::pow(spec.density_range / r, 2) : 1.0;
        const double lambda = spec.scan_density * kCell * kCell * falloff;
        if (!(lambda > 0.0)) continue;
        const int k = std::poisson_distribution<int>(lambda)(rng);
        for (int p = 0; p < k; ++p) {
          const double x = cx + (unit(rng) - 0.5) * kCell;
          const double y = cy + (unit(rng) - 0.5) * kCell;
          const double z = scene.height(x, y) + spec.noise_sigma * noise(rng);
          frame.points.emplace_back(x, y, z);
        }
      }
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

std::vector<labeling::VehiclePose> plan_trajectory(const Scene& scene, const MapGeometry& geometry,
                                                   const Grid<Level>& levels,
                                                   const TrajectoryParams& params,
                                                   std::uint64_t seed) {
  if (!(params.speed > 0.0) || !(params.rate > 0.0) || !(params.x_end > params.x_start)) {
    throw SceneError("trajectory needs positive speed and rate and x_end > x_start");
  }
  const double r = geometry.resolution;
  const double half_w = params.footprint_track / 2.0 + params.margin_cells * r;
  const double x0 = params.x_start - params.footprint_length / 2.0 - params.margin_cells * r;
  const double x1 = params.x_end + params.footprint_length / 2.0 + params.margin_cells * r;

  // A lateral offset is valid when every cell whose center lies in the swept,
  // margin-padded rectangle is traversable (and inside the grid).
  const auto valid = [&](double yc) {
    for (int row = 0; row < geometry.height; ++row) {
      const double cy = geometry.center_y(row);
      if (cy < yc - half_w || cy > yc + half_w) continue;
      for (int col = 0; col < geometry.width; ++col) {
        const double cx = geometry.center_x(col);
        if (cx < x0 || cx > x1) continue;
        if (levels(row, col) != Level::kTraversable) return false;
      }
    }
    return geometry.cell_of(x0, yc - half_w).has_value() &&
           geometry.cell_of(x1, yc + half_w).has_value();
  };

  // Candidate offsets on the cell-center lattice; pick the middle of the
  // widest valid run, ties resolved by the seed.
  std::vector<std::pair<double, double>> runs;  // [first, last]
  bool open = false;
  for (int row = 0; row < geometry.height; ++row) {
    const double yc = geometry.origin.y() + row * r;
    if (valid(yc)) {
      if (!open) runs.push_back({yc, yc});
      runs.back().second = yc;
      open = true;
    } else {
      open = false;
    }
  }
  if (runs.empty()) throw SceneError("no traversable corridor for the vehicle footprint");
  double widest = 0.0;
  for (const auto& [a, b] : runs) widest = std::max(widest, b - a);
  std::vector<double> centers;
  for (const auto& [a, b] : runs) {
    if (b - a >= widest - 1e-9) centers.push_back(0.5 * (a + b));
  }
  std::mt19937_64 rng(seed);
  const double yc =
      centers[std::uniform_int_distribution<std::size_t>(0, centers.size() - 1)(rng)];

  std::vector<labeling::VehiclePose> poses;
  const double dt = 1.0 / params.rate;
  const auto count =
      static_cast<int>(std::floor((params.x_end - params.x_start) / (params.speed * dt) + 1e-9));
  for (int i = 0; i <= count; ++i) {
    labeling::VehiclePose p;
    p.stamp = i * dt;
    const double x = params.x_start + params.speed * p.stamp;
    p.body_to_world.translation() = Eigen::Vector3d(x, yc, scene.height(x, yc));
    poses.push_back(p);
  }
  return poses;
}

void write_scans(const std::filesystem::path& path, const std::vector<ScanFrame>& frames) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io::FormatError("cannot open " + path.string() + " for writing");
  io::binary::write_magic(os, "TPTS");
  io::binary::write_u32(os, 1);
  io::binary::write_u32(os, static_cast<std::uint32_t>(frames.size()));
  for (const auto& f : frames) {
    io::binary::write_f64(os, f.stamp);
    io::binary::write_u64(os, f.points.size());
    for (const auto& p : f.points) {
      io::binary::write_f64(os, p.x());
      io::binary::write_f64(os, p.y());
      io::binary::write_f64(os, p.z());
    }
  }
  if (!os) throw io::FormatError("write failed for " + path.string());
}

std::vector<ScanFrame> read_scans(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::FormatError("cannot open " + path.string());
  io::binary::expect_magic(is, "TPTS", "points file");
  const auto version = io::binary::read_u32(is);
  if (version != 1) throw io::FormatError("unsupported points file version " + std::to_string(version));
  std::vector<ScanFrame> frames(io::binary::read_u32(is));
  for (auto& f : frames) {
    f.stamp = io::binary::read_f64(is);
    const auto n = io::binary::read_u64(is);
    f.points.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      const double x = io::binary::read_f64(is);
      const double y = io::binary::read_f64(is);
      const double z = io::binary::read_f64(is);
      f.points.emplace_back(x, y, z);
    }
  }
  return frames;
}

}  // namespace travgrid::synth
