#include "travgrid/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "travgrid/map_io.hpp"

namespace travgrid::labeling {

void validate_pose(const VehiclePose& pose) {
  const Eigen::Matrix3d r = pose.body_to_world.linear();
  const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  const double det = r.determinant();
  if (!(ortho <= 1e-6) || !(std::abs(det - 1.0) <= 1e-6) ||
      !pose.body_to_world.translation().allFinite()) {
    std::ostringstream msg;
    msg << "pose at t=" << pose.stamp << " is not a rigid transform (|R^T R - I| = " << ortho
        << ", det R = " << det << ")";
    throw std::invalid_argument(msg.str());
  }
}

Footprint Footprint::rectangle(double length, double track_width) {
  const double hl = 0.5 * length;
  const double hw = 0.5 * track_width;
  return {{hl, hw, 0.0}, {hl, -hw, 0.0}, {-hl, hw, 0.0}, {-hl, -hw, 0.0}};
}

std::array<Eigen::Vector3d, 4> Footprint::ring() const {
  return {left_front, right_front, right_rear, left_rear};
}

std::array<Eigen::Vector3d, 4> transform_footprint(const Footprint& footprint,
                                                   const VehiclePose& past_or_future,
                                                   const VehiclePose& current) {
  validate_pose(past_or_future);
  validate_pose(current);
  const Eigen::Isometry3d relative = current.body_to_world.inverse() * past_or_future.body_to_world;
  auto ring = footprint.ring();
  for (auto& p : ring) p = relative * p;
  return ring;
}

namespace {

double edge_crossing_x(const Eigen::Vector2d& a, const Eigen::Vector2d& b, double py) {
  return a.x() + (py - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
}

double quad_area(const Quad& q) {
  double twice = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& a = q[i];
    const auto& b = q[(i + 1) % 4];
    twice += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * twice;
}

}  // namespace

bool center_inside(const Quad& quad, double px, double py) {
  bool inside = false;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& a = quad[i];
    const auto& b = quad[(i + 1) % 4];
    if ((a.y() > py) != (b.y() > py) && px < edge_crossing_x(a, b, py)) inside = !inside;
  }
  return inside;
}

std::vector<CellIndex> rasterize_footprint(const Quad& quad, const MapGeometry& geometry) {
  std::vector<CellIndex> cells;
  if (std::abs(quad_area(quad)) < 1e-12) return cells;

  double y_lo = quad[0].y();
  double y_hi = quad[0].y();
  for (const auto& p : quad) {
    y_lo = std::min(y_lo, p.y());
    y_hi = std::max(y_hi, p.y());
  }
  const double r = geometry.resolution;
  const int row_begin =
      std::max(0, static_cast<int>(std::floor((y_lo - geometry.origin.y()) / r - 0.5)));
  const int row_end = std::min(geometry.height - 1,
                               static_cast<int>(std::ceil((y_hi - geometry.origin.y()) / r)));

  std::vector<double> xs;
  for (int row = row_begin; row <= row_end; ++row) {
    const double py = geometry.center_y(row);
    xs.clear();
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& a = quad[i];
      const auto& b = quad[(i + 1) % 4];
      if ((a.y() > py) != (b.y() > py)) xs.push_back(edge_crossing_x(a, b, py));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const double xa = xs[k];
      const double xb = xs[k + 1];
      int col = std::max(0, static_cast<int>(std::floor((xa - geometry.origin.x()) / r - 0.5)) - 1);
      for (; col < geometry.width; ++col) {
        const double cx = geometry.center_x(col);
        if (cx >= xb) break;
        if (cx >= xa) cells.push_back({row, col});
      }
    }
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

Annotation annotate_map(const terrain::FeatureMap& map, const std::vector<VehiclePose>& poses,
                        const VehiclePose& current, const Footprint& footprint,
                        const AnnotateParams& params) {
  const auto& geo = map.geometry;
  Annotation out;
  out.labels = Grid<CellLabel>(geo.width, geo.height, CellLabel::kUnknown);
  for (std::size_t i = 0; i < map.known.size(); ++i) {
    if (map.known[i]) out.labels[i] = CellLabel::kUnlabeled;
  }

  const double t_begin = current.stamp + params.interval_past;
  const double t_end = current.stamp + params.interval_future;
  double last_sample = -std::numeric_limits<double>::infinity();
  for (const auto& pose : poses) {
    if (pose.stamp < t_begin || pose.stamp > t_end) continue;
    if (pose.stamp < last_sample + params.sample_period - 1e-9) continue;
    last_sample = pose.stamp;
    const auto ring = transform_footprint(footprint, pose, current);
    const Quad quad{ring[0].head<2>(), ring[1].head<2>(), ring[2].head<2>(), ring[3].head<2>()};
    for (const auto& cell : rasterize_footprint(quad, geo)) {
      out.labels(cell.row, cell.col) = CellLabel::kPositive;
    }
    ++out.footprints_used;
  }
  if (out.footprints_used == 0) {
    out.warned_no_poses = true;
    std::cerr << "warning: no poses within [" << t_begin << ", " << t_end
              << "]; frame left unlabeled\n";
  }
  return out;
}

std::vector<float> PatchToken::pseudo_label(int classes) const {
  std::vector<float> y(static_cast<std::size_t>(classes), positive ? 0.0f : 1.0f);
  if (positive) y[0] = 1.0f;
  return y;
}

void PatchLayout::validate() const {
  if (patch_size <= 0 || patch_size % 2 == 0) {
    throw std::invalid_argument("patch size M must be a positive odd number, got " +
                                std::to_string(patch_size));
  }
  if (window <= 0 || stride <= 0 || classes <= 0) {
    throw std::invalid_argument("window, stride and class count must be positive");
  }
}

int PatchLayout::patches_along(int cells) const {
  if (cells < patch_size) return 0;
  const int n = (cells - patch_size) / stride + 1;
  return (n + window - 1) / window * window;
}

std::vector<PatchToken> extract_tokens(const terrain::FeatureMap& map,
                                       const Grid<CellLabel>& labels, const PatchLayout& layout,
                                       std::uint32_t frame) {
  layout.validate();
  const auto& geo = map.geometry;
  if (labels.width() != geo.width || labels.height() != geo.height) {
    throw std::invalid_argument("label grid does not match the feature map");
  }
  const int m = layout.patch_size;
  const int half = m / 2;
  const int px = layout.patches_along(geo.width);
  const int py = layout.patches_along(geo.height);
  const int windows_per_row = px / layout.window;
  const std::size_t k = static_cast<std::size_t>(layout.classes);

  std::vector<PatchToken> tokens;
  for (int pr = 0; pr < py; ++pr) {
    for (int pc = 0; pc < px; ++pc) {
      const int r0 = pr * layout.stride;
      const int c0 = pc * layout.stride;
      const CellIndex center{r0 + half, c0 + half};
      if (!geo.contains(center.row, center.col) || !map.known(center.row, center.col)) continue;

      PatchToken tok;
      tok.id.frame = frame;
      tok.id.window = static_cast<std::uint32_t>((pr / layout.window) * windows_per_row +
                                                 pc / layout.window);
      tok.id.patch =
          static_cast<std::uint32_t>((pr % layout.window) * layout.window + pc % layout.window);
      tok.center = center;
      tok.features.assign(static_cast<std::size_t>(m * m * kTokenChannels), 0.0f);
      for (int dr = 0; dr < m; ++dr) {
        for (int dc = 0; dc < m; ++dc) {
          const int r = r0 + dr;
          const int c = c0 + dc;
          if (!geo.contains(r, c) || !map.known(r, c)) continue;
          float* dst = &tok.features[static_cast<std::size_t>((dr * m + dc) * kTokenChannels)];
          for (int ch = 0; ch < terrain::kChannelCount; ++ch) dst[ch] = map.channels[ch](r, c);
          dst[terrain::kChannelCount] = 1.0f;
        }
      }
      tok.positive = labels(center.row, center.col) == CellLabel::kPositive;
      tok.soft_label.assign(k, tok.positive ? 0.0f : 1.0f / static_cast<float>(k));
      if (tok.positive) tok.soft_label[0] = 1.0f;
      tokens.push_back(std::move(tok));
    }
  }
  return tokens;
}

std::vector<VehiclePose> read_poses_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open pose file " + path.string());
  std::vector<VehiclePose> poses;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double v[8];
    for (double& x : v) {
      if (!(ls >> x)) {
        throw io::FormatError(path.string() + ":" + std::to_string(lineno) +
                              ": expected 8 values `stamp, tx, ty, tz, qw, qx, qy, qz`");
      }
    }
    Eigen::Quaterniond q(v[4], v[5], v[6], v[7]);
    if (std::abs(q.norm() - 1.0) > 1e-6) {
      throw io::FormatError(path.string() + ":" + std::to_string(lineno) +
                            ": quaternion is not unit norm");
    }
    VehiclePose pose;
    pose.stamp = v[0];
    pose.body_to_world = Eigen::Isometry3d::Identity();
    pose.body_to_world.linear() = q.toRotationMatrix();
    pose.body_to_world.translation() = Eigen::Vector3d(v[1], v[2], v[3]);
    poses.push_back(pose);
  }
  return poses;
}

void write_poses_csv(const std::filesystem::path& path, const std::vector<VehiclePose>& poses) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "# stamp, tx, ty, tz, qw, qx, qy, qz\n";
  char buf[512];
  for (const auto& p : poses) {
    const Eigen::Quaterniond q(p.body_to_world.linear());
    const auto& t = p.body_to_world.translation();
    std::snprintf(buf, sizeof(buf), "%.17g, %.17g, %.17g, %.17g, %.17g, %.17g, %.17g, %.17g\n",
                  p.stamp, t.x(), t.y(), t.z(), q.w(), q.x(), q.y(), q.z());
    os << buf;
  }
}

namespace {
constexpr std::uint32_t kTokenVersion = 1;
}

void write_tokens(const std::filesystem::path& path, const TokenDataset& dataset) {
  namespace bin = io::binary;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto& l = dataset.layout;
  const std::size_t feat = static_cast<std::size_t>(l.patch_size * l.patch_size * kTokenChannels);
  bin::write_magic(os, "TTOK");
  bin::write_u32(os, kTokenVersion);
  bin::write_u32(os, static_cast<std::uint32_t>(l.patch_size));
  bin::write_u32(os, static_cast<std::uint32_t>(l.window));
  bin::write_u32(os, static_cast<std::uint32_t>(l.stride));
  bin::write_u32(os, static_cast<std::uint32_t>(kTokenChannels));
  bin::write_u32(os, static_cast<std::uint32_t>(l.classes));
  bin::write_u64(os, dataset.tokens.size());
  for (const auto& t : dataset.tokens) {
    if (t.features.size() != feat || t.soft_label.size() != static_cast<std::size_t>(l.classes)) {
      throw std::invalid_argument("token shape does not match dataset layout");
    }
    bin::write_u32(os, t.id.frame);
    bin::write_u32(os, t.id.window);
    bin::write_u32(os, t.id.patch);
    bin::write_u32(os, static_cast<std::uint32_t>(t.center.row));
    bin::write_u32(os, static_cast<std::uint32_t>(t.center.col));
    os.write(reinterpret_cast<const char*>(t.features.data()),
             static_cast<std::streamsize>(feat * sizeof(float)));
    os.put(t.positive ? 1 : 0);
    for (float v : t.soft_label) bin::write_f32(os, v);
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

TokenDataset read_tokens(const std::filesystem::path& path) {
  namespace bin = io::binary;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open token file " + path.string());
  bin::expect_magic(is, "TTOK", path.string());
  if (const auto v = bin::read_u32(is); v != kTokenVersion) {
    throw io::FormatError(path.string() + ": unsupported TTOK version " + std::to_string(v));
  }
  TokenDataset ds;
  ds.layout.patch_size = static_cast<int>(bin::read_u32(is));
  ds.layout.window = static_cast<int>(bin::read_u32(is));
  ds.layout.stride = static_cast<int>(bin::read_u32(is));
  const auto channels = bin::read_u32(is);
  ds.layout.classes = static_cast<int>(bin::read_u32(is));
  if (channels != static_cast<std::uint32_t>(kTokenChannels)) {
    throw io::FormatError(path.string() + ": expected " + std::to_string(kTokenChannels) +
                          " channels, file has " + std::to_string(channels));
  }
  ds.layout.validate();
  const auto count = bin::read_u64(is);
  const std::size_t feat =
      static_cast<std::size_t>(ds.layout.patch_size * ds.layout.patch_size * kTokenChannels);
  ds.tokens.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    PatchToken t;
    t.id.frame = bin::read_u32(is);
    t.id.window = bin::read_u32(is);
    t.id.patch = bin::read_u32(is);
    t.center.row = static_cast<int>(bin::read_u32(is));
    t.center.col = static_cast<int>(bin::read_u32(is));
    t.features.resize(feat);
    if (!is.read(reinterpret_cast<char*>(t.features.data()),
                 static_cast<std::streamsize>(feat * sizeof(float)))) {
      throw io::FormatError(path.string() + ": truncated token record " + std::to_string(i));
    }
    const int code = is.get();
    if (code != 0 && code != 1) {
      throw io::FormatError(path.string() + ": bad label code in record " + std::to_string(i));
    }
    t.positive = code == 1;
    t.soft_label.resize(static_cast<std::size_t>(ds.layout.classes));
    for (float& v : t.soft_label) v = bin::read_f32(is);
    ds.tokens.push_back(std::move(t));
  }
  return ds;
}

}  // namespace travgrid::labeling
