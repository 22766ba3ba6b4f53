#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Geometry>

#include "travgrid/grid.hpp"
#include "travgrid/terrain.hpp"

namespace travgrid::labeling {

// Body-to-world rigid transform at one timestamp.
struct VehiclePose {
  double stamp = 0.0;
  Eigen::Isometry3d body_to_world = Eigen::Isometry3d::Identity();
};

// Throws std::invalid_argument unless the rotation block is orthonormal with
// determinant +1 (tolerance 1e-6).
void validate_pose(const VehiclePose& pose);

// Wheel-ground contact points in the body frame: left-front, right-front,
// left-rear, right-rear.
struct Footprint {
  Eigen::Vector3d left_front;
  Eigen::Vector3d right_front;
  Eigen::Vector3d left_rear;
  Eigen::Vector3d right_rear;

  static Footprint rectangle(double length, double track_width);
  // Polygon order lf -> rf -> rr -> lr.
  std::array<Eigen::Vector3d, 4> ring() const;
};

// Re-expresses the footprint of the vehicle at pose `past_or_future` in the
// body frame of pose `current`: T_current^-1 * T_tau * p for each contact.
std::array<Eigen::Vector3d, 4> transform_footprint(const Footprint& footprint,
                                                   const VehiclePose& past_or_future,
                                                   const VehiclePose& current);

using Quad = std::array<Eigen::Vector2d, 4>;

// Cells whose centers lie inside the quad (even-odd rule, half-open: centers
// on left/bottom edges are inside, on right/top edges outside). Sorted by
// (row, col). A zero-area quad yields nothing.
std::vector<CellIndex> rasterize_footprint(const Quad& quad, const MapGeometry& geometry);

// Shared crossing test used by the rasterizer's fill rule.
bool center_inside(const Quad& quad, double px, double py);

enum class CellLabel : std::uint8_t { kUnknown = 0, kUnlabeled = 1, kPositive = 2 };

struct AnnotateParams {
  double interval_past = -30.0;   // t_p relative to the map time, s
  double interval_future = 30.0;  // t_f relative to the map time, s
  double sample_period = 0.1;     // footprint sampling period, s
};

struct Annotation {
  Grid<CellLabel> labels;
  std::size_t footprints_used = 0;
  bool warned_no_poses = false;
};

// Union of rasterized footprints for all poses in [t + t_p, t + t_f] marked
// positive; remaining known cells unlabeled, other cells unknown.
Annotation annotate_map(const terrain::FeatureMap& map, const std::vector<VehiclePose>& poses,
                        const VehiclePose& current, const Footprint& footprint,
                        const AnnotateParams& params = {});

struct TokenId {
  std::uint32_t frame = 0;
  std::uint32_t window = 0;
  std::uint32_t patch = 0;

  friend bool operator==(const TokenId&, const TokenId&) = default;
  friend auto operator<=>(const TokenId&, const TokenId&) = default;
};

inline constexpr int kTokenChannels = terrain::kChannelCount + 1;  // + known mask

struct PatchToken {
  TokenId id;
  CellIndex center;
  std::vector<float> features;  // M*M*kTokenChannels, (row, col, channel) order
  bool positive = false;
  std::vector<float> soft_label;  // y_n

  // Candidate label vector y: first-class one-hot for positives, else all ones.
  std::vector<float> pseudo_label(int classes) const;
};

struct PatchLayout {
  int patch_size = 11;  // M, odd
  int window = 10;      // W
  int stride = 11;      // defaults to M (non-overlapping)
  int classes = 4;      // K

  void validate() const;
  // Patches along one axis of a map `cells` long, rounded up to whole windows.
  int patches_along(int cells) const;
};

std::vector<PatchToken> extract_tokens(const terrain::FeatureMap& map,
                                       const Grid<CellLabel>& labels, const PatchLayout& layout,
                                       std::uint32_t frame);

// Pose CSV: one `stamp, tx, ty, tz, qw, qx, qy, qz` line per pose; '#' comments allowed.
std::vector<VehiclePose> read_poses_csv(const std::filesystem::path& path);
void write_poses_csv(const std::filesystem::path& path, const std::vector<VehiclePose>& poses);

// Token dataset "TTOK" v1, little-endian:
//   char[4] magic, u32 version, u32 M, u32 W, u32 stride, u32 C, u32 K, u64 count,
//   then per record:
//   u32 frame, u32 window, u32 patch, i32 center_row, i32 center_col,
//   f32[M*M*C] features, u8 label code (1 positive, 0 unlabeled), f32[K] y_n.
struct TokenDataset {
  PatchLayout layout;
  std::vector<PatchToken> tokens;
};
void write_tokens(const std::filesystem::path& path, const TokenDataset& dataset);
TokenDataset read_tokens(const std::filesystem::path& path);

}  // namespace travgrid::labeling
