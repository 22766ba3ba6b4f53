#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "travgrid/grid.hpp"
#include "travgrid/terrain.hpp"

namespace travgrid::io {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Feature map file "TGRD" v1, little-endian:
//   char[4] magic, u32 version, f64 origin_x, f64 origin_y, f64 resolution,
//   u32 width, u32 height, then nine row-major f32 planes: the seven feature
//   channels in terrain::Channel order, the known mask, the observed mask.
void write_feature_map(const std::filesystem::path& path, const terrain::FeatureMap& map);
terrain::FeatureMap read_feature_map(const std::filesystem::path& path);

// Class grid file "TCLS" v1: same geometry header as TGRD, then one u8 per
// cell (0 = unknown).
struct ClassGrid {
  MapGeometry geometry;
  Grid<std::uint8_t> cells;
};
void write_class_grid(const std::filesystem::path& path, const ClassGrid& grid);
ClassGrid read_class_grid(const std::filesystem::path& path);

// 8-bit binary PPM renderers.
// Channel ramp: unknown black, otherwise blue (low) -> green -> red (high)
// between the channel's min and max over known cells.
void render_channel_ppm(const std::filesystem::path& path, const terrain::FeatureMap& map,
                        int channel);
// Level grids (1 traversable, 2 risky, 3 non-traversable): green, yellow, red;
// unknown black.
void render_levels_ppm(const std::filesystem::path& path, const ClassGrid& levels);
// Raw predicted classes 1..K with a fixed palette; unknown black.
void render_classes_ppm(const std::filesystem::path& path, const ClassGrid& classes);

// Little-endian primitive helpers shared by the binary formats.
namespace binary {
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_magic(std::ostream& os, const char (&magic)[5]);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);
void expect_magic(std::istream& is, const char (&magic)[5], const std::string& what);
}  // namespace binary

}  // namespace travgrid::io
