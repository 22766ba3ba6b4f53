#include "travgrid/map_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace travgrid::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace binary {

namespace {
template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated file");
  return v;
}
}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { put(os, v); }
void write_f32(std::ostream& os, float v) { put(os, v); }
void write_f64(std::ostream& os, double v) { put(os, v); }
void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }
std::uint32_t read_u32(std::istream& is) { return get<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return get<std::uint64_t>(is); }
float read_f32(std::istream& is) { return get<float>(is); }
double read_f64(std::istream& is) { return get<double>(is); }

void expect_magic(std::istream& is, const char (&magic)[5], const std::string& what) {
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw FormatError(what + ": bad magic, expected " + std::string(magic, 4));
  }
}

}  // namespace binary

namespace {

constexpr std::uint32_t kMapVersion = 1;
constexpr std::uint32_t kClassVersion = 1;

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return is;
}

void write_geometry(std::ostream& os, const MapGeometry& g) {
  binary::write_f64(os, g.origin.x());
  binary::write_f64(os, g.origin.y());
  binary::write_f64(os, g.resolution);
  binary::write_u32(os, static_cast<std::uint32_t>(g.width));
  binary::write_u32(os, static_cast<std::uint32_t>(g.height));
}

MapGeometry read_geometry(std::istream& is) {
  MapGeometry g;
  g.origin.x() = binary::read_f64(is);
  g.origin.y() = binary::read_f64(is);
  g.resolution = binary::read_f64(is);
  g.width = static_cast<int>(binary::read_u32(is));
  g.height = static_cast<int>(binary::read_u32(is));
  if (!(g.resolution > 0.0) || g.width < 0 || g.height < 0 ||
      g.cell_count() > (std::size_t{1} << 28)) {
    throw FormatError("implausible map geometry header");
  }
  return g;
}

void write_plane(std::ostream& os, const std::vector<float>& plane) {
  os.write(reinterpret_cast<const char*>(plane.data()),
           static_cast<std::streamsize>(plane.size() * sizeof(float)));
}

void read_plane(std::istream& is, std::vector<float>& plane) {
  if (!is.read(reinterpret_cast<char*>(plane.data()),
               static_cast<std::streamsize>(plane.size() * sizeof(float)))) {
    throw FormatError("truncated channel plane");
  }
}

}  // namespace

void write_feature_map(const std::filesystem::path& path, const terrain::FeatureMap& map) {
  auto os = open_out(path);
  binary::write_magic(os, "TGRD");
  binary::write_u32(os, kMapVersion);
  write_geometry(os, map.geometry);
  for (const auto& ch : map.channels) write_plane(os, ch.data());
  std::vector<float> mask(map.known.size());
  std::transform(map.known.data().begin(), map.known.data().end(), mask.begin(),
                 [](std::uint8_t v) { return static_cast<float>(v); });
  write_plane(os, mask);
  std::transform(map.observed.data().begin(), map.observed.data().end(), mask.begin(),
                 [](std::uint8_t v) { return static_cast<float>(v); });
  write_plane(os, mask);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

terrain::FeatureMap read_feature_map(const std::filesystem::path& path) {
  auto is = open_in(path);
  binary::expect_magic(is, "TGRD", path.string());
  const auto version = binary::read_u32(is);
  if (version != kMapVersion) {
    throw FormatError(path.string() + ": unsupported TGRD version " + std::to_string(version));
  }
  auto map = terrain::FeatureMap::empty(read_geometry(is));
  for (auto& ch : map.channels) read_plane(is, ch.data());
  std::vector<float> mask(map.known.size());
  read_plane(is, mask);
  for (std::size_t i = 0; i < mask.size(); ++i) map.known[i] = mask[i] != 0.0f ? 1 : 0;
  read_plane(is, mask);
  for (std::size_t i = 0; i < mask.size(); ++i) map.observed[i] = mask[i] != 0.0f ? 1 : 0;
  return map;
}

void write_class_grid(const std::filesystem::path& path, const ClassGrid& grid) {
  auto os = open_out(path);
  binary::write_magic(os, "TCLS");
  binary::write_u32(os, kClassVersion);
  write_geometry(os, grid.geometry);
  os.write(reinterpret_cast<const char*>(grid.cells.data().data()),
           static_cast<std::streamsize>(grid.cells.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

ClassGrid read_class_grid(const std::filesystem::path& path) {
  auto is = open_in(path);
  binary::expect_magic(is, "TCLS", path.string());
  const auto version = binary::read_u32(is);
  if (version != kClassVersion) {
    throw FormatError(path.string() + ": unsupported TCLS version " + std::to_string(version));
  }
  ClassGrid grid;
  grid.geometry = read_geometry(is);
  grid.cells = Grid<std::uint8_t>(grid.geometry.width, grid.geometry.height, 0);
  if (!is.read(reinterpret_cast<char*>(grid.cells.data().data()),
               static_cast<std::streamsize>(grid.cells.size()))) {
    throw FormatError(path.string() + ": truncated class grid");
  }
  return grid;
}

namespace {

using Rgb = std::array<std::uint8_t, 3>;

// Rows are written top-down so +y points up in the image.
template <typename PixelFn>
void write_ppm(const std::filesystem::path& path, int width, int height, PixelFn pixel) {
  auto os = open_out(path);
  os << "P6\n" << width << ' ' << height << "\n255\n";
  for (int row = height - 1; row >= 0; --row) {
    for (int col = 0; col < width; ++col) {
      const Rgb c = pixel(row, col);
      os.write(reinterpret_cast<const char*>(c.data()), 3);
    }
  }
}

Rgb ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const auto to8 = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * v)); };
  if (t < 0.5) return {0, to8(2.0 * t), to8(1.0 - 2.0 * t)};
  return {to8(2.0 * t - 1.0), to8(2.0 - 2.0 * t), 0};
}

}  // namespace

void render_channel_ppm(const std::filesystem::path& path, const terrain::FeatureMap& map,
                        int channel) {
  const auto& plane = map.channels.at(static_cast<std::size_t>(channel));
  float lo = std::numeric_limits<float>::infinity();
  float hi = -std::numeric_limits<float>::infinity();
  for (std::size_t i = 0; i < plane.size(); ++i) {
    if (!map.known[i]) continue;
    lo = std::min(lo, plane[i]);
    hi = std::max(hi, plane[i]);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  write_ppm(path, map.geometry.width, map.geometry.height, [&](int r, int c) -> Rgb {
    if (!map.known(r, c)) return {0, 0, 0};
    return ramp((plane(r, c) - lo) / span);
  });
}

void render_levels_ppm(const std::filesystem::path& path, const ClassGrid& levels) {
  write_ppm(path, levels.geometry.width, levels.geometry.height, [&](int r, int c) -> Rgb {
    switch (levels.cells(r, c)) {
      case 1: return {0, 170, 0};
      case 2: return {230, 200, 0};
      case 3: return {210, 0, 0};
      default: return {0, 0, 0};
    }
  });
}

void render_classes_ppm(const std::filesystem::path& path, const ClassGrid& classes) {
  static constexpr std::array<Rgb, 8> palette{{{0, 170, 0},
                                               {230, 200, 0},
                                               {210, 0, 0},
                                               {40, 90, 220},
                                               {200, 0, 200},
                                               {0, 200, 200},
                                               {140, 90, 40},
                                               {220, 220, 220}}};
  write_ppm(path, classes.geometry.width, classes.geometry.height, [&](int r, int c) -> Rgb {
    const int v = classes.cells(r, c);
    if (v == 0) return {0, 0, 0};
    return palette[static_cast<std::size_t>(v - 1) % palette.size()];
  });
}

}  // namespace travgrid::io
