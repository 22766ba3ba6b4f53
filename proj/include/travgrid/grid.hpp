#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace travgrid {

struct CellIndex {
  int row = 0;
  int col = 0;

  friend bool operator==(const CellIndex&, const CellIndex&) = default;
  friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

// Placement of a square-celled grid in its frame. Row index grows along +y,
// column index along +x; origin is the lower-left corner of cell (0, 0).
struct MapGeometry {
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  double resolution = 0.2;
  int width = 0;
  int height = 0;

  std::size_t cell_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t linear(int row, int col) const {
    return static_cast<std::size_t>(row) * width + col;
  }
  bool contains(int row, int col) const {
    return row >= 0 && col >= 0 && row < height && col < width;
  }
  double center_x(int col) const { return origin.x() + (col + 0.5) * resolution; }
  double center_y(int row) const { return origin.y() + (row + 0.5) * resolution; }
  Eigen::Vector2d center(int row, int col) const { return {center_x(col), center_y(row)}; }

  std::optional<CellIndex> cell_of(double x, double y) const {
    const double fc = std::floor((x - origin.x()) / resolution);
    const double fr = std::floor((y - origin.y()) / resolution);
    if (fc < 0 || fr < 0 || fc >= width || fr >= height) return std::nullopt;
    return CellIndex{static_cast<int>(fr), static_cast<int>(fc)};
  }

  // Square map of `extent` meters centered on the frame origin.
  static MapGeometry centered(double extent, double resolution) {
    const double cells = extent / resolution;
    const int n = static_cast<int>(std::lround(cells));
    if (n <= 0 || std::abs(cells - n) > 1e-9) {
      throw std::invalid_argument("map extent " + std::to_string(extent) +
                                  " is not an integral number of cells at resolution " +
                                  std::to_string(resolution));
    }
    MapGeometry g;
    g.resolution = resolution;
    g.width = g.height = n;
    g.origin = Eigen::Vector2d(-0.5 * n * resolution, -0.5 * n * resolution);
    return g;
  }

  friend bool operator==(const MapGeometry& a, const MapGeometry& b) {
    return a.origin == b.origin && a.resolution == b.resolution && a.width == b.width &&
           a.height == b.height;
  }
};

template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(int row, int col) { return data_[static_cast<std::size_t>(row) * width_ + col]; }
  const T& operator()(int row, int col) const {
    return data_[static_cast<std::size_t>(row) * width_ + col];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

}  // namespace travgrid
