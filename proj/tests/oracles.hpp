#pragma once
// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <vector>

#include <Eigen/Core>

#include "travgrid/grid.hpp"
#include "travgrid/labeling.hpp"
#include "travgrid/nn/var.hpp"

namespace oracle {

// Convex quad through four sorted random angles on a jittered ellipse.
inline travgrid::labeling::Quad random_convex_quad(std::mt19937_64& rng, double extent) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<double, 4> ang;
  for (auto& a : ang) a = u(rng) * 2 * std::numbers::pi;
  std::sort(ang.begin(), ang.end());
  const double cx = extent * (0.3 + 0.4 * u(rng));
  const double cy = extent * (0.3 + 0.4 * u(rng));
  const double rx = extent * (0.05 + 0.25 * u(rng));
  const double ry = extent * (0.05 + 0.25 * u(rng));
  travgrid::labeling::Quad q;
  for (int i = 0; i < 4; ++i) q[i] = {cx + rx * std::cos(ang[i]), cy + ry * std::sin(ang[i])};
  return q;
}

// Brute force: every cell center tested against every edge of a convex
// polygon by the sign of the cross product (either winding accepted).
inline std::set<travgrid::CellIndex> cells_inside(const travgrid::labeling::Quad& q,
                                                  const travgrid::MapGeometry& g) {
  std::set<travgrid::CellIndex> out;
  double area2 = 0.0;
  for (int i = 0; i < 4; ++i) {
    const auto& a = q[i];
    const auto& b = q[(i + 1) % 4];
    area2 += a.x() * b.y() - b.x() * a.y();
  }
  if (area2 == 0.0) return out;
  const double sign = area2 > 0 ? 1.0 : -1.0;
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      const Eigen::Vector2d p = g.center(r, c);
      bool inside = true;
      for (int i = 0; i < 4 && inside; ++i) {
        const Eigen::Vector2d e = q[(i + 1) % 4] - q[i];
        const Eigen::Vector2d d = p - q[i];
        inside = sign * (e.x() * d.y() - e.y() * d.x()) > 0.0;
      }
      if (inside) out.insert({r, c});
    }
  }
  return out;
}

// Largest relative error between analytic and central-difference gradients of
// f with respect to every entry of every input. rel = |a - n| / max(1, |a|, |n|).
template <typename Loss>
double gradient_error(std::vector<travgrid::nn::Var<double>> inputs, Loss f, double h = 1e-6) {
  for (auto& v : inputs) v.zero_grad();
  auto out = f(inputs);
  travgrid::nn::backward(out);
  double worst = 0.0;
  for (auto& v : inputs) {
    const auto analytic = v.grad();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v.value()[i];
      v.value()[i] = keep + h;
      const double up = f(inputs).item();
      v.value()[i] = keep - h;
      const double down = f(inputs).item();
      v.value()[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
    }
  }
  return worst;
}

// Random [rows x cols] parameter in f64.
inline travgrid::nn::Var<double> random_param(int rows, int cols, std::mt19937_64& rng,
                                              double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (auto& x : v) x = u(rng);
  return travgrid::nn::Var<double>::parameter(rows, cols, std::move(v));
}

}  // namespace oracle
