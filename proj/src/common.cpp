#include "lpbf/common.hpp"

#include <algorithm>
#include <cmath>

namespace lpbf {

PlaneId plane_from_name(const std::string& s) {
  if (s == "xy" || s == "x-y") return PlaneId::XY;
  if (s == "xz" || s == "x-z") return PlaneId::XZ;
  throw ConfigError("unknown plane '" + s + "' (expected xy or xz)");
}

bool Grid2D::same_extent(const Grid2D& o, double tol) const {
  auto close = [tol](double a, double b) { return std::abs(a - b) <= tol * (1.0 + std::abs(a)); };
  return close(x0, o.x0) && close(y0, o.y0) && close(x_last(), o.x_last()) &&
         close(y_last(), o.y_last());
}

Grid2D Grid2D::refined(std::size_t factor) const {
  Grid2D g = *this;
  g.nx = factor * (nx - 1) + 1;
  g.ny = factor * (ny - 1) + 1;
  g.dx = dx / static_cast<double>(factor);
  g.dy = dy / static_cast<double>(factor);
  return g;
}

PlaneSection resample(const PlaneSection& s, const Grid2D& target) {
  const auto& g = s.grid;
  if (g.nx < 2 || g.ny < 2 || s.values.size() != g.size())
    throw DomainError("resample: source section needs at least 2x2 values");
  PlaneSection out = make_section(s.plane, target);
  out.clamped = s.clamped;
  auto locate = [&out](double t, std::size_t n, std::size_t& k, double& w) {
    const double hi = static_cast<double>(n - 1);
    if (t < 0.0 || t > hi) out.clamped = true;
    t = std::clamp(t, 0.0, hi);
    k = std::min(static_cast<std::size_t>(t), n - 2);
    w = t - static_cast<double>(k);
  };
  for (std::size_t i = 0; i < target.nx; ++i) {
    std::size_t a;
    double wx;
    locate((target.x(i) - g.x0) / g.dx, g.nx, a, wx);
    for (std::size_t j = 0; j < target.ny; ++j) {
      std::size_t b;
      double wy;
      locate((target.y(j) - g.y0) / g.dy, g.ny, b, wy);
      out.at(i, j) = (1.0 - wx) * ((1.0 - wy) * s.at(a, b) + wy * s.at(a, b + 1)) +
                     wx * ((1.0 - wy) * s.at(a + 1, b) + wy * s.at(a + 1, b + 1));
    }
  }
  return out;
}

Grid2D chi_xy() { return Grid2D{101, 51, -1375.0, 27.5, -220.0, 8.8}; }
Grid2D chi_xz() { return Grid2D{101, 26, -1375.0, 27.5, 750.0, 10.0}; }

}  // namespace lpbf
