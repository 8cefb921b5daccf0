#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lpbf {

// Error hierarchy. Every error carries a short machine-readable code that the
// CLI forwards in its JSON error record.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain_error", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config_error", what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape_error", what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format_error", what) {}
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric_error", what) {}
};

/// Process parameters xi = (P, V, T_sub, alpha).
struct ProcessParams {
  double power = 300.0;       // W
  double speed = 1.5;         // m/s
  double substrate = 300.0;   // K
  double absorptivity = 0.3;  // -

  std::array<double, 4> as_array() const { return {power, speed, substrate, absorptivity}; }
  static ProcessParams from_array(const std::array<double, 4>& a) {
    return {a[0], a[1], a[2], a[3]};
  }
  bool operator==(const ProcessParams&) const = default;
};

inline constexpr std::size_t kParamCount = 4;
inline constexpr std::array<const char*, kParamCount> kParamNames = {"P", "V", "T_sub", "alpha"};

/// Axis-aligned box over process parameters. Defaults are the training sweep
/// envelope.
struct ParamBounds {
  std::array<double, 4> lo = {100.0, 0.5, 300.0, 0.1};
  std::array<double, 4> hi = {500.0, 2.5, 540.0, 0.6};

  bool contains(const ProcessParams& p) const {
    const auto a = p.as_array();
    for (std::size_t i = 0; i < kParamCount; ++i)
      if (a[i] < lo[i] || a[i] > hi[i]) return false;
    return true;
  }
  double normalize(std::size_t i, double v) const { return (v - lo[i]) / (hi[i] - lo[i]); }
  double denormalize(std::size_t i, double u) const { return lo[i] + u * (hi[i] - lo[i]); }
};

enum class PlaneId : std::uint8_t { XY = 0, XZ = 1 };

inline const char* plane_name(PlaneId p) { return p == PlaneId::XY ? "xy" : "xz"; }
PlaneId plane_from_name(const std::string& s);

/// Uniform 2D grid in micrometres. Index (i, j) maps to (x0 + i*dx, y0 + j*dy);
/// for the x-z plane the second axis is z.
struct Grid2D {
  std::size_t nx = 0;
  std::size_t ny = 0;
  double x0 = 0.0;
  double dx = 1.0;
  double y0 = 0.0;
  double dy = 1.0;

  std::size_t size() const { return nx * ny; }
  double x(std::size_t i) const { return x0 + static_cast<double>(i) * dx; }
  double y(std::size_t j) const { return y0 + static_cast<double>(j) * dy; }
  double x_last() const { return x(nx - 1); }
  double y_last() const { return y(ny - 1); }
  /// Same physical extents, possibly different resolution.
  bool same_extent(const Grid2D& o, double tol = 1e-9) const;
  /// Grid with (factor*(n-1)+1) points per axis over the same extents.
  Grid2D refined(std::size_t factor) const;
  bool operator==(const Grid2D&) const = default;
};

/// Laser-centred section grids. x spans [-1375, 1375] um in 101 points; the
/// x-y plane spans y in [-220, 220] um in 51 points, the x-z plane spans
/// z in [750, 1000] um in 26 points.
Grid2D chi_xy();
Grid2D chi_xz();
inline Grid2D chi_grid(PlaneId p) { return p == PlaneId::XY ? chi_xy() : chi_xz(); }

/// Temperature values on a plane grid, row-major over (x, second axis):
/// value(i, j) = values[i * ny + j].
struct PlaneSection {
  PlaneId plane = PlaneId::XY;
  Grid2D grid;
  std::vector<double> values;
  bool clamped = false;  // some grid node fell outside the source domain

  double at(std::size_t i, std::size_t j) const { return values[i * grid.ny + j]; }
  double& at(std::size_t i, std::size_t j) { return values[i * grid.ny + j]; }
};

inline PlaneSection make_section(PlaneId plane, const Grid2D& g, double fill = 0.0) {
  return PlaneSection{plane, g, std::vector<double>(g.size(), fill), false};
}

/// Bilinear resampling onto `target`; points outside the source extents are
/// clamped to the nearest edge and mark the result clamped.
PlaneSection resample(const PlaneSection& s, const Grid2D& target);

}  // namespace lpbf
