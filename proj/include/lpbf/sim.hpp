#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lpbf/common.hpp"
#include "lpbf/thermo.hpp"

namespace lpbf::sim {

/// Box domain in micrometres with a uniform grid. The top face z = z_max is
/// the powder surface and must sit at 1000 um.
struct SimDomain {
  double x_min = 0.0, x_max = 10000.0;
  double y_min = -1000.0, y_max = 1000.0;
  double z_min = 0.0, z_max = 1000.0;
  double dx = 12.5, dy = 12.5, dz = 12.5;
  double layer_thickness = 30.0;  // um
  double beam_radius = 50.0;      // um
  double h_conv = 1.0;            // W/(m^2 K)
  double t_ambient = 300.0;       // K
  double laser_start_x = 2000.0;  // um
  double laser_stop_x = 8000.0;   // um

  std::size_t nx() const;
  std::size_t ny() const;
  std::size_t nz() const;
  void validate() const;
};

struct LaserState {
  double x = 0.0, y = 0.0, z = 1000.0;  // um
  double speed = 1.5;                   // m/s
  double power = 300.0;                 // W
  double absorptivity = 0.3;
};

/// Volumetric source in W/m^3 at a node (um coordinates). Zero outside the
/// powder band z in [z_top - t_h, z_top].
double source_term(double x, double y, double z, const LaserState& laser, const SimDomain& domain);

/// Node-based temperature/enthalpy field, x fastest:
/// index(i, j, k) = i + nx * (j + ny * k).
struct TemperatureField3D {
  std::size_t nx = 0, ny = 0, nz = 0;
  double x0 = 0, y0 = 0, z0 = 0;
  double dx = 1, dy = 1, dz = 1;
  std::vector<double> temperature;  // K
  std::vector<double> enthalpy;     // J/kg
  double time = 0.0;                // s

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return i + nx * (j + ny * k); }
  std::size_t size() const { return nx * ny * nz; }
  double x(std::size_t i) const { return x0 + static_cast<double>(i) * dx; }
  double y(std::size_t j) const { return y0 + static_cast<double>(j) * dy; }
  double z(std::size_t k) const { return z0 + static_cast<double>(k) * dz; }
};

/// Numerical options. `constant_properties` replaces the enthalpy model with
/// h = c_s (T - T_ref) and k = k_s (no latent heat).
struct SolverOptions {
  thermo::MaterialProps material{};
  double vapor_width = 50.0;
  double cfl_safety = 0.8;
  bool constant_properties = false;
  std::size_t window_steps = 100;
  std::size_t metric_stride = 5;
  double steady_tol = 1e-3;
};

class ThermalSolver {
 public:
  ThermalSolver(SimDomain domain, SolverOptions options);

  TemperatureField3D uniform_field(double t) const;
  /// Largest explicit step allowed by the stability bound with the safety factor.
  double max_stable_dt() const;
  /// One explicit step; throws StabilityError when dt exceeds max_stable_dt().
  void advance(TemperatureField3D& field, const LaserState& laser, double dt) const;
  /// Sum of rho*h*dV over the control volumes (J per unit of um^3 * 1e-18).
  double total_enthalpy(const TemperatureField3D& field) const;

  double temperature_of(double h) const;
  double enthalpy_of(double t) const;

  const SimDomain& domain() const { return domain_; }
  const SolverOptions& options() const { return options_; }
  const thermo::EnthalpyCurve& curve() const { return curve_; }

 private:
  SimDomain domain_;
  SolverOptions options_;
  thermo::EnthalpyCurve curve_;
};

class StabilityError : public Error {
 public:
  explicit StabilityError(const std::string& what) : Error("stability_error", what) {}
};

/// Melt-pool metrics on the solver grid: T_peak, and the largest molten extent
/// of any x-row (L) or y-column (W), with linearly interpolated solidus crossings.
struct PoolMetrics {
  double t_peak = 0.0;  // K
  double length = 0.0;  // um
  double width = 0.0;   // um
};

PoolMetrics pool_metrics(const TemperatureField3D& field, double t_solidus);

struct SteadyDiagnostics {
  std::size_t steps = 0;
  double dt = 0.0;
  double laser_x = 0.0;
  PoolMetrics metrics{};
  std::array<double, 3> last_rel_change{};
  bool converged = false;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, SteadyDiagnostics d)
      : Error("convergence_error", what), diagnostics(d) {}
  SteadyDiagnostics diagnostics;
};

struct SteadyResult {
  TemperatureField3D field;
  LaserState laser;
  SteadyDiagnostics diagnostics;
};

/// Validity envelope of the solver.
bool in_solver_envelope(const ProcessParams& p);

/// Initial field at T_sub, laser from `laser_start_x` along +x; stops when
/// windowed means of T_peak, L and W change by less than `steady_tol`
/// relative between consecutive windows of `window_steps` steps.
SteadyResult run_to_steady(const ProcessParams& params, const SimDomain& domain,
                           const SolverOptions& options = {});

/// Trilinear sample; coordinates outside the domain are clamped and reported.
double sample(const TemperatureField3D& field, double x, double y, double z, bool* clamped = nullptr);

/// Laser-centred sections on the fixed grids (x-y at the top surface, x-z at
/// y = laser y).
std::pair<PlaneSection, PlaneSection> extract_sections(const TemperatureField3D& field,
                                                       const LaserState& laser,
                                                       const Grid2D& xy = chi_xy(),
                                                       const Grid2D& xz = chi_xz());

}  // namespace lpbf::sim
