#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lpbf/predictor.hpp"

namespace lpbf::control {

struct ControlConfig {
  double phi = 50.0;     // penalty weight, um of Ra
  double t_t1 = 3000.0;  // K
  double t_t2 = 3400.0;  // K
  double p_min = 100.0, p_max = 500.0;  // W
  double v_min = 0.5, v_max = 2.5;      // m/s
  double step = 0.01;    // Adam step in normalized units
  std::size_t max_iterations = 200;
  double tolerance = 1e-5;   // relative objective change
  std::size_t patience = 5;  // consecutive iterations below tolerance
  double barrier = 1e3;      // objective floor for a cold pool, um
  /// Points per axis of a coarse objective scan; Adam starts from the best
  /// lattice point when it beats the given start. 0 disables the scan.
  std::size_t scan = 10;
  std::size_t starts = 3;  // Adam runs from the best distinct lattice points

  /// Throws ConfigError on inverted thresholds or bounds, or bounds outside `envelope`.
  void validate(const ParamBounds& envelope = {}) const;
  double normalize_p(double p) const { return (p - p_min) / (p_max - p_min); }
  double normalize_v(double v) const { return (v - v_min) / (v_max - v_min); }
};

/// 0 below t1, 1 above t2, and 1/2 + 1/2 sin(pi (T - t1)/(t2 - t1) - pi/2) between.
double penalty_phi(double t_peak, double t1, double t2);
double penalty_phi_slope(double t_peak, double t1, double t2);

struct ObjectiveValue {
  double value = 0.0;
  std::array<double, 2> grad{};  // d value / d (P, V)
  double t_peak = 0.0;           // smooth, K
  double ra = 0.0;               // um
  double penalty = 0.0;          // phi * Phi
  bool cold = false;
  bool extrapolated = false;
};

/// f_R(SRI) + phi * Phi(T_peak) from the smooth features. A cold pool scores
/// barrier + (T_s - T_peak) so the gradient still points toward melting.
ObjectiveValue objective(double power, double speed, double substrate, double absorptivity,
                         const surrogate::MeltPoolPredictor& model, const ControlConfig& config,
                         bool with_gradient = true);

struct TraceEntry {
  std::size_t iteration = 0;
  double power = 0.0;
  double speed = 0.0;
  double objective = 0.0;
  double t_peak = 0.0;
  double ra = 0.0;
  bool cold = false;
};

struct OptimizeResult {
  double power = 0.0;
  double speed = 0.0;
  ObjectiveValue value;
  std::vector<TraceEntry> trace;
  std::size_t best_iteration = 0;
  bool converged = false;

  std::string trace_csv() const;
  std::string to_json() const;
};

using ObjectiveFn = std::function<ObjectiveValue(double power, double speed)>;

/// Adam on normalized (P, V) with projection onto the bounds after every step;
/// returns the best point visited. Throws NumericError on a non-finite objective.
/// `value`, when given, scores the scan lattice without gradients.
OptimizeResult optimize_pv(double power, double speed, const ObjectiveFn& f, const ControlConfig& config,
                           const ObjectiveFn& value = {});
OptimizeResult optimize_pv(double power, double speed, double substrate, double absorptivity,
                           const surrogate::MeltPoolPredictor& model, const ControlConfig& config);

/// Hard-variant Ra over an n_power x n_speed grid spanning the bounds.
struct ProcessWindow {
  double substrate = 0.0;
  double absorptivity = 0.0;
  std::vector<double> power;  // rows
  std::vector<double> speed;  // columns
  std::vector<double> ra;     // row-major; kColdSentinel where the pool is cold
  std::vector<double> t_peak;
  std::size_t cold_cells = 0;

  static constexpr double kColdSentinel = -1.0;
  double at(std::size_t ip, std::size_t iv) const { return ra[ip * speed.size() + iv]; }
  /// Bare n_power x n_speed matrix.
  std::string matrix_csv() const;
  /// axis,index,value rows.
  std::string axes_csv() const;
  std::string to_json() const;
};

ProcessWindow process_window(double substrate, double absorptivity, const surrogate::MeltPoolPredictor& model,
                             std::size_t n_power, std::size_t n_speed, const ControlConfig& config,
                             std::size_t threads = 1);

}  // namespace lpbf::control
