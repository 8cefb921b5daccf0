#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "lpbf/calib.hpp"
#include "lpbf/control.hpp"
#include "lpbf/predictor.hpp"

namespace lpbf::demo {

/// Truncated cone built bottom-up; lengths in um.
struct ConeGeometry {
  double base_radius = 10000.0;
  double top_radius = 3000.0;
  double height = 30000.0;

  double radius_at(double h) const;
  double area_at(double h) const;    // m^2
  double volume_to(double h) const;  // m^3 of material below h
};

/// Lumped part-scale substrate temperature model.
struct SubstrateModel {
  double efficiency = 0.6;          // fraction of absorbed energy retained by the part
  double hatch_spacing = 100.0;     // um
  double dwell_time = 8.0;          // s per layer (recoat and wait)
  double base_capacity = 20.0;      // J/K, plate region coupled to the part
  double rho_cp = 2670.0 * 546.0;   // J/(m^3 K)
  double tau0 = 60.0;               // s, cooling constant at the plate
  double tau_height = 7000.0;       // um; tau(h) = tau0 exp(h / tau_height)
  double t_ambient = 300.0;         // K

  double tau(double h) const { return tau0 * std::exp(h / tau_height); }
  double capacity(const ConeGeometry& g, double h) const { return base_capacity + rho_cp * g.volume_to(h); }
};

struct DemoConfig {
  ConeGeometry cone{};
  double layer_thickness = 30.0;  // um
  std::size_t layers_per_step = 10;
  double initial_power = 300.0;   // W
  double initial_speed = 1.65;    // m/s
  double initial_substrate = 300.0;
  SubstrateModel substrate{};
  bool control = true;
  control::ControlConfig control_config{};
  calib::GaussianSpec alpha = calib::GaussianSpec::make(0.3, 0.02, "-");
  std::size_t uq_samples = 0;  // 0 disables uncertainty bands
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t steps() const;
};

/// One control step: T_next = T_amb + (T - T_amb) exp(-dt/tau(h))
///   + efficiency * layers * alpha P A(h) / (V hatch C(h)),
/// with dt = layers * (A(h) / (V hatch) + dwell).
double substrate_update(double t_sub, double power, double speed, double absorptivity, double height,
                        std::size_t layers, const ConeGeometry& cone, const SubstrateModel& model,
                        double layer_thickness);

struct TraceRow {
  std::size_t step = 0;
  double height = 0.0;  // um at the start of the step
  double t_sub = 0.0;
  double power = 0.0;
  double speed = 0.0;
  double t_peak = 0.0;  // smooth features, as seen by the controller
  double ra = 0.0;
  double t_peak_hard = 0.0;
  double ra_hard = 0.0;
  bool fallback = false;  // optimizer failed, previous (P, V) kept
  bool cold = false;
  std::optional<calib::UqResult> uq;
};

struct BuildTrace {
  bool controlled = false;
  std::vector<TraceRow> rows;

  /// step,T_sub_K,P_W,V_m_s,T_peak_K,Ra_um,flags
  std::string to_csv() const;
  /// Per-step 5/50/95 percentiles of T_peak and Ra; empty when no bands.
  std::string uq_csv() const;
};

struct DemoResult {
  BuildTrace controlled;
  BuildTrace uncontrolled;

  double fraction_ra_not_worse(bool hard = false) const;
  double max_controlled_t_peak() const;
  std::string summary_json(const DemoConfig& config) const;
};

/// Runs both branches; the controlled branch only optimizes when config.control
/// is set, otherwise it mirrors the uncontrolled dynamics.
DemoResult run_demo(const DemoConfig& config, const surrogate::MeltPoolPredictor& model);
/// One branch. The first controlled step runs the configured scan; later steps
/// warm-start Adam from the previous optimum.
BuildTrace run_branch(const DemoConfig& config, const surrogate::MeltPoolPredictor& model, bool controlled);

}  // namespace lpbf::demo
