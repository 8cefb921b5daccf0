#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lpbf/common.hpp"
#include "lpbf/thermo.hpp"

namespace lpbf::features {

/// Melt-pool scalars in SI units (Ra in micrometres).
struct MeltPoolState {
  double t_peak = 0.0;   // K
  double length = 0.0;   // m
  double width = 0.0;    // m
  std::optional<double> aspect;     // L / W, only when W > 0
  std::optional<double> marangoni;  // N
  std::optional<double> sri;
  std::optional<double> ra;         // um
  bool ra_clamped = false;
  bool cold = false;  // no molten node: F, SRI and Ra undefined
};

struct SriConstants {
  double length_scale = 50e-6;   // m
  double contact_angle = 1.1;
  double energy_density = 150.0; // J/m^2
  double gamma_t = 0.00035;      // N/(m K)
  double latent_melt = 4.23e5;   // J/kg
  double kappa = 1.0;            // unit-calibration prefactor
  void validate() const;
};

/// Relaxation widths for the differentiable variants.
struct SmoothParams {
  double tau_peak = 10.0;   // K, log-sum-exp temperature for T_peak
  double tau_step = 5.0;    // K, logistic width of the melt indicator
  double tau_length = 5.0;  // um, log-sum-exp temperature for the row max
};

/// A scalar together with its gradient with respect to every section value.
struct SmoothValue {
  double value = 0.0;
  std::vector<double> d_xy;
  std::vector<double> d_xz;
};

// Hard (reporting) variants. Lengths in metres.
double peak_temperature(const PlaneSection& xy, const PlaneSection& xz);
double pool_length(const PlaneSection& xy, const PlaneSection& xz, double t_solidus);
double pool_width(const PlaneSection& xy, double t_solidus);

// Smooth variants with exact gradients. Lengths in metres.
SmoothValue peak_temperature_smooth(const PlaneSection& xy, const PlaneSection& xz, const SmoothParams& sp = {});
SmoothValue pool_length_smooth(const PlaneSection& xy, const PlaneSection& xz, double t_solidus,
                               const SmoothParams& sp = {});
SmoothValue pool_width_smooth(const PlaneSection& xy, double t_solidus, const SmoothParams& sp = {});

/// F = gamma_T (T_peak - T_s) pi L / 2.
double marangoni_force(double t_peak, double length, double t_solidus, double gamma_t = 0.00035);

struct SriPartials {
  double value;
  double d_t_peak;
  double d_length;
  double d_width;
};

/// SRI = kappa E Lhat^2 eps^0.25 sqrt(2 beta / (Hhat gamma_T pi L (T_peak - T_s))).
double sri(double t_peak, double length, double width, double t_solidus, const SriConstants& c = {});
SriPartials sri_with_partials(double t_peak, double length, double width, double t_solidus,
                              const SriConstants& c = {});

struct Roughness {
  double ra;       // um
  double slope;    // d ra / d sri (0 when clamped)
  bool clamped;
};

/// Bi-linear fit: 234.456 s - 25.123 below 0.168, 18.477 s + 10.925 above;
/// negative values clamp to 0.
Roughness roughness(double sri_value);

inline constexpr double kRaBreakpoint = 0.168;
inline constexpr double kRaLowSlope = 234.456;
inline constexpr double kRaLowIntercept = -25.123;
inline constexpr double kRaHighSlope = 18.477;
inline constexpr double kRaHighIntercept = 10.925;

/// Full hard-variant state from a pair of sections.
MeltPoolState extract_state(const PlaneSection& xy, const PlaneSection& xz,
                            const thermo::MaterialProps& m = {}, const SriConstants& c = {});
/// Derived quantities (aspect, F, SRI, Ra) from T_peak, L and W.
MeltPoolState state_from_scalars(double t_peak, double length, double width, const thermo::MaterialProps& m = {},
                                 const SriConstants& c = {});

std::string to_json(const MeltPoolState& s);
std::string csv_header();
std::string csv_row(const ProcessParams& p, const MeltPoolState& s);

}  // namespace lpbf::features
