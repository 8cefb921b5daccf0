#pragma once

#include <array>
#include <string>

#include "lpbf/common.hpp"

namespace lpbf::thermo {

/// Thermophysical properties. Defaults are AlSi10Mg.
struct MaterialProps {
  double density = 2670.0;             // kg/m^3
  double cp_solid = 546.0;             // J/(kg K)
  double cp_liquid = 632.0;            // J/(kg K)
  double latent_melt = 4.23e5;         // J/kg
  double latent_vapor = 1.14e7;        // J/kg
  double k_solid = 113.0;              // W/(m K)
  double k_liquid = 133.0;             // W/(m K)
  double t_solidus = 831.0;            // K
  double t_liquidus = 867.0;           // K
  double t_boiling = 2740.0;           // K
  double absorptivity = 0.3;

  /// Throws DomainError unless every field is positive and T_s < T_l < T_b.
  void validate() const;
};

/// Reads `key = value` lines ('#' comments allowed). Unknown keys are an
/// error; missing keys keep their defaults.
MaterialProps load_material(const std::string& path);
MaterialProps parse_material(const std::string& text);
std::string format_material(const MaterialProps& m);

/// Piecewise-linear h(T) with a mushy ramp between solidus and liquidus and a
/// vaporization ramp of width `vapor_width` centred on the boiling point.
class EnthalpyCurve {
 public:
  explicit EnthalpyCurve(const MaterialProps& props = {}, double t_ref = 300.0,
                         double vapor_width = 50.0);

  double enthalpy(double t) const {
    if (t < 0.0) throw DomainError("enthalpy_of_temperature: negative temperature");
    return enthalpy_unchecked(t);
  }

  double enthalpy_unchecked(double t) const {
    if (t <= t_[1]) return cp_solid_ * (t - t_[0]);
    for (int s = 1; s < 4; ++s) {
      if (t <= t_[s + 1])
        return h_[s] + (h_[s + 1] - h_[s]) * ((t - t_[s]) / (t_[s + 1] - t_[s]));
    }
    return h_[4] + cp_liquid_ * (t - t_[4]);
  }

  double temperature(double h) const {
    if (h <= h_[1]) {
      const double t = t_[0] + h / cp_solid_;
      if (t < 0.0) throw DomainError("temperature_of_enthalpy: enthalpy below absolute zero");
      return t;
    }
    return temperature_unchecked(h);
  }

  double temperature_unchecked(double h) const {
    if (h <= h_[1]) return t_[0] + h / cp_solid_;
    if (h <= h_[2]) return t_[1] + (t_[2] - t_[1]) * ((h - h_[1]) / (h_[2] - h_[1]));
    if (h <= h_[3]) return t_[2] + (t_[3] - t_[2]) * ((h - h_[2]) / (h_[3] - h_[2]));
    if (h <= h_[4]) return t_[3] + (t_[4] - t_[3]) * ((h - h_[3]) / (h_[4] - h_[3]));
    return t_[4] + (h - h_[4]) / cp_liquid_;
  }

  /// Breakpoints T_ref, T_s, T_l, T_b - w/2, T_b + w/2 and h at each.
  const std::array<double, 5>& breakpoint_temperatures() const { return t_; }
  const std::array<double, 5>& breakpoint_enthalpies() const { return h_; }
  double reference_temperature() const { return t_[0]; }
  double vapor_width() const { return t_[4] - t_[3]; }

 private:
  double cp_solid_;
  double cp_liquid_;
  std::array<double, 5> t_{};
  std::array<double, 5> h_{};
};

inline double enthalpy_of_temperature(double t, const EnthalpyCurve& c) { return c.enthalpy(t); }
inline double temperature_of_enthalpy(double h, const EnthalpyCurve& c) { return c.temperature(h); }

/// k_s below solidus, k_l above liquidus, linear blend across the mushy zone.
inline double conductivity_of_temperature(double t, const MaterialProps& m) {
  if (t < 0.0) throw DomainError("conductivity_of_temperature: negative temperature");
  if (t <= m.t_solidus) return m.k_solid;
  if (t >= m.t_liquidus) return m.k_liquid;
  const double f = (t - m.t_solidus) / (m.t_liquidus - m.t_solidus);
  return m.k_solid + f * (m.k_liquid - m.k_solid);
}

}  // namespace lpbf::thermo
