#include <gtest/gtest.h>

#include <cmath>

#include "lpbf/thermo.hpp"

using namespace lpbf;
using namespace lpbf::thermo;

TEST(Material, DefaultsMatchAlSi10MgTable) {
  const MaterialProps m;
  EXPECT_EQ(m.density, 2670.0);
  EXPECT_EQ(m.cp_solid, 546.0);
  EXPECT_EQ(m.cp_liquid, 632.0);
  EXPECT_EQ(m.latent_melt, 4.23e5);
  EXPECT_EQ(m.latent_vapor, 1.14e7);
  EXPECT_EQ(m.k_solid, 113.0);
  EXPECT_EQ(m.k_liquid, 133.0);
  EXPECT_EQ(m.t_solidus, 831.0);
  EXPECT_EQ(m.t_liquidus, 867.0);
  EXPECT_EQ(m.t_boiling, 2740.0);
  EXPECT_EQ(m.absorptivity, 0.3);
  EXPECT_NO_THROW(m.validate());
}

TEST(Material, ValidationRejectsBadOrdering) {
  MaterialProps m;
  m.t_liquidus = 800.0;
  EXPECT_THROW(m.validate(), DomainError);
  m = MaterialProps{};
  m.density = 0.0;
  EXPECT_THROW(m.validate(), DomainError);
}

TEST(Material, KeyValueConfigRoundTrip) {
  MaterialProps m;
  m.k_solid = 150.5;
  m.t_boiling = 3000.0;
  const MaterialProps back = parse_material(format_material(m));
  EXPECT_EQ(back.k_solid, 150.5);
  EXPECT_EQ(back.t_boiling, 3000.0);
  EXPECT_EQ(back.density, m.density);

  const MaterialProps partial = parse_material("# comment\ndensity = 4430  # Ti\n\n");
  EXPECT_EQ(partial.density, 4430.0);
  EXPECT_EQ(partial.cp_solid, 546.0);
  EXPECT_THROW(parse_material("densty = 1"), ConfigError);
  EXPECT_THROW(parse_material("density = abc"), ConfigError);
  EXPECT_THROW(parse_material("density = -1"), DomainError);
}

TEST(Enthalpy, ReferenceAndBreakpointValues) {
  const EnthalpyCurve c;
  EXPECT_EQ(enthalpy_of_temperature(300.0, c), 0.0);
  // 546 * 531
  EXPECT_EQ(enthalpy_of_temperature(831.0, c), 289926.0);
  // 289926 + 589 * 36 + 423000
  EXPECT_EQ(enthalpy_of_temperature(867.0, c), 734130.0);
  EXPECT_EQ(temperature_of_enthalpy(0.0, c), 300.0);
  EXPECT_EQ(temperature_of_enthalpy(289926.0, c), 831.0);
  EXPECT_THROW(enthalpy_of_temperature(-1.0, c), DomainError);
}

TEST(Enthalpy, JumpMagnitudesAreExact) {
  const MaterialProps m;
  const EnthalpyCurve c(m);
  const double melt = c.enthalpy(m.t_liquidus) - c.enthalpy(m.t_solidus) -
                      0.5 * (m.cp_solid + m.cp_liquid) * (m.t_liquidus - m.t_solidus);
  EXPECT_EQ(melt, m.latent_melt);
  const double w = c.vapor_width();
  EXPECT_EQ(w, 50.0);
  const double vap = c.enthalpy(m.t_boiling + 0.5 * w) - c.enthalpy(m.t_boiling - 0.5 * w);
  EXPECT_EQ(vap, m.latent_vapor + m.cp_liquid * w);
}

TEST(Enthalpy, MonotoneAndRoundTripOnDenseSample) {
  const EnthalpyCurve c;
  double prev = -1e300;
  for (int s = 0; s <= 10000; ++s) {
    const double t = 300.0 + 3200.0 * s / 10000.0;
    const double h = c.enthalpy(t);
    EXPECT_GT(h, prev);
    prev = h;
    EXPECT_LT(std::abs(t - c.temperature(h)), 1e-9 * t);
  }
}

TEST(Enthalpy, SlopeRecovery) {
  const MaterialProps m;
  const EnthalpyCurve c(m);
  const double eps = 1e-3;
  for (double t : {400.0, 600.0, 800.0}) {
    const double slope = (c.enthalpy(t + eps) - c.enthalpy(t - eps)) / (2 * eps);
    EXPECT_NEAR(slope, m.cp_solid, 1e-6 * m.cp_solid);
  }
  for (double t : {900.0, 1500.0, 2600.0}) {
    const double slope = (c.enthalpy(t + eps) - c.enthalpy(t - eps)) / (2 * eps);
    EXPECT_NEAR(slope, m.cp_liquid, 1e-6 * m.cp_liquid);
  }
  const double above = (c.enthalpy(3200.0 + eps) - c.enthalpy(3200.0 - eps)) / (2 * eps);
  EXPECT_NEAR(above, m.cp_liquid, 1e-6 * m.cp_liquid);
}

TEST(Enthalpy, ConfigurableVaporWidth) {
  const MaterialProps m;
  const EnthalpyCurve c(m, 300.0, 10.0);
  const double vap = c.enthalpy(2745.0) - c.enthalpy(2735.0);
  EXPECT_EQ(vap, m.latent_vapor + m.cp_liquid * 10.0);
  EXPECT_THROW(EnthalpyCurve(m, 300.0, 0.0), DomainError);
}

TEST(Conductivity, SolidLiquidAndBlend) {
  const MaterialProps m;
  EXPECT_EQ(conductivity_of_temperature(500.0, m), 113.0);
  EXPECT_EQ(conductivity_of_temperature(1500.0, m), 133.0);
  EXPECT_DOUBLE_EQ(conductivity_of_temperature(849.0, m), 123.0);
  EXPECT_THROW(conductivity_of_temperature(-5.0, m), DomainError);
}
