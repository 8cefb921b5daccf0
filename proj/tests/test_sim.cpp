#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lpbf/sim.hpp"

using namespace lpbf;
using namespace lpbf::sim;

namespace {

// Reduced domain that keeps unit tests fast; the top surface stays at 1000 um.
SimDomain small_domain(double h = 25.0) {
  SimDomain d;
  d.x_min = 0.0;
  d.x_max = 3000.0;
  d.y_min = -500.0;
  d.y_max = 500.0;
  d.z_min = 600.0;
  d.dx = d.dy = d.dz = h;
  d.laser_start_x = 500.0;
  d.laser_stop_x = 2800.0;
  return d;
}

}  // namespace

TEST(Source, PeakValueAndGaussianProfile) {
  const SimDomain d;
  const LaserState laser{5000.0, 0.0, 1000.0, 1.5, 300.0, 0.3};
  const double peak = source_term(5000.0, 0.0, 1000.0, laser, d);
  const double expected = 0.3 * 300.0 / (std::numbers::pi * 50e-6 * 50e-6 * 30e-6);
  EXPECT_NEAR(peak, expected, 1e-12 * expected);
  EXPECT_NEAR(peak, 3.82e14, 0.005e14);
  EXPECT_NEAR(source_term(5050.0, 0.0, 1000.0, laser, d) / peak, std::exp(-2.0), 1e-12);
  EXPECT_NEAR(source_term(5000.0, 0.0, 975.0, laser, d) / peak, std::exp(-2.0 * 0.25), 1e-12);
  EXPECT_EQ(source_term(5000.0, 0.0, 969.0, laser, d), 0.0);
  EXPECT_EQ(source_term(5000.0, 0.0, 500.0, laser, d), 0.0);
}

TEST(Domain, Validation) {
  SimDomain d = small_domain();
  EXPECT_NO_THROW(d.validate());
  EXPECT_EQ(d.nx(), 121u);
  d.dx = 35.0;
  EXPECT_THROW(d.validate(), ConfigError);
  d = small_domain();
  d.z_max = 900.0;
  EXPECT_THROW(d.validate(), ConfigError);
  d = small_domain();
  d.laser_stop_x = 100.0;
  EXPECT_THROW(d.validate(), ConfigError);
}

TEST(Advance, UniformAmbientFieldIsEquilibrium) {
  ThermalSolver s(small_domain(50.0), {});
  auto f = s.uniform_field(300.0);
  const auto before = f.temperature;
  LaserState off{1000.0, 0.0, 1000.0, 1.0, 0.0, 0.3};
  for (int n = 0; n < 5; ++n) s.advance(f, off, s.max_stable_dt());
  EXPECT_EQ(f.temperature, before);
}

TEST(Advance, RejectsUnstableStep) {
  ThermalSolver s(small_domain(50.0), {});
  auto f = s.uniform_field(300.0);
  EXPECT_THROW(s.advance(f, {}, 1.01 * s.max_stable_dt()), StabilityError);
  const double expected = 0.8 * 50e-6 * 50e-6 * 2670.0 * 546.0 / (6.0 * 133.0);
  EXPECT_NEAR(s.max_stable_dt(), expected, 1e-15);
}

namespace {

TemperatureField3D hot_spot(const ThermalSolver& s, double peak) {
  auto f = s.uniform_field(300.0);
  for (std::size_t k = 0; k < f.nz; ++k)
    for (std::size_t j = 0; j < f.ny; ++j)
      for (std::size_t i = 0; i < f.nx; ++i) {
        const double dx = f.x(i) - 1200.0, dy = f.y(j) - 37.5, dz = f.z(k) - 950.0;
        const double t = 300.0 + (peak - 300.0) * std::exp(-(dx * dx + dy * dy + dz * dz) / (2 * 80.0 * 80.0));
        const auto q = f.index(i, j, k);
        f.temperature[q] = t;
        f.enthalpy[q] = s.enthalpy_of(t);
      }
  return f;
}

}  // namespace

TEST(Advance, InsulatedUpdateConservesEnthalpy) {
  SimDomain d = small_domain(25.0);
  d.h_conv = 0.0;
  ThermalSolver s(d, {});
  auto f = hot_spot(s, 3000.0);  // crosses both phase-change ramps
  const LaserState off{1000.0, 0.0, 1000.0, 1.0, 0.0, 0.3};
  double prev = s.total_enthalpy(f);
  for (int n = 0; n < 40; ++n) {
    s.advance(f, off, s.max_stable_dt());
    const double now = s.total_enthalpy(f);
    EXPECT_LT(std::abs(now - prev), 1e-10 * std::abs(prev));
    prev = now;
  }
}

TEST(Advance, HotSpotPeakDecaysMonotonically) {
  ThermalSolver s(small_domain(25.0), {});
  auto f = hot_spot(s, 2000.0);
  const LaserState off{1000.0, 0.0, 1000.0, 1.0, 0.0, 0.3};
  double prev = *std::max_element(f.temperature.begin(), f.temperature.end());
  for (int n = 0; n < 60; ++n) {
    s.advance(f, off, s.max_stable_dt());
    const double now = *std::max_element(f.temperature.begin(), f.temperature.end());
    EXPECT_LE(now, prev);
    prev = now;
  }
  EXPECT_LT(prev, 2000.0);
}

TEST(Steady, ZeroPowerConvergesImmediately) {
  const ProcessParams p{0.0, 1.5, 420.0, 0.3};
  const auto r = run_to_steady(p, small_domain(50.0));
  EXPECT_TRUE(r.diagnostics.converged);
  EXPECT_EQ(r.diagnostics.steps, 0u);
  for (double t : r.field.temperature) EXPECT_EQ(t, 420.0);
}

TEST(Steady, RejectsParametersOutsideEnvelope) {
  EXPECT_THROW(run_to_steady({700.0, 1.5, 300.0, 0.3}, small_domain(50.0)), DomainError);
  EXPECT_THROW(run_to_steady({300.0, 1.5, 300.0, 0.9}, small_domain(50.0)), DomainError);
}

TEST(Steady, NonConvergenceCarriesDiagnostics) {
  SimDomain d = small_domain(25.0);
  d.laser_stop_x = 560.0;  // far too short to settle
  try {
    run_to_steady({300.0, 1.5, 300.0, 0.3}, d);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.diagnostics.steps, 0u);
    EXPECT_FALSE(e.diagnostics.converged);
    EXPECT_GE(e.diagnostics.laser_x, 560.0);
  }
}

class SteadyNominal : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    nominal_ = new SteadyResult(run_to_steady({300.0, 1.5, 300.0, 0.3}, small_domain(12.5)));
  }
  static void TearDownTestSuite() { delete nominal_; }
  static SteadyResult* nominal_;
};
SteadyResult* SteadyNominal::nominal_ = nullptr;

TEST_F(SteadyNominal, MeltPoolIsPhysical) {
  const auto& r = *nominal_;
  ASSERT_TRUE(r.diagnostics.converged);
  const auto m = pool_metrics(r.field, 831.0);
  EXPECT_GT(m.t_peak, 867.0);
  EXPECT_LT(m.t_peak, 3500.0);
  EXPECT_GT(m.width, 0.0);
  EXPECT_GT(m.length, m.width);
}

TEST_F(SteadyNominal, MirrorSymmetricInY) {
  const auto& f = nominal_->field;
  double tmax = 0.0, worst = 0.0;
  for (std::size_t k = 0; k < f.nz; ++k)
    for (std::size_t j = 0; j < f.ny; ++j)
      for (std::size_t i = 0; i < f.nx; ++i) {
        const double a = f.temperature[f.index(i, j, k)];
        const double b = f.temperature[f.index(i, f.ny - 1 - j, k)];
        worst = std::max(worst, std::abs(a - b));
        tmax = std::max(tmax, a);
      }
  EXPECT_LE(worst, 1e-6 * tmax);
}

TEST_F(SteadyNominal, SnapshotFrameInvariance) {
  // Continue 50 more steps and compare the laser-centred pools.
  const SimDomain d = small_domain(12.5);
  ThermalSolver s(d, {});
  auto f = nominal_->field;
  auto laser = nominal_->laser;
  const double dt = s.max_stable_dt();
  for (int n = 0; n < 50; ++n) {
    s.advance(f, laser, dt);
    laser.x += laser.speed * dt * 1e6;
  }
  const auto a = pool_metrics(nominal_->field, 831.0);
  const auto b = pool_metrics(f, 831.0);
  EXPECT_LE(std::abs(a.length - b.length), d.dx);
  EXPECT_LE(std::abs(a.width - b.width), d.dy);
}

TEST_F(SteadyNominal, DoublingAbsorptivityRaisesPeak) {
  const auto hot = run_to_steady({300.0, 1.5, 300.0, 0.6}, small_domain(12.5));
  EXPECT_GT(pool_metrics(hot.field, 831.0).t_peak, pool_metrics(nominal_->field, 831.0).t_peak);
}

TEST(Sections, UniformFieldGivesUniformSections) {
  ThermalSolver s(small_domain(25.0), {});
  const auto f = s.uniform_field(455.0);
  const LaserState laser{1500.0, 0.0, 1000.0, 1.0, 300.0, 0.3};
  const auto [xy, xz] = extract_sections(f, laser);
  EXPECT_EQ(xy.grid.nx, 101u);
  EXPECT_EQ(xy.grid.ny, 51u);
  EXPECT_EQ(xz.grid.ny, 26u);
  for (double v : xy.values) EXPECT_EQ(v, 455.0);
  for (double v : xz.values) EXPECT_EQ(v, 455.0);
  EXPECT_FALSE(xy.clamped);
}

TEST(Sections, LinearFieldIsReproducedAndNodesAreExact) {
  ThermalSolver s(small_domain(25.0), {});
  auto f = s.uniform_field(300.0);
  for (std::size_t k = 0; k < f.nz; ++k)
    for (std::size_t j = 0; j < f.ny; ++j)
      for (std::size_t i = 0; i < f.nx; ++i) f.temperature[f.index(i, j, k)] = 300.0 + f.x(i) / 10.0;
  const LaserState laser{1510.0, 0.0, 1000.0, 1.0, 300.0, 0.3};
  const auto [xy, xz] = extract_sections(f, laser);
  for (std::size_t i = 0; i < xy.grid.nx; ++i) {
    const double expect = 300.0 + (laser.x + xy.grid.x(i)) / 10.0;
    for (std::size_t j = 0; j < xy.grid.ny; ++j) EXPECT_NEAR(xy.at(i, j), expect, 1e-9);
    for (std::size_t j = 0; j < xz.grid.ny; ++j) EXPECT_NEAR(xz.at(i, j), expect, 1e-9);
  }
  // Node-aligned sample returns the stored value.
  f.temperature[f.index(40, 20, f.nz - 1)] = 1234.5;
  EXPECT_EQ(sample(f, f.x(40), f.y(20), 1000.0), 1234.5);
}

TEST(Sections, OutOfDomainNodesAreClampedAndFlagged) {
  ThermalSolver s(small_domain(25.0), {});
  const auto f = s.uniform_field(300.0);
  const LaserState laser{200.0, 0.0, 1000.0, 1.0, 300.0, 0.3};  // x-grid reaches x < 0
  const auto [xy, xz] = extract_sections(f, laser);
  EXPECT_TRUE(xy.clamped);
  EXPECT_TRUE(xz.clamped);
  for (double v : xy.values) EXPECT_EQ(v, 300.0);
}
