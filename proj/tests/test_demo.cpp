#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <json.hpp>

#include "lpbf/demo.hpp"

using namespace lpbf;
using namespace lpbf::demo;
using surrogate::AnalyticPredictor;

namespace {

AnalyticPredictor model() {
  surrogate::FeatureSettings s;
  s.sri.kappa = 25.0;
  return AnalyticPredictor(
      [](const ProcessParams& p) {
        AnalyticPredictor::Output o;
        const double e = p.absorptivity * p.power / p.speed;
        o.features.t_peak = p.substrate + 30.0 * e;
        o.features.length = 4e-6 * std::sqrt(e) * (1.0 + 0.3 * p.speed);
        o.features.width = 3e-6 * std::sqrt(e);
        const double de[4] = {p.absorptivity / p.speed, -e / p.speed, 0.0, p.power / p.speed};
        for (int k = 0; k < 4; ++k) {
          o.jacobian[0][k] = 30.0 * de[k];
          o.jacobian[1][k] = 2e-6 / std::sqrt(e) * de[k] * (1.0 + 0.3 * p.speed);
          o.jacobian[2][k] = 1.5e-6 / std::sqrt(e) * de[k];
        }
        o.jacobian[0][2] = 1.0;
        o.jacobian[1][1] += 1.2e-6 * std::sqrt(e);
        return o;
      },
      s);
}

DemoConfig short_build() {
  DemoConfig c;
  c.cone.height = 3000.0;
  c.layers_per_step = 10;
  return c;
}

}  // namespace

TEST(Cone, GeometryEndpoints) {
  const ConeGeometry g;
  EXPECT_DOUBLE_EQ(g.radius_at(0), g.base_radius);
  EXPECT_DOUBLE_EQ(g.radius_at(g.height), g.top_radius);
  EXPECT_DOUBLE_EQ(g.radius_at(2 * g.height), g.top_radius);
  EXPECT_NEAR(g.area_at(0), std::numbers::pi * 1e-4, 1e-16);
  const double r0 = 0.01, r1 = 0.003, h = 0.03;
  EXPECT_NEAR(g.volume_to(g.height), std::numbers::pi * h / 3 * (r0 * r0 + r0 * r1 + r1 * r1), 1e-15);
  EXPECT_EQ(g.volume_to(0), 0.0);
}

TEST(Substrate, NoPowerStaysAtAmbient) {
  const DemoConfig c;
  EXPECT_DOUBLE_EQ(substrate_update(300, 0, 1.5, 0.3, 0, 10, c.cone, c.substrate, 30), 300.0);
  const double hot = substrate_update(600, 0, 1.5, 0.3, 0, 10, c.cone, c.substrate, 30);
  EXPECT_LT(hot, 600.0);
  EXPECT_GT(hot, 300.0);
  EXPECT_THROW(substrate_update(300, 200, 0, 0.3, 0, 10, c.cone, c.substrate, 30), DomainError);
}

TEST(Substrate, ConstantPowerHeatsMonotonically) {
  const DemoConfig c;
  double t = 300.0;
  for (std::size_t s = 0; s < c.steps(); ++s) {
    const double next = substrate_update(t, 300, 1.65, 0.3, 300.0 * s, 10, c.cone, c.substrate, 30);
    EXPECT_GE(next, t) << s;
    t = next;
  }
  EXPECT_GT(t, 400.0);
}

TEST(Substrate, StepMatchesClosedForm) {
  const DemoConfig c;
  const auto& m = c.substrate;
  const double h = 1200.0, area = c.cone.area_at(h);
  const double scan = area / (1.5 * 100e-6);
  const double dt = 10 * (scan + m.dwell_time);
  const double cap = m.capacity(c.cone, h + 300.0);
  const double want = 300.0 + 200.0 * std::exp(-dt / m.tau(h)) + 0.6 * 10 * 0.3 * 250.0 * scan / cap;
  EXPECT_NEAR(substrate_update(500, 250, 1.5, 0.3, h, 10, c.cone, m, 30), want, 1e-9);
}

TEST(Config, StepsAndValidation) {
  DemoConfig c;
  EXPECT_EQ(c.steps(), 100u);
  c.layers_per_step = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.initial_substrate = 250.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.cone.height = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Demo, ControlOffMirrorsUncontrolled) {
  auto c = short_build();
  c.control = false;
  const auto r = run_demo(c, model());
  ASSERT_EQ(r.controlled.rows.size(), 10u);
  EXPECT_EQ(r.controlled.to_csv(), r.uncontrolled.to_csv());
  EXPECT_DOUBLE_EQ(r.fraction_ra_not_worse(), 1.0);
  for (const auto& row : r.uncontrolled.rows) {
    EXPECT_EQ(row.power, c.initial_power);
    EXPECT_EQ(row.speed, c.initial_speed);
  }
}

TEST(Demo, ControlledBranchAdaptsAndReports) {
  auto c = short_build();
  c.uq_samples = 50;
  const auto r = run_demo(c, model());
  ASSERT_EQ(r.controlled.rows.size(), 10u);
  EXPECT_GE(r.fraction_ra_not_worse(), 0.9);
  bool moved = false;
  for (const auto& row : r.controlled.rows) {
    moved |= row.power != c.initial_power || row.speed != c.initial_speed;
    EXPECT_FALSE(row.fallback);
    EXPECT_TRUE(row.uq.has_value());
  }
  EXPECT_TRUE(moved);
  const auto csv = r.controlled.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,T_sub_K,P_W,V_m_s,T_peak_K,Ra_um,flags");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 11);
  const auto uq = r.controlled.uq_csv();
  EXPECT_EQ(std::count(uq.begin(), uq.end(), '\n'), 11);
  const auto j = nlohmann::json::parse(r.summary_json(c));
  EXPECT_EQ(j["steps"], 10);
  EXPECT_TRUE(j.contains("fraction_steps_Ra_not_worse"));
  EXPECT_EQ(run_branch(c, model(), true).to_csv(), csv);
}
