#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lpbf/control.hpp"

using namespace lpbf;
using namespace lpbf::control;
using surrogate::AnalyticPredictor;

namespace {

surrogate::FeatureSettings settings() {
  surrogate::FeatureSettings s;
  s.sri.kappa = 25.0;
  return s;
}

// Peak rises with alpha P / V; pools grow with energy and stretch with speed.
AnalyticPredictor::Output pool(const ProcessParams& p) {
  AnalyticPredictor::Output o;
  const double e = p.absorptivity * p.power / p.speed;
  o.features.t_peak = p.substrate + 30.0 * e;
  o.features.length = 4e-6 * std::sqrt(e) * (1.0 + 0.3 * p.speed);
  o.features.width = 3e-6 * std::sqrt(e);
  auto& j = o.jacobian;
  const double de[4] = {p.absorptivity / p.speed, -e / p.speed, 0.0, p.power / p.speed};
  for (int k = 0; k < 4; ++k) {
    j[0][k] = 30.0 * de[k];
    j[1][k] = 4e-6 * 0.5 / std::sqrt(e) * de[k] * (1.0 + 0.3 * p.speed);
    j[2][k] = 3e-6 * 0.5 / std::sqrt(e) * de[k];
  }
  j[0][2] = 1.0;
  j[1][1] += 4e-6 * std::sqrt(e) * 0.3;
  return o;
}

AnalyticPredictor model() { return AnalyticPredictor(pool, settings()); }

ObjectiveValue bowl(double p, double v, double p0, double v0) {
  ObjectiveValue o;
  const double a = (p - p0) / 400.0, b = (v - v0) / 2.0;
  o.value = a * a + b * b;
  o.grad = {2.0 * a / 400.0, 2.0 * b / 2.0};
  return o;
}

}  // namespace

TEST(Penalty, Branches) {
  EXPECT_EQ(penalty_phi(2900, 3000, 3400), 0.0);
  EXPECT_EQ(penalty_phi(3500, 3000, 3400), 1.0);
  EXPECT_NEAR(penalty_phi(3200, 3000, 3400), 0.5, 1e-15);
  EXPECT_EQ(penalty_phi(3000, 3000, 3400), 0.0);
  EXPECT_EQ(penalty_phi(3400, 3000, 3400), 1.0);
}

TEST(Penalty, MonotoneAndC1AtEndpoints) {
  double prev = -1.0;
  for (double t = 2800.0; t <= 3600.0; t += 0.5) {
    const double v = penalty_phi(t, 3000, 3400);
    EXPECT_GE(v, prev);
    prev = v;
  }
  const double h = 1e-4;
  for (double t : {3000.0, 3400.0}) {
    const double left = (penalty_phi(t, 3000, 3400) - penalty_phi(t - h, 3000, 3400)) / h;
    const double right = (penalty_phi(t + h, 3000, 3400) - penalty_phi(t, 3000, 3400)) / h;
    EXPECT_NEAR(left, right, 1e-6);
  }
  for (double t : {3050.0, 3200.0, 3333.0}) {
    const double fd = (penalty_phi(t + h, 3000, 3400) - penalty_phi(t - h, 3000, 3400)) / (2 * h);
    EXPECT_NEAR(penalty_phi_slope(t, 3000, 3400), fd, 1e-8);
  }
}

TEST(Config, Validation) {
  ControlConfig c;
  EXPECT_NO_THROW(c.validate());
  c.t_t1 = 3500;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.p_max = 700;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.step = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Objective, PenaltyOffIsRa) {
  const auto m = model();
  ControlConfig c;
  c.phi = 0.0;
  const auto o = objective(300, 1.0, 300, 0.3, m, c);
  ASSERT_FALSE(o.cold);
  EXPECT_DOUBLE_EQ(o.value, o.ra);
  EXPECT_EQ(o.penalty, 0.0);
}

TEST(Objective, ColdBelowT1IndependentOfPhi) {
  const auto m = model();
  ControlConfig a, b;
  b.phi = 500.0;
  const auto oa = objective(300, 1.2, 300, 0.3, m, a);
  const auto ob = objective(300, 1.2, 300, 0.3, m, b);
  ASSERT_FALSE(oa.cold);
  ASSERT_LT(oa.t_peak, a.t_t1);
  EXPECT_EQ(oa.value, ob.value);

  const auto cold = objective(100, 2.5, 300, 0.1, m, a);
  EXPECT_TRUE(cold.cold);
  EXPECT_GE(cold.value, a.barrier);
  EXPECT_TRUE(std::isfinite(cold.value));
  EXPECT_LT(cold.grad[0], 0.0);
}

TEST(Objective, GradientMatchesCentralDifferences) {
  const auto m = model();
  ControlConfig c;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> up(200, 500), uv(0.5, 2.5);
  int checked = 0;
  while (checked < 10) {
    const double p = up(rng), v = uv(rng);
    const auto o = objective(p, v, 350, 0.35, m, c);
    if (o.cold) continue;
    const double hp = 1e-3, hv = 1e-6;
    const double gp = (objective(p + hp, v, 350, 0.35, m, c, false).value -
                       objective(p - hp, v, 350, 0.35, m, c, false).value) / (2 * hp);
    const double gv = (objective(p, v + hv, 350, 0.35, m, c, false).value -
                       objective(p, v - hv, 350, 0.35, m, c, false).value) / (2 * hv);
    EXPECT_NEAR(o.grad[0], gp, 1e-3 * std::abs(gp) + 1e-9) << p << ' ' << v;
    EXPECT_NEAR(o.grad[1], gv, 1e-3 * std::abs(gv) + 1e-9) << p << ' ' << v;
    ++checked;
  }
}

TEST(Optimizer, BowlConvergesToMinimum) {
  ControlConfig c;
  c.max_iterations = 2000;
  c.tolerance = 1e-12;
  c.step = 0.01;
  const double p0 = 333.0, v0 = 1.23;
  const auto r = optimize_pv(150, 2.3, [&](double p, double v) { return bowl(p, v, p0, v0); }, c);
  EXPECT_NEAR(c.normalize_p(r.power), c.normalize_p(p0), 1e-3);
  EXPECT_NEAR(c.normalize_v(r.speed), c.normalize_v(v0), 1e-3);
}

TEST(Optimizer, ProjectsStartAndStaysInBounds) {
  ControlConfig c;
  c.scan = 0;
  c.max_iterations = 50;
  const auto r = optimize_pv(900, 0.1, [](double p, double v) { return bowl(p, v, 600, 0.0); }, c);
  ASSERT_FALSE(r.trace.empty());
  EXPECT_EQ(r.trace.front().power, 500.0);
  EXPECT_EQ(r.trace.front().speed, 0.5);
  for (const auto& e : r.trace) {
    EXPECT_GE(e.power, c.p_min);
    EXPECT_LE(e.power, c.p_max);
    EXPECT_GE(e.speed, c.v_min);
    EXPECT_LE(e.speed, c.v_max);
  }
  EXPECT_EQ(r.power, 500.0);
  EXPECT_EQ(r.speed, 0.5);
}

TEST(Optimizer, NonFiniteObjectiveAborts) {
  ControlConfig c;
  c.scan = 0;
  EXPECT_THROW(optimize_pv(300, 1.0, [](double, double) {
                 ObjectiveValue o;
                 o.value = std::nan("");
                 return o;
               }, c),
               NumericError);
}

TEST(Optimizer, ScanEscapesLocalBasin) {
  // Two wells; the start sits in the shallow one.
  auto f = [](double p, double v) {
    ObjectiveValue o;
    const double a = (p - 150.0) / 400.0, b = (v - 0.8) / 2.0;
    const double c = (p - 450.0) / 400.0, d = (v - 2.2) / 2.0;
    const double w1 = 1.0 - std::exp(-50.0 * (a * a + b * b));
    const double w2 = 2.0 * (1.0 - std::exp(-50.0 * (c * c + d * d)));
    o.value = std::min(w1 + 1.0, w2);
    if (w1 + 1.0 < w2) {
      const double e = 100.0 * std::exp(-50.0 * (a * a + b * b));
      o.grad = {e * a / 400.0, e * b / 2.0};
    } else {
      const double e = 200.0 * std::exp(-50.0 * (c * c + d * d));
      o.grad = {e * c / 400.0, e * d / 2.0};
    }
    return o;
  };
  ControlConfig local;
  local.scan = 0;
  const auto stuck = optimize_pv(160, 0.9, f, local);
  EXPECT_NEAR(stuck.power, 150.0, 5.0);
  ControlConfig global;
  const auto found = optimize_pv(160, 0.9, f, global);
  EXPECT_NEAR(found.power, 450.0, 5.0);
  EXPECT_NEAR(found.speed, 2.2, 0.03);
  EXPECT_LT(found.value.value, 1e-3);
}

TEST(Optimizer, PenaltyHoldsPeakNearT2) {
  // Penalty dominates: the model exceeds T_t2 at high P, Ra keeps falling with P.
  const auto m = model();
  ControlConfig c;
  c.phi = 1e3;
  const auto r = optimize_pv(500, 0.5, 300, 0.6, m, c);
  EXPECT_LE(r.value.t_peak, c.t_t2 + 50.0);
  double best = 1e300;
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j)
      best = std::min(best, objective(100 + 400.0 * i / 49, 0.5 + 2.0 * j / 49, 300, 0.6, m, c, false).value);
  EXPECT_LE(r.value.value, best + 1e-3);
  EXPECT_NE(r.trace_csv().find("iteration,P_W,V_m_s,objective,T_peak_K,Ra_um,flags"), std::string::npos);
}

TEST(Window, SingleCellMatchesObjective) {
  const auto m = model();
  ControlConfig c;
  c.p_min = c.p_max - 1.0;
  c.v_min = c.v_max - 0.01;
  const auto w = process_window(300, 0.3, m, 1, 1, c);
  ASSERT_EQ(w.ra.size(), 1u);
  const auto s = m.evaluate({c.p_min, c.v_min, 300, 0.3});
  ASSERT_TRUE(s.ra.has_value());
  EXPECT_EQ(w.ra[0], *s.ra);
}

TEST(Window, ShapeSentinelAndSubstrateDependence) {
  const auto m = model();
  ControlConfig c;
  const auto a = process_window(300, 0.3, m, 40, 25, c, 2);
  const auto b = process_window(540, 0.3, m, 40, 25, c);
  EXPECT_EQ(a.ra.size(), 1000u);
  EXPECT_NE(a.ra, b.ra);
  EXPECT_GT(a.cold_cells, 0u);
  std::size_t cold = 0;
  for (double r : a.ra) cold += r == ProcessWindow::kColdSentinel;
  EXPECT_EQ(cold, a.cold_cells);
  const auto csv = a.matrix_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 40);
  const auto first = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(std::count(first.begin(), first.end(), ','), 24);
  EXPECT_EQ(process_window(300, 0.3, m, 40, 25, c, 3).ra, a.ra);
  EXPECT_THROW(process_window(300, 0.3, m, 0, 5, c), ConfigError);
}
