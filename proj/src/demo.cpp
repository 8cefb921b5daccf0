#include "lpbf/demo.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace lpbf::demo {

namespace {

constexpr double kM = 1e-6;  // m per um

std::string flags(const TraceRow& r) {
  std::string f;
  auto add = [&f](const char* s) {
    if (!f.empty()) f += '|';
    f += s;
  };
  if (r.fallback) add("fallback");
  if (r.cold) add("cold");
  return f;
}

}  // namespace

double ConeGeometry::radius_at(double h) const {
  const double t = std::clamp(h / height, 0.0, 1.0);
  return base_radius + (top_radius - base_radius) * t;
}

double ConeGeometry::area_at(double h) const {
  const double r = radius_at(h) * kM;
  return std::numbers::pi * r * r;
}

double ConeGeometry::volume_to(double h) const {
  const double hh = std::clamp(h, 0.0, height) * kM;
  const double r0 = base_radius * kM, r1 = radius_at(h) * kM;
  return std::numbers::pi * hh / 3.0 * (r0 * r0 + r0 * r1 + r1 * r1);
}

void DemoConfig::validate() const {
  if (layers_per_step < 1) throw ConfigError("demo: layers per step must be at least 1");
  if (!(cone.base_radius > 0.0) || !(cone.top_radius > 0.0) || !(cone.height > 0.0) || !(layer_thickness > 0.0))
    throw ConfigError("demo: cone dimensions and layer thickness must be positive");
  if (!(initial_speed > 0.0) || !(initial_power >= 0.0)) throw ConfigError("demo: bad initial (P, V)");
  if (!(initial_substrate >= substrate.t_ambient)) throw ConfigError("demo: initial substrate below ambient");
  if (!(substrate.hatch_spacing > 0.0) || !(substrate.tau0 > 0.0) || !(substrate.base_capacity > 0.0))
    throw ConfigError("demo: substrate model constants must be positive");
}

std::size_t DemoConfig::steps() const {
  const double per = layer_thickness * static_cast<double>(layers_per_step);
  return static_cast<std::size_t>(std::ceil(cone.height / per - 1e-9));
}

double substrate_update(double t_sub, double power, double speed, double absorptivity, double height,
                        std::size_t layers, const ConeGeometry& cone, const SubstrateModel& model,
                        double layer_thickness) {
  if (!(speed > 0.0)) throw DomainError("substrate_update: scan speed must be positive");
  const double n = static_cast<double>(layers);
  const double area = cone.area_at(height);
  const double scan = area / (speed * model.hatch_spacing * kM);
  const double dt = n * (scan + model.dwell_time);
  const double top = height + n * layer_thickness;
  const double heat = model.efficiency * n * absorptivity * power * scan / model.capacity(cone, top);
  return model.t_ambient + (t_sub - model.t_ambient) * std::exp(-dt / model.tau(height)) + heat;
}

BuildTrace run_branch(const DemoConfig& config, const surrogate::MeltPoolPredictor& model, bool controlled) {
  config.validate();
  BuildTrace tr;
  tr.controlled = controlled;
  const double alpha = config.alpha.mu;
  double t_sub = config.initial_substrate;
  double p = config.initial_power, v = config.initial_speed;
  const std::size_t n = config.steps();
  const double per = config.layer_thickness * static_cast<double>(config.layers_per_step);
  auto warm = config.control_config;
  warm.scan = 0;
  for (std::size_t s = 0; s < n; ++s) {
    TraceRow row;
    row.step = s;
    row.height = per * static_cast<double>(s);
    row.t_sub = t_sub;
    if (controlled) {
      try {
        const auto r = control::optimize_pv(p, v, t_sub, alpha, model, s == 0 ? config.control_config : warm);
        p = r.power;
        v = r.speed;
      } catch (const Error&) {
        row.fallback = true;
      }
    }
    row.power = p;
    row.speed = v;
    const auto sm = control::objective(p, v, t_sub, alpha, model, config.control_config, false);
    row.t_peak = sm.t_peak;
    row.ra = sm.ra;
    const auto st = model.evaluate({p, v, t_sub, alpha});
    row.t_peak_hard = st.t_peak;
    row.ra_hard = st.ra.value_or(0.0);
    row.cold = sm.cold || st.cold || !st.ra;
    if (config.uq_samples > 0) {
      try {
        row.uq = calib::propagate_uq(config.alpha, p, v, t_sub, model, config.uq_samples, config.seed + s);
      } catch (const Error&) {
        row.cold = true;
      }
    }
    tr.rows.push_back(std::move(row));
    t_sub = substrate_update(t_sub, p, v, alpha, per * static_cast<double>(s), config.layers_per_step, config.cone,
                             config.substrate, config.layer_thickness);
  }
  return tr;
}

DemoResult run_demo(const DemoConfig& config, const surrogate::MeltPoolPredictor& model) {
  config.validate();
  DemoResult res;
  std::thread plain([&] { res.uncontrolled = run_branch(config, model, false); });
  res.controlled = run_branch(config, model, config.control);
  plain.join();
  return res;
}

std::string BuildTrace::to_csv() const {
  std::ostringstream o;
  o << std::setprecision(10) << "step,T_sub_K,P_W,V_m_s,T_peak_K,Ra_um,flags\n";
  for (const auto& r : rows)
    o << r.step << ',' << r.t_sub << ',' << r.power << ',' << r.speed << ',' << r.t_peak << ',' << r.ra << ','
      << flags(r) << '\n';
  return o.str();
}

std::string BuildTrace::uq_csv() const {
  std::ostringstream o;
  o << std::setprecision(10) << "step,T_peak_p5,T_peak_p50,T_peak_p95,Ra_p5,Ra_p50,Ra_p95\n";
  for (const auto& r : rows) {
    if (!r.uq) continue;
    const auto& t = r.uq->get("T_peak");
    const auto& a = r.uq->get("Ra");
    o << r.step << ',' << t.p5 << ',' << t.p50 << ',' << t.p95 << ',' << a.p5 << ',' << a.p50 << ',' << a.p95 << '\n';
  }
  return o.str();
}

double DemoResult::fraction_ra_not_worse(bool hard) const {
  const std::size_t n = std::min(controlled.rows.size(), uncontrolled.rows.size());
  if (n == 0) return 1.0;
  std::size_t ok = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& c = controlled.rows[k];
    const auto& u = uncontrolled.rows[k];
    if (hard ? c.ra_hard <= u.ra_hard : c.ra <= u.ra) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(n);
}

double DemoResult::max_controlled_t_peak() const {
  double m = 0.0;
  for (const auto& r : controlled.rows) m = std::max(m, r.t_peak);
  return m;
}

std::string DemoResult::summary_json(const DemoConfig& config) const {
  auto branch = [](const BuildTrace& t) {
    nlohmann::json j;
    double ra = 0.0, tp = 0.0;
    std::size_t fb = 0, cold = 0;
    for (const auto& r : t.rows) {
      ra += r.ra;
      tp = std::max(tp, r.t_peak);
      fb += r.fallback;
      cold += r.cold;
    }
    j["steps"] = t.rows.size();
    j["mean_Ra_um"] = t.rows.empty() ? 0.0 : ra / static_cast<double>(t.rows.size());
    j["max_T_peak_K"] = tp;
    j["final_T_sub_K"] = t.rows.empty() ? 0.0 : t.rows.back().t_sub;
    j["fallback_steps"] = fb;
    j["cold_steps"] = cold;
    return j;
  };
  nlohmann::json j;
  j["control"] = config.control;
  j["steps"] = config.steps();
  j["alpha_mean"] = config.alpha.mu;
  j["T_t1_K"] = config.control_config.t_t1;
  j["T_t2_K"] = config.control_config.t_t2;
  j["controlled"] = branch(controlled);
  j["uncontrolled"] = branch(uncontrolled);
  j["fraction_steps_Ra_not_worse"] = fraction_ra_not_worse();
  j["fraction_steps_hard_Ra_not_worse"] = fraction_ra_not_worse(true);
  j["max_controlled_T_peak_over_T_t2_K"] = max_controlled_t_peak() - config.control_config.t_t2;
  return j.dump(2);
}

}  // namespace lpbf::demo
