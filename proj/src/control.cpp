#include "lpbf/control.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace lpbf::control {

void ControlConfig::validate(const ParamBounds& envelope) const {
  if (!(t_t1 < t_t2)) throw ConfigError("control: T_t1 must be below T_t2");
  if (!(p_min < p_max) || !(v_min < v_max)) throw ConfigError("control: empty (P, V) box");
  if (p_min < envelope.lo[0] || p_max > envelope.hi[0] || v_min < envelope.lo[1] || v_max > envelope.hi[1])
    throw ConfigError("control: (P, V) bounds leave the surrogate's training envelope");
  if (!(step > 0.0) || max_iterations == 0) throw ConfigError("control: step and iteration count must be positive");
  if (!(phi >= 0.0)) throw ConfigError("control: penalty weight must be non-negative");
}

double penalty_phi(double t, double t1, double t2) {
  if (t <= t1) return 0.0;
  if (t >= t2) return 1.0;
  return 0.5 + 0.5 * std::sin(std::numbers::pi * (t - t1) / (t2 - t1) - std::numbers::pi / 2.0);
}

double penalty_phi_slope(double t, double t1, double t2) {
  if (t <= t1 || t >= t2) return 0.0;
  const double w = std::numbers::pi / (t2 - t1);
  return 0.5 * w * std::cos(w * (t - t1) - std::numbers::pi / 2.0);
}

ObjectiveValue objective(double power, double speed, double substrate, double absorptivity,
                         const surrogate::MeltPoolPredictor& model, const ControlConfig& config, bool with_gradient) {
  const auto& st = model.settings();
  const double ts = st.material.t_solidus;
  ObjectiveValue out;
  auto seed = [&](const surrogate::SmoothFeatures& f) -> std::array<double, 3> {
    out.t_peak = f.t_peak;
    out.extrapolated = f.extrapolated;
    out.cold = !(f.t_peak > ts && f.length > 0.0 && f.width > 0.0);
    if (out.cold) {
      out.ra = 0.0;
      out.penalty = 0.0;
      out.value = config.barrier + (ts - f.t_peak);
      return {-1.0, 0.0, 0.0};
    }
    const auto s = features::sri_with_partials(f.t_peak, f.length, f.width, ts, st.sri);
    const auto r = features::roughness(s.value);
    out.ra = r.ra;
    out.penalty = config.phi * penalty_phi(f.t_peak, config.t_t1, config.t_t2);
    out.value = out.ra + out.penalty;
    return {r.slope * s.d_t_peak + config.phi * penalty_phi_slope(f.t_peak, config.t_t1, config.t_t2),
            r.slope * s.d_length, r.slope * s.d_width};
  };
  const ProcessParams p{power, speed, substrate, absorptivity};
  std::array<double, 4> g{};
  if (with_gradient) {
    model.evaluate_smooth(p, seed, &g);
  } else {
    seed(model.evaluate_smooth(p, seed, nullptr));
  }
  out.grad = {g[0], g[1]};
  return out;
}

namespace {

OptimizeResult adam_from(std::array<double, 2> u, const ObjectiveFn& f, const ControlConfig& config) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const std::array<double, 2> span = {config.p_max - config.p_min, config.v_max - config.v_min};
  std::array<double, 2> m{}, v{};
  OptimizeResult res;
  double prev = 0.0;
  std::size_t calm = 0;
  for (std::size_t it = 0;; ++it) {
    const double pw = config.p_min + u[0] * span[0], sp = config.v_min + u[1] * span[1];
    const auto val = f(pw, sp);
    if (!std::isfinite(val.value) || !std::isfinite(val.grad[0]) || !std::isfinite(val.grad[1]))
      throw NumericError("optimize_pv: non-finite objective at P=" + std::to_string(pw) + " W, V=" +
                         std::to_string(sp) + " m/s after " + std::to_string(it) + " iterations");
    res.trace.push_back({it, pw, sp, val.value, val.t_peak, val.ra, val.cold});
    if (it == 0 || val.value < res.value.value) {
      res.value = val;
      res.power = pw;
      res.speed = sp;
      res.best_iteration = it;
    }
    if (it > 0) {
      const double rel = std::abs(val.value - prev) / std::max(std::abs(prev), 1e-12);
      calm = rel < config.tolerance ? calm + 1 : 0;
      if (calm >= config.patience) {
        res.converged = true;
        break;
      }
    }
    if (it == config.max_iterations) break;
    prev = val.value;
    const double t = static_cast<double>(it + 1);
    for (std::size_t k = 0; k < 2; ++k) {
      const double g = val.grad[k] * span[k];
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      const double mh = m[k] / (1.0 - std::pow(b1, t));
      const double vh = v[k] / (1.0 - std::pow(b2, t));
      u[k] = std::clamp(u[k] - config.step * mh / (std::sqrt(vh) + eps), 0.0, 1.0);
    }
  }
  return res;
}

}  // namespace

OptimizeResult optimize_pv(double power, double speed, const ObjectiveFn& f, const ControlConfig& config,
                           const ObjectiveFn& value) {
  const std::array<double, 2> span = {config.p_max - config.p_min, config.v_max - config.v_min};
  const std::array<double, 2> u0 = {std::clamp(config.normalize_p(power), 0.0, 1.0),
                                    std::clamp(config.normalize_v(speed), 0.0, 1.0)};
  if (config.scan == 0) return adam_from(u0, f, config);
  const ObjectiveFn& score = value ? value : f;
  const std::size_t n = config.scan;
  auto at = [&](std::size_t k) { return n == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(n - 1); };
  std::vector<std::pair<double, std::array<double, 2>>> pts;
  pts.push_back({score(config.p_min + u0[0] * span[0], config.v_min + u0[1] * span[1]).value, u0});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double s = score(config.p_min + at(i) * span[0], config.v_min + at(j) * span[1]).value;
      if (std::isfinite(s)) pts.push_back({s, {at(i), at(j)}});
    }
  std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  OptimizeResult best;
  const std::size_t runs = std::min(std::max<std::size_t>(config.starts, 1), pts.size());
  for (std::size_t r = 0; r < runs; ++r) {
    auto res = adam_from(pts[r].second, f, config);
    if (r == 0 || res.value.value < best.value.value) best = std::move(res);
  }
  return best;
}

OptimizeResult optimize_pv(double power, double speed, double substrate, double absorptivity,
                           const surrogate::MeltPoolPredictor& model, const ControlConfig& config) {
  config.validate(model.bounds());
  return optimize_pv(
      power, speed,
      [&](double p, double v) { return objective(p, v, substrate, absorptivity, model, config, true); }, config,
      [&](double p, double v) { return objective(p, v, substrate, absorptivity, model, config, false); });
}

std::string OptimizeResult::trace_csv() const {
  std::ostringstream o;
  o << std::setprecision(10) << "iteration,P_W,V_m_s,objective,T_peak_K,Ra_um,flags\n";
  for (const auto& e : trace)
    o << e.iteration << ',' << e.power << ',' << e.speed << ',' << e.objective << ',' << e.t_peak << ',' << e.ra << ','
      << (e.cold ? "cold" : "") << '\n';
  return o.str();
}

std::string OptimizeResult::to_json() const {
  nlohmann::json j;
  j["P_W"] = power;
  j["V_m_s"] = speed;
  j["objective"] = value.value;
  j["T_peak_K"] = value.t_peak;
  j["Ra_um"] = value.ra;
  j["penalty"] = value.penalty;
  j["cold"] = value.cold;
  j["iterations"] = trace.empty() ? 0 : trace.back().iteration;
  j["best_iteration"] = best_iteration;
  j["converged"] = converged;
  return j.dump(2);
}

ProcessWindow process_window(double substrate, double absorptivity, const surrogate::MeltPoolPredictor& model,
                             std::size_t n_power, std::size_t n_speed, const ControlConfig& config,
                             std::size_t threads) {
  if (n_power == 0 || n_speed == 0) throw ConfigError("process window needs at least one cell per axis");
  config.validate(model.bounds());
  auto axis = [](double lo, double hi, std::size_t n) {
    std::vector<double> a(n, lo);
    for (std::size_t k = 1; k < n; ++k) a[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
    return a;
  };
  ProcessWindow w;
  w.substrate = substrate;
  w.absorptivity = absorptivity;
  w.power = axis(config.p_min, config.p_max, n_power);
  w.speed = axis(config.v_min, config.v_max, n_speed);
  const std::size_t n = n_power * n_speed;
  w.ra.assign(n, ProcessWindow::kColdSentinel);
  w.t_peak.assign(n, 0.0);
  std::vector<unsigned char> cold(n, 0);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t c = next++; c < n; c = next++) {
      const auto s = model.evaluate({w.power[c / n_speed], w.speed[c % n_speed], substrate, absorptivity});
      w.t_peak[c] = s.t_peak;
      if (s.cold || !s.ra) {
        cold[c] = 1;
      } else {
        w.ra[c] = *s.ra;
      }
    }
  };
  const std::size_t nt = std::max<std::size_t>(1, std::min(threads, n));
  if (nt == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nt; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  w.cold_cells = static_cast<std::size_t>(std::count(cold.begin(), cold.end(), 1));
  return w;
}

std::string ProcessWindow::matrix_csv() const {
  std::ostringstream o;
  o << std::setprecision(10);
  for (std::size_t ip = 0; ip < power.size(); ++ip) {
    for (std::size_t iv = 0; iv < speed.size(); ++iv) o << (iv ? "," : "") << at(ip, iv);
    o << '\n';
  }
  return o.str();
}

std::string ProcessWindow::axes_csv() const {
  std::ostringstream o;
  o << std::setprecision(10) << "axis,index,value\n";
  for (std::size_t k = 0; k < power.size(); ++k) o << "P_W," << k << ',' << power[k] << '\n';
  for (std::size_t k = 0; k < speed.size(); ++k) o << "V_m_s," << k << ',' << speed[k] << '\n';
  return o.str();
}

std::string ProcessWindow::to_json() const {
  nlohmann::json j;
  j["T_sub_K"] = substrate;
  j["alpha"] = absorptivity;
  j["rows"] = power.size();
  j["cols"] = speed.size();
  j["row_axis"] = "P_W";
  j["col_axis"] = "V_m_s";
  j["cold_cells"] = cold_cells;
  j["cold_sentinel"] = kColdSentinel;
  return j.dump(2);
}

}  // namespace lpbf::control
