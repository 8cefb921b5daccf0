#include "lpbf/features.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace lpbf::features {

namespace {

constexpr double kUm = 1e-6;

inline double logistic(double u) {
  return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
}

void require_grid(const PlaneSection& s) {
  if (s.values.size() != s.grid.size() || s.grid.nx == 0 || s.grid.ny == 0)
    throw ShapeError("section values do not match its grid");
}

// Log-sum-exp with temperature tau over `v`; writes softmax weights into `w`.
double soft_max(const std::vector<double>& v, double tau, std::vector<double>& w) {
  const double m = *std::max_element(v.begin(), v.end());
  w.resize(v.size());
  double s = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) s += (w[k] = std::exp((v[k] - m) / tau));
  for (auto& x : w) x /= s;
  return m + tau * std::log(s);
}

}  // namespace

void SriConstants::validate() const {
  if (!(length_scale > 0 && contact_angle > 0 && energy_density > 0 && gamma_t > 0 && latent_melt > 0 &&
        kappa > 0))
    throw DomainError("SriConstants: all constants must be positive");
}

double peak_temperature(const PlaneSection& xy, const PlaneSection& xz) {
  require_grid(xy);
  require_grid(xz);
  return std::max(*std::max_element(xy.values.begin(), xy.values.end()),
                  *std::max_element(xz.values.begin(), xz.values.end()));
}

double pool_length(const PlaneSection& xy, const PlaneSection& xz, double ts) {
  require_grid(xy);
  require_grid(xz);
  double best = 0.0;
  for (const PlaneSection* s : {&xy, &xz}) {
    const auto& g = s->grid;
    for (std::size_t j = 0; j < g.ny; ++j) {
      std::size_t n = 0;
      for (std::size_t i = 0; i < g.nx; ++i) n += s->at(i, j) > ts ? 1 : 0;
      best = std::max(best, static_cast<double>(n) * g.dx);
    }
  }
  return best * kUm;
}

double pool_width(const PlaneSection& xy, double ts) {
  require_grid(xy);
  const auto& g = xy.grid;
  double best = 0.0;
  for (std::size_t i = 0; i < g.nx; ++i) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < g.ny; ++j) n += xy.at(i, j) > ts ? 1 : 0;
    best = std::max(best, static_cast<double>(n) * g.dy);
  }
  return best * kUm;
}

SmoothValue peak_temperature_smooth(const PlaneSection& xy, const PlaneSection& xz, const SmoothParams& sp) {
  require_grid(xy);
  require_grid(xz);
  std::vector<double> all(xy.values);
  all.insert(all.end(), xz.values.begin(), xz.values.end());
  std::vector<double> w;
  SmoothValue out;
  out.value = soft_max(all, sp.tau_peak, w);
  out.d_xy.assign(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(xy.values.size()));
  out.d_xz.assign(w.begin() + static_cast<std::ptrdiff_t>(xy.values.size()), w.end());
  return out;
}

SmoothValue pool_length_smooth(const PlaneSection& xy, const PlaneSection& xz, double ts, const SmoothParams& sp) {
  require_grid(xy);
  require_grid(xz);
  // Soft molten length of every x-row of both sections, in um.
  std::vector<double> rows;
  rows.reserve(xy.grid.ny + xz.grid.ny);
  for (const PlaneSection* s : {&xy, &xz}) {
    const auto& g = s->grid;
    for (std::size_t j = 0; j < g.ny; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.nx; ++i) acc += logistic((s->at(i, j) - ts) / sp.tau_step);
      rows.push_back(acc * g.dx);
    }
  }
  std::vector<double> w;
  SmoothValue out;
  out.value = soft_max(rows, sp.tau_length, w) * kUm;
  out.d_xy.assign(xy.values.size(), 0.0);
  out.d_xz.assign(xz.values.size(), 0.0);
  std::size_t r = 0;
  for (const PlaneSection* s : {&xy, &xz}) {
    auto& d = (s == &xy) ? out.d_xy : out.d_xz;
    const auto& g = s->grid;
    for (std::size_t j = 0; j < g.ny; ++j, ++r) {
      const double c = w[r] * g.dx * kUm / sp.tau_step;
      for (std::size_t i = 0; i < g.nx; ++i) {
        const double sg = logistic((s->at(i, j) - ts) / sp.tau_step);
        d[i * g.ny + j] = c * sg * (1.0 - sg);
      }
    }
  }
  return out;
}

SmoothValue pool_width_smooth(const PlaneSection& xy, double ts, const SmoothParams& sp) {
  require_grid(xy);
  const auto& g = xy.grid;
  std::vector<double> cols(g.nx, 0.0);
  for (std::size_t i = 0; i < g.nx; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < g.ny; ++j) acc += logistic((xy.at(i, j) - ts) / sp.tau_step);
    cols[i] = acc * g.dy;
  }
  std::vector<double> w;
  SmoothValue out;
  out.value = soft_max(cols, sp.tau_length, w) * kUm;
  out.d_xy.assign(xy.values.size(), 0.0);
  for (std::size_t i = 0; i < g.nx; ++i) {
    const double c = w[i] * g.dy * kUm / sp.tau_step;
    for (std::size_t j = 0; j < g.ny; ++j) {
      const double sg = logistic((xy.at(i, j) - ts) / sp.tau_step);
      out.d_xy[i * g.ny + j] = c * sg * (1.0 - sg);
    }
  }
  return out;
}

double marangoni_force(double t_peak, double length, double ts, double gamma_t) {
  if (!(t_peak > ts)) throw DomainError("marangoni_force: undefined pool, T_peak must exceed T_s");
  if (!(length > 0.0)) throw DomainError("marangoni_force: undefined pool, length must be positive");
  return gamma_t * (t_peak - ts) * std::numbers::pi * length / 2.0;
}

SriPartials sri_with_partials(double t_peak, double length, double width, double ts, const SriConstants& c) {
  c.validate();
  if (!(length > 0.0)) throw DomainError("sri: melt-pool length must be positive");
  if (!(width > 0.0)) throw DomainError("sri: melt-pool width must be positive");
  const double superheat = t_peak - ts;
  if (!(superheat > 0.0)) throw DomainError("sri: peak temperature must exceed solidus");
  const double aspect = length / width;
  const double root = std::sqrt(2.0 * c.contact_angle /
                                (c.energy_density * c.gamma_t * std::numbers::pi * length * superheat));
  const double v = c.kappa * c.latent_melt * c.length_scale * c.length_scale * std::pow(aspect, 0.25) * root;
  // d ln SRI: +1/4 d ln L - 1/4 d ln W - 1/2 d ln L - 1/2 d ln dT
  return {v, -0.5 * v / superheat, -0.25 * v / length, -0.25 * v / width};
}

double sri(double t_peak, double length, double width, double ts, const SriConstants& c) {
  return sri_with_partials(t_peak, length, width, ts, c).value;
}

Roughness roughness(double s) {
  if (!(s >= 0.0)) throw DomainError("roughness: SRI must be non-negative");
  const bool low = s < kRaBreakpoint;
  const double slope = low ? kRaLowSlope : kRaHighSlope;
  const double ra = low ? kRaLowSlope * s + kRaLowIntercept : kRaHighSlope * s + kRaHighIntercept;
  if (ra < 0.0) return {0.0, 0.0, true};
  return {ra, slope, false};
}

MeltPoolState extract_state(const PlaneSection& xy, const PlaneSection& xz, const thermo::MaterialProps& m,
                            const SriConstants& c) {
  return state_from_scalars(peak_temperature(xy, xz), pool_length(xy, xz, m.t_solidus), pool_width(xy, m.t_solidus),
                            m, c);
}

MeltPoolState state_from_scalars(double t_peak, double length, double width, const thermo::MaterialProps& m,
                                 const SriConstants& c) {
  MeltPoolState s;
  s.t_peak = t_peak;
  s.length = length;
  s.width = width;
  if (s.width > 0.0) s.aspect = s.length / s.width;
  s.cold = !(s.length > 0.0 && s.width > 0.0 && s.t_peak > m.t_solidus);
  if (s.cold) return s;
  s.marangoni = marangoni_force(s.t_peak, s.length, m.t_solidus, c.gamma_t);
  s.sri = sri(s.t_peak, s.length, s.width, m.t_solidus, c);
  const auto r = roughness(*s.sri);
  s.ra = r.ra;
  s.ra_clamped = r.clamped;
  return s;
}

std::string to_json(const MeltPoolState& s) {
  nlohmann::json j;
  j["T_peak_K"] = s.t_peak;
  j["L_m"] = s.length;
  j["W_m"] = s.width;
  auto opt = [&j](const char* key, const std::optional<double>& v) {
    j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  opt("aspect", s.aspect);
  opt("F_N", s.marangoni);
  opt("SRI", s.sri);
  opt("Ra_um", s.ra);
  j["Ra_clamped"] = s.ra_clamped;
  j["cold"] = s.cold;
  return j.dump();
}

std::string csv_header() { return "P_W,V_m_s,T_sub_K,alpha,T_peak_K,L_m,W_m,aspect,F_N,SRI,Ra_um,flags"; }

std::string csv_row(const ProcessParams& p, const MeltPoolState& s) {
  std::ostringstream o;
  o << std::setprecision(10);
  auto opt = [&o](const std::optional<double>& v) {
    if (v) o << *v;
    o << ',';
  };
  o << p.power << ',' << p.speed << ',' << p.substrate << ',' << p.absorptivity << ',' << s.t_peak << ','
    << s.length << ',' << s.width << ',';
  opt(s.aspect);
  opt(s.marangoni);
  opt(s.sri);
  opt(s.ra);
  std::string flags;
  if (s.cold) flags += "cold";
  if (s.ra_clamped) flags += flags.empty() ? "ra_clamped" : "|ra_clamped";
  o << flags;
  return o.str();
}

}  // namespace lpbf::features
