#include "lpbf/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace lpbf::sim {

namespace {

constexpr double kUm = 1e-6;

std::size_t count_nodes(double lo, double hi, double step, const char* axis) {
  if (!(step > 0.0) || !(hi > lo))
    throw ConfigError(std::string("SimDomain: bad extent or spacing on ") + axis);
  const double cells = (hi - lo) / step;
  const double rounded = std::round(cells);
  if (std::abs(cells - rounded) > 1e-9 * std::max(1.0, cells) || rounded < 1.0)
    throw ConfigError(std::string("SimDomain: spacing does not divide extent on ") + axis);
  return static_cast<std::size_t>(rounded) + 1;
}

// Control-volume fraction per axis: half cells on boundary nodes.
inline double cv_fraction(std::size_t i, std::size_t n) { return (i == 0 || i + 1 == n) ? 0.5 : 1.0; }

}  // namespace

std::size_t SimDomain::nx() const { return count_nodes(x_min, x_max, dx, "x"); }
std::size_t SimDomain::ny() const { return count_nodes(y_min, y_max, dy, "y"); }
std::size_t SimDomain::nz() const { return count_nodes(z_min, z_max, dz, "z"); }

void SimDomain::validate() const {
  const std::size_t n[3] = {nx(), ny(), nz()};
  for (auto v : n)
    if (v < 3) throw ConfigError("SimDomain: need at least 3 nodes per axis");
  if (std::abs(z_max - 1000.0) > 1e-9) throw ConfigError("SimDomain: top surface must be z = 1000 um");
  if (!(layer_thickness > 0.0) || !(beam_radius > 0.0))
    throw ConfigError("SimDomain: layer thickness and beam radius must be positive");
  if (h_conv < 0.0 || !(t_ambient > 0.0)) throw ConfigError("SimDomain: bad convection parameters");
  if (!(laser_start_x >= x_min && laser_start_x < laser_stop_x && laser_stop_x <= x_max))
    throw ConfigError("SimDomain: laser track must satisfy x_min <= start < stop <= x_max");
}

double source_term(double x, double y, double z, const LaserState& laser, const SimDomain& domain) {
  if (z < domain.z_max - domain.layer_thickness - 1e-9) return 0.0;
  const double rb = domain.beam_radius * kUm;
  const double th = domain.layer_thickness * kUm;
  const double ddx = (x - laser.x) * kUm, ddy = (y - laser.y) * kUm, ddz = (z - laser.z) * kUm;
  const double r2 = ddx * ddx + ddy * ddy + ddz * ddz;
  const double peak = laser.absorptivity * laser.power / (std::numbers::pi * rb * rb * th);
  return peak * std::exp(-2.0 * r2 / (rb * rb));
}

ThermalSolver::ThermalSolver(SimDomain domain, SolverOptions options)
    : domain_(domain), options_(options), curve_(options.material, 300.0, options.vapor_width) {
  domain_.validate();
  if (!(options_.cfl_safety > 0.0 && options_.cfl_safety <= 1.0))
    throw ConfigError("SolverOptions: cfl_safety must lie in (0, 1]");
  if (options_.window_steps == 0 || options_.metric_stride == 0 ||
      options_.window_steps % options_.metric_stride != 0)
    throw ConfigError("SolverOptions: window_steps must be a positive multiple of metric_stride");
}

double ThermalSolver::temperature_of(double h) const {
  if (options_.constant_properties) return curve_.reference_temperature() + h / options_.material.cp_solid;
  return curve_.temperature_unchecked(h);
}

double ThermalSolver::enthalpy_of(double t) const {
  if (options_.constant_properties) return options_.material.cp_solid * (t - curve_.reference_temperature());
  return curve_.enthalpy(t);
}

TemperatureField3D ThermalSolver::uniform_field(double t) const {
  TemperatureField3D f;
  f.nx = domain_.nx();
  f.ny = domain_.ny();
  f.nz = domain_.nz();
  f.x0 = domain_.x_min;
  f.y0 = domain_.y_min;
  f.z0 = domain_.z_min;
  f.dx = domain_.dx;
  f.dy = domain_.dy;
  f.dz = domain_.dz;
  f.temperature.assign(f.size(), t);
  f.enthalpy.assign(f.size(), enthalpy_of(t));
  return f;
}

double ThermalSolver::max_stable_dt() const {
  const auto& m = options_.material;
  const double c_min = options_.constant_properties ? m.cp_solid : std::min(m.cp_solid, m.cp_liquid);
  const double k_max = options_.constant_properties ? m.k_solid : std::max(m.k_solid, m.k_liquid);
  const double dmin = std::min({domain_.dx, domain_.dy, domain_.dz}) * kUm;
  return options_.cfl_safety * dmin * dmin * m.density * c_min / (6.0 * k_max);
}

void ThermalSolver::advance(TemperatureField3D& field, const LaserState& laser, double dt) const {
  const double dt_max = max_stable_dt();
  if (!(dt > 0.0) || dt > dt_max * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "advance: dt = " << dt << " s violates the explicit stability bound dt <= " << dt_max
        << " s (safety " << options_.cfl_safety << ")";
    throw StabilityError(msg.str());
  }
  const std::size_t nx = field.nx, ny = field.ny, nz = field.nz;
  const std::size_t n = field.size();
  const auto& m = options_.material;
  const double* t = field.temperature.data();
  double* h = field.enthalpy.data();

  std::vector<double> kbuf;
  const double* kc;
  if (options_.constant_properties) {
    kbuf.assign(n, m.k_solid);
  } else {
    kbuf.resize(n);
    for (std::size_t q = 0; q < n; ++q) kbuf[q] = thermo::conductivity_of_temperature(t[q], m);
  }
  kc = kbuf.data();

  const double dxm = field.dx * kUm, dym = field.dy * kUm, dzm = field.dz * kUm;
  // The factor 1/2 from face-averaged k is folded into the coefficients.
  const double cx = 0.5 / (dxm * dxm), cy = 0.5 / (dym * dym), cz = 0.5 / (dzm * dzm);
  const double scale = dt / m.density;

  // Zero-flux faces are realised with mirrored neighbours, which reproduces the
  // half-cell finite-volume balance on vertex-centred boundary nodes.
  for (std::size_t k = 0; k < nz; ++k) {
    const std::size_t kp = (k + 1 < nz) ? k + 1 : k - 1;
    const std::size_t km = (k > 0) ? k - 1 : k + 1;
    for (std::size_t j = 0; j < ny; ++j) {
      const std::size_t jp = (j + 1 < ny) ? j + 1 : j - 1;
      const std::size_t jm = (j > 0) ? j - 1 : j + 1;
      const std::size_t r0 = field.index(0, j, k);
      const double* T0 = t + r0;
      const double* Tjp = t + field.index(0, jp, k);
      const double* Tjm = t + field.index(0, jm, k);
      const double* Tkp = t + field.index(0, j, kp);
      const double* Tkm = t + field.index(0, j, km);
      const double* K0 = kc + r0;
      const double* Kjp = kc + field.index(0, jp, k);
      const double* Kjm = kc + field.index(0, jm, k);
      const double* Kkp = kc + field.index(0, j, kp);
      const double* Kkm = kc + field.index(0, j, km);
      double* H = h + r0;

      auto node = [&](std::size_t i, std::size_t ip, std::size_t im) {
        const double tc = T0[i], kk = K0[i];
        const double fx = (kk + K0[ip]) * (T0[ip] - tc) + (kk + K0[im]) * (T0[im] - tc);
        const double fy = (kk + Kjp[i]) * (Tjp[i] - tc) + (kk + Kjm[i]) * (Tjm[i] - tc);
        const double fz = (kk + Kkp[i]) * (Tkp[i] - tc) + (kk + Kkm[i]) * (Tkm[i] - tc);
        H[i] += scale * (cx * fx + cy * fy + cz * fz);
      };
      node(0, 1, 1);
      for (std::size_t i = 1; i + 1 < nx; ++i) node(i, i + 1, i - 1);
      node(nx - 1, nx - 2, nx - 2);
    }
  }

  // Convective exchange on the top face (half-cell height).
  if (domain_.h_conv > 0.0) {
    const double coef = scale * 2.0 * domain_.h_conv / dzm;
    const std::size_t top = field.index(0, 0, nz - 1);
    for (std::size_t q = top; q < n; ++q) h[q] += coef * (domain_.t_ambient - t[q]);
  }

  // Source, restricted to a box of 4 beam radii around the spot.
  if (laser.power * laser.absorptivity != 0.0) {
    const double reach = 4.0 * domain_.beam_radius;
    const double zlo = domain_.z_max - domain_.layer_thickness - 1e-9;
    auto lo_index = [](double v, double o, double d, std::size_t nmax) {
      const double f = std::ceil((v - o) / d);
      return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(nmax)));
    };
    auto hi_index = [](double v, double o, double d, std::size_t nmax) {
      const double f = std::floor((v - o) / d);
      return static_cast<std::ptrdiff_t>(std::clamp(f, -1.0, static_cast<double>(nmax) - 1.0));
    };
    const std::size_t i0 = lo_index(laser.x - reach, field.x0, field.dx, nx);
    const std::ptrdiff_t i1 = hi_index(laser.x + reach, field.x0, field.dx, nx);
    const std::size_t j0 = lo_index(laser.y - reach, field.y0, field.dy, ny);
    const std::ptrdiff_t j1 = hi_index(laser.y + reach, field.y0, field.dy, ny);
    const std::size_t k0 = lo_index(std::max(zlo, laser.z - reach), field.z0, field.dz, nz);
    for (std::size_t k = k0; k < nz; ++k) {
      const double z = field.z(k);
      if (z < zlo) continue;
      for (std::ptrdiff_t j = static_cast<std::ptrdiff_t>(j0); j <= j1; ++j) {
        for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(i0); i <= i1; ++i) {
          const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
          h[field.index(ui, uj, k)] += scale * source_term(field.x(ui), field.y(uj), z, laser, domain_);
        }
      }
    }
  }

  double* tw = field.temperature.data();
  if (options_.constant_properties) {
    const double inv_c = 1.0 / m.cp_solid, tref = curve_.reference_temperature();
    for (std::size_t q = 0; q < n; ++q) tw[q] = tref + h[q] * inv_c;
  } else {
    for (std::size_t q = 0; q < n; ++q) tw[q] = curve_.temperature_unchecked(h[q]);
  }
  field.time += dt;
}

double ThermalSolver::total_enthalpy(const TemperatureField3D& f) const {
  const double dv = f.dx * f.dy * f.dz * kUm * kUm * kUm;
  double sum = 0.0;
  for (std::size_t k = 0; k < f.nz; ++k)
    for (std::size_t j = 0; j < f.ny; ++j) {
      const double w = cv_fraction(j, f.ny) * cv_fraction(k, f.nz);
      double row = 0.0;
      for (std::size_t i = 0; i < f.nx; ++i) row += cv_fraction(i, f.nx) * f.enthalpy[f.index(i, j, k)];
      sum += w * row;
    }
  return options_.material.density * dv * sum;
}

namespace {

// Molten extent between two adjacent nodes with a linear solidus crossing.
inline double molten_fraction(double a, double b, double ts) {
  const bool ma = a > ts, mb = b > ts;
  if (ma && mb) return 1.0;
  if (!ma && !mb) return 0.0;
  const double hi = ma ? a : b, lo = ma ? b : a;
  return (hi - ts) / (hi - lo);
}

}  // namespace

PoolMetrics pool_metrics(const TemperatureField3D& f, double ts) {
  PoolMetrics pm;
  const double* t = f.temperature.data();
  pm.t_peak = *std::max_element(f.temperature.begin(), f.temperature.end());
  if (pm.t_peak <= ts) return pm;
  std::vector<double> col(f.nx);
  for (std::size_t k = 0; k < f.nz; ++k) {
    std::fill(col.begin(), col.end(), 0.0);
    bool any = false;
    for (std::size_t j = 0; j < f.ny; ++j) {
      const double* row = t + f.index(0, j, k);
      double len = 0.0;
      for (std::size_t i = 0; i + 1 < f.nx; ++i) len += molten_fraction(row[i], row[i + 1], ts);
      if (len > 0.0) any = true;
      pm.length = std::max(pm.length, len * f.dx);
      if (j + 1 < f.ny) {
        const double* next = row + f.nx;
        for (std::size_t i = 0; i < f.nx; ++i) col[i] += molten_fraction(row[i], next[i], ts);
      }
    }
    if (!any) continue;
    for (std::size_t i = 0; i < f.nx; ++i) pm.width = std::max(pm.width, col[i] * f.dy);
  }
  return pm;
}

bool in_solver_envelope(const ProcessParams& p) {
  return p.power >= 50.0 && p.power <= 600.0 && p.speed >= 0.25 && p.speed <= 3.0 &&
         p.substrate >= 300.0 && p.substrate <= 600.0 && p.absorptivity >= 0.05 && p.absorptivity <= 0.7;
}

SteadyResult run_to_steady(const ProcessParams& params, const SimDomain& domain,
                           const SolverOptions& options) {
  const bool no_source = params.power == 0.0 || params.absorptivity == 0.0;
  if (!no_source && !in_solver_envelope(params))
    throw DomainError("run_to_steady: parameters outside the solver validity envelope");
  if (!(params.speed > 0.0)) throw DomainError("run_to_steady: scan speed must be positive");

  ThermalSolver solver(domain, options);
  SteadyResult res;
  res.field = solver.uniform_field(params.substrate);
  res.laser = LaserState{domain.laser_start_x, 0.0, domain.z_max, params.speed, params.power,
                         params.absorptivity};
  auto& d = res.diagnostics;
  d.dt = solver.max_stable_dt();
  d.laser_x = res.laser.x;
  if (no_source) {
    d.metrics = pool_metrics(res.field, options.material.t_solidus);
    d.converged = true;
    return res;
  }

  const std::size_t per_window = options.window_steps / options.metric_stride;
  std::vector<PoolMetrics> samples;
  const double advance_um = params.speed * d.dt / kUm;

  auto window_mean = [&](std::size_t end) {
    PoolMetrics m;
    for (std::size_t s = end - per_window; s < end; ++s) {
      m.t_peak += samples[s].t_peak;
      m.length += samples[s].length;
      m.width += samples[s].width;
    }
    const double inv = 1.0 / static_cast<double>(per_window);
    m.t_peak *= inv;
    m.length *= inv;
    m.width *= inv;
    return m;
  };
  auto rel = [](double a, double b) {
    const double s = std::max(std::abs(a), std::abs(b));
    return s == 0.0 ? 0.0 : std::abs(a - b) / s;
  };

  while (true) {
    solver.advance(res.field, res.laser, d.dt);
    res.laser.x += advance_um;
    ++d.steps;
    d.laser_x = res.laser.x;
    if (d.steps % options.metric_stride == 0) {
      samples.push_back(pool_metrics(res.field, options.material.t_solidus));
      d.metrics = samples.back();
      if (samples.size() >= 2 * per_window) {
        const PoolMetrics cur = window_mean(samples.size());
        const PoolMetrics prev = window_mean(samples.size() - per_window);
        d.last_rel_change = {rel(cur.t_peak, prev.t_peak), rel(cur.length, prev.length),
                             rel(cur.width, prev.width)};
        if (cur.length > 0.0 && d.last_rel_change[0] < options.steady_tol &&
            d.last_rel_change[1] < options.steady_tol && d.last_rel_change[2] < options.steady_tol) {
          d.converged = true;
          return res;
        }
      }
    }
    if (res.laser.x >= domain.laser_stop_x) {
      std::ostringstream msg;
      msg << "run_to_steady: laser reached x = " << res.laser.x << " um without convergence after "
          << d.steps << " steps (rel. changes T_peak " << d.last_rel_change[0] << ", L "
          << d.last_rel_change[1] << ", W " << d.last_rel_change[2] << ")";
      throw ConvergenceError(msg.str(), d);
    }
  }
}

double sample(const TemperatureField3D& f, double x, double y, double z, bool* clamped) {
  bool c = false;
  auto locate = [&c](double v, double o, double d, std::size_t n, std::size_t& i0, double& frac) {
    double u = (v - o) / d;
    const double umax = static_cast<double>(n - 1);
    if (u < 0.0) { u = 0.0; c = true; }
    if (u > umax) { u = umax; c = true; }
    double fl = std::floor(u);
    if (fl >= umax) fl = umax - 1.0;
    i0 = static_cast<std::size_t>(fl);
    frac = u - fl;
  };
  std::size_t i, j, k;
  double fx, fy, fz;
  locate(x, f.x0, f.dx, f.nx, i, fx);
  locate(y, f.y0, f.dy, f.ny, j, fy);
  locate(z, f.z0, f.dz, f.nz, k, fz);
  if (clamped) *clamped = *clamped || c;
  const double* t = f.temperature.data();
  auto lerp_x = [&](std::size_t jj, std::size_t kk) {
    const std::size_t q = f.index(i, jj, kk);
    return fx == 0.0 ? t[q] : (1.0 - fx) * t[q] + fx * t[q + 1];
  };
  auto lerp_y = [&](std::size_t kk) {
    return fy == 0.0 ? lerp_x(j, kk) : (1.0 - fy) * lerp_x(j, kk) + fy * lerp_x(j + 1, kk);
  };
  return fz == 0.0 ? lerp_y(k) : (1.0 - fz) * lerp_y(k) + fz * lerp_y(k + 1);
}

std::pair<PlaneSection, PlaneSection> extract_sections(const TemperatureField3D& field,
                                                       const LaserState& laser, const Grid2D& xy,
                                                       const Grid2D& xz) {
  PlaneSection a = make_section(PlaneId::XY, xy);
  PlaneSection b = make_section(PlaneId::XZ, xz);
  for (std::size_t i = 0; i < xy.nx; ++i)
    for (std::size_t j = 0; j < xy.ny; ++j)
      a.at(i, j) = sample(field, laser.x + xy.x(i), laser.y + xy.y(j), laser.z, &a.clamped);
  for (std::size_t i = 0; i < xz.nx; ++i)
    for (std::size_t j = 0; j < xz.ny; ++j)
      b.at(i, j) = sample(field, laser.x + xz.x(i), laser.y, xz.y(j), &b.clamped);
  return {std::move(a), std::move(b)};
}

}  // namespace lpbf::sim
