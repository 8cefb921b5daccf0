#include "lpbf/fno.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "lpbf/io.hpp"
#include "lpbf/rng.hpp"

namespace lpbf::fno {

using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

namespace {

// GELU(x) = x * Phi(x) with Phi from a rational-exponential erf approximation
// (absolute error below 1.5e-7). `slope` receives the exact derivative of the
// approximated activation.
void gelu(const MatrixXd& pre, MatrixXd& act, MatrixXd& slope) {
  constexpr double p = 0.3275911, a1 = 0.254829592, a2 = -0.284496736, a3 = 1.421413741, a4 = -1.453152027,
                   a5 = 1.061405429;
  constexpr Eigen::Index chunk = 256;
  using Chunk = Eigen::Array<double, chunk, 1>;
  act.resize(pre.rows(), pre.cols());
  slope.resize(pre.rows(), pre.cols());
  const Eigen::Index n = pre.size();
  auto run = [&](Eigen::Index at, const auto& x) {
    const auto len = x.size();
    const auto u = (x.abs() * (std::numbers::sqrt2 / 2.0)).eval();
    const auto t = (1.0 / (1.0 + p * u)).eval();
    const auto poly = (t * (a1 + t * (a2 + t * (a3 + t * (a4 + t * a5))))).eval();
    const auto dpoly = (a1 + t * (2.0 * a2 + t * (3.0 * a3 + t * (4.0 * a4 + t * 5.0 * a5)))).eval();
    const auto e = (-u.square()).exp().eval();
    const auto tail = (0.5 * poly * e).eval();
    const auto cdf = (x >= 0.0).select(1.0 - tail, tail).eval();
    // d erf(u)/du = (p t^2 poly'(t) + 2 u poly(t)) e^{-u^2}; dPhi/dx = erf'(u) / (2 sqrt 2).
    const auto pdf = ((p * t.square() * dpoly + 2.0 * u * poly) * e * (std::numbers::sqrt2 / 4.0)).eval();
    Eigen::Map<Eigen::ArrayXd>(act.data() + at, len) = x * cdf;
    Eigen::Map<Eigen::ArrayXd>(slope.data() + at, len) = cdf + x * pdf;
  };
  Eigen::Index k = 0;
  for (; k + chunk <= n; k += chunk) run(k, Chunk(Eigen::Map<const Chunk>(pre.data() + k)));
  if (k < n) run(k, Eigen::ArrayXd(Eigen::Map<const Eigen::ArrayXd>(pre.data() + k, n - k)));
}

std::string layer_key(const char* what, std::size_t l) { return std::string(what) + std::to_string(l); }

}  // namespace

FnoConfig FnoConfig::desk() {
  FnoConfig c;
  c.width = 12;
  c.modes_x = 8;
  c.modes_y = 8;
  c.proj_width = 24;
  c.learning_rate = 0.005;
  c.epochs = 150;
  return c;
}

void FnoConfig::validate(const Grid2D& grid) const {
  if (layers == 0 || width == 0 || proj_width == 0) throw ConfigError("FnoConfig: layers and widths must be >= 1");
  if (modes_x == 0 || modes_y == 0) throw ConfigError("FnoConfig: modes must be >= 1");
  if (2 * modes_x > grid.nx || 2 * modes_y > grid.ny)
    throw ConfigError("FnoConfig: retained modes (" + std::to_string(modes_x) + ", " + std::to_string(modes_y) +
                      ") exceed half the grid (" + std::to_string(grid.nx) + " x " + std::to_string(grid.ny) + ")");
  if (!(learning_rate > 0) || !(decay_factor > 0) || decay_every == 0 || batch_size == 0 || !(weight_decay >= 0))
    throw ConfigError("FnoConfig: invalid optimizer settings");
  if (threads == 0) throw ConfigError("FnoConfig: threads must be >= 1");
}

Layout::Layout(const FnoConfig& c) {
  const std::size_t d = c.width, m = 2 * c.modes_x * c.modes_y;
  auto add = [this](std::string name, std::size_t n) {
    blocks.push_back({std::move(name), total, n});
    total += n;
  };
  add("lift_w", kInputChannels * d);
  add("lift_b", d);
  for (std::size_t l = 0; l < c.layers; ++l) {
    add(layer_key("w", l), d * d);
    add(layer_key("c", l), d);
    add(layer_key("r_re", l), m * d * d);
    add(layer_key("r_im", l), m * d * d);
  }
  add("proj1_w", d * c.proj_width);
  add("proj1_b", c.proj_width);
  add("proj2_w", c.proj_width);
  add("proj2_b", 1);
}

const Layout::Block& Layout::at(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return b;
  throw ShapeError("unknown parameter block " + name);
}

Eigen::MatrixXd build_input_channels(const ProcessParams& p, const Grid2D& grid, const Normalization& norm,
                                     bool* extrapolated) {
  const auto a = p.as_array();
  if (extrapolated) *extrapolated = !norm.bounds.contains(p);
  MatrixXd x(grid.size(), kInputChannels);
  for (std::size_t k = 0; k < kParamCount; ++k) x.col(static_cast<Eigen::Index>(k)).setConstant(norm.bounds.normalize(k, a[k]));
  const double sx = grid.nx > 1 ? 1.0 / static_cast<double>(grid.nx - 1) : 0.0;
  const double sy = grid.ny > 1 ? 1.0 / static_cast<double>(grid.ny - 1) : 0.0;
  for (std::size_t i = 0; i < grid.nx; ++i)
    for (std::size_t j = 0; j < grid.ny; ++j) {
      const auto n = static_cast<Eigen::Index>(i * grid.ny + j);
      x(n, 4) = static_cast<double>(i) * sx;
      x(n, 5) = static_cast<double>(j) * sy;
    }
  return x;
}

// Truncated real-input DFT matrices for one grid. Frequencies are fixed by the
// training grid's period so kernels mean the same thing on refined grids.
struct Model::Plan {
  Grid2D grid;
  std::size_t mx2 = 0, my = 0;
  MatrixXd bt_re, bt_im;      // my x ny     forward along the second axis
  MatrixXd at_re, at_im;      // nx x 2mx    forward along x
  MatrixXd ait_re, ait_im;    // 2mx x nx    inverse along x
  MatrixXd bit_re, bit_im;    // ny x my     inverse along the second axis, scaled

  // Samples of one period missing past the last node; filled by linear
  // interpolation between the last and first node (0 on the training grid).
  static std::size_t gap(double period, double d, std::size_t n) {
    const auto full = static_cast<std::size_t>(std::llround(period / d));
    return full > n ? full - n : 0;
  }

  Plan(const Grid2D& g, const Grid2D& train, std::size_t modes_x, std::size_t modes_y) : grid(g) {
    mx2 = 2 * modes_x;
    my = modes_y;
    const double px = static_cast<double>(train.nx) * train.dx;
    const double py = static_cast<double>(train.ny) * train.dy;
    const double two_pi = 2.0 * std::numbers::pi;
    const double inv_n = (g.dx / px) * (g.dy / py);
    bt_re.resize(my, g.ny);
    bt_im.resize(my, g.ny);
    bit_re.resize(g.ny, my);
    bit_im.resize(g.ny, my);
    const std::size_t wrap_y = gap(py, g.dy, g.ny);
    for (std::size_t k = 0; k < my; ++k) {
      // ky > 0 stands for the conjugate pair; ky = 0 counts once.
      const double w = (k == 0 ? 1.0 : 2.0) * inv_n;
      const double f = two_pi * static_cast<double>(k) / py;
      for (std::size_t j = 0; j < g.ny; ++j) {
        const double ph = f * (static_cast<double>(j) * g.dy);
        bt_re(k, j) = std::cos(ph);
        bt_im(k, j) = -std::sin(ph);
        bit_re(j, k) = w * std::cos(ph);
        bit_im(j, k) = w * std::sin(ph);
      }
      for (std::size_t q = 1; q <= wrap_y; ++q) {
        const double t = static_cast<double>(q) / static_cast<double>(wrap_y + 1);
        const double ph = f * (static_cast<double>(g.ny - 1 + q) * g.dy);
        bt_re(k, g.ny - 1) += (1.0 - t) * std::cos(ph);
        bt_im(k, g.ny - 1) -= (1.0 - t) * std::sin(ph);
        bt_re(k, 0) += t * std::cos(ph);
        bt_im(k, 0) -= t * std::sin(ph);
      }
    }
    at_re.resize(g.nx, mx2);
    at_im.resize(g.nx, mx2);
    ait_re.resize(mx2, g.nx);
    ait_im.resize(mx2, g.nx);
    const std::size_t wrap_x = gap(px, g.dx, g.nx);
    for (std::size_t kk = 0; kk < mx2; ++kk) {
      const double kx = kk < modes_x ? static_cast<double>(kk) : static_cast<double>(kk) - static_cast<double>(mx2);
      const double f = two_pi * kx / px;
      for (std::size_t i = 0; i < g.nx; ++i) {
        const double ph = f * (static_cast<double>(i) * g.dx);
        at_re(i, kk) = std::cos(ph);
        at_im(i, kk) = -std::sin(ph);
        ait_re(kk, i) = std::cos(ph);
        ait_im(kk, i) = std::sin(ph);
      }
      for (std::size_t q = 1; q <= wrap_x; ++q) {
        const double t = static_cast<double>(q) / static_cast<double>(wrap_x + 1);
        const double ph = f * (static_cast<double>(g.nx - 1 + q) * g.dx);
        at_re(g.nx - 1, kk) += (1.0 - t) * std::cos(ph);
        at_im(g.nx - 1, kk) -= (1.0 - t) * std::sin(ph);
        at_re(0, kk) += t * std::cos(ph);
        at_im(0, kk) -= t * std::sin(ph);
      }
    }
  }
};

Model::Model(const FnoConfig& config, PlaneId plane, const Grid2D& grid, const Normalization& norm)
    : config_(config), plane_(plane), grid_(grid), norm_(norm), layout_(config) {
  config_.validate(grid_);
  params_.assign(layout_.total, 0.0);
  plan_ = std::make_shared<const Plan>(grid_, grid_, config_.modes_x, config_.modes_y);
  initialize(config_.seed);
}

std::shared_ptr<const Model::Plan> Model::plan_for(const Grid2D& grid) const {
  if (grid == grid_) return plan_;
  if (!grid.same_extent(grid_))
    throw ShapeError("grid does not cover the model's domain (model " + std::to_string(grid_.nx) + "x" +
                     std::to_string(grid_.ny) + ")");
  if (2 * config_.modes_x > grid.nx || 2 * config_.modes_y > grid.ny)
    throw ShapeError("grid too coarse for the model's retained modes");
  return std::make_shared<const Plan>(grid, grid_, config_.modes_x, config_.modes_y);
}

void Model::initialize(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = config_.width;
  auto fill = [&](const std::string& name, double scale) {
    const auto& b = layout_.at(name);
    for (std::size_t k = 0; k < b.size; ++k) params_[b.offset + k] = scale * rng.uniform(-1.0, 1.0);
  };
  const double s_lift = 1.0 / std::sqrt(static_cast<double>(kInputChannels));
  const double s_hid = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_spec = 1.0 / static_cast<double>(d * std::max(config_.modes_x, config_.modes_y));
  fill("lift_w", s_lift);
  fill("lift_b", s_lift);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    fill(layer_key("w", l), s_hid);
    fill(layer_key("c", l), s_hid);
    fill(layer_key("r_re", l), s_spec);
    fill(layer_key("r_im", l), s_spec);
  }
  fill("proj1_w", s_hid);
  fill("proj1_b", s_hid);
  const double s_q = 1.0 / std::sqrt(static_cast<double>(config_.proj_width));
  fill("proj2_w", s_q);
  fill("proj2_b", s_q);
}

namespace {

struct Spectral {
  // Forward: S = Re(inverse(mix(forward(H)))) for H with `d` channels.
  static void forward(const auto& plan, const double* r_re, const double* r_im, const MatrixXd& h, std::size_t d,
                      MatrixXd& s) {
    const auto& g = plan.grid;
    const auto nx = static_cast<Eigen::Index>(g.nx), ny = static_cast<Eigen::Index>(g.ny);
    const auto my = static_cast<Eigen::Index>(plan.my), mx2 = static_cast<Eigen::Index>(plan.mx2);
    const auto dd = static_cast<Eigen::Index>(d);
    const auto nm = my * mx2;
    Map<const MatrixXd> hm(h.data(), ny, nx * dd);
    const MatrixXd t_re = plan.bt_re * hm;
    const MatrixXd t_im = plan.bt_im * hm;
    MatrixXd x_re(nm, dd), x_im(nm, dd);
    for (Eigen::Index c = 0; c < dd; ++c) {
      const auto tr = t_re.middleCols(c * nx, nx);
      const auto ti = t_im.middleCols(c * nx, nx);
      Map<MatrixXd> xr(x_re.col(c).data(), my, mx2), xi(x_im.col(c).data(), my, mx2);
      xr.noalias() = tr * plan.at_re;
      xr.noalias() -= ti * plan.at_im;
      xi.noalias() = tr * plan.at_im;
      xi.noalias() += ti * plan.at_re;
    }
    MatrixXd y_re(nm, dd), y_im(nm, dd);
    for (Eigen::Index k = 0; k < nm; ++k) {
      Map<const MatrixXd> rr(r_re + k * dd * dd, dd, dd), ri(r_im + k * dd * dd, dd, dd);
      y_re.row(k).noalias() = x_re.row(k) * rr - x_im.row(k) * ri;
      y_im.row(k).noalias() = x_re.row(k) * ri + x_im.row(k) * rr;
    }
    MatrixXd u_re(my, nx * dd), u_im(my, nx * dd);
    for (Eigen::Index c = 0; c < dd; ++c) {
      Map<const MatrixXd> yr(y_re.col(c).data(), my, mx2), yi(y_im.col(c).data(), my, mx2);
      u_re.middleCols(c * nx, nx).noalias() = yr * plan.ait_re - yi * plan.ait_im;
      u_im.middleCols(c * nx, nx).noalias() = yr * plan.ait_im + yi * plan.ait_re;
    }
    s.resize(g.size(), dd);
    Map<MatrixXd> sm(s.data(), ny, nx * dd);
    sm.noalias() = plan.bit_re * u_re;
    sm.noalias() -= plan.bit_im * u_im;
  }

  // Reverse: given dL/dS, accumulate dL/dH into `gh` and (dRe, dIm) of R.
  static void backward(const auto& plan, const double* r_re, const double* r_im, const MatrixXd& h,
                       const MatrixXd& gs, std::size_t d, MatrixXd& gh, double* gr_re, double* gr_im) {
    const auto& g = plan.grid;
    const auto nx = static_cast<Eigen::Index>(g.nx), ny = static_cast<Eigen::Index>(g.ny);
    const auto my = static_cast<Eigen::Index>(plan.my), mx2 = static_cast<Eigen::Index>(plan.mx2);
    const auto dd = static_cast<Eigen::Index>(d);
    const auto nm = my * mx2;
    Map<const MatrixXd> gm(gs.data(), ny, nx * dd);
    const MatrixXd v_re = plan.bit_re.transpose() * gm;
    const MatrixXd v_im = -(plan.bit_im.transpose() * gm);
    MatrixXd gy_re(nm, dd), gy_im(nm, dd);
    for (Eigen::Index c = 0; c < dd; ++c) {
      const auto vr = v_re.middleCols(c * nx, nx);
      const auto vi = v_im.middleCols(c * nx, nx);
      Map<MatrixXd> yr(gy_re.col(c).data(), my, mx2), yi(gy_im.col(c).data(), my, mx2);
      yr.noalias() = vr * plan.ait_re.transpose();
      yr.noalias() += vi * plan.ait_im.transpose();
      yi.noalias() = vi * plan.ait_re.transpose();
      yi.noalias() -= vr * plan.ait_im.transpose();
    }
    // Recompute the forward spectrum of H for the weight gradient.
    Map<const MatrixXd> hm(h.data(), ny, nx * dd);
    const MatrixXd t_re = plan.bt_re * hm;
    const MatrixXd t_im = plan.bt_im * hm;
    MatrixXd x_re(nm, dd), x_im(nm, dd);
    for (Eigen::Index c = 0; c < dd; ++c) {
      const auto tr = t_re.middleCols(c * nx, nx);
      const auto ti = t_im.middleCols(c * nx, nx);
      Map<MatrixXd> xr(x_re.col(c).data(), my, mx2), xi(x_im.col(c).data(), my, mx2);
      xr.noalias() = tr * plan.at_re;
      xr.noalias() -= ti * plan.at_im;
      xi.noalias() = tr * plan.at_im;
      xi.noalias() += ti * plan.at_re;
    }
    MatrixXd gx_re(nm, dd), gx_im(nm, dd);
    for (Eigen::Index k = 0; k < nm; ++k) {
      Map<const MatrixXd> rr(r_re + k * dd * dd, dd, dd), ri(r_im + k * dd * dd, dd, dd);
      gx_re.row(k).noalias() = gy_re.row(k) * rr.transpose() + gy_im.row(k) * ri.transpose();
      gx_im.row(k).noalias() = gy_im.row(k) * rr.transpose() - gy_re.row(k) * ri.transpose();
      if (gr_re) {
        Map<MatrixXd> grr(gr_re + k * dd * dd, dd, dd), gri(gr_im + k * dd * dd, dd, dd);
        grr.noalias() += x_re.row(k).transpose() * gy_re.row(k) + x_im.row(k).transpose() * gy_im.row(k);
        gri.noalias() += x_re.row(k).transpose() * gy_im.row(k) - x_im.row(k).transpose() * gy_re.row(k);
      }
    }
    MatrixXd w_re(my, nx * dd), w_im(my, nx * dd);
    for (Eigen::Index c = 0; c < dd; ++c) {
      Map<const MatrixXd> xr(gx_re.col(c).data(), my, mx2), xi(gx_im.col(c).data(), my, mx2);
      w_re.middleCols(c * nx, nx).noalias() = xr * plan.at_re.transpose() + xi * plan.at_im.transpose();
      w_im.middleCols(c * nx, nx).noalias() = xr * plan.at_im.transpose() - xi * plan.at_re.transpose();
    }
    Map<MatrixXd> ghm(gh.data(), ny, nx * dd);
    ghm.noalias() += plan.bt_re.transpose() * w_re;
    ghm.noalias() -= plan.bt_im.transpose() * w_im;
  }
};

}  // namespace

void Model::forward_tape(const MatrixXd& input, const Grid2D& grid, Tape& tape) const {
  const auto plan = plan_for(grid);
  const auto n = static_cast<Eigen::Index>(grid.size());
  if (input.rows() != n || input.cols() != static_cast<Eigen::Index>(kInputChannels))
    throw ShapeError("input channels do not match the grid");
  const auto d = static_cast<Eigen::Index>(config_.width), q = static_cast<Eigen::Index>(config_.proj_width);
  tape.grid = grid;
  tape.input = input;
  tape.hidden.resize(config_.layers + 1);
  tape.pre.resize(config_.layers);
  tape.slope.resize(config_.layers);

  Map<const MatrixXd> lw(block("lift_w"), kInputChannels, d);
  Map<const VectorXd> lb(block("lift_b"), d);
  tape.hidden[0].noalias() = input * lw;
  tape.hidden[0].rowwise() += lb.transpose();

  MatrixXd s;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    Map<const MatrixXd> w(block(layer_key("w", l)), d, d);
    Map<const VectorXd> c(block(layer_key("c", l)), d);
    Spectral::forward(*plan, block(layer_key("r_re", l)), block(layer_key("r_im", l)), tape.hidden[l], config_.width, s);
    auto& z = tape.pre[l];
    z.noalias() = tape.hidden[l] * w;
    z.rowwise() += c.transpose();
    z += s;
    if (l + 1 < config_.layers)
      gelu(z, tape.hidden[l + 1], tape.slope[l]);
    else
      tape.hidden[l + 1] = z;
  }
  Map<const MatrixXd> p1(block("proj1_w"), d, q);
  Map<const VectorXd> b1(block("proj1_b"), q);
  Map<const VectorXd> p2(block("proj2_w"), q);
  tape.proj_pre.noalias() = tape.hidden[config_.layers] * p1;
  tape.proj_pre.rowwise() += b1.transpose();
  gelu(tape.proj_pre, tape.proj_act, tape.proj_slope);
  tape.output.noalias() = tape.proj_act * p2;
  tape.output.array() += *block("proj2_b");
}

void Model::backward(const Tape& tape, const VectorXd& g_out, double* g_params, MatrixXd* g_input) const {
  const auto plan = plan_for(tape.grid);
  const auto d = static_cast<Eigen::Index>(config_.width), q = static_cast<Eigen::Index>(config_.proj_width);
  if (g_out.size() != tape.output.size()) throw ShapeError("upstream gradient does not match the output");
  auto gblock = [&](const std::string& name) { return g_params + layout_.at(name).offset; };

  Map<const MatrixXd> p1(block("proj1_w"), d, q);
  Map<const VectorXd> p2(block("proj2_w"), q);
  MatrixXd g_pre = (g_out * p2.transpose()).cwiseProduct(tape.proj_slope);
  if (g_params) {
    Map<VectorXd>(gblock("proj2_w"), q).noalias() += tape.proj_act.transpose() * g_out;
    *gblock("proj2_b") += g_out.sum();
    Map<MatrixXd>(gblock("proj1_w"), d, q).noalias() += tape.hidden[config_.layers].transpose() * g_pre;
    Map<VectorXd>(gblock("proj1_b"), q).noalias() += g_pre.colwise().sum().transpose();
  }
  MatrixXd gh = g_pre * p1.transpose();

  for (std::size_t l = config_.layers; l-- > 0;) {
    MatrixXd gz = (l + 1 < config_.layers)
                      ? MatrixXd(gh.cwiseProduct(tape.slope[l]))
                      : gh;
    Map<const MatrixXd> w(block(layer_key("w", l)), d, d);
    if (g_params) {
      Map<MatrixXd>(gblock(layer_key("w", l)), d, d).noalias() += tape.hidden[l].transpose() * gz;
      Map<VectorXd>(gblock(layer_key("c", l)), d).noalias() += gz.colwise().sum().transpose();
    }
    gh.noalias() = gz * w.transpose();
    Spectral::backward(*plan, block(layer_key("r_re", l)), block(layer_key("r_im", l)), tape.hidden[l], gz,
                       config_.width, gh, g_params ? gblock(layer_key("r_re", l)) : nullptr,
                       g_params ? gblock(layer_key("r_im", l)) : nullptr);
  }
  Map<const MatrixXd> lw(block("lift_w"), kInputChannels, d);
  if (g_params) {
    Map<MatrixXd>(gblock("lift_w"), kInputChannels, d).noalias() += tape.input.transpose() * gh;
    Map<VectorXd>(gblock("lift_b"), d).noalias() += gh.colwise().sum().transpose();
  }
  if (g_input) g_input->noalias() = gh * lw.transpose();
}

PlaneSection Model::forward(const ProcessParams& p) const { return forward(p, grid_); }

PlaneSection Model::forward(const ProcessParams& p, const Grid2D& grid) const {
  Tape tape;
  forward_tape(build_input_channels(p, grid, norm_), grid, tape);
  return field_from_tape(*this, tape);
}

PlaneSection field_from_tape(const Model& m, const Tape& tape) {
  const auto& norm = m.normalization();
  auto s = make_section(m.plane(), tape.grid);
  for (std::size_t n = 0; n < s.values.size(); ++n)
    s.values[n] = norm.t_offset + norm.t_scale * tape.output[static_cast<Eigen::Index>(n)];
  return s;
}

std::array<double, 4> input_gradients(const Model& m, const Tape& tape, const std::vector<double>& d_temperature) {
  const auto& norm = m.normalization();
  if (d_temperature.size() != tape.grid.size()) throw ShapeError("gradient does not match the model grid");
  const VectorXd g = Map<const VectorXd>(d_temperature.data(), static_cast<Eigen::Index>(d_temperature.size())) *
                     norm.t_scale;
  MatrixXd gi;
  m.backward(tape, g, nullptr, &gi);
  std::array<double, 4> out{};
  for (std::size_t k = 0; k < kParamCount; ++k)
    out[k] = gi.col(static_cast<Eigen::Index>(k)).sum() / (norm.bounds.hi[k] - norm.bounds.lo[k]);
  return out;
}

std::array<double, 4> input_gradients(const Model& m, const ProcessParams& p, const std::vector<double>& d_temperature,
                                      PlaneSection* field) {
  Tape tape;
  m.forward_tape(build_input_channels(p, m.grid(), m.normalization()), m.grid(), tape);
  const auto out = input_gradients(m, tape, d_temperature);
  if (field) *field = field_from_tape(m, tape);
  return out;
}

namespace {

// Per-sample normalized target and input channels.
struct Prepared {
  MatrixXd input;
  VectorXd target;
};

Prepared prepare(const Model& m, const Sample& s) {
  if (s.values.size() != m.grid().size()) throw ShapeError("sample does not match the model grid");
  const auto& norm = m.normalization();
  Prepared p{build_input_channels(s.params, m.grid(), norm), VectorXd(static_cast<Eigen::Index>(s.values.size()))};
  for (std::size_t n = 0; n < s.values.size(); ++n)
    p.target[static_cast<Eigen::Index>(n)] = (s.values[n] - norm.t_offset) / norm.t_scale;
  return p;
}

// Sum of squared errors over the batch members in [first, last); gradient
// scaled by `scale` is accumulated into `grad`.
double batch_sse(const Model& m, const std::vector<const Prepared*>& batch, std::size_t first, std::size_t last,
                 double scale, std::vector<double>& grad, std::vector<double>* rel) {
  Tape tape;
  double sse = 0.0;
  for (std::size_t b = first; b < last; ++b) {
    m.forward_tape(batch[b]->input, m.grid(), tape);
    const VectorXd r = tape.output - batch[b]->target;
    sse += r.squaredNorm();
    if (rel) {
      const auto& norm = m.normalization();
      const VectorXd t = (batch[b]->target.array() * norm.t_scale + norm.t_offset).matrix();
      (*rel)[b] = norm.t_scale * r.norm() / t.norm();
    }
    m.backward(tape, (2.0 * scale) * r, grad.data(), nullptr);
  }
  return sse;
}

double prepared_loss(const Model& m, const std::vector<const Prepared*>& batch, std::vector<double>& grad,
                     std::vector<double>* rel) {
  if (batch.empty()) throw ConfigError("empty batch");
  grad.assign(m.params().size(), 0.0);
  if (rel) rel->assign(batch.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(batch.size() * m.grid().size());
  const std::size_t nt = std::min(m.config().threads, batch.size());
  double sse = 0.0;
  if (nt <= 1) {
    sse = batch_sse(m, batch, 0, batch.size(), scale, grad, rel);
  } else {
    std::vector<std::vector<double>> parts(nt, std::vector<double>(grad.size(), 0.0));
    std::vector<double> sums(nt, 0.0);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nt; ++t) {
      const std::size_t a = batch.size() * t / nt, b = batch.size() * (t + 1) / nt;
      pool.emplace_back([&, t, a, b] { sums[t] = batch_sse(m, batch, a, b, scale, parts[t], rel); });
    }
    for (auto& th : pool) th.join();
    for (std::size_t t = 0; t < nt; ++t) {
      sse += sums[t];
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += parts[t][k];
    }
  }
  const double loss = sse * scale;
  if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
  return loss;
}

}  // namespace

double loss_and_gradients(const Model& m, const std::vector<const Sample*>& batch, std::vector<double>& grad) {
  std::vector<Prepared> prep;
  prep.reserve(batch.size());
  for (const auto* s : batch) prep.push_back(prepare(m, *s));
  std::vector<const Prepared*> ptrs;
  for (const auto& p : prep) ptrs.push_back(&p);
  return prepared_loss(m, ptrs, grad, nullptr);
}

double relative_l2(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size()) throw ShapeError("relative_l2: size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    num += (pred[k] - target[k]) * (pred[k] - target[k]);
    den += target[k] * target[k];
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

std::string TrainReport::to_json() const {
  json j;
  j["train_mse"] = train_mse;
  j["train_rel_l2"] = train_rel_l2;
  j["val_rel_l2"] = val_rel_l2;
  j["learning_rate"] = learning_rate;
  j["best_epoch"] = best_epoch;
  j["best_val_rel_l2"] = best_val_rel_l2;
  j["wall_seconds"] = wall_seconds;
  return j.dump(2);
}

std::string TrainReport::loss_csv() const {
  std::ostringstream o;
  o.precision(10);
  o << "epoch,train_mse,train_rel_l2,val_rel_l2,learning_rate\n";
  for (std::size_t e = 0; e < train_mse.size(); ++e)
    o << e << ',' << train_mse[e] << ',' << train_rel_l2[e] << ',' << val_rel_l2[e] << ',' << learning_rate[e] << '\n';
  return o.str();
}

Model train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set, const FnoConfig& config,
            PlaneId plane, const Grid2D& grid, TrainReport& report, const Normalization& norm,
            const TrainOptions& options) {
  if (train_set.empty()) throw ConfigError("training split is empty");
  if (val_set.empty()) throw ConfigError("validation split is empty");
  const auto t0 = std::chrono::steady_clock::now();
  Model model(config, plane, grid, norm);
  std::vector<Prepared> tr, va;
  for (const auto& s : train_set) tr.push_back(prepare(model, s));
  for (const auto& s : val_set) va.push_back(prepare(model, s));

  const std::size_t np = model.params().size();
  std::vector<double> m1(np, 0.0), m2(np, 0.0), grad;
  std::vector<double> best = model.params();
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t step = 0;
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(tr.size());
  report = TrainReport{};
  report.best_val_rel_l2 = std::numeric_limits<double>::infinity();

  Tape tape;
  std::vector<double> rel;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.learning_rate * std::pow(config.decay_factor, static_cast<double>(epoch / config.decay_every));
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    rng.shuffle(order);
    double sse = 0.0, rel_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      std::vector<const Prepared*> batch;
      for (std::size_t k = b0; k < b1; ++k) batch.push_back(&tr[order[k]]);
      sse += prepared_loss(model, batch, grad, &rel) * static_cast<double>(batch.size());
      for (double r : rel) rel_sum += r;
      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      auto& th = model.params();
      for (std::size_t k = 0; k < np; ++k) {
        m1[k] = beta1 * m1[k] + (1.0 - beta1) * grad[k];
        m2[k] = beta2 * m2[k] + (1.0 - beta2) * grad[k] * grad[k];
        th[k] -= lr * ((m1[k] / c1) / (std::sqrt(m2[k] / c2) + eps) + config.weight_decay * th[k]);
      }
    }
    double val = 0.0;
    for (const auto& v : va) {
      model.forward_tape(v.input, grid, tape);
      val += norm.t_scale * (tape.output - v.target).norm() /
             (v.target.array() * norm.t_scale + norm.t_offset).matrix().norm();
    }
    val /= static_cast<double>(va.size());
    report.train_mse.push_back(sse / static_cast<double>(tr.size()));
    report.train_rel_l2.push_back(rel_sum / static_cast<double>(tr.size()));
    report.val_rel_l2.push_back(val);
    report.learning_rate.push_back(lr);
    if (val < report.best_val_rel_l2) {
      report.best_val_rel_l2 = val;
      report.best_epoch = epoch;
      best = model.params();
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (options.on_epoch && !options.on_epoch(epoch, report)) break;
    if (options.target_val_rel_l2 > 0 && val < options.target_val_rel_l2) break;
  }
  model.params() = best;
  return model;
}

void save(const Model& m, const std::filesystem::path& path) {
  const auto& c = m.config();
  json h;
  h["kind"] = "fno_model";
  h["format_version"] = kModelFormatVersion;
  h["config"] = {{"layers", c.layers},       {"width", c.width},
                 {"modes_x", c.modes_x},     {"modes_y", c.modes_y},
                 {"proj_width", c.proj_width}, {"learning_rate", c.learning_rate},
                 {"decay_factor", c.decay_factor}, {"decay_every", c.decay_every},
                 {"epochs", c.epochs},       {"weight_decay", c.weight_decay},
                 {"batch_size", c.batch_size}, {"seed", c.seed},
                 {"activation", "gelu"}};
  h["plane"] = plane_name(m.plane());
  h["grid"] = io::to_json(m.grid());
  const auto& n = m.normalization();
  h["normalization"] = {{"lo", n.bounds.lo}, {"hi", n.bounds.hi}, {"t_offset", n.t_offset}, {"t_scale", n.t_scale}};
  json blocks = json::array();
  for (const auto& b : m.layout().blocks) blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"size", b.size}});
  h["blocks"] = blocks;
  io::write_container(path, h, m.params());
}

namespace {

ModelInfo info_from_header(const json& h) {
  if (h.value("kind", "") != "fno_model") throw FormatError("not a model container");
  ModelInfo info;
  info.format_version = h.at("format_version").get<std::uint32_t>();
  if (info.format_version != kModelFormatVersion)
    throw FormatError("model format version " + std::to_string(info.format_version) + " not supported (expected " +
                      std::to_string(kModelFormatVersion) + ")");
  const auto& c = h.at("config");
  auto& f = info.config;
  f.layers = c.at("layers");
  f.width = c.at("width");
  f.modes_x = c.at("modes_x");
  f.modes_y = c.at("modes_y");
  f.proj_width = c.at("proj_width");
  f.learning_rate = c.at("learning_rate");
  f.decay_factor = c.at("decay_factor");
  f.decay_every = c.at("decay_every");
  f.epochs = c.at("epochs");
  f.weight_decay = c.at("weight_decay");
  f.batch_size = c.at("batch_size");
  f.seed = c.at("seed");
  info.plane = plane_from_name(h.at("plane").get<std::string>());
  info.grid = io::grid_from_json(h.at("grid"));
  const auto& n = h.at("normalization");
  info.norm.bounds.lo = n.at("lo").get<std::array<double, 4>>();
  info.norm.bounds.hi = n.at("hi").get<std::array<double, 4>>();
  info.norm.t_offset = n.at("t_offset");
  info.norm.t_scale = n.at("t_scale");
  return info;
}

}  // namespace

ModelInfo inspect(const std::filesystem::path& path) {
  try {
    return info_from_header(io::read_container_header(path));
  } catch (const json::exception& e) {
    throw FormatError("bad model header: " + std::string(e.what()));
  }
}

Model load(const std::filesystem::path& path) {
  auto c = io::read_container(path);
  ModelInfo info;
  try {
    info = info_from_header(c.header);
  } catch (const json::exception& e) {
    throw FormatError("bad model header: " + std::string(e.what()));
  }
  Model m(info.config, info.plane, info.grid, info.norm);
  if (c.values.size() != m.params().size())
    throw FormatError("model parameter count " + std::to_string(c.values.size()) + " does not match its config");
  const auto& blocks = c.header.at("blocks");
  if (blocks.size() != m.layout().blocks.size()) throw FormatError("model block layout mismatch");
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& b = m.layout().blocks[k];
    if (blocks[k].at("name") != b.name || blocks[k].at("offset") != b.offset || blocks[k].at("size") != b.size)
      throw FormatError("model block layout mismatch at " + b.name);
  }
  m.params() = std::move(c.values);
  return m;
}

}  // namespace lpbf::fno
