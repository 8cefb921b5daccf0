#include "lpbf/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lpbf/calib.hpp"
#include "lpbf/control.hpp"
#include "lpbf/dataset.hpp"
#include "lpbf/demo.hpp"
#include "lpbf/features.hpp"
#include "lpbf/fno.hpp"
#include "lpbf/io.hpp"
#include "lpbf/predictor.hpp"
#include "lpbf/sim.hpp"

namespace lpbf::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage_error", what) {}
};

std::string default_out() {
  const char* env = std::getenv(kOutDirEnv);
  return env && *env ? env : ".";
}

struct Common {
  std::string out = default_out();
  std::uint64_t seed = 0;

  fs::path dir() const {
    fs::create_directories(out);
    return out;
  }
  fs::path path(const std::string& name) const { return dir() / name; }
};

void add_common(CLI::App* s, Common& c) {
  s->add_option("--out,-o", c.out, "Output directory (default $" + std::string(kOutDirEnv) + " or .)");
  s->add_option("--seed", c.seed, "Random seed");
}

void add_params(CLI::App* s, ProcessParams& p, bool required = false) {
  auto* a = s->add_option("--power,-P", p.power, "Laser power, W");
  auto* b = s->add_option("--speed,-V", p.speed, "Scan speed, m/s");
  auto* c = s->add_option("--substrate,-T", p.substrate, "Substrate temperature, K");
  s->add_option("--alpha", p.absorptivity, "Absorptivity");
  if (required) {
    a->required();
    b->required();
    c->required();
  }
}

struct ModelArgs {
  std::string xy, xz;
  double kappa = 25.0;
  double tau_step = 5.0;

  std::unique_ptr<surrogate::FnoPredictor> load(const Common& c) const {
    surrogate::FeatureSettings s;
    s.sri.kappa = kappa;
    s.smooth.tau_step = tau_step;
    s.sri.validate();
    const fs::path a = xy.empty() ? fs::path(c.out) / "model_xy.bin" : fs::path(xy);
    const fs::path b = xz.empty() ? fs::path(c.out) / "model_xz.bin" : fs::path(xz);
    for (const auto& p : {a, b})
      if (!fs::exists(p)) throw UsageError("model file not found: " + p.string());
    return std::make_unique<surrogate::FnoPredictor>(surrogate::FnoPredictor::load(a, b, s));
  }
};

void add_models(CLI::App* s, ModelArgs& m) {
  s->add_option("--xy", m.xy, "x-y plane model (default <out>/model_xy.bin)");
  s->add_option("--xz", m.xz, "x-z plane model (default <out>/model_xz.bin)");
  s->add_option("--kappa", m.kappa, "SRI unit prefactor");
  s->add_option("--tau-step", m.tau_step, "Melt indicator width, K");
}

void add_control(CLI::App* s, control::ControlConfig& c) {
  s->add_option("--phi", c.phi, "Penalty weight, um");
  s->add_option("--t1", c.t_t1, "Penalty onset temperature, K");
  s->add_option("--t2", c.t_t2, "Penalty saturation temperature, K");
  s->add_option("--p-min", c.p_min);
  s->add_option("--p-max", c.p_max);
  s->add_option("--v-min", c.v_min);
  s->add_option("--v-max", c.v_max);
  s->add_option("--step", c.step, "Adam step in normalized units");
  s->add_option("--iterations", c.max_iterations);
  s->add_option("--tolerance", c.tolerance);
  s->add_option("--scan", c.scan, "Scan lattice points per axis (0 disables)");
  s->add_option("--starts", c.starts);
}

void write(const fs::path& p, const std::string& text) { io::write_text_atomic(p, text); }

std::pair<std::size_t, std::size_t> parse_grid(const std::string& s) {
  const auto x = s.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const auto a = std::stoul(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    const auto b = std::stoul(s.substr(x + 1), &used);
    if (used != s.size() - x - 1 || a == 0 || b == 0) throw std::invalid_argument(s);
    return {a, b};
  } catch (const std::logic_error&) {
    throw UsageError("--grid expects NPxNV, got '" + s + "'");
  }
}

std::vector<double> read_lengths(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw UsageError("cannot open " + p.string());
  std::vector<double> v;
  std::string line;
  std::size_t row = 0;
  while (std::getline(f, line)) {
    ++row;
    const auto cell = line.substr(0, line.find(','));
    if (cell.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      v.push_back(std::stod(cell, &used));
    } catch (const std::logic_error&) {
      if (row == 1) continue;  // header
      throw FormatError(p.string() + ":" + std::to_string(row) + ": not a number");
    }
  }
  return v;
}

json read_json(const fs::path& p) {
  try {
    return json::parse(io::read_text(p));
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

// simulate

struct SimulateArgs {
  Common c;
  ProcessParams p;
  sim::SimDomain domain;
  double spacing = 12.5;
  bool constant = false;
  bool snapshot = false;
};

json run_simulate(const SimulateArgs& a) {
  auto d = a.domain;
  d.dx = d.dy = d.dz = a.spacing;
  sim::SolverOptions o;
  o.constant_properties = a.constant;
  const auto r = sim::run_to_steady(a.p, d, o);
  const auto [xy, xz] = sim::extract_sections(r.field, r.laser);
  const json extra = {{"params", io::to_json(a.p)}, {"diagnostics", io::to_json(r.diagnostics)}};
  io::save_section(a.c.path("section_xy.bin"), xy, extra);
  io::save_section(a.c.path("section_xz.bin"), xz, extra);
  if (a.snapshot) io::save_snapshot(a.c.path("snapshot.bin"), r.field, a.p, r.laser, r.diagnostics);
  json j;
  j["params"] = io::to_json(a.p);
  j["diagnostics"] = io::to_json(r.diagnostics);
  j["state"] = json::parse(features::to_json(features::extract_state(xy, xz, o.material)));
  write(a.c.path("simulate.json"), j.dump(2) + "\n");
  return j;
}

// sweep

struct SweepArgs {
  Common c;
  std::string preset = "desk";
  std::vector<double> power, speed, substrate, alpha;
  std::string dir;
  std::size_t workers = 1;
  std::size_t n_val = 0;
  double spacing = 12.5;
  bool snapshots = false;
};

json run_sweep_cmd(const SweepArgs& a) {
  data::SweepGrid g;
  if (a.preset == "desk") g = data::SweepGrid::desk();
  else if (a.preset == "paper") g = data::SweepGrid::paper();
  else throw UsageError("--preset must be desk or paper");
  if (!a.power.empty()) g.power = a.power;
  if (!a.speed.empty()) g.speed = a.speed;
  if (!a.substrate.empty()) g.substrate = a.substrate;
  if (!a.alpha.empty()) g.absorptivity = a.alpha;
  sim::SimDomain d;
  d.dx = d.dy = d.dz = a.spacing;
  data::SweepOptions o;
  o.workers = a.workers;
  o.n_val = a.n_val;
  o.seed = a.c.seed;
  o.keep_snapshots = a.snapshots;
  const fs::path dir = a.dir.empty() ? a.c.path("sweep") : fs::path(a.dir);
  data::SweepSummary s;
  const auto ds = data::run_sweep(g, d, dir, o, &s);
  return {{"dir", dir.string()}, {"total", s.total}, {"ran", s.ran}, {"skipped", s.skipped},
          {"failed", s.failed}, {"records", ds.records.size()}};
}

// synth-data

struct SynthArgs {
  Common c;
  std::size_t n_train = 200;
  std::size_t n_val = 20;
  std::string dir;
};

json run_synth(const SynthArgs& a) {
  const auto ds = data::synthetic_dataset(a.n_train, a.n_val, a.c.seed);
  const fs::path dir = a.dir.empty() ? a.c.path("dataset") : fs::path(a.dir);
  data::save_dataset(ds, dir);
  return {{"dir", dir.string()}, {"train", ds.count(data::Split::Train)}, {"val", ds.count(data::Split::Val)}};
}

// train

struct TrainArgs {
  Common c;
  std::string data;
  std::string plane = "both";
  fno::FnoConfig config = fno::FnoConfig::desk();
  std::size_t modes_y_xz = 4;
  double target = 0.0;
};

json run_train(const TrainArgs& a) {
  const fs::path dir = a.data.empty() ? fs::path(a.c.out) / "dataset" : fs::path(a.data);
  const auto ds = data::load_dataset(dir);
  std::vector<PlaneId> planes;
  if (a.plane == "both") planes = {PlaneId::XY, PlaneId::XZ};
  else planes = {plane_from_name(a.plane)};
  json out = json::object();
  for (auto plane : planes) {
    auto cfg = a.config;
    cfg.seed = a.c.seed;
    if (plane == PlaneId::XZ && a.modes_y_xz > 0) cfg.modes_y = a.modes_y_xz;
    const auto grid = plane == PlaneId::XY ? ds.grid_xy : ds.grid_xz;
    fno::TrainOptions opt;
    opt.target_val_rel_l2 = a.target;
    fno::TrainReport rep;
    const auto m = fno::train(data::samples(ds, plane, data::Split::Train), data::samples(ds, plane, data::Split::Val),
                              cfg, plane, grid, rep, ds.norm, opt);
    const std::string name = plane_name(plane);
    fno::save(m, a.c.path("model_" + name + ".bin"));
    write(a.c.path("loss_" + name + ".csv"), rep.loss_csv());
    write(a.c.path("train_" + name + ".json"), rep.to_json() + "\n");
    out[name] = {{"model", a.c.path("model_" + name + ".bin").string()},
                 {"best_epoch", rep.best_epoch},
                 {"best_val_rel_l2", rep.best_val_rel_l2},
                 {"wall_seconds", rep.wall_seconds}};
  }
  return out;
}

// predict

struct PredictArgs {
  Common c;
  ModelArgs m;
  ProcessParams p;
  std::string batch;
  bool sections = false;
};

json run_predict(const PredictArgs& a) {
  const auto model = a.m.load(a.c);
  const auto& s = model->settings();
  if (!a.batch.empty()) {
    std::ifstream f(a.batch);
    if (!f) throw UsageError("cannot open " + a.batch);
    std::ostringstream csv;
    csv << features::csv_header();
    std::string line;
    std::size_t row = 0, n = 0;
    while (std::getline(f, line)) {
      ++row;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::array<double, 4> v{};
      std::istringstream ls(line);
      std::string cell;
      std::size_t k = 0;
      bool numeric = true;
      while (k < 4 && std::getline(ls, cell, ',')) {
        try {
          v[k++] = std::stod(cell);
        } catch (const std::logic_error&) {
          numeric = false;
          break;
        }
      }
      if (!numeric && row == 1) continue;
      if (!numeric || k != 4) throw FormatError(a.batch + ":" + std::to_string(row) + ": expected P,V,T_sub,alpha");
      const auto p = ProcessParams::from_array(v);
      const auto [xy, xz] = model->sections(p);
      csv << features::csv_row(p, features::extract_state(xy, xz, s.material, s.sri));
      ++n;
    }
    write(a.c.path("predict.csv"), csv.str());
    return {{"rows", n}, {"csv", a.c.path("predict.csv").string()}};
  }
  const auto [xy, xz] = model->sections(a.p);
  const auto state = features::extract_state(xy, xz, s.material, s.sri);
  json j;
  j["params"] = io::to_json(a.p);
  j["state"] = json::parse(features::to_json(state));
  j["extrapolated"] = !model->bounds().contains(a.p);
  if (a.sections) {
    io::save_section(a.c.path("predict_xy.bin"), xy, {{"params", io::to_json(a.p)}});
    io::save_section(a.c.path("predict_xz.bin"), xz, {{"params", io::to_json(a.p)}});
  }
  write(a.c.path("predict.json"), j.dump(2) + "\n");
  return j;
}

// window

struct WindowArgs {
  Common c;
  ModelArgs m;
  control::ControlConfig cc;
  double substrate = 300.0;
  double alpha = 0.3;
  std::string grid = "40x25";
  std::size_t threads = 1;
};

json run_window(const WindowArgs& a) {
  const auto [np, nv] = parse_grid(a.grid);
  const auto model = a.m.load(a.c);
  const auto w = control::process_window(a.substrate, a.alpha, *model, np, nv, a.cc, a.threads);
  write(a.c.path("window.csv"), w.matrix_csv());
  write(a.c.path("window_axes.csv"), w.axes_csv());
  write(a.c.path("window.json"), w.to_json() + "\n");
  return {{"rows", np}, {"cols", nv}, {"cold_cells", w.cold_cells}, {"csv", a.c.path("window.csv").string()}};
}

// optimize

struct OptimizeArgs {
  Common c;
  ModelArgs m;
  control::ControlConfig cc;
  ProcessParams p;
};

json run_optimize(const OptimizeArgs& a) {
  const auto model = a.m.load(a.c);
  const auto r = control::optimize_pv(a.p.power, a.p.speed, a.p.substrate, a.p.absorptivity, *model, a.cc);
  write(a.c.path("optimize.json"), r.to_json() + "\n");
  write(a.c.path("optimize_trace.csv"), r.trace_csv());
  return json::parse(r.to_json());
}

// calibrate

struct CalibrateArgs {
  Common c;
  ModelArgs m;
  calib::CalibConfig cfg;
  double target_mu = 0.0, target_sigma = 0.0;
  std::string lengths;
  std::string kl = "standard";
  double init_mu = 0.35, init_sigma = 0.05;
};

json run_calibrate(CalibrateArgs a) {
  calib::GaussianSpec target;
  if (!a.lengths.empty()) {
    target = calib::fit_gaussian(read_lengths(a.lengths), "um");
  } else {
    if (!(a.target_sigma > 0.0)) throw UsageError("give --lengths or --target-mu and --target-sigma");
    target = calib::GaussianSpec::make(a.target_mu, a.target_sigma, "um");
  }
  a.cfg.seed = a.c.seed;
  a.cfg.variant = calib::kl_from_name(a.kl);
  a.cfg.initial = calib::GaussianSpec::make(a.init_mu, a.init_sigma, "-");
  const auto model = a.m.load(a.c);
  try {
    const auto r = calib::calibrate_absorptivity(target, a.cfg, *model);
    auto j = json::parse(r.to_json());
    j["target"] = {{"mu_um", target.mu}, {"sigma_um", target.sigma()}};
    write(a.c.path("calibrate.json"), j.dump(2) + "\n");
    write(a.c.path("calibrate_trace.csv"), r.trace_csv());
    return j;
  } catch (const calib::CalibrationError& e) {
    calib::CalibResult partial;
    partial.trace = e.trace;
    write(a.c.path("calibrate_trace.csv"), partial.trace_csv());
    throw;
  }
}

// uq

struct UqArgs {
  Common c;
  ModelArgs m;
  ProcessParams p;
  double alpha_mu = 0.3, alpha_sigma = 0.02;
  std::string calibration;
  std::size_t samples = 1000;
  std::size_t bins = 20;
};

json run_uq(const UqArgs& a) {
  auto spec = calib::GaussianSpec::make(a.alpha_mu, a.alpha_sigma, "-");
  if (!a.calibration.empty()) {
    const auto j = read_json(a.calibration);
    spec = calib::GaussianSpec::make(j.at("mu_alpha").get<double>(), j.at("sigma_alpha").get<double>(), "-");
  }
  const auto model = a.m.load(a.c);
  const auto r = calib::propagate_uq(spec, a.p.power, a.p.speed, a.p.substrate, *model, a.samples, a.c.seed, a.bins);
  write(a.c.path("uq.json"), r.to_json() + "\n");
  write(a.c.path("uq_hist.csv"), r.histogram_csv());
  return json::parse(r.to_json());
}

// demo

struct DemoArgs {
  Common c;
  ModelArgs m;
  demo::DemoConfig cfg;
  std::vector<std::string> control;
  double alpha_mu = 0.3, alpha_sigma = 0.02;
  std::string calibration;
};

json run_demo_cmd(DemoArgs a) {
  bool on = false, off = false;
  for (const auto& s : a.control) {
    if (s == "on") on = true;
    else if (s == "off") off = true;
    else throw UsageError("--control takes on or off");
  }
  if (!on && !off) on = off = true;
  a.cfg.alpha = calib::GaussianSpec::make(a.alpha_mu, a.alpha_sigma, "-");
  if (!a.calibration.empty()) {
    const auto j = read_json(a.calibration);
    a.cfg.alpha = calib::GaussianSpec::make(j.at("mu_alpha").get<double>(), j.at("sigma_alpha").get<double>(), "-");
  }
  a.cfg.seed = a.c.seed;
  a.cfg.control = on;
  a.cfg.validate();
  a.cfg.control_config.validate();
  const auto model = a.m.load(a.c);
  json j;
  auto emit = [&](const demo::BuildTrace& t, const std::string& name) {
    write(a.c.path("demo_" + name + ".csv"), t.to_csv());
    if (a.cfg.uq_samples > 0) write(a.c.path("demo_" + name + "_uq.csv"), t.uq_csv());
    j["traces"][name] = a.c.path("demo_" + name + ".csv").string();
  };
  if (on && off) {
    const auto r = demo::run_demo(a.cfg, *model);
    emit(r.uncontrolled, "uncontrolled");
    emit(r.controlled, "controlled");
    j["summary"] = json::parse(r.summary_json(a.cfg));
    write(a.c.path("demo_summary.json"), j["summary"].dump(2) + "\n");
  } else {
    emit(demo::run_branch(a.cfg, *model, on), on ? "controlled" : "uncontrolled");
  }
  return j;
}

json version_json() {
  return {{"tool", kToolVersion},
          {"container_format", io::kContainerVersion},
          {"model_format", fno::kModelFormatVersion},
          {"dataset_format", data::kDatasetFormatVersion}};
}

void print_error(std::ostream& err, const std::string& code, const std::string& message) {
  err << json{{"error", {{"code", code}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Melt-pool digital twin: simulation, surrogates, control and calibration", "lpbf-dt"};
  app.set_config("--config", "", "TOML or INI file; [subcommand] sections hold option defaults");
  app.fallthrough();
  app.require_subcommand(0, 1);
  bool version = false;
  app.add_flag("--version", version, "Print tool and file format versions");

  SimulateArgs sim_a;
  auto* sim_c = app.add_subcommand("simulate", "Steady moving-source thermal run and plane sections");
  add_common(sim_c, sim_a.c);
  add_params(sim_c, sim_a.p);
  sim_c->add_option("--spacing", sim_a.spacing, "Grid spacing, um");
  sim_c->add_option("--x-max", sim_a.domain.x_max, "Domain length, um");
  sim_c->add_option("--laser-stop", sim_a.domain.laser_stop_x, "Laser stop position, um");
  sim_c->add_flag("--constant-properties", sim_a.constant, "No latent heat, constant k and c");
  sim_c->add_flag("--snapshot", sim_a.snapshot, "Also write the 3D temperature field");

  SweepArgs sw_a;
  auto* sw_c = app.add_subcommand("sweep", "Thermal runs over a parameter grid into a dataset directory");
  add_common(sw_c, sw_a.c);
  sw_c->add_option("--preset", sw_a.preset, "desk or paper");
  sw_c->add_option("--power", sw_a.power, "Power list, W")->delimiter(',');
  sw_c->add_option("--speed", sw_a.speed, "Speed list, m/s")->delimiter(',');
  sw_c->add_option("--substrate", sw_a.substrate, "Substrate temperature list, K")->delimiter(',');
  sw_c->add_option("--alpha", sw_a.alpha, "Absorptivity list")->delimiter(',');
  sw_c->add_option("--dir", sw_a.dir, "Dataset directory (default <out>/sweep)");
  sw_c->add_option("--workers,-j", sw_a.workers);
  sw_c->add_option("--n-val", sw_a.n_val, "Validation records");
  sw_c->add_option("--spacing", sw_a.spacing, "Grid spacing, um");
  sw_c->add_flag("--snapshots", sw_a.snapshots, "Keep 3D fields");

  SynthArgs syn_a;
  auto* syn_c = app.add_subcommand("synth-data", "Closed-form training dataset");
  add_common(syn_c, syn_a.c);
  syn_c->add_option("--n-train", syn_a.n_train);
  syn_c->add_option("--n-val", syn_a.n_val);
  syn_c->add_option("--dir", syn_a.dir, "Dataset directory (default <out>/dataset)");

  TrainArgs tr_a;
  auto* tr_c = app.add_subcommand("train", "Train plane surrogates on a dataset");
  add_common(tr_c, tr_a.c);
  tr_c->add_option("--data", tr_a.data, "Dataset directory (default <out>/dataset)");
  tr_c->add_option("--plane", tr_a.plane, "xy, xz or both");
  tr_c->add_option("--epochs", tr_a.config.epochs);
  tr_c->add_option("--layers", tr_a.config.layers);
  tr_c->add_option("--width", tr_a.config.width);
  tr_c->add_option("--modes-x", tr_a.config.modes_x);
  tr_c->add_option("--modes-y", tr_a.config.modes_y, "Second-axis modes");
  tr_c->add_option("--modes-z", tr_a.modes_y_xz, "Second-axis modes for the x-z plane (0 = --modes-y)");
  tr_c->add_option("--proj-width", tr_a.config.proj_width);
  tr_c->add_option("--lr", tr_a.config.learning_rate);
  tr_c->add_option("--decay", tr_a.config.decay_factor);
  tr_c->add_option("--decay-every", tr_a.config.decay_every);
  tr_c->add_option("--weight-decay", tr_a.config.weight_decay);
  tr_c->add_option("--batch", tr_a.config.batch_size);
  tr_c->add_option("--threads", tr_a.config.threads);
  tr_c->add_option("--target", tr_a.target, "Stop at this validation relative L2");

  PredictArgs pr_a;
  auto* pr_c = app.add_subcommand("predict", "Surrogate melt-pool state");
  add_common(pr_c, pr_a.c);
  add_models(pr_c, pr_a.m);
  add_params(pr_c, pr_a.p);
  pr_c->add_option("--batch", pr_a.batch, "CSV of P,V,T_sub,alpha rows");
  pr_c->add_flag("--sections", pr_a.sections, "Write predicted plane sections");

  WindowArgs wi_a;
  auto* wi_c = app.add_subcommand("window", "Roughness over the (P, V) box");
  add_common(wi_c, wi_a.c);
  add_models(wi_c, wi_a.m);
  add_control(wi_c, wi_a.cc);
  wi_c->add_option("--substrate,-T", wi_a.substrate, "Substrate temperature, K");
  wi_c->add_option("--alpha", wi_a.alpha);
  wi_c->add_option("--grid", wi_a.grid, "NPxNV, e.g. 40x25");
  wi_c->add_option("--threads", wi_a.threads);

  OptimizeArgs op_a;
  auto* op_c = app.add_subcommand("optimize", "Minimize roughness over (P, V)");
  add_common(op_c, op_a.c);
  add_models(op_c, op_a.m);
  add_control(op_c, op_a.cc);
  add_params(op_c, op_a.p);

  CalibrateArgs ca_a;
  auto* ca_c = app.add_subcommand("calibrate", "Fit the absorptivity distribution to melt-pool lengths");
  add_common(ca_c, ca_a.c);
  add_models(ca_c, ca_a.m);
  ca_c->add_option("--power,-P", ca_a.cfg.power, "Laser power, W")->required();
  ca_c->add_option("--speed,-V", ca_a.cfg.speed, "Scan speed, m/s")->required();
  ca_c->add_option("--substrate,-T", ca_a.cfg.substrate, "Substrate temperature, K")->required();
  ca_c->add_option("--target-mu", ca_a.target_mu, "Target length mean, um");
  ca_c->add_option("--target-sigma", ca_a.target_sigma, "Target length std, um");
  ca_c->add_option("--lengths", ca_a.lengths, "CSV of measured lengths in um (first column)");
  ca_c->add_option("--samples", ca_a.cfg.samples);
  ca_c->add_option("--epochs", ca_a.cfg.epochs);
  ca_c->add_option("--step", ca_a.cfg.step);
  ca_c->add_option("--kl", ca_a.kl, "standard or literal");
  ca_c->add_option("--init-mu", ca_a.init_mu);
  ca_c->add_option("--init-sigma", ca_a.init_sigma);
  ca_c->add_option("--nodes", ca_a.cfg.response_nodes, "Tabulated alpha response nodes (0 = direct)");

  UqArgs uq_a;
  auto* uq_c = app.add_subcommand("uq", "Propagate absorptivity uncertainty to melt-pool features");
  add_common(uq_c, uq_a.c);
  add_models(uq_c, uq_a.m);
  add_params(uq_c, uq_a.p);
  uq_c->add_option("--alpha-mu", uq_a.alpha_mu);
  uq_c->add_option("--alpha-sigma", uq_a.alpha_sigma);
  uq_c->add_option("--calibration", uq_a.calibration, "calibrate.json to take alpha from");
  uq_c->add_option("--samples", uq_a.samples);
  uq_c->add_option("--bins", uq_a.bins);

  DemoArgs de_a;
  de_a.cfg.control_config = {};
  auto* de_c = app.add_subcommand("demo", "Virtual cone build with and without control");
  add_common(de_c, de_a.c);
  add_models(de_c, de_a.m);
  add_control(de_c, de_a.cfg.control_config);
  de_c->add_option("--control", de_a.control, "on and/or off; repeat for both (default both)");
  de_c->add_option("--alpha-mu", de_a.alpha_mu);
  de_c->add_option("--alpha-sigma", de_a.alpha_sigma);
  de_c->add_option("--calibration", de_a.calibration, "calibrate.json to take alpha from");
  de_c->add_option("--uq-samples", de_a.cfg.uq_samples, "Samples per step for bands (0 = off)");
  de_c->add_option("--layers-per-step", de_a.cfg.layers_per_step);
  de_c->add_option("--layer-thickness", de_a.cfg.layer_thickness, "um");
  de_c->add_option("--height", de_a.cfg.cone.height, "Cone height, um");
  de_c->add_option("--base-radius", de_a.cfg.cone.base_radius, "um");
  de_c->add_option("--top-radius", de_a.cfg.cone.top_radius, "um");
  de_c->add_option("--initial-power", de_a.cfg.initial_power, "W");
  de_c->add_option("--initial-speed", de_a.cfg.initial_speed, "m/s");
  de_c->add_option("--efficiency", de_a.cfg.substrate.efficiency);
  de_c->add_option("--dwell", de_a.cfg.substrate.dwell_time, "s per layer");
  de_c->add_option("--tau0", de_a.cfg.substrate.tau0, "s");
  de_c->add_option("--tau-height", de_a.cfg.substrate.tau_height, "um");
  de_c->add_option("--base-capacity", de_a.cfg.substrate.base_capacity, "J/K");

  std::vector<std::string> argv_s{"lpbf-dt"};
  argv_s.insert(argv_s.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_s) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage_error", e.what());
    return 2;
  }
  if (version) {
    out << version_json().dump(2) << '\n';
    return 0;
  }
  if (app.get_subcommands().empty()) {
    print_error(err, "usage_error", "a subcommand is required; see --help");
    return 2;
  }

  try {
    json r;
    const auto* s = app.get_subcommands().front();
    const auto& name = s->get_name();
    if (name == "simulate") r = run_simulate(sim_a);
    else if (name == "sweep") r = run_sweep_cmd(sw_a);
    else if (name == "synth-data") r = run_synth(syn_a);
    else if (name == "train") r = run_train(tr_a);
    else if (name == "predict") r = run_predict(pr_a);
    else if (name == "window") r = run_window(wi_a);
    else if (name == "optimize") r = run_optimize(op_a);
    else if (name == "calibrate") r = run_calibrate(ca_a);
    else if (name == "uq") r = run_uq(uq_a);
    else if (name == "demo") r = run_demo_cmd(de_a);
    out << r.dump(2) << '\n';
    return 0;
  } catch (const UsageError& e) {
    print_error(err, e.code(), e.what());
    return 2;
  } catch (const Error& e) {
    print_error(err, e.code(), e.what());
    return 1;
  } catch (const fs::filesystem_error& e) {
    print_error(err, "io_error", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error(err, "internal_error", e.what());
    return 1;
  }
}

int cli_dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace lpbf::cli
