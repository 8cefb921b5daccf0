#include "lpbf/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "lpbf/io.hpp"
#include "lpbf/rng.hpp"

namespace lpbf::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kFormatName = "lpbf-dataset";

std::string record_file(std::size_t id, const char* what) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05zu_%s.bin", id, what);
  return buf;
}

json to_json(const SyntheticConstants& k) {
  return {{"c_K_m_per_J", k.c}, {"a0_um", k.a0}, {"a1_um_s_per_m", k.a1},
          {"b_um", k.b},        {"d_um", k.d},   {"z_top_um", k.z_top}};
}

SyntheticConstants synthetic_from_json(const json& j) {
  SyntheticConstants k;
  k.c = j.at("c_K_m_per_J");
  k.a0 = j.at("a0_um");
  k.a1 = j.at("a1_um_s_per_m");
  k.b = j.at("b_um");
  k.d = j.at("d_um");
  k.z_top = j.at("z_top_um");
  return k;
}

json to_json(const fno::Normalization& n) {
  return {{"P_bounds", {n.bounds.lo[0], n.bounds.hi[0]}},
          {"V_bounds", {n.bounds.lo[1], n.bounds.hi[1]}},
          {"T_sub_bounds", {n.bounds.lo[2], n.bounds.hi[2]}},
          {"alpha_bounds", {n.bounds.lo[3], n.bounds.hi[3]}},
          {"T_offset", n.t_offset},
          {"T_scale", n.t_scale}};
}

fno::Normalization normalization_from_json(const json& j) {
  fno::Normalization n;
  const char* keys[] = {"P_bounds", "V_bounds", "T_sub_bounds", "alpha_bounds"};
  for (std::size_t i = 0; i < kParamCount; ++i) {
    n.bounds.lo[i] = j.at(keys[i])[0];
    n.bounds.hi[i] = j.at(keys[i])[1];
  }
  n.t_offset = j.at("T_offset");
  n.t_scale = j.at("T_scale");
  return n;
}

json to_json(const SweepGrid& g) {
  return {{"P", g.power}, {"V", g.speed}, {"T_sub", g.substrate}, {"alpha", g.absorptivity}};
}

json to_json(const sim::SimDomain& d) {
  return {{"x_um", {d.x_min, d.x_max}},
          {"y_um", {d.y_min, d.y_max}},
          {"z_um", {d.z_min, d.z_max}},
          {"spacing_um", {d.dx, d.dy, d.dz}},
          {"layer_thickness_um", d.layer_thickness},
          {"beam_radius_um", d.beam_radius},
          {"h_conv", d.h_conv},
          {"T_ambient", d.t_ambient},
          {"laser_x_um", {d.laser_start_x, d.laser_stop_x}}};
}

sim::SteadyDiagnostics diagnostics_from_json(const json& j) {
  sim::SteadyDiagnostics d;
  d.steps = j.at("steps");
  d.dt = j.at("dt_s");
  d.laser_x = j.at("laser_x_um");
  d.converged = j.at("converged");
  d.metrics.t_peak = j.at("T_peak_K");
  d.metrics.length = j.at("L_um");
  d.metrics.width = j.at("W_um");
  for (std::size_t i = 0; i < 3; ++i) d.last_rel_change[i] = j.at("last_rel_change")[i];
  return d;
}

json record_entry(const Record& r, const fs::path& dir) {
  json e;
  e["id"] = r.id;
  e["params"] = io::to_json(r.params);
  e["status"] = "ok";
  const auto fx = record_file(r.id, "xy"), fz = record_file(r.id, "xz");
  e["files"] = {{"xy", fx}, {"xz", fz}};
  e["crc32"] = {{"xy", io::hex32(io::crc32_of_file(dir / fx))}, {"xz", io::hex32(io::crc32_of_file(dir / fz))}};
  if (r.diagnostics) e["diagnostics"] = io::to_json(*r.diagnostics);
  return e;
}

void write_sections(const Record& r, const fs::path& dir) {
  const json extra = {{"params", io::to_json(r.params)}, {"id", r.id}};
  io::save_section(dir / record_file(r.id, "xy"), r.xy, extra);
  io::save_section(dir / record_file(r.id, "xz"), r.xz, extra);
}

json base_manifest(const Dataset& ds) {
  json m;
  m["format"] = kFormatName;
  m["version"] = kDatasetFormatVersion;
  m["source"] = ds.source;
  m["grids"] = {{"xy", io::to_json(ds.grid_xy)}, {"xz", io::to_json(ds.grid_xz)}};
  m["interpolation"] = "bilinear";
  m["normalization"] = to_json(ds.norm);
  if (ds.synthetic) m["synthetic"] = to_json(*ds.synthetic);
  return m;
}

json split_json(const Dataset& ds) {
  json train = json::array(), val = json::array();
  for (std::size_t k = 0; k < ds.records.size(); ++k)
    (ds.split[k] == Split::Val ? val : train).push_back(ds.records[k].id);
  return {{"seed", ds.split_seed}, {"n_val", val.size()}, {"train", train}, {"val", val}};
}

bool file_matches(const fs::path& path, const std::string& crc) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) return false;
  return io::hex32(io::crc32_of_file(path)) == crc;
}

}  // namespace

PlaneSection synthetic_field(const ProcessParams& p, PlaneId plane, const Grid2D& grid, const SyntheticConstants& k) {
  if (!(p.speed > 0.0)) throw DomainError("synthetic_field: scan speed must be positive");
  const double amp = k.amplitude(p);
  const double a = k.a0 + k.a1 * p.speed;
  const double second = plane == PlaneId::XY ? k.b : k.d;
  const double centre = plane == PlaneId::XY ? 0.0 : k.z_top;
  auto s = make_section(plane, grid);
  for (std::size_t i = 0; i < grid.nx; ++i) {
    const double u = grid.x(i) / a;
    for (std::size_t j = 0; j < grid.ny; ++j) {
      const double v = (grid.y(j) - centre) / second;
      s.at(i, j) = p.substrate + amp * std::exp(-(u * u + v * v));
    }
  }
  return s;
}

std::size_t Dataset::count(Split s) const { return static_cast<std::size_t>(std::count(split.begin(), split.end(), s)); }

Dataset synthetic_dataset(std::size_t n_train, std::size_t n_val, std::uint64_t seed, const SyntheticConstants& k,
                          const ParamBounds& bounds, const Grid2D& xy, const Grid2D& xz) {
  Dataset ds;
  ds.source = "synthetic";
  ds.grid_xy = xy;
  ds.grid_xz = xz;
  ds.norm.bounds = bounds;
  ds.synthetic = k;
  Rng rng(seed);
  const std::size_t n = n_train + n_val;
  ds.records.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::array<double, 4> a{};
    for (std::size_t i = 0; i < kParamCount; ++i) a[i] = rng.uniform(bounds.lo[i], bounds.hi[i]);
    Record rec;
    rec.id = r;
    rec.params = ProcessParams::from_array(a);
    rec.xy = synthetic_field(rec.params, PlaneId::XY, xy, k);
    rec.xz = synthetic_field(rec.params, PlaneId::XZ, xz, k);
    ds.records.push_back(std::move(rec));
  }
  split(ds, n_val, seed);
  return ds;
}

void split(Dataset& ds, std::size_t n_val, std::uint64_t seed) {
  const std::size_t n = ds.records.size();
  if (n_val > 0 && n_val >= n)
    throw ConfigError("split: n_val (" + std::to_string(n_val) + ") must be smaller than the dataset size (" +
                      std::to_string(n) + ")");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  ds.split.assign(n, Split::Train);
  for (std::size_t k = n - n_val; k < n; ++k) ds.split[order[k]] = Split::Val;
  ds.split_seed = seed;
}

std::vector<fno::Sample> samples(const Dataset& ds, PlaneId plane, Split which) {
  std::vector<fno::Sample> out;
  for (std::size_t k = 0; k < ds.records.size(); ++k) {
    if (ds.split[k] != which) continue;
    const auto& r = ds.records[k];
    out.push_back({r.params, plane == PlaneId::XY ? r.xy.values : r.xz.values});
  }
  return out;
}

ProcessParams SweepGrid::at(std::size_t k) const {
  const std::size_t na = absorptivity.size(), nt = substrate.size(), nv = speed.size();
  const std::size_t ia = k % na;
  k /= na;
  const std::size_t it = k % nt;
  k /= nt;
  const std::size_t iv = k % nv;
  k /= nv;
  return {power.at(k), speed[iv], substrate[it], absorptivity[ia]};
}

void SweepGrid::validate() const {
  if (power.empty() || speed.empty() || substrate.empty() || absorptivity.empty())
    throw ConfigError("sweep grid: every parameter list needs at least one value");
  for (std::size_t k = 0; k < size(); ++k)
    if (!sim::in_solver_envelope(at(k)))
      throw ConfigError("sweep grid: cell " + std::to_string(k) + " lies outside the solver validity envelope");
}

SweepGrid SweepGrid::paper() {
  return {{100, 200, 300, 400, 500}, {0.5, 1.0, 1.5, 2.0, 2.5}, {300, 360, 420, 480, 540}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}};
}

SweepGrid SweepGrid::desk() { return {{100, 300, 500}, {0.5, 1.5, 2.5}, {300, 420, 540}, {0.1, 0.35, 0.6}}; }

Dataset run_sweep(const SweepGrid& grid, const sim::SimDomain& domain, const fs::path& dir,
                  const SweepOptions& options, SweepSummary* summary) {
  grid.validate();
  domain.validate();
  fs::create_directories(dir);
  const std::size_t n = grid.size();

  Dataset ds;
  ds.source = "sweep";
  json head = base_manifest(ds);
  head["sweep"] = to_json(grid);
  head["domain"] = to_json(domain);

  // Cells already complete on disk.
  std::vector<json> cells(n);
  std::vector<bool> done(n, false);
  const fs::path mpath = dir / kManifest;
  if (fs::exists(mpath)) {
    json old;
    try {
      old = json::parse(io::read_text(mpath));
    } catch (const json::exception& e) {
      throw FormatError("unreadable manifest " + mpath.string() + ": " + e.what());
    }
    if (old.value("sweep", json()) != head["sweep"] || old.value("domain", json()) != head["domain"] ||
        old.value("grids", json()) != head["grids"])
      throw ConfigError(dir.string() + " holds a different sweep; use a fresh output directory");
    for (const auto& e : old.at("records")) {
      const std::size_t id = e.at("id");
      if (id >= n || e.value("status", "") != "ok") continue;
      if (file_matches(dir / e["files"]["xy"].get<std::string>(), e["crc32"]["xy"]) &&
          file_matches(dir / e["files"]["xz"].get<std::string>(), e["crc32"]["xz"])) {
        cells[id] = e;
        done[id] = true;
      }
    }
  }
  for (std::size_t k = 0; k < n; ++k)
    if (!done[k]) cells[k] = {{"id", k}, {"params", io::to_json(grid.at(k))}, {"status", "pending"}};

  std::mutex mu;
  auto write_manifest = [&](const json* split_info) {
    json m = head;
    m["records"] = cells;
    if (split_info) m["split"] = *split_info;
    io::write_text_atomic(mpath, m.dump(2) + "\n");
  };
  write_manifest(nullptr);

  std::vector<std::size_t> todo;
  for (std::size_t k = 0; k < n; ++k)
    if (!done[k]) todo.push_back(k);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < todo.size(); t = next++) {
      const std::size_t id = todo[t];
      const ProcessParams p = grid.at(id);
      json entry = {{"id", id}, {"params", io::to_json(p)}};
      try {
        const auto res = options.runner ? options.runner(p) : sim::run_to_steady(p, domain, options.solver);
        Record r;
        r.id = id;
        r.params = p;
        std::tie(r.xy, r.xz) = sim::extract_sections(res.field, res.laser);
        r.diagnostics = res.diagnostics;
        write_sections(r, dir);
        if (options.keep_snapshots)
          io::save_snapshot(dir / record_file(id, "snapshot"), res.field, p, res.laser, res.diagnostics);
        entry = record_entry(r, dir);
      } catch (const sim::ConvergenceError& e) {
        entry["status"] = "failed";
        entry["error"] = {{"code", e.code()}, {"message", e.what()}};
        entry["diagnostics"] = io::to_json(e.diagnostics);
      } catch (const Error& e) {
        entry["status"] = "failed";
        entry["error"] = {{"code", e.code()}, {"message", e.what()}};
      }
      std::lock_guard lock(mu);
      cells[id] = std::move(entry);
      write_manifest(nullptr);
    }
  };
  const std::size_t nw = std::max<std::size_t>(1, std::min(options.workers, todo.size()));
  if (nw == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < nw; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  SweepSummary sum;
  sum.total = n;
  sum.ran = todo.size();
  sum.skipped = n - todo.size();
  for (const auto& c : cells) {
    if (c["status"] != "ok") {
      ++sum.failed;
      continue;
    }
    Record r;
    r.id = c["id"];
    r.params = io::params_from_json(c["params"]);
    r.xy = io::load_section(dir / c["files"]["xy"].get<std::string>());
    r.xz = io::load_section(dir / c["files"]["xz"].get<std::string>());
    if (c.contains("diagnostics")) r.diagnostics = diagnostics_from_json(c["diagnostics"]);
    ds.records.push_back(std::move(r));
  }
  if (summary) *summary = sum;

  const std::size_t n_val = ds.records.size() > options.n_val ? options.n_val : 0;
  split(ds, n_val, options.seed);
  const json si = split_json(ds);
  write_manifest(&si);
  if (10 * sum.failed > n)
    throw SweepError(std::to_string(sum.failed) + " of " + std::to_string(n) + " sweep cells failed (limit 10%)");
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  if (ds.split.size() != ds.records.size()) throw ShapeError("dataset split does not cover every record");
  fs::create_directories(dir);
  json m = base_manifest(ds);
  json recs = json::array();
  for (const auto& r : ds.records) {
    write_sections(r, dir);
    recs.push_back(record_entry(r, dir));
  }
  m["records"] = std::move(recs);
  m["split"] = split_json(ds);
  io::write_text_atomic(dir / kManifest, m.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path mpath = dir / kManifest;
  json m;
  try {
    m = json::parse(io::read_text(mpath));
  } catch (const json::exception& e) {
    throw FormatError("unreadable manifest " + mpath.string() + ": " + e.what());
  }
  if (m.value("format", "") != kFormatName) throw FormatError(mpath.string() + " is not a dataset manifest");
  const auto version = m.value("version", 0u);
  if (version != kDatasetFormatVersion)
    throw FormatError("dataset version " + std::to_string(version) + " not supported (expected " +
                      std::to_string(kDatasetFormatVersion) + ")");
  if (!m.contains("split")) throw FormatError("dataset in " + dir.string() + " has no split (incomplete sweep?)");
  Dataset ds;
  try {
    ds.source = m.at("source");
    ds.grid_xy = io::grid_from_json(m.at("grids").at("xy"));
    ds.grid_xz = io::grid_from_json(m.at("grids").at("xz"));
    ds.norm = normalization_from_json(m.at("normalization"));
    if (m.contains("synthetic")) ds.synthetic = synthetic_from_json(m["synthetic"]);
    ds.split_seed = m["split"].at("seed");

    const auto train = m["split"].at("train").get<std::vector<std::size_t>>();
    const auto val = m["split"].at("val").get<std::vector<std::size_t>>();
    std::set<std::size_t> tr(train.begin(), train.end());
    for (std::size_t id : val)
      if (tr.count(id)) throw FormatError("record " + std::to_string(id) + " is in both the train and validation sets");
    std::map<std::size_t, Split> assign;
    for (std::size_t id : train) assign[id] = Split::Train;
    for (std::size_t id : val) assign[id] = Split::Val;

    for (const auto& e : m.at("records")) {
      if (e.at("status") != "ok") continue;
      Record r;
      r.id = e.at("id");
      r.params = io::params_from_json(e.at("params"));
      for (const char* which : {"xy", "xz"}) {
        const fs::path f = dir / e.at("files").at(which).get<std::string>();
        if (io::hex32(io::crc32_of_file(f)) != e.at("crc32").at(which).get<std::string>())
          throw ChecksumError("content hash mismatch: " + f.string());
      }
      r.xy = io::load_section(dir / e["files"]["xy"].get<std::string>());
      r.xz = io::load_section(dir / e["files"]["xz"].get<std::string>());
      if (!(r.xy.grid == ds.grid_xy) || !(r.xz.grid == ds.grid_xz))
        throw ShapeError("record " + std::to_string(r.id) + " is not on the dataset grids");
      if (e.contains("diagnostics")) r.diagnostics = diagnostics_from_json(e["diagnostics"]);
      const auto it = assign.find(r.id);
      if (it == assign.end()) throw FormatError("record " + std::to_string(r.id) + " has no split assignment");
      ds.split.push_back(it->second);
      assign.erase(it);
      ds.records.push_back(std::move(r));
    }
    if (!assign.empty())
      throw FormatError("split names record " + std::to_string(assign.begin()->first) + " which is not complete");
  } catch (const json::exception& e) {
    throw FormatError("bad dataset manifest: " + std::string(e.what()));
  }
  return ds;
}

}  // namespace lpbf::data
