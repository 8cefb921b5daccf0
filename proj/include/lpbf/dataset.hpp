#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lpbf/common.hpp"
#include "lpbf/fno.hpp"
#include "lpbf/sim.hpp"

namespace lpbf::data {

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

/// Closed-form stand-in for the steady melt pool:
///   x-y: T = T_sub + c*alpha*P/V * exp(-(x^2/a(V)^2 + y^2/b^2))
///   x-z: T = T_sub + c*alpha*P/V * exp(-(x^2/a(V)^2 + (z - z_top)^2/d^2))
/// with a(V) = a0 + a1*V. Lengths in um, c in K*m/J.
struct SyntheticConstants {
  double c = 50.0;
  double a0 = 100.0;
  double a1 = 50.0;  // um per m/s
  double b = 80.0;
  double d = 60.0;
  double z_top = 1000.0;

  double amplitude(const ProcessParams& p) const { return c * p.absorptivity * p.power / p.speed; }
};

PlaneSection synthetic_field(const ProcessParams& p, PlaneId plane, const Grid2D& grid,
                             const SyntheticConstants& k = {});

enum class Split : std::uint8_t { Train, Val };

struct Record {
  std::size_t id = 0;  // position in the generating sweep or sample order
  ProcessParams params;
  PlaneSection xy;
  PlaneSection xz;
  std::optional<sim::SteadyDiagnostics> diagnostics;
};

struct Dataset {
  std::string source;  // "synthetic" or "sweep"
  Grid2D grid_xy = chi_xy();
  Grid2D grid_xz = chi_xz();
  std::vector<Record> records;
  std::vector<Split> split;  // one entry per record
  std::uint64_t split_seed = 0;
  fno::Normalization norm{};
  std::optional<SyntheticConstants> synthetic;

  std::size_t count(Split s) const;
};

/// n_train + n_val records at uniformly random parameters inside `bounds`,
/// split with the same seed.
Dataset synthetic_dataset(std::size_t n_train, std::size_t n_val, std::uint64_t seed,
                          const SyntheticConstants& k = {}, const ParamBounds& bounds = {},
                          const Grid2D& xy = chi_xy(), const Grid2D& xz = chi_xz());

/// Seeded shuffle of record indices; the last n_val go to validation.
void split(Dataset& ds, std::size_t n_val, std::uint64_t seed);

/// Training samples for one plane.
std::vector<fno::Sample> samples(const Dataset& ds, PlaneId plane, Split which);

/// Cartesian sweep, P outermost and alpha innermost.
struct SweepGrid {
  std::vector<double> power;
  std::vector<double> speed;
  std::vector<double> substrate;
  std::vector<double> absorptivity;

  std::size_t size() const { return power.size() * speed.size() * substrate.size() * absorptivity.size(); }
  ProcessParams at(std::size_t k) const;
  /// Throws ConfigError on empty lists or values outside the solver envelope.
  void validate() const;

  static SweepGrid paper();  // 5 x 5 x 5 x 6
  static SweepGrid desk();   // 3 x 3 x 3 x 3
};

struct SweepOptions {
  std::size_t workers = 1;
  std::size_t n_val = 0;
  std::uint64_t seed = 0;
  bool keep_snapshots = false;
  sim::SolverOptions solver{};
  /// Replaces the solver for every cell (tests); must be thread-safe.
  std::function<sim::SteadyResult(const ProcessParams&)> runner;
};

struct SweepSummary {
  std::size_t total = 0;
  std::size_t ran = 0;
  std::size_t skipped = 0;  // already complete on disk
  std::size_t failed = 0;
};

class SweepError : public Error {
 public:
  explicit SweepError(const std::string& what) : Error("sweep_failed", what) {}
};

/// Runs every cell not yet recorded as complete in `dir`, writing one section
/// pair per cell and rewriting the manifest after each completion. Failed cells
/// are recorded and skipped; more than 10% failures throws SweepError after the
/// manifest is written.
Dataset run_sweep(const SweepGrid& grid, const sim::SimDomain& domain, const std::filesystem::path& dir,
                  const SweepOptions& options, SweepSummary* summary = nullptr);

/// Writes `dir`/manifest.json plus NNNNN_xy.bin / NNNNN_xz.bin section files.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
/// Verifies file checksums and that the train and validation sets are
/// disjoint and cover every complete record.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace lpbf::data
