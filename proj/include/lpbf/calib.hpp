#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "lpbf/predictor.hpp"

namespace lpbf::calib {

/// Normal distribution stored as (mu, log sigma) so sigma > 0 by construction.
/// sigma = 0 is representable as log sigma = -inf.
struct GaussianSpec {
  double mu = 0.0;
  double log_sigma = 0.0;
  std::string unit;

  double sigma() const { return std::exp(log_sigma); }
  static GaussianSpec make(double mu, double sigma, std::string unit = "");
};

inline constexpr double kAlphaMin = 0.02;
inline constexpr double kAlphaMax = 0.95;

struct AlphaSamples {
  std::vector<double> eps;    // standard normal draws
  std::vector<double> alpha;  // mu + sigma * eps, clamped
  std::vector<unsigned char> clamped;
  std::size_t clamp_count = 0;
};

/// Reparameterized draws; the same seed gives the same eps.
AlphaSamples sample_alpha(const GaussianSpec& spec, std::size_t count, std::uint64_t seed);
/// Reuses `eps` from an earlier draw.
AlphaSamples reparameterize(const GaussianSpec& spec, const std::vector<double>& eps);

struct LengthStats {
  double mean = 0.0;  // um
  double std = 0.0;   // um, population
  std::size_t used = 0;
  std::size_t excluded = 0;  // cold samples
  /// d mean / d (mu, log sigma) and d std / d (mu, log sigma), when requested.
  std::array<double, 2> d_mean{};
  std::array<double, 2> d_std{};
};

/// Smooth melt-pool length statistics over the alpha samples. Throws
/// NumericError when more than 20% of samples are cold.
LengthStats length_stats(const AlphaSamples& samples, const GaussianSpec& spec, double power, double speed,
                         double substrate, const surrogate::MeltPoolPredictor& model, bool with_gradient = false);

enum class KlVariant { Standard, PaperLiteral };

const char* kl_name(KlVariant v);
KlVariant kl_from_name(const std::string& s);

/// KL(p || q) between normals given by (mean, std); `grad` receives
/// d KL / d (mu_p, sigma_p) when non-null.
double kl_gaussian(double mu_p, double sigma_p, double mu_q, double sigma_q, KlVariant variant,
                   std::array<double, 2>* grad = nullptr);
double kl_gaussian(const GaussianSpec& p, const GaussianSpec& q, KlVariant variant);

struct CalibConfig {
  std::size_t samples = 100;
  std::size_t epochs = 300;
  double step = 0.01;  // Adam, on (mu, log sigma)
  std::uint64_t seed = 0;
  double power = 300.0;
  double speed = 1.5;
  double substrate = 300.0;
  KlVariant variant = KlVariant::Standard;
  GaussianSpec initial = GaussianSpec::make(0.35, 0.05, "-");
  /// Nodes of the tabulated alpha response (0 evaluates the model per sample).
  std::size_t response_nodes = 0;

  void validate() const;
};

struct CalibTraceEntry {
  std::size_t epoch = 0;
  double mu = 0.0;
  double sigma = 0.0;
  double kl = 0.0;
  double length_mean = 0.0;
  double length_std = 0.0;
};

struct CalibResult {
  GaussianSpec alpha;
  double kl = 0.0;
  std::size_t best_epoch = 0;
  std::size_t clamp_count = 0;
  std::vector<CalibTraceEntry> trace;

  std::string trace_csv() const;
  std::string to_json() const;
};

class CalibrationError : public Error {
 public:
  CalibrationError(const std::string& what, std::vector<CalibTraceEntry> t)
      : Error("calibration_failed", what), trace(std::move(t)) {}
  std::vector<CalibTraceEntry> trace;
};

/// Adam on (mu_alpha, log sigma_alpha) minimizing KL(length stats || target)
/// with noise frozen for the whole run. Returns the lowest-KL epoch.
CalibResult calibrate_absorptivity(const GaussianSpec& target, const CalibConfig& config,
                                   const surrogate::MeltPoolPredictor& model);

/// Cubic Hermite table of the smooth features over alpha at fixed (P, V, T_sub).
/// Only evaluates at those three values.
std::unique_ptr<surrogate::MeltPoolPredictor> tabulate_alpha(const surrogate::MeltPoolPredictor& model, double power,
                                                              double speed, double substrate, std::size_t nodes,
                                                              double alpha_lo = kAlphaMin, double alpha_hi = kAlphaMax);

struct Observations {
  std::vector<double> samples;
  GaussianSpec fitted;  // sample mean and population standard deviation
};

/// Stand-in for segmented melt-pool lengths: n normal draws from `truth`.
Observations synthetic_length_observations(const GaussianSpec& truth, std::size_t n, std::uint64_t seed);
/// Fit from raw values (n >= 2).
GaussianSpec fit_gaussian(const std::vector<double>& values, const std::string& unit = "");

struct QuantitySummary {
  std::string name;
  std::string unit;
  double mean = 0.0;
  double std = 0.0;
  double p5 = 0.0, p50 = 0.0, p95 = 0.0;
  std::vector<double> bin_edges;  // bins + 1
  std::vector<std::size_t> counts;
};

struct UqResult {
  std::vector<QuantitySummary> quantities;  // T_peak, L, W, Ra
  std::size_t samples = 0;
  std::size_t excluded = 0;
  std::size_t clamp_count = 0;

  const QuantitySummary& get(const std::string& name) const;
  std::string to_json() const;
  std::string histogram_csv() const;
};

/// Monte Carlo of the hard-variant features under alpha ~ spec.
UqResult propagate_uq(const GaussianSpec& alpha, double power, double speed, double substrate,
                      const surrogate::MeltPoolPredictor& model, std::size_t samples, std::uint64_t seed,
                      std::size_t bins = 20);

/// Linear-interpolation percentile (q in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double q);

}  // namespace lpbf::calib
