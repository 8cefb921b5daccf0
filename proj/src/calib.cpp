#include "lpbf/calib.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "lpbf/rng.hpp"

namespace lpbf::calib {

namespace {

constexpr double kUmPerM = 1e6;

bool is_cold(const surrogate::SmoothFeatures& f, double t_solidus) {
  return !(f.t_peak > t_solidus && f.length > 0.0 && f.width > 0.0);
}

// Piecewise cubic Hermite table of the smooth features over alpha.
class AlphaTable final : public surrogate::MeltPoolPredictor {
 public:
  AlphaTable(const surrogate::MeltPoolPredictor& base, double power, double speed, double substrate,
             std::size_t nodes, double lo, double hi)
      : settings_(base.settings()), bounds_(base.bounds()), power_(power), speed_(speed), substrate_(substrate),
        lo_(lo), hi_(hi) {
    if (nodes < 2) throw ConfigError("alpha table needs at least two nodes");
    if (!(lo < hi)) throw ConfigError("alpha table range is empty");
    h_ = (hi - lo) / static_cast<double>(nodes - 1);
    value_.resize(nodes);
    slope_.resize(nodes);
    for (std::size_t k = 0; k < nodes; ++k) {
      const ProcessParams p{power, speed, substrate, lo + h_ * static_cast<double>(k)};
      for (std::size_t f = 0; f < 3; ++f) {
        std::array<double, 4> g{};
        const auto sf = base.evaluate_smooth(
            p,
            [f](const surrogate::SmoothFeatures&) {
              std::array<double, 3> w{};
              w[f] = 1.0;
              return w;
            },
            &g);
        value_[k] = {sf.t_peak, sf.length, sf.width};
        slope_[k][f] = g[3];
      }
    }
  }

  features::MeltPoolState evaluate(const ProcessParams& p) const override {
    const auto f = lookup(p, nullptr);
    return features::state_from_scalars(f.t_peak, f.length, f.width, settings_.material, settings_.sri);
  }

  surrogate::SmoothFeatures evaluate_smooth(const ProcessParams& p, const surrogate::FeatureSeed& seed,
                                            std::array<double, 4>* grad) const override {
    std::array<double, 3> d{};
    const auto f = lookup(p, &d);
    if (grad) {
      const auto w = seed(f);
      *grad = {0.0, 0.0, 0.0, w[0] * d[0] + w[1] * d[1] + w[2] * d[2]};
    }
    return f;
  }

  const surrogate::FeatureSettings& settings() const override { return settings_; }
  ParamBounds bounds() const override { return bounds_; }

 private:
  surrogate::SmoothFeatures lookup(const ProcessParams& p, std::array<double, 3>* d) const {
    if (p.power != power_ || p.speed != speed_ || p.substrate != substrate_)
      throw DomainError("alpha table queried away from its fixed (P, V, T_sub)");
    if (p.absorptivity < lo_ - 1e-12 || p.absorptivity > hi_ + 1e-12)
      throw DomainError("alpha table queried outside [" + std::to_string(lo_) + ", " + std::to_string(hi_) + "]");
    const double x = std::clamp((p.absorptivity - lo_) / h_, 0.0, static_cast<double>(value_.size() - 1));
    const std::size_t k = std::min(static_cast<std::size_t>(x), value_.size() - 2);
    const double t = x - static_cast<double>(k);
    const double h00 = (1 + 2 * t) * (1 - t) * (1 - t), h10 = t * (1 - t) * (1 - t);
    const double h01 = t * t * (3 - 2 * t), h11 = t * t * (t - 1);
    const double g00 = 6 * t * t - 6 * t, g10 = 3 * t * t - 4 * t + 1;
    const double g01 = -g00, g11 = 3 * t * t - 2 * t;
    std::array<double, 3> out{};
    for (std::size_t f = 0; f < 3; ++f) {
      const double y0 = value_[k][f], y1 = value_[k + 1][f];
      const double m0 = slope_[k][f] * h_, m1 = slope_[k + 1][f] * h_;
      out[f] = h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1;
      if (d) (*d)[f] = (g00 * y0 + g10 * m0 + g01 * y1 + g11 * m1) / h_;
    }
    surrogate::SmoothFeatures sf;
    sf.t_peak = out[0];
    sf.length = out[1];
    sf.width = out[2];
    sf.extrapolated = !bounds_.contains(p);
    return sf;
  }

  surrogate::FeatureSettings settings_;
  ParamBounds bounds_;
  double power_, speed_, substrate_, lo_, hi_, h_ = 0.0;
  std::vector<std::array<double, 3>> value_, slope_;
};

void adam_step(std::array<double, 2>& x, const std::array<double, 2>& g, std::array<double, 2>& m,
               std::array<double, 2>& v, std::size_t t, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (std::size_t k = 0; k < 2; ++k) {
    m[k] = b1 * m[k] + (1 - b1) * g[k];
    v[k] = b2 * v[k] + (1 - b2) * g[k] * g[k];
    const double mh = m[k] / (1 - std::pow(b1, static_cast<double>(t)));
    const double vh = v[k] / (1 - std::pow(b2, static_cast<double>(t)));
    x[k] -= lr * mh / (std::sqrt(vh) + eps);
  }
}

}  // namespace

GaussianSpec GaussianSpec::make(double mu, double sigma, std::string unit) {
  if (!(sigma >= 0.0)) throw DomainError("standard deviation must be non-negative");
  return {mu, std::log(sigma), std::move(unit)};
}

AlphaSamples reparameterize(const GaussianSpec& spec, const std::vector<double>& eps) {
  AlphaSamples s;
  s.eps = eps;
  s.alpha.resize(eps.size());
  s.clamped.assign(eps.size(), 0);
  const double sd = spec.sigma();
  for (std::size_t k = 0; k < eps.size(); ++k) {
    const double a = spec.mu + sd * eps[k];
    s.alpha[k] = std::clamp(a, kAlphaMin, kAlphaMax);
    if (s.alpha[k] != a) {
      s.clamped[k] = 1;
      ++s.clamp_count;
    }
  }
  return s;
}

AlphaSamples sample_alpha(const GaussianSpec& spec, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> eps(count);
  for (auto& e : eps) e = rng.normal();
  return reparameterize(spec, eps);
}

LengthStats length_stats(const AlphaSamples& samples, const GaussianSpec& spec, double power, double speed,
                         double substrate, const surrogate::MeltPoolPredictor& model, bool with_gradient) {
  const std::size_t n = samples.alpha.size();
  if (n < 2) throw ConfigError("length statistics need at least two samples");
  const double ts = model.settings().material.t_solidus;
  const double sd = spec.sigma();
  std::vector<double> len, dlen;
  std::vector<std::array<double, 2>> dalpha;
  LengthStats st;
  auto seed = [](const surrogate::SmoothFeatures&) { return std::array<double, 3>{0.0, 1.0, 0.0}; };
  for (std::size_t k = 0; k < n; ++k) {
    std::array<double, 4> g{};
    const auto f = model.evaluate_smooth({power, speed, substrate, samples.alpha[k]}, seed,
                                         with_gradient ? &g : nullptr);
    if (is_cold(f, ts)) {
      ++st.excluded;
      continue;
    }
    len.push_back(f.length * kUmPerM);
    dlen.push_back(g[3] * kUmPerM);
    if (samples.clamped[k])
      dalpha.push_back({0.0, 0.0});
    else
      dalpha.push_back({1.0, sd * samples.eps[k]});
  }
  if (5 * st.excluded > n)
    throw NumericError(std::to_string(st.excluded) + " of " + std::to_string(n) +
                       " absorptivity samples give a cold pool (limit 20%)");
  st.used = len.size();
  const double m = static_cast<double>(st.used);
  st.mean = std::accumulate(len.begin(), len.end(), 0.0) / m;
  double var = 0.0;
  for (double l : len) var += (l - st.mean) * (l - st.mean);
  st.std = std::sqrt(var / m);
  if (with_gradient) {
    for (std::size_t k = 0; k < st.used; ++k)
      for (std::size_t j = 0; j < 2; ++j) {
        const double dl = dlen[k] * dalpha[k][j];
        st.d_mean[j] += dl / m;
        if (st.std > 0.0) st.d_std[j] += (len[k] - st.mean) * dl / (m * st.std);
      }
  }
  return st;
}

const char* kl_name(KlVariant v) { return v == KlVariant::Standard ? "standard" : "paper-literal"; }

KlVariant kl_from_name(const std::string& s) {
  if (s == "standard") return KlVariant::Standard;
  if (s == "paper-literal" || s == "literal") return KlVariant::PaperLiteral;
  throw ConfigError("unknown KL variant '" + s + "' (expected standard or paper-literal)");
}

double kl_gaussian(double mu_p, double sigma_p, double mu_q, double sigma_q, KlVariant variant,
                   std::array<double, 2>* grad) {
  if (!(sigma_p > 0.0) || !(sigma_q > 0.0)) throw DomainError("KL divergence needs positive standard deviations");
  const double dm = mu_p - mu_q;
  if (variant == KlVariant::Standard) {
    const double q2 = sigma_q * sigma_q;
    if (grad) *grad = {dm / q2, -1.0 / sigma_p + sigma_p / q2};
    return std::log(sigma_q / sigma_p) + (sigma_p * sigma_p + dm * dm) / (2.0 * q2) - 0.5;
  }
  if (grad) *grad = {dm, -1.0 / sigma_p + sigma_p};
  return std::log(sigma_q / sigma_p) + (sigma_p * sigma_p - sigma_q * sigma_q + dm * dm) / 2.0;
}

double kl_gaussian(const GaussianSpec& p, const GaussianSpec& q, KlVariant variant) {
  return kl_gaussian(p.mu, p.sigma(), q.mu, q.sigma(), variant);
}

void CalibConfig::validate() const {
  if (samples < 2) throw ConfigError("calibration needs at least two samples");
  if (epochs == 0) throw ConfigError("calibration needs at least one epoch");
  if (!(step > 0.0)) throw ConfigError("calibration step must be positive");
  if (!(initial.sigma() > 0.0)) throw ConfigError("initial absorptivity spread must be positive");
}

CalibResult calibrate_absorptivity(const GaussianSpec& target, const CalibConfig& config,
                                   const surrogate::MeltPoolPredictor& model) {
  config.validate();
  if (!(target.sigma() > 0.0)) throw DomainError("target length spread must be positive");
  std::unique_ptr<surrogate::MeltPoolPredictor> table;
  const surrogate::MeltPoolPredictor* m = &model;
  if (config.response_nodes > 0) {
    table = tabulate_alpha(model, config.power, config.speed, config.substrate, config.response_nodes);
    m = table.get();
  }
  const auto noise = sample_alpha(GaussianSpec::make(0.0, 1.0), config.samples, config.seed).eps;

  CalibResult res;
  std::array<double, 2> x = {config.initial.mu, config.initial.log_sigma};
  std::array<double, 2> mo{}, ve{};
  double first = 0.0;
  for (std::size_t epoch = 0;; ++epoch) {
    const GaussianSpec spec{x[0], x[1], "-"};
    const auto draws = reparameterize(spec, noise);
    const auto st = length_stats(draws, spec, config.power, config.speed, config.substrate, *m, true);
    std::array<double, 2> dk{};
    const double kl = st.std > 0.0 ? kl_gaussian(st.mean, st.std, target.mu, target.sigma(), config.variant, &dk)
                                   : std::numeric_limits<double>::infinity();
    res.trace.push_back({epoch, spec.mu, spec.sigma(), kl, st.mean, st.std});
    if (!std::isfinite(kl))
      throw CalibrationError("non-finite KL divergence at epoch " + std::to_string(epoch), res.trace);
    if (epoch == 0) first = kl;
    if (epoch == 0 || kl < res.kl) {
      res.kl = kl;
      res.alpha = spec;
      res.best_epoch = epoch;
      res.clamp_count = draws.clamp_count;
    }
    if (epoch == config.epochs) break;
    const std::array<double, 2> g = {dk[0] * st.d_mean[0] + dk[1] * st.d_std[0],
                                     dk[0] * st.d_mean[1] + dk[1] * st.d_std[1]};
    adam_step(x, g, mo, ve, epoch + 1, config.step);
  }
  res.alpha.unit = "-";
  if (res.trace.back().kl > 10.0 * std::max(first, 1e-12) && res.trace.back().kl > 1e-9)
    throw CalibrationError("calibration diverged: final KL " + std::to_string(res.trace.back().kl) +
                               " exceeds 10x the initial " + std::to_string(first),
                           res.trace);
  return res;
}

std::string CalibResult::trace_csv() const {
  std::ostringstream o;
  o << std::setprecision(10) << "epoch,mu_alpha,sigma_alpha,kl,L_mean_um,L_std_um\n";
  for (const auto& e : trace)
    o << e.epoch << ',' << e.mu << ',' << e.sigma << ',' << e.kl << ',' << e.length_mean << ',' << e.length_std
      << '\n';
  return o.str();
}

std::string CalibResult::to_json() const {
  nlohmann::json j;
  j["mu_alpha"] = alpha.mu;
  j["sigma_alpha"] = alpha.sigma();
  j["kl"] = kl;
  j["best_epoch"] = best_epoch;
  j["epochs"] = trace.empty() ? 0 : trace.back().epoch;
  j["clamped_samples"] = clamp_count;
  if (!trace.empty()) {
    j["L_mean_um"] = trace[best_epoch].length_mean;
    j["L_std_um"] = trace[best_epoch].length_std;
  }
  return j.dump(2);
}

std::unique_ptr<surrogate::MeltPoolPredictor> tabulate_alpha(const surrogate::MeltPoolPredictor& model, double power,
                                                              double speed, double substrate, std::size_t nodes,
                                                              double alpha_lo, double alpha_hi) {
  return std::make_unique<AlphaTable>(model, power, speed, substrate, nodes, alpha_lo, alpha_hi);
}

GaussianSpec fit_gaussian(const std::vector<double>& values, const std::string& unit) {
  if (values.size() < 2) throw ConfigError("a Gaussian fit needs at least two values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return GaussianSpec::make(mean, std::sqrt(var / n), unit);
}

Observations synthetic_length_observations(const GaussianSpec& truth, std::size_t n, std::uint64_t seed) {
  if (n < 2) throw ConfigError("need at least two observations");
  Rng rng(seed);
  Observations o;
  o.samples.resize(n);
  const double sd = truth.sigma();
  for (auto& s : o.samples) s = truth.mu + sd * rng.normal();
  o.fitted = fit_gaussian(o.samples, truth.unit);
  return o;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw ConfigError("percentile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

const QuantitySummary& UqResult::get(const std::string& name) const {
  for (const auto& q : quantities)
    if (q.name == name) return q;
  throw ConfigError("no UQ quantity named " + name);
}

UqResult propagate_uq(const GaussianSpec& alpha, double power, double speed, double substrate,
                      const surrogate::MeltPoolPredictor& model, std::size_t samples, std::uint64_t seed,
                      std::size_t bins) {
  if (samples < 2) throw ConfigError("uncertainty propagation needs at least two samples");
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  const auto draws = sample_alpha(alpha, samples, seed);
  std::array<std::vector<double>, 4> vals;
  UqResult res;
  res.samples = samples;
  res.clamp_count = draws.clamp_count;
  for (double a : draws.alpha) {
    const auto s = model.evaluate({power, speed, substrate, a});
    if (s.cold || !s.ra) {
      ++res.excluded;
      continue;
    }
    vals[0].push_back(s.t_peak);
    vals[1].push_back(s.length * kUmPerM);
    vals[2].push_back(s.width * kUmPerM);
    vals[3].push_back(*s.ra);
  }
  if (5 * res.excluded > samples)
    throw NumericError(std::to_string(res.excluded) + " of " + std::to_string(samples) +
                       " absorptivity samples give a cold pool (limit 20%)");
  const char* names[] = {"T_peak", "L", "W", "Ra"};
  const char* units[] = {"K", "um", "um", "um"};
  for (std::size_t q = 0; q < 4; ++q) {
    const auto& v = vals[q];
    QuantitySummary s;
    s.name = names[q];
    s.unit = units[q];
    const double n = static_cast<double>(v.size());
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double var = 0.0;
    for (double x : v) var += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(var / n);
    s.p5 = percentile(v, 5.0);
    s.p50 = percentile(v, 50.0);
    s.p95 = percentile(v, 95.0);
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    const double lo = *mn, width = *mx > *mn ? (*mx - *mn) / static_cast<double>(bins) : 1.0;
    s.bin_edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b) s.bin_edges[b] = lo + width * static_cast<double>(b);
    s.counts.assign(bins, 0);
    for (double x : v) ++s.counts[std::min(static_cast<std::size_t>((x - lo) / width), bins - 1)];
    res.quantities.push_back(std::move(s));
  }
  return res;
}

std::string UqResult::to_json() const {
  nlohmann::json j;
  j["samples"] = samples;
  j["excluded_cold"] = excluded;
  j["clamped_alpha"] = clamp_count;
  for (const auto& q : quantities)
    j["quantities"][q.name] = {{"unit", q.unit}, {"mean", q.mean}, {"std", q.std},
                               {"p5", q.p5},     {"p50", q.p50},   {"p95", q.p95}};
  return j.dump(2);
}

std::string UqResult::histogram_csv() const {
  std::ostringstream o;
  o << std::setprecision(10) << "quantity,bin,lower,upper,count\n";
  for (const auto& q : quantities)
    for (std::size_t b = 0; b < q.counts.size(); ++b)
      o << q.name << ',' << b << ',' << q.bin_edges[b] << ',' << q.bin_edges[b + 1] << ',' << q.counts[b] << '\n';
  return o.str();
}

}  // namespace lpbf::calib
