#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <utility>

#include "lpbf/common.hpp"
#include "lpbf/features.hpp"
#include "lpbf/fno.hpp"
#include "lpbf/thermo.hpp"

namespace lpbf::surrogate {

struct FeatureSettings {
  thermo::MaterialProps material{};
  features::SriConstants sri{};
  features::SmoothParams smooth{};
};

/// Smooth T_peak (K), L and W (m).
struct SmoothFeatures {
  double t_peak = 0.0;
  double length = 0.0;
  double width = 0.0;
  bool extrapolated = false;  // parameters outside the surrogate's training box
};

/// Maps feature values to d objective / d (T_peak, L, W).
using FeatureSeed = std::function<std::array<double, 3>(const SmoothFeatures&)>;

/// Melt-pool features as a function of the process parameters.
class MeltPoolPredictor {
 public:
  virtual ~MeltPoolPredictor() = default;

  /// Hard-variant state.
  virtual features::MeltPoolState evaluate(const ProcessParams& p) const = 0;
  /// Smooth features. When `grad` is non-null, `seed` is called once with the
  /// features and d objective / d (P, V, T_sub, alpha) is written to `grad`.
  virtual SmoothFeatures evaluate_smooth(const ProcessParams& p, const FeatureSeed& seed,
                                         std::array<double, 4>* grad) const = 0;

  virtual const FeatureSettings& settings() const = 0;
  /// Box inside which the predictor is trusted.
  virtual ParamBounds bounds() const { return {}; }
};

/// Pair of plane surrogates.
class FnoPredictor final : public MeltPoolPredictor {
 public:
  FnoPredictor(std::shared_ptr<const fno::Model> xy, std::shared_ptr<const fno::Model> xz, FeatureSettings s = {});
  static FnoPredictor load(const std::filesystem::path& xy, const std::filesystem::path& xz, FeatureSettings s = {});

  std::pair<PlaneSection, PlaneSection> sections(const ProcessParams& p) const;

  features::MeltPoolState evaluate(const ProcessParams& p) const override;
  SmoothFeatures evaluate_smooth(const ProcessParams& p, const FeatureSeed& seed,
                                 std::array<double, 4>* grad) const override;
  const FeatureSettings& settings() const override { return settings_; }
  ParamBounds bounds() const override { return xy_->normalization().bounds; }

  const fno::Model& xy() const { return *xy_; }
  const fno::Model& xz() const { return *xz_; }

 private:
  std::shared_ptr<const fno::Model> xy_, xz_;
  FeatureSettings settings_;
};

/// Closed-form features with their Jacobian (rows T_peak, L, W; columns
/// P, V, T_sub, alpha). Used for stand-ins and test hooks.
class AnalyticPredictor final : public MeltPoolPredictor {
 public:
  struct Output {
    SmoothFeatures features;
    std::array<std::array<double, 4>, 3> jacobian{};
  };
  using Fn = std::function<Output(const ProcessParams&)>;

  explicit AnalyticPredictor(Fn fn, FeatureSettings s = {}, ParamBounds b = {});

  features::MeltPoolState evaluate(const ProcessParams& p) const override;
  SmoothFeatures evaluate_smooth(const ProcessParams& p, const FeatureSeed& seed,
                                 std::array<double, 4>* grad) const override;
  const FeatureSettings& settings() const override { return settings_; }
  ParamBounds bounds() const override { return bounds_; }

 private:
  Fn fn_;
  FeatureSettings settings_;
  ParamBounds bounds_;
};

}  // namespace lpbf::surrogate
