#include "lpbf/predictor.hpp"

namespace lpbf::surrogate {

FnoPredictor::FnoPredictor(std::shared_ptr<const fno::Model> xy, std::shared_ptr<const fno::Model> xz,
                           FeatureSettings s)
    : xy_(std::move(xy)), xz_(std::move(xz)), settings_(s) {
  if (!xy_ || !xz_) throw ConfigError("predictor needs both plane models");
  if (xy_->plane() != PlaneId::XY || xz_->plane() != PlaneId::XZ)
    throw ConfigError("predictor models must be an x-y model and an x-z model, in that order");
  if (xy_->normalization().bounds.lo != xz_->normalization().bounds.lo ||
      xy_->normalization().bounds.hi != xz_->normalization().bounds.hi)
    throw ConfigError("plane models were trained on different parameter boxes");
}

FnoPredictor FnoPredictor::load(const std::filesystem::path& xy, const std::filesystem::path& xz, FeatureSettings s) {
  return FnoPredictor(std::make_shared<const fno::Model>(fno::load(xy)),
                      std::make_shared<const fno::Model>(fno::load(xz)), s);
}

std::pair<PlaneSection, PlaneSection> FnoPredictor::sections(const ProcessParams& p) const {
  return {xy_->forward(p), xz_->forward(p)};
}

features::MeltPoolState FnoPredictor::evaluate(const ProcessParams& p) const {
  const auto [sxy, sxz] = sections(p);
  return features::extract_state(sxy, sxz, settings_.material, settings_.sri);
}

SmoothFeatures FnoPredictor::evaluate_smooth(const ProcessParams& p, const FeatureSeed& seed,
                                             std::array<double, 4>* grad) const {
  SmoothFeatures f;
  fno::Tape txy, txz;
  xy_->forward_tape(fno::build_input_channels(p, xy_->grid(), xy_->normalization(), &f.extrapolated), xy_->grid(),
                    txy);
  xz_->forward_tape(fno::build_input_channels(p, xz_->grid(), xz_->normalization()), xz_->grid(), txz);
  const auto sxy = fno::field_from_tape(*xy_, txy);
  const auto sxz = fno::field_from_tape(*xz_, txz);
  const double ts = settings_.material.t_solidus;
  const auto tp = features::peak_temperature_smooth(sxy, sxz, settings_.smooth);
  const auto len = features::pool_length_smooth(sxy, sxz, ts, settings_.smooth);
  const auto wid = features::pool_width_smooth(sxy, ts, settings_.smooth);
  f.t_peak = tp.value;
  f.length = len.value;
  f.width = wid.value;
  if (!grad) return f;

  const auto w = seed(f);
  std::vector<double> gxy(sxy.values.size()), gxz(sxz.values.size());
  for (std::size_t n = 0; n < gxy.size(); ++n) gxy[n] = w[0] * tp.d_xy[n] + w[1] * len.d_xy[n] + w[2] * wid.d_xy[n];
  for (std::size_t n = 0; n < gxz.size(); ++n) gxz[n] = w[0] * tp.d_xz[n] + w[1] * len.d_xz[n];
  const auto a = fno::input_gradients(*xy_, txy, gxy);
  const auto b = fno::input_gradients(*xz_, txz, gxz);
  for (std::size_t k = 0; k < kParamCount; ++k) (*grad)[k] = a[k] + b[k];
  return f;
}

AnalyticPredictor::AnalyticPredictor(Fn fn, FeatureSettings s, ParamBounds b)
    : fn_(std::move(fn)), settings_(s), bounds_(b) {}

features::MeltPoolState AnalyticPredictor::evaluate(const ProcessParams& p) const {
  const auto o = fn_(p);
  return features::state_from_scalars(o.features.t_peak, o.features.length, o.features.width, settings_.material,
                                      settings_.sri);
}

SmoothFeatures AnalyticPredictor::evaluate_smooth(const ProcessParams& p, const FeatureSeed& seed,
                                                  std::array<double, 4>* grad) const {
  auto o = fn_(p);
  o.features.extrapolated = !bounds_.contains(p);
  if (!grad) return o.features;
  const auto w = seed(o.features);
  for (std::size_t k = 0; k < kParamCount; ++k)
    (*grad)[k] = w[0] * o.jacobian[0][k] + w[1] * o.jacobian[1][k] + w[2] * o.jacobian[2][k];
  return o.features;
}

}  // namespace lpbf::surrogate
