#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lpbf/common.hpp"

namespace lpbf::fno {

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr std::size_t kInputChannels = 6;

struct FnoConfig {
  std::size_t layers = 4;
  std::size_t width = 20;        // latent channels d_h
  std::size_t modes_x = 12;
  std::size_t modes_y = 12;
  std::size_t proj_width = 64;   // hidden width of the projection
  double learning_rate = 0.01;
  double decay_factor = 0.7;
  std::size_t decay_every = 50;  // epochs
  std::size_t epochs = 1000;
  double weight_decay = 1e-4;
  std::size_t batch_size = 16;
  std::size_t threads = 1;
  std::uint64_t seed = 0;

  /// Throws ConfigError when the modes exceed half the grid or widths are zero.
  void validate(const Grid2D& grid) const;

  /// Reduced network and schedule sized for a single CPU core.
  static FnoConfig desk();
};

/// Min-max input scaling over `bounds`; targets are (T - t_offset) / t_scale.
struct Normalization {
  ParamBounds bounds{};
  double t_offset = 300.0;
  double t_scale = 2440.0;
};

/// Flat parameter layout. Complex spectral weights are stored as separate
/// real and imaginary blocks of shape (2*modes_x*modes_y, width, width).
struct Layout {
  struct Block {
    std::string name;
    std::size_t offset;
    std::size_t size;
  };
  std::vector<Block> blocks;
  std::size_t total = 0;

  explicit Layout(const FnoConfig& c);
  const Block& at(const std::string& name) const;
};

/// 6-channel input, node-major rows (n = i*ny + j): normalized P, V, T_sub,
/// alpha, then x and second-axis coordinates scaled to [0, 1].
Eigen::MatrixXd build_input_channels(const ProcessParams& p, const Grid2D& grid, const Normalization& norm,
                                     bool* extrapolated = nullptr);

class Model;

/// Saved activations of one forward pass.
struct Tape {
  Grid2D grid;
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> hidden;  // layers + 1 entries, N x width
  std::vector<Eigen::MatrixXd> pre;     // layers entries, pre-activation
  std::vector<Eigen::MatrixXd> slope;   // activation derivative at `pre`
  Eigen::MatrixXd proj_pre;             // N x proj_width
  Eigen::MatrixXd proj_act;
  Eigen::MatrixXd proj_slope;
  Eigen::VectorXd output;               // normalized temperature
};

class Model {
 public:
  Model(const FnoConfig& config, PlaneId plane, const Grid2D& grid, const Normalization& norm = {});

  const FnoConfig& config() const { return config_; }
  PlaneId plane() const { return plane_; }
  const Grid2D& grid() const { return grid_; }
  const Normalization& normalization() const { return norm_; }
  const Layout& layout() const { return layout_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  double* block(const std::string& name) { return params_.data() + layout_.at(name).offset; }
  const double* block(const std::string& name) const { return params_.data() + layout_.at(name).offset; }

  /// Seeded random initialization; spectral weights use scale 1/(width*modes).
  void initialize(std::uint64_t seed);

  /// Temperature field in K on `grid` (defaults to the training grid). Any grid
  /// with the same extents is accepted.
  PlaneSection forward(const ProcessParams& p) const;
  PlaneSection forward(const ProcessParams& p, const Grid2D& grid) const;

  /// Normalized forward pass recording activations.
  void forward_tape(const Eigen::MatrixXd& input, const Grid2D& grid, Tape& tape) const;
  /// Reverse pass for upstream gradient `g_out` on the normalized output.
  /// Accumulates into `g_params` (may be null) and writes the input-channel
  /// gradient into `g_input` (may be null).
  void backward(const Tape& tape, const Eigen::VectorXd& g_out, double* g_params, Eigen::MatrixXd* g_input) const;

 private:
  struct Plan;
  std::shared_ptr<const Plan> plan_for(const Grid2D& grid) const;

  FnoConfig config_;
  PlaneId plane_;
  Grid2D grid_;
  Normalization norm_;
  Layout layout_;
  std::vector<double> params_;
  std::shared_ptr<const Plan> plan_;
};

/// Denormalized temperature recorded on a tape.
PlaneSection field_from_tape(const Model& m, const Tape& tape);

/// d functional / d (P, V, T_sub, alpha) given d functional / d T at every node.
std::array<double, 4> input_gradients(const Model& m, const Tape& tape, const std::vector<double>& d_temperature);
std::array<double, 4> input_gradients(const Model& m, const ProcessParams& p, const std::vector<double>& d_temperature,
                                      PlaneSection* field = nullptr);

struct Sample {
  ProcessParams params;
  std::vector<double> values;  // K on the model grid
};

/// Mean squared error of normalized outputs over nodes and batch members,
/// with exact parameter gradients written to `grad` (resized).
double loss_and_gradients(const Model& m, const std::vector<const Sample*>& batch, std::vector<double>& grad);

double relative_l2(const std::vector<double>& pred, const std::vector<double>& target);

struct TrainReport {
  std::vector<double> train_mse;
  std::vector<double> train_rel_l2;
  std::vector<double> val_rel_l2;
  std::vector<double> learning_rate;
  std::size_t best_epoch = 0;
  double best_val_rel_l2 = 0.0;
  double wall_seconds = 0.0;

  std::string to_json() const;
  std::string loss_csv() const;
};

struct TrainOptions {
  /// Called after every epoch with (epoch, report so far); return false to stop.
  std::function<bool(std::size_t, const TrainReport&)> on_epoch;
  /// Stop once validation relative L2 falls below this value (0 disables).
  double target_val_rel_l2 = 0.0;
};

/// Adam with decoupled weight decay and stepped learning rate; returns the
/// checkpoint with the best validation relative L2.
Model train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set, const FnoConfig& config,
            PlaneId plane, const Grid2D& grid, TrainReport& report, const Normalization& norm = {},
            const TrainOptions& options = {});

void save(const Model& m, const std::filesystem::path& path);
Model load(const std::filesystem::path& path);
/// Configuration, grid and normalization from the header only.
struct ModelInfo {
  FnoConfig config;
  PlaneId plane;
  Grid2D grid;
  Normalization norm;
  std::uint32_t format_version;
};
ModelInfo inspect(const std::filesystem::path& path);

}  // namespace lpbf::fno
