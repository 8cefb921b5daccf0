#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "lpbf/fno.hpp"

using namespace lpbf;
using namespace lpbf::fno;

namespace {

struct Case {
  FnoConfig config;
  Grid2D grid;
  std::vector<Sample> samples;
};

ProcessParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const ParamBounds b;
  return {b.denormalize(0, u(rng)), b.denormalize(1, u(rng)), b.denormalize(2, u(rng)), b.denormalize(3, u(rng))};
}

Case random_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&rng](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  Case c;
  c.config.layers = pick(1, 4);
  c.config.width = pick(2, 5);
  c.config.modes_x = pick(1, 3);
  c.config.modes_y = pick(1, 3);
  c.config.proj_width = pick(2, 6);
  c.config.seed = seed;
  c.grid = Grid2D{pick(8, 16), pick(8, 16), -40.0, 5.0, 10.0, 3.0};
  std::normal_distribution<double> n(0.0, 400.0);
  const std::size_t batch = pick(1, 3);
  for (std::size_t b = 0; b < batch; ++b) {
    Sample s{random_params(rng), std::vector<double>(c.grid.size())};
    for (auto& v : s.values) v = 1500.0 + n(rng);
    c.samples.push_back(std::move(s));
  }
  return c;
}

std::vector<const Sample*> pointers(const std::vector<Sample>& v) {
  std::vector<const Sample*> p;
  for (const auto& s : v) p.push_back(&s);
  return p;
}

double block_rel_error(const std::vector<double>& a, const std::vector<double>& b, std::size_t off, std::size_t n) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = off; k < off + n; ++k) {
    num += (a[k] - b[k]) * (a[k] - b[k]);
    den += b[k] * b[k];
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("lpbf_test_fno_" + name);
}

}  // namespace

TEST(Gradients, ParametersMatchCentralDifferences) {
  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto c = random_case(seed);
    Model m(c.config, PlaneId::XY, c.grid);
    const auto batch = pointers(c.samples);
    std::vector<double> grad;
    loss_and_gradients(m, batch, grad);
    std::vector<double> fd(grad.size());
    std::vector<double> scratch;
    auto& p = m.params();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double keep = p[k];
      const double h = 1e-5 * std::max(1.0, std::abs(keep));
      p[k] = keep + h;
      const double up = loss_and_gradients(m, batch, scratch);
      p[k] = keep - h;
      const double dn = loss_and_gradients(m, batch, scratch);
      p[k] = keep;
      fd[k] = (up - dn) / (2.0 * h);
    }
    for (const auto& b : m.layout().blocks)
      EXPECT_LT(block_rel_error(grad, fd, b.offset, b.size), 1e-4) << "seed " << seed << " block " << b.name;
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 120.0);
}

TEST(Gradients, InputsMatchCentralDifferences) {
  for (std::uint64_t seed = 101; seed <= 120; ++seed) {
    auto c = random_case(seed);
    Model m(c.config, PlaneId::XZ, c.grid);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> w(c.grid.size());
    for (auto& v : w) v = n(rng);
    const auto p = c.samples[0].params;
    const auto g = input_gradients(m, p, w);
    const ParamBounds b;
    std::array<double, 4> fd{};
    for (std::size_t k = 0; k < 4; ++k) {
      const double h = 1e-4 * (b.hi[k] - b.lo[k]);
      auto a = p.as_array();
      a[k] += h;
      const auto up = m.forward(ProcessParams::from_array(a));
      a[k] -= 2.0 * h;
      const auto dn = m.forward(ProcessParams::from_array(a));
      double s = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * (up.values[i] - dn.values[i]);
      fd[k] = s / (2.0 * h);
    }
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      num += (g[k] - fd[k]) * (g[k] - fd[k]);
      den += fd[k] * fd[k];
    }
    EXPECT_LT(std::sqrt(num / den), 1e-4) << "seed " << seed;
  }
}

TEST(Loss, ExactTargetGivesZero) {
  auto c = random_case(7);
  Model m(c.config, PlaneId::XY, c.grid);
  for (auto& s : c.samples) s.values = m.forward(s.params).values;
  std::vector<double> grad;
  EXPECT_NEAR(loss_and_gradients(m, pointers(c.samples), grad), 0.0, 1e-24);
  for (double g : grad) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(Loss, DuplicatedBatchIsUnchanged) {
  auto c = random_case(8);
  Model m(c.config, PlaneId::XY, c.grid);
  auto once = pointers(c.samples);
  auto twice = once;
  twice.insert(twice.end(), once.begin(), once.end());
  std::vector<double> g1, g2;
  const double l1 = loss_and_gradients(m, once, g1);
  const double l2 = loss_and_gradients(m, twice, g2);
  EXPECT_NEAR(l1, l2, 1e-14 * l1);
  for (std::size_t k = 0; k < g1.size(); ++k) EXPECT_NEAR(g1[k], g2[k], 1e-12 * (1.0 + std::abs(g1[k])));
  EXPECT_THROW(loss_and_gradients(m, {}, g1), ConfigError);
}

TEST(Forward, ZeroSpectralWeightsArePointwise) {
  FnoConfig cfg;
  cfg.layers = 2;
  cfg.width = 4;
  cfg.modes_x = 2;
  cfg.modes_y = 2;
  cfg.proj_width = 4;
  const Grid2D g{10, 8, 0.0, 1.0, 0.0, 1.0};
  Model m(cfg, PlaneId::XY, g);
  for (std::size_t l = 0; l < cfg.layers; ++l)
    for (const char* part : {"r_re", "r_im"}) {
      const auto& b = m.layout().at(std::string(part) + std::to_string(l));
      std::fill_n(m.block(b.name), b.size, 0.0);
    }
  const auto in = build_input_channels({300, 1.5, 400, 0.3}, g, m.normalization());
  Tape base, bumped;
  m.forward_tape(in, g, base);
  auto in2 = in;
  in2.row(37) *= 1.5;
  m.forward_tape(in2, g, bumped);
  for (Eigen::Index n = 0; n < base.output.size(); ++n) {
    if (n == 37)
      EXPECT_NE(base.output[n], bumped.output[n]);
    else
      EXPECT_EQ(base.output[n], bumped.output[n]);
  }
}

TEST(Channels, EndpointsAndCoordinates) {
  const Grid2D g{5, 3, -10.0, 5.0, 0.0, 2.0};
  const Normalization norm;
  bool extra = true;
  const auto lo = build_input_channels({100, 0.5, 300, 0.1}, g, norm, &extra);
  EXPECT_FALSE(extra);
  const auto hi = build_input_channels({500, 2.5, 540, 0.6}, g, norm, &extra);
  EXPECT_FALSE(extra);
  for (Eigen::Index c = 0; c < 4; ++c) {
    EXPECT_DOUBLE_EQ(lo(0, c), 0.0);
    EXPECT_DOUBLE_EQ(hi(0, c), 1.0);
  }
  EXPECT_DOUBLE_EQ(lo(0, 4), 0.0);
  EXPECT_DOUBLE_EQ(lo(0, 5), 0.0);
  EXPECT_DOUBLE_EQ(lo(14, 4), 1.0);
  EXPECT_DOUBLE_EQ(lo(14, 5), 1.0);
  EXPECT_DOUBLE_EQ(lo(1, 5), 0.5);
  build_input_channels({600, 1.0, 300, 0.3}, g, norm, &extra);
  EXPECT_TRUE(extra);
}

TEST(Config, RejectsModesAboveHalfGrid) {
  FnoConfig c;
  c.modes_x = 6;
  c.modes_y = 2;
  EXPECT_THROW(c.validate(Grid2D{10, 10, 0, 1, 0, 1}), ConfigError);
  c.modes_x = 5;
  EXPECT_NO_THROW(c.validate(Grid2D{10, 10, 0, 1, 0, 1}));
  c.width = 0;
  EXPECT_THROW(c.validate(Grid2D{10, 10, 0, 1, 0, 1}), ConfigError);
}

TEST(Forward, RefinedGridSharesExtentsOnly) {
  auto c = random_case(3);
  Model m(c.config, PlaneId::XY, c.grid);
  const auto p = c.samples[0].params;
  const auto fine = m.forward(p, c.grid.refined(2));
  EXPECT_EQ(fine.grid.nx, 2 * (c.grid.nx - 1) + 1);
  EXPECT_EQ(fine.values.size(), fine.grid.size());
  Grid2D other = c.grid;
  other.dx *= 1.5;
  EXPECT_THROW(m.forward(p, other), ShapeError);
}

TEST(Forward, RefinedGridOfSmoothModelTracksCoarse) {
  // Low modes only and a tiny lift: the network is close to band-limited.
  FnoConfig cfg;
  cfg.layers = 2;
  cfg.width = 4;
  cfg.modes_x = 2;
  cfg.modes_y = 2;
  cfg.proj_width = 4;
  const Grid2D g{33, 17, -160.0, 10.0, 0.0, 5.0};
  Model m(cfg, PlaneId::XY, g);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& b = m.layout().at("w" + std::to_string(l));
    std::fill_n(m.block(b.name), b.size, 0.0);
  }
  const auto& lw = m.layout().at("lift_w");
  double* w = m.block(lw.name);
  for (std::size_t k = 0; k < lw.size; ++k) w[k] *= 0.05;
  const ProcessParams p{320, 1.2, 380, 0.4};
  const auto coarse = m.forward(p);
  const auto fine = m.forward(p, g.refined(2));
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < g.nx; ++i)
    for (std::size_t j = 0; j < g.ny; ++j) {
      const double d = fine.at(2 * i, 2 * j) - coarse.at(i, j);
      num += d * d;
      den += (coarse.at(i, j) - 300.0) * (coarse.at(i, j) - 300.0);
    }
  EXPECT_LT(std::sqrt(num / den), 0.02);
}

TEST(Io, SaveLoadIsBitwise) {
  auto c = random_case(11);
  Model m(c.config, PlaneId::XZ, c.grid);
  const auto path = temp_file("roundtrip.bin");
  save(m, path);
  const auto back = load(path);
  EXPECT_EQ(back.params(), m.params());
  EXPECT_EQ(back.plane(), PlaneId::XZ);
  EXPECT_EQ(back.grid(), m.grid());
  const auto p = c.samples[0].params;
  EXPECT_EQ(back.forward(p).values, m.forward(p).values);
  const auto info = inspect(path);
  EXPECT_EQ(info.config.width, c.config.width);
  EXPECT_EQ(info.config.modes_x, c.config.modes_x);
  EXPECT_EQ(info.format_version, kModelFormatVersion);
  std::filesystem::remove(path);
}

TEST(Io, CorruptionIsDetected) {
  auto c = random_case(12);
  Model m(c.config, PlaneId::XY, c.grid);
  const auto path = temp_file("corrupt.bin");
  save(m, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(0, std::ios::end);
    const auto size = static_cast<std::streamoff>(f.tellg());
    f.seekp(size - 5);
    char b = 0;
    f.seekg(size - 5);
    f.read(&b, 1);
    b = static_cast<char>(b ^ 0x5a);
    f.seekp(size - 5);
    f.write(&b, 1);
  }
  EXPECT_THROW(load(path), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(load(temp_file("missing.bin")), Error);
}

TEST(Train, DeterministicAndImproves) {
  FnoConfig cfg;
  cfg.layers = 2;
  cfg.width = 4;
  cfg.modes_x = 3;
  cfg.modes_y = 3;
  cfg.proj_width = 6;
  cfg.epochs = 12;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.01;
  cfg.seed = 5;
  const Grid2D g{16, 12, -75.0, 10.0, -55.0, 10.0};
  std::mt19937_64 rng(3);
  auto make = [&](std::size_t n) {
    std::vector<Sample> v;
    for (std::size_t k = 0; k < n; ++k) {
      Sample s{random_params(rng), std::vector<double>(g.size())};
      const double amp = 50.0 * s.params.absorptivity * s.params.power / s.params.speed;
      for (std::size_t i = 0; i < g.nx; ++i)
        for (std::size_t j = 0; j < g.ny; ++j) {
          const double x = g.x(i) / 40.0, y = g.y(j) / 30.0;
          s.values[i * g.ny + j] = s.params.substrate + amp * std::exp(-(x * x + y * y));
        }
      v.push_back(std::move(s));
    }
    return v;
  };
  const auto tr = make(16), va = make(4);
  TrainReport r1, r2;
  const auto m1 = train(tr, va, cfg, PlaneId::XY, g, r1);
  const auto m2 = train(tr, va, cfg, PlaneId::XY, g, r2);
  EXPECT_EQ(m1.params(), m2.params());
  EXPECT_EQ(r1.val_rel_l2, r2.val_rel_l2);
  ASSERT_EQ(r1.val_rel_l2.size(), cfg.epochs);
  EXPECT_LE(r1.best_val_rel_l2, r1.val_rel_l2.front());
  EXPECT_EQ(r1.best_val_rel_l2, r1.val_rel_l2[r1.best_epoch]);
  EXPECT_NE(r1.loss_csv().find('\n'), std::string::npos);
}

TEST(Train, RejectsEmptySplits) {
  FnoConfig cfg;
  cfg.width = 2;
  cfg.modes_x = 1;
  cfg.modes_y = 1;
  const Grid2D g{4, 4, 0, 1, 0, 1};
  TrainReport r;
  std::vector<Sample> one{{{300, 1, 300, 0.3}, std::vector<double>(g.size(), 300.0)}};
  EXPECT_THROW(train({}, one, cfg, PlaneId::XY, g, r), ConfigError);
  EXPECT_THROW(train(one, {}, cfg, PlaneId::XY, g, r), ConfigError);
}

TEST(Metrics, RelativeL2) {
  EXPECT_DOUBLE_EQ(relative_l2({1.0, 2.0}, {1.0, 2.0}), 0.0);
  EXPECT_NEAR(relative_l2({2.0, 0.0}, {1.0, 0.0}), 1.0, 1e-15);
  EXPECT_THROW(relative_l2({1.0}, {1.0, 2.0}), ShapeError);
}
