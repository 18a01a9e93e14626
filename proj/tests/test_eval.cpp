#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "reenact/error.hpp"
#include "reenact/eval.hpp"
#include "reenact/gag.hpp"
#include "reenact/ulc.hpp"
#include "test_util.hpp"

using namespace reenact;

namespace {

// Gray pattern in [0, 1] replicated into a [3, H, W] image in [-1, 1].
template <class F>
torch::Tensor gray_image(int h, int w, F f) {
  auto g = torch::empty({h, w}, torch::kFloat64);
  auto acc = g.accessor<double, 2>();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) acc[r][c] = f(r, c);
  }
  return (g * 2 - 1).unsqueeze(0).expand({3, h, w}).contiguous();
}

double pattern_a(int r, int c) { return 0.5 + 0.4 * std::sin(0.3 * r) * std::cos(0.2 * c); }
double pattern_b(int r, int c) {
  return 0.5 + 0.3 * std::cos(0.17 * r + 0.11 * c) + 0.15 * std::sin(0.05 * r * c / 7.0);
}
double pattern_checker(int r, int c) { return ((r / 4 + c / 4) % 2) * 0.8 + 0.1; }
double pattern_a_perturbed(int r, int c) {
  return 0.9 * pattern_a(r, c) + 0.05 + 0.05 * std::sin(0.7 * r + 0.3 * c);
}

// Direct per-window SSIM on one gray plane, no convolution routines.
double brute_force_ssim(const std::vector<std::vector<double>>& x,
                        const std::vector<std::vector<double>>& y) {
  const int h = static_cast<int>(x.size()), w = static_cast<int>(x[0].size());
  double k[11][11];
  double total = 0;
  for (int i = 0; i < 11; ++i) {
    for (int j = 0; j < 11; ++j) {
      k[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      total += k[i][j];
    }
  }
  double sum = 0;
  int n = 0;
  for (int r = 0; r + 11 <= h; ++r) {
    for (int c = 0; c + 11 <= w; ++c) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double wt = k[i][j] / total;
          const double a = x[r + i][c + j], b = y[r + i][c + j];
          mx += wt * a;
          my += wt * b;
          sxx += wt * a * a;
          syy += wt * b * b;
          sxy += wt * a * b;
        }
      }
      sxx -= mx * mx;
      syy -= my * my;
      sxy -= mx * my;
      const double c1 = 1e-4, c2 = 9e-4;
      sum += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
      ++n;
    }
  }
  return sum / n;
}

template <class F>
std::vector<std::vector<double>> plane(int h, int w, F f) {
  std::vector<std::vector<double>> p(h, std::vector<double>(w));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) p[r][c] = f(r, c);
  }
  return p;
}

}  // namespace

TEST(Ssim, IdentityAndSymmetry) {
  torch::manual_seed(0);
  const auto a = torch::rand({3, 32, 32}, torch::kFloat64) * 2 - 1;
  const auto b = torch::rand({3, 32, 32}, torch::kFloat64) * 2 - 1;
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_LT(ssim(a, b), 0.5);
  SsimOptions per_channel;
  per_channel.luma = false;
  EXPECT_NEAR(ssim(a, a, per_channel), 1.0, 1e-12);
}

TEST(Ssim, CheckerboardAgainstInverseIsNegative) {
  const auto a = gray_image(32, 32, [](int r, int c) { return double((r + c) % 2); });
  const auto inv = gray_image(32, 32, [](int r, int c) { return 1.0 - (r + c) % 2; });
  const double s = ssim(a, inv);
  EXPECT_LT(s, 0.0);
  const auto oracle = brute_force_ssim(plane(32, 32, [](int r, int c) { return double((r + c) % 2); }),
                                       plane(32, 32, [](int r, int c) { return 1.0 - (r + c) % 2; }));
  EXPECT_NEAR(s, oracle, 1e-10);
}

TEST(Ssim, MatchesBruteForceWindowing) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  auto x = plane(24, 30, [&](int, int) { return u(rng); });
  auto y = plane(24, 30, [&](int, int) { return u(rng); });
  const auto tx = gray_image(24, 30, [&](int r, int c) { return x[r][c]; });
  const auto ty = gray_image(24, 30, [&](int r, int c) { return y[r][c]; });
  EXPECT_NEAR(ssim(tx, ty), brute_force_ssim(x, y), 1e-10);
}

TEST(Ssim, MatchesFrozenScikitImageValues) {
  // skimage.metrics.structural_similarity(x, y, gaussian_weights=True, sigma=1.5,
  // use_sample_covariance=False, data_range=1.0) on the same patterns.
  EXPECT_NEAR(ssim(gray_image(32, 32, pattern_a), gray_image(32, 32, pattern_b)),
              0.08495748937768967, 1e-3);
  EXPECT_NEAR(ssim(gray_image(48, 40, pattern_a), gray_image(48, 40, pattern_checker)),
              0.00720622260305461, 1e-3);
  EXPECT_NEAR(ssim(gray_image(40, 48, pattern_b), gray_image(40, 48, pattern_checker)),
              0.0062123943849703486, 1e-3);
  EXPECT_NEAR(ssim(gray_image(36, 44, pattern_a), gray_image(36, 44, pattern_a_perturbed)),
              0.935239538182378, 1e-3);
}

TEST(Ssim, ShapeErrors) {
  EXPECT_THROW(ssim(torch::zeros({3, 16, 16}), torch::zeros({3, 16, 17})), Error);
  EXPECT_THROW(ssim(torch::zeros({3, 8, 8}), torch::zeros({3, 8, 8})), Error);
}

TEST(Fid, IdenticalSetsAndSymmetry) {
  torch::manual_seed(1);
  const auto x = torch::randn({500, 6}, torch::kFloat64);
  const auto y = torch::randn({400, 6}, torch::kFloat64) * 1.3 + 0.2;
  EXPECT_LT(std::abs(fid(x, x).value), 1e-8);
  EXPECT_NEAR(fid(x, y).value, fid(y, x).value, 1e-10);
  EXPECT_GE(fid(x, y).value, 0.0);
  EXPECT_TRUE(fid(x, y).warnings.empty());
}

TEST(Fid, GaussianClosedForm) {
  torch::manual_seed(2);
  const std::int64_t n = 10000, d = 8;
  auto mu = torch::zeros({d}, torch::kFloat64);
  mu[0] = 1.5;
  mu[3] = -1.0;
  const double expected = mu.pow(2).sum().item<double>();
  const auto x = torch::randn({n, d}, torch::kFloat64);
  const auto y = torch::randn({n, d}, torch::kFloat64) + mu;
  EXPECT_NEAR(fid(x, y).value, expected, 0.05 * expected);
}

TEST(Fid, SmallSampleWarnsAndNonFiniteFails) {
  const auto x = torch::randn({4, 10}, torch::kFloat64);
  EXPECT_FALSE(fid(x, x).warnings.empty());
  auto bad = x.clone();
  bad[0][0] = std::numeric_limits<double>::quiet_NaN();
  try {
    fid(bad, x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

TEST(CountParams, AnchorsAndAdditivity) {
  EXPECT_EQ(count_params(std::vector<const torch::nn::Module*>{}), 0);
  Ulc ulc(UlcConfig{});
  const auto n_ulc = count_params(*ulc);
  EXPECT_GE(n_ulc, 3'600'000);
  EXPECT_LE(n_ulc, 5'400'000);
  EXPECT_EQ(n_ulc, count_params({ulc->enc_target.get(), ulc->enc_source.get(), ulc->dec_shift.get()}));
  Generator gen(GagConfig{});
  const auto n_gag = count_params(*gen);
  EXPECT_GE(n_gag, 13'800'000);
  EXPECT_LE(n_gag, 20'800'000);
}

TEST(MeasureSpeed, ReportsPositiveFpsAndDevice) {
  int calls = 0;
  const auto r = measure_speed([&] { ++calls; }, "test-device", 4, 2, 3);
  EXPECT_EQ(calls, 2 + 4 * 3);
  EXPECT_GT(r.fps_median, 0.0);
  EXPECT_LE(r.fps_min, r.fps_median);
  EXPECT_GE(r.fps_max, r.fps_median);
  EXPECT_EQ(r.to_json()["device"], "test-device");
  try {
    measure_speed([] {}, "x", 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
  EXPECT_FALSE(device_descriptor().empty());
}

TEST(Ablation, TableOrderingRule) {
  AblationTable t;
  t.rows = {{"L1", {3.0, 3.2}, 3.1, 0.2, 0.1},
            {"L1+cyc", {2.0, 2.1}, 2.05, 0.1, 0.05},
            {"L1+cyc+D", {1.0, 1.05}, 1.025, 0.05, 0.025}};
  EXPECT_TRUE(t.ordered());
  t.rows[1].spread = 2.0;  // gap 1.05 no longer exceeds the spread
  EXPECT_FALSE(t.ordered());
  t.rows[1].spread = 0.1;
  t.rows[2].mean = 2.5;
  EXPECT_FALSE(t.ordered());
}

TEST(Ablation, NeedsTwoSeeds) {
  test::TempDir dir("abl");
  const auto ds = test::synthetic(dir.path(), 2, 3);
  try {
    run_ablation_table3(ds, {1}, test::tiny_ulc_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(Ablation, IdenticalSeedsGiveIdenticalTables) {
  test::TempDir dir("abl2");
  const auto ds = test::synthetic(dir.path(), 3, 3);
  auto cfg = test::tiny_ulc_config();
  cfg.epochs = 2;
  const auto a = run_ablation_table3(ds, {4, 5}, cfg);
  const auto b = run_ablation_table3(ds, {4, 5}, cfg);
  EXPECT_EQ(a.to_json(), b.to_json());
  ASSERT_EQ(a.rows.size(), 3u);
  EXPECT_EQ(a.rows[0].name, "L1");
}
