#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "reenact/error.hpp"
#include "reenact/gag.hpp"
#include "reenact/nn.hpp"
#include "test_util.hpp"

using namespace reenact;

namespace {

GagConfig small_config() {
  GagConfig c;
  c.base_channels = 6;
  c.groups = 3;
  c.blocks_per_group = 1;
  c.image_size = 32;
  c.disc_base_channels = 8;
  return c;
}

}  // namespace

TEST(Gag, DefaultParameterCountNearAnchor) {
  Generator gen;
  const auto n = count_parameters(*gen);
  EXPECT_NEAR(static_cast<double>(n), 17.3e6, 0.2 * 17.3e6);
}

TEST(Gag, OutputShapeAndRange) {
  torch::manual_seed(1);
  Generator gen(small_config());
  const auto out = gen->forward(torch::rand({2, 3, 32, 32}) * 2 - 1, torch::rand({2, 1, 8, 8}));
  EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{2, 3, 32, 32}));
  EXPECT_LE(out.max().item<float>(), 1.0f);
  EXPECT_GE(out.min().item<float>(), -1.0f);
}

TEST(Gag, DefaultResolutionContract) {
  torch::manual_seed(2);
  GagConfig c;
  c.base_channels = 4;
  c.groups = 1;
  c.blocks_per_group = 1;
  Generator gen(c);
  std::mt19937_64 rng(2);
  const auto out = generate(FaceImage::filled(0.0f), rasterize(test::random_landmark(rng)), gen);
  EXPECT_EQ(out.height(), 256);
  EXPECT_EQ(out.width(), 256);
}

TEST(Gag, LandmarkPathReachesOutput) {
  torch::manual_seed(3);
  Generator gen(small_config());
  gen->eval();
  torch::NoGradGuard g;
  const auto ref = torch::rand({1, 3, 32, 32}) * 2 - 1;
  auto lm = torch::zeros({1, 1, 8, 8});
  const auto a = gen->forward(ref, lm);
  lm[0][0][3][4] = 1.0;
  const auto b = gen->forward(ref, lm);
  EXPECT_GT((a - b).abs().max().item<float>(), 0.0f);
}

TEST(Gag, PixelLossOracles) {
  torch::manual_seed(4);
  const auto a = torch::rand({3, 16, 16}, torch::kFloat64) * 2 - 1;
  EXPECT_EQ(pixel_loss(a, a).item<double>(), 0.0);
  EXPECT_NEAR(pixel_loss(a, a + 0.1).item<double>(), 0.1, 1e-12);
  for (int i = 0; i < 100; ++i) {
    const auto x = torch::rand({3, 16, 16}, torch::kFloat64);
    const auto y = torch::rand({3, 16, 16}, torch::kFloat64);
    const auto z = torch::rand({3, 16, 16}, torch::kFloat64);
    double sum = 0;
    auto ax = x.accessor<double, 3>(), ay = y.accessor<double, 3>();
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 16; ++r)
        for (int k = 0; k < 16; ++k) sum += std::fabs(ax[c][r][k] - ay[c][r][k]);
    const double d = pixel_loss(x, y).item<double>();
    EXPECT_NEAR(d, sum / (3 * 16 * 16), 1e-10);
    EXPECT_EQ(d, pixel_loss(y, x).item<double>());
    EXPECT_LE(d, pixel_loss(x, z).item<double>() + pixel_loss(z, y).item<double>() + 1e-15);
  }
  EXPECT_THROW(pixel_loss(torch::zeros({3, 4, 4}), torch::zeros({3, 4, 5})), Error);
}

TEST(Gag, AdversarialLossClosedForm) {
  const auto half = torch::full({2, 1, 6, 6}, 0.5, torch::kFloat64);
  const auto t = adversarial_terms(half, half);
  EXPECT_NEAR(t.disc_loss.item<double>(), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(t.gen_term.item<double>(), std::log(2.0), 1e-12);

  torch::manual_seed(5);
  PatchDiscriminator disc(small_config());
  disc->to(torch::kFloat64);
  const auto real = torch::rand({2, 3, 32, 32}, torch::kFloat64);
  const auto fake = torch::rand({2, 3, 32, 32}, torch::kFloat64);
  const auto terms = gag_adv_loss(real, fake, disc);
  const auto pr = disc->forward(real), pf = disc->forward(fake);
  EXPECT_GT(pr.size(2), 1);
  const double disc_expected =
      -(torch::log(pr).mean().item<double>() + torch::log(1 - pf).mean().item<double>());
  EXPECT_NEAR(terms.disc_loss.item<double>(), disc_expected, 1e-12);
  EXPECT_NEAR(terms.gen_term.item<double>(), -torch::log(pf).mean().item<double>(), 1e-12);
}

TEST(Gag, ConditionalDiscriminatorUsesRaster) {
  auto c = small_config();
  c.disc_conditional = true;
  torch::manual_seed(6);
  PatchDiscriminator disc(c);
  const auto img = torch::rand({1, 3, 32, 32});
  const auto a = disc->forward(img, torch::zeros({1, 1, 8, 8}));
  const auto b = disc->forward(img, torch::ones({1, 1, 8, 8}));
  EXPECT_GT((a - b).abs().max().item<float>(), 0.0f);
}

TEST(Gag, TotalLossArithmetic) {
  const GagLossWeights w;
  EXPECT_NEAR(gag_total_loss(1.0, 1.0, 1.0, w), 101.1, 1e-12);
  EXPECT_EQ(gag_total_loss(0.0, 0.0, 0.0, w), 0.0);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 3);
  for (int i = 0; i < 100; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng);
    EXPECT_NEAR(gag_total_loss(a, b, c, w), 100 * a + b + 0.1 * c, 1e-12);
  }
}

TEST(Gag, ConfigJsonRoundTripAndRejectsUnknownKeys) {
  auto c = small_config();
  EXPECT_EQ(GagConfig::from_json(c.to_json()), c);
  auto j = c.to_json();
  j["bogus"] = 1;
  try {
    GagConfig::from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}
