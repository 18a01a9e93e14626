#include <fstream>

#include <gtest/gtest.h>

#include "reenact/checkpoint.hpp"
#include "reenact/config.hpp"
#include "reenact/error.hpp"
#include "reenact/train.hpp"
#include "test_util.hpp"

using namespace reenact;

TEST(FlatConfig, ParsesTypedDottedKeys) {
  const auto j = parse_flat_config(R"(
# comment
ulc.epochs = 50
ulc.adam.lr = 3e-4   # trailing
gag.extractor = conv
gag.model.disc_conditional = true
ablation.seeds = [1, 2, 3]
name = "quoted # not a comment"
)");
  EXPECT_EQ(j["ulc"]["epochs"], 50);
  EXPECT_DOUBLE_EQ(j["ulc"]["adam"]["lr"].get<double>(), 3e-4);
  EXPECT_EQ(j["gag"]["extractor"], "conv");
  EXPECT_EQ(j["gag"]["model"]["disc_conditional"], true);
  EXPECT_EQ(j["ablation"]["seeds"], nlohmann::json::array({1, 2, 3}));
  EXPECT_EQ(j["name"], "quoted # not a comment");
  EXPECT_EQ(parse_flat_config(format_flat_config(j)), j);
}

TEST(FlatConfig, Errors) {
  for (const char* bad : {"novalue", "= 3", "a.b = 1\na.b.c = 2"}) {
    try {
      parse_flat_config(bad, "t.cfg");
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::config);
    }
  }
  try {
    read_flat_config("/nonexistent/x.cfg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(FlatConfig, OverridesLayerOnTop) {
  auto j = parse_flat_config("ulc.epochs = 50\n");
  apply_override(j, "ulc.epochs=7");
  apply_override(j, "gag.margin = 0.5");
  EXPECT_EQ(j["ulc"]["epochs"], 7);
  EXPECT_EQ(j["gag"]["margin"], 0.5);
  EXPECT_THROW(apply_override(j, "missing_equals"), Error);
}

TEST(TrainConfig, DefaultsMatchPaperSchedule) {
  const UlcTrainConfig u;
  EXPECT_EQ(u.adam.lr, 3e-4);
  EXPECT_EQ(u.adam.beta1, 0.99);
  EXPECT_EQ(u.adam.beta2, 0.999);
  EXPECT_EQ(u.adam.decay_every, 300);
  EXPECT_EQ(u.epochs, 1000);
  EXPECT_EQ(u.batch_size, 16);
  EXPECT_EQ(u.weights.lambda1, 100);
  EXPECT_EQ(u.weights.lambda2, 10);
  EXPECT_EQ(u.weights.lambda3, 0.1);
  const GagTrainConfig g;
  EXPECT_EQ(g.adam.lr, 2e-4);
  EXPECT_EQ(g.adam.beta1, 0.5);
  EXPECT_EQ(g.adam.decay_every, 120);
  EXPECT_EQ(g.epochs, 400);
  EXPECT_EQ(g.batch_size, 4);
  EXPECT_EQ(g.margin, 0.3);
  EXPECT_EQ(g.weights.lambda_pix, 100);
  EXPECT_EQ(g.weights.lambda_adv, 1);
  EXPECT_EQ(g.weights.lambda_tp, 0.1);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  auto u = test::tiny_ulc_config();
  EXPECT_EQ(UlcTrainConfig::from_json(u.to_json()).to_json(), u.to_json());
  auto g = test::tiny_gag_config();
  EXPECT_EQ(GagTrainConfig::from_json(g.to_json()).to_json(), g.to_json());

  for (const char* text : {"adam.lr = -1", "epochs = -1", "unknown = 1", "epochs = 2.5",
                           "batch_size = \"x\""}) {
    try {
      UlcTrainConfig::from_json(parse_flat_config(text));
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::config) << text;
    }
  }
  EXPECT_THROW(GagTrainConfig::from_json(parse_flat_config("margin = -0.1")), Error);
  EXPECT_THROW(make_extractor("/no/such/file", 0), Error);
  EXPECT_EQ(make_extractor("pixel", 0)->name(), "pixel");
}

TEST(LrSchedule, ExactDecay) {
  EXPECT_EQ(lr_schedule(3e-4, 300, 0), 3e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(3e-4, 300, 300), 3e-5);
  EXPECT_DOUBLE_EQ(lr_schedule(3e-4, 300, 299), 3e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(2e-4, 120, 399), 2e-7);
  for (int e = 0; e < 1000; ++e) {
    EXPECT_DOUBLE_EQ(lr_schedule(1.0, 7, e), std::pow(10.0, -(e / 7)));
  }
}

TEST(Checkpoint, RoundTripIsByteStable) {
  test::TempDir dir("ckpt");
  Checkpoint c;
  c.kind = "test";
  c.config = {{"a", 1}, {"b", {{"c", "x"}}}};
  c.config_hash = config_hash(c.config);
  c.epoch = 12;
  c.sections.push_back({"s", {{"w", torch::rand({3, 4})}, {"d", torch::rand({2}, torch::kFloat64)},
                              {"i", torch::arange(5)}}});
  const auto bytes = serialize_checkpoint(c);
  const auto back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.kind, "test");
  EXPECT_EQ(back.epoch, 12u);
  EXPECT_TRUE(torch::equal(back.section("s").tensors[0].value, c.sections[0].tensors[0].value));
  EXPECT_EQ(serialize_checkpoint(back), bytes);

  save_checkpoint(dir / "c.ckpt", c);
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(dir / "c.ckpt", "test")), bytes);
  EXPECT_THROW(load_checkpoint(dir / "c.ckpt", "ulc"), Error);
  EXPECT_THROW(back.section("nope"), Error);

  auto corrupt = bytes;
  corrupt[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(corrupt), Error);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(deserialize_checkpoint(truncated), Error);
}

TEST(Checkpoint, ConfigHashIsValidated) {
  Checkpoint c;
  c.kind = "test";
  c.config = {{"a", 1}};
  c.config_hash = "0000000000000000";
  EXPECT_THROW(deserialize_checkpoint(serialize_checkpoint(c)), Error);
}
