#include <cmath>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "reenact/checkpoint.hpp"
#include "reenact/error.hpp"
#include "reenact/nn.hpp"
#include "reenact/train.hpp"
#include "test_util.hpp"

using namespace reenact;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST(Holdout, CellsAreNonReferenceAndSpreadOverIdentities) {
  test::TempDir dir("holdout");
  const auto ds = test::synthetic(dir.path(), 6, 8);
  const auto split = make_holdout_split(ds, 0.25, 0);
  std::map<std::string, int> per_id;
  std::set<std::string> exprs;
  for (const auto& k : split.held_out) {
    EXPECT_NE(k.expression, ds.reference_expression());
    ++per_id[k.identity];
    exprs.insert(k.expression);
  }
  EXPECT_EQ(per_id.size(), 6u);
  for (const auto& [id, n] : per_id) EXPECT_EQ(n, 2) << id;
  EXPECT_GE(exprs.size(), 6u);
  EXPECT_EQ(split.held_out, make_holdout_split(ds, 0.25, 0).held_out);
  EXPECT_TRUE(make_holdout_split(ds, 0.0, 0).held_out.empty());
  EXPECT_THROW(make_holdout_split(ds, 1.0, 0), Error);
}

TEST(Holdout, TrainingTuplesNeverTouchHeldOutLandmarks) {
  test::TempDir dir("tuples");
  const auto ds = test::synthetic(dir.path(), 4, 5);
  const auto split = make_holdout_split(ds, 0.25, 1);
  const auto tuples = ulc_training_tuples(ds, split);
  ASSERT_FALSE(tuples.empty());
  int supervised = 0;
  for (const auto& t : tuples) {
    EXPECT_NE(t.target, t.source);
    EXPECT_FALSE(split.contains({t.source, t.expression, t.pose}));
    EXPECT_EQ(t.supervised, !split.contains({t.target, t.expression, t.pose}));
    supervised += t.supervised;
  }
  EXPECT_GT(supervised, 0);
  EXPECT_LT(supervised, static_cast<int>(tuples.size()));
}

TEST(TrainUlc, ZeroEpochsKeepsInitialization) {
  test::TempDir dir("ulc0");
  const auto ds = test::synthetic(dir / "data", 2, 3);
  auto cfg = test::tiny_ulc_config();
  cfg.epochs = 0;
  cfg.standardize_inputs = false;
  const auto r = train_ulc(ds, cfg, {dir / "out"});
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(line_count(dir / "out/metrics.jsonl"), 0u);
  const auto fresh = UlcState::fresh(cfg);
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(dir / "out/ulc.ckpt")),
            serialize_checkpoint(fresh.to_checkpoint()));
}

TEST(TrainUlc, StandardizerFitsTrainingLandmarksAndKeepsIdentity) {
  test::TempDir dir("ulc_std");
  const auto ds = test::synthetic(dir / "data", 3, 4);
  auto cfg = test::tiny_ulc_config();
  cfg.epochs = 0;
  train_ulc(ds, cfg, {dir / "out"});
  auto ulc = load_ulc(dir / "out/ulc.ckpt");

  const auto split = make_holdout_split(ds, cfg.holdout_fraction, cfg.holdout_seed);
  std::vector<double> mean(kLandmarkScalars, 0.0);
  std::vector<std::vector<double>> rows;
  for (const auto& r : ds.manifest().records) {
    if (split.contains(r.key)) continue;
    const auto flat = ds.landmark(r.key).flat();
    rows.emplace_back(flat.begin(), flat.end());
    for (std::size_t i = 0; i < kLandmarkScalars; ++i) mean[i] += flat[i];
  }
  for (auto& m : mean) m /= static_cast<double>(rows.size());
  double sq = 0;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < kLandmarkScalars; ++i) sq += (row[i] - mean[i]) * (row[i] - mean[i]);
  }
  const double scale = 1.0 / std::sqrt(sq / static_cast<double>(rows.size() * kLandmarkScalars));
  const auto m = ulc->standardize->mean.to(torch::kFloat64);
  for (std::size_t i = 0; i < kLandmarkScalars; ++i) {
    EXPECT_NEAR(m[static_cast<std::int64_t>(i)].item<double>(), mean[i], 1e-6);
  }
  EXPECT_NEAR(ulc->standardize->scale.item<double>(), scale, 1e-4 * scale);

  const auto a = ds.landmark({"id00", "neutral", ds.poses()[0]});
  const auto b = ds.landmark({"id01", "happy", ds.poses()[0]});
  torch::NoGradGuard guard;
  const auto ta = landmark_tensor(a).unsqueeze(0);
  EXPECT_TRUE(torch::equal(ulc->forward(ta, landmark_tensor(b).unsqueeze(0)), ta));
}

TEST(TrainUlc, DeterministicLogsAndCheckpoints) {
  test::TempDir dir("ulc_det");
  const auto ds = test::synthetic(dir / "data", 3, 3);
  auto cfg = test::tiny_ulc_config();
  cfg.seed = 11;
  const auto a = train_ulc(ds, cfg, {dir / "a"});
  const auto b = train_ulc(ds, cfg, {dir / "b"});
  EXPECT_EQ(a.log, b.log);
  EXPECT_EQ(bytes_of(dir / "a/ulc.ckpt"), bytes_of(dir / "b/ulc.ckpt"));
  EXPECT_EQ(bytes_of(dir / "a/metrics.jsonl"), bytes_of(dir / "b/metrics.jsonl"));
  EXPECT_EQ(line_count(dir / "a/metrics.jsonl"), 2u);
  for (const char* key : {"epoch", "lr", "l1", "cycle", "adv_gen", "disc", "total", "heldout_ace"}) {
    EXPECT_TRUE(a.log.back().contains(key)) << key;
  }
  cfg.seed = 12;
  EXPECT_NE(train_ulc(ds, cfg).log, a.log);
}

TEST(TrainUlc, CheckpointRoundTripIsByteStable) {
  test::TempDir dir("ulc_rt");
  const auto ds = test::synthetic(dir / "data", 2, 3);
  train_ulc(ds, test::tiny_ulc_config(), {dir / "out"});
  const auto bytes = bytes_of(dir / "out/ulc.ckpt");
  const auto state = UlcState::from_checkpoint(deserialize_checkpoint(bytes));
  EXPECT_EQ(serialize_checkpoint(state.to_checkpoint()), bytes);
  EXPECT_EQ(state.epoch, 2u);
  auto ulc = load_ulc(dir / "out/ulc.ckpt");
  EXPECT_EQ(parameter_hash(*ulc), parameter_hash(*state.ulc));
  EXPECT_THROW(load_generator(dir / "out/ulc.ckpt"), Error);
}

TEST(TrainUlc, DeskRunReducesHeldOutAce) {
  test::TempDir dir("ulc_desk");
  const auto ds = test::synthetic(dir / "data", 4, 8);
  auto cfg = test::tiny_ulc_config();
  cfg.model.width_multiplier = 0.25;
  cfg.epochs = 50;
  cfg.seed = 3;
  cfg.checkpoint_every = 0;
  const auto r = train_ulc(ds, cfg);
  ASSERT_EQ(r.log.size(), 50u);
  EXPECT_LT(r.log.back()["heldout_ace"].get<double>(), r.log.front()["heldout_ace"].get<double>());
}

TEST(TrainUlc, DivergenceKeepsLastGoodCheckpoint) {
  test::TempDir dir("ulc_div");
  const auto ds = test::synthetic(dir / "data", 2, 3);
  auto cfg = test::tiny_ulc_config();
  cfg.epochs = 50;
  cfg.adam.lr = 1e30;
  try {
    train_ulc(ds, cfg, {dir / "out"});
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::divergence);
  }
  auto ulc = load_ulc(dir / "out/ulc.ckpt");
  EXPECT_NO_THROW(check_finite_parameters(*ulc, "converter"));
}

TEST(TrainUlc, NeedsTwoIdentities) {
  test::TempDir dir("ulc_one");
  const auto ds = test::synthetic(dir / "data", 1, 3);
  try {
    train_ulc(ds, test::tiny_ulc_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(TrainGag, FrozenConverterAndDecreasingPixelLoss) {
  test::TempDir dir("gag");
  const auto ds = test::synthetic(dir / "data", 2, 3);
  auto ulc_run = train_ulc(ds, test::tiny_ulc_config());
  auto ulc = ulc_run.state.ulc;
  const auto before = parameter_hash(*ulc);
  auto cfg = test::tiny_gag_config();
  cfg.epochs = 12;
  const auto r = train_gag(ds, ulc, cfg, {dir / "out"});
  EXPECT_EQ(parameter_hash(*ulc), before);
  EXPECT_EQ(r.ulc_hash_before, r.ulc_hash_after);
  for (const auto& p : ulc->parameters()) EXPECT_FALSE(p.requires_grad());
  ASSERT_EQ(r.log.size(), 12u);
  EXPECT_LT(r.log.back()["pixel"].get<double>(), r.log.front()["pixel"].get<double>());
  for (const char* key : {"epoch", "lr", "pixel", "adv_gen", "disc", "tp", "total"}) {
    EXPECT_TRUE(r.log.back().contains(key)) << key;
  }
  EXPECT_EQ(line_count(dir / "out/metrics.jsonl"), 12u);

  const auto bytes = bytes_of(dir / "out/gag.ckpt");
  const auto state = GagState::from_checkpoint(deserialize_checkpoint(bytes));
  EXPECT_EQ(serialize_checkpoint(state.to_checkpoint()), bytes);
  EXPECT_EQ(state.ulc_hash, r.ulc_hash_before);
}

TEST(TrainGag, DeterministicAndTpAblationPath) {
  test::TempDir dir("gag_det");
  const auto ds = test::synthetic(dir / "data", 2, 3);
  auto ulc = train_ulc(ds, test::tiny_ulc_config()).state.ulc;
  auto cfg = test::tiny_gag_config();
  cfg.seed = 4;
  const auto a = train_gag(ds, ulc, cfg, {dir / "a"});
  const auto b = train_gag(ds, ulc, cfg, {dir / "b"});
  EXPECT_EQ(a.log, b.log);
  EXPECT_EQ(bytes_of(dir / "a/gag.ckpt"), bytes_of(dir / "b/gag.ckpt"));

  cfg.weights.lambda_tp = 0;
  const auto c = train_gag(ds, ulc, cfg, {dir / "c"});
  EXPECT_TRUE(c.log.back()["tp"].is_null());
  auto gen = load_generator(dir / "c/gag.ckpt");
  EXPECT_NO_THROW(check_finite_parameters(*gen, "generator"));
}

TEST(TrainGag, ConvExtractorRuns) {
  test::TempDir dir("gag_conv");
  const auto ds = test::synthetic(dir / "data", 2, 3);
  auto ulc = train_ulc(ds, test::tiny_ulc_config()).state.ulc;
  auto cfg = test::tiny_gag_config();
  cfg.epochs = 1;
  cfg.extractor = "conv";
  const auto r = train_gag(ds, ulc, cfg);
  EXPECT_TRUE(std::isfinite(r.log.back()["tp"].get<double>()));
}
