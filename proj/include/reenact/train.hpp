#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "reenact/checkpoint.hpp"
#include "reenact/data.hpp"
#include "reenact/gag.hpp"
#include "reenact/tp_loss.hpp"
#include "reenact/ulc.hpp"

namespace reenact {

/// lr0 * 10^-floor(epoch / decay_every).
double lr_schedule(double lr0, std::int64_t decay_every, std::int64_t epoch);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.99;
  double beta2 = 0.999;
  std::int64_t decay_every = 300;
};

struct UlcTrainConfig {
  UlcConfig model;
  UlcLossWeights weights;
  /// Weights of the two generator adversarial terms inside L_D.
  double d_tf_weight = 1.0;
  double d_s_weight = 1.0;
  AdamConfig adam{3e-4, 0.99, 0.999, 300};
  std::int64_t epochs = 1000;
  std::int64_t batch_size = 16;
  /// Share of (identity, non-reference expression) cells withheld from
  /// training entirely; held-out ACE is measured on them.
  double holdout_fraction = 0.25;
  std::uint64_t holdout_seed = 0;
  std::uint64_t seed = 0;
  /// Save every N epochs (0: only the initial and final states).
  std::int64_t checkpoint_every = 1;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  /// Fit the converter's and discriminators' input standardizers to the
  /// training landmarks before the first epoch.
  bool standardize_inputs = true;

  nlohmann::json to_json() const;
  static UlcTrainConfig from_json(const nlohmann::json& j);
};

struct GagTrainConfig {
  GagConfig model;
  GagLossWeights weights;
  AdamConfig adam{2e-4, 0.5, 0.999, 120};
  std::int64_t epochs = 400;
  std::int64_t batch_size = 4;
  double margin = kDefaultTripletMargin;
  std::int64_t triplets_per_step = 1;
  PerceptualOptions perceptual;
  /// "pixel" for the identity extractor, "conv" for the seeded VGG-style
  /// network, or a path to an extractor weight file.
  std::string extractor = "pixel";
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 1;
  double grad_clip = 0.0;

  nlohmann::json to_json() const;
  static GagTrainConfig from_json(const nlohmann::json& j);
};

std::unique_ptr<PerceptualExtractor> make_extractor(const std::string& spec, std::uint64_t seed);

/// Cell split shared by ULC training and evaluation.
struct HoldoutSplit {
  std::vector<SampleKey> held_out;
  bool contains(const SampleKey& key) const;
};
HoldoutSplit make_holdout_split(const Dataset& dataset, double fraction, std::uint64_t seed);

/// One converter training tuple (T, S, n, pose).
struct UlcTuple {
  std::string target, source, expression, pose;
  bool supervised = false;  // l[T, n] observed and not held out
};
std::vector<UlcTuple> ulc_training_tuples(const Dataset& dataset, const HoldoutSplit& split);

/// Mean ACE of convert(l[T, r], l[S, n]) against l[T, n] over the held-out
/// cells (T, n) and every source S != T that performs n in the same pose.
double heldout_ace(const Dataset& dataset, const HoldoutSplit& split, UlcImpl& ulc);

/// Complete phase-1 state: converter, discriminators, optimizers, epoch.
struct UlcState {
  UlcTrainConfig config;
  Ulc ulc{nullptr};
  UlcDiscriminators disc{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_gen;
  std::unique_ptr<torch::optim::Adam> opt_disc;
  std::uint64_t epoch = 0;

  /// Seeds torch's generator with config.seed, then builds fresh modules.
  static UlcState fresh(const UlcTrainConfig& config);
  static UlcState from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint() const;
};

struct GagState {
  GagTrainConfig config;
  Generator generator{nullptr};
  PatchDiscriminator disc{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_gen;
  std::unique_ptr<torch::optim::Adam> opt_disc;
  std::uint64_t epoch = 0;
  std::string ulc_hash;

  static GagState fresh(const GagTrainConfig& config);
  static GagState from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint() const;
};

/// Inference-only loads.
Ulc load_ulc(const std::filesystem::path& path);
Generator load_generator(const std::filesystem::path& path);

struct TrainOutput {
  /// Checkpoint and metrics.jsonl go here; empty keeps everything in memory.
  std::filesystem::path dir;
  /// Called after every epoch with that epoch's log record.
  std::function<void(const nlohmann::json&)> on_epoch;
};

inline constexpr const char* kUlcCheckpointName = "ulc.ckpt";
inline constexpr const char* kGagCheckpointName = "gag.ckpt";
inline constexpr const char* kMetricsLogName = "metrics.jsonl";

struct UlcTrainResult {
  UlcState state;
  std::vector<nlohmann::json> log;
};

/// Phase 1. One discriminator step then one converter step per batch. Each
/// log record holds the epoch, lr, mean loss terms and held-out ACE. A
/// non-finite loss throws a divergence error; the last saved checkpoint stays.
UlcTrainResult train_ulc(const Dataset& dataset, const UlcTrainConfig& config,
                         const TrainOutput& output = {});

struct GagTrainResult {
  GagState state;
  std::vector<nlohmann::json> log;
  std::string ulc_hash_before;
  std::string ulc_hash_after;
};

/// Phase 2 with a frozen converter. Throws if the converter changes.
GagTrainResult train_gag(const Dataset& dataset, Ulc& ulc, const GagTrainConfig& config,
                         const TrainOutput& output = {});

/// Dataset image at `size` x `size` (area-averaged when smaller than stored).
torch::Tensor load_face_tensor(const Dataset& dataset, const SampleKey& key, std::int64_t size);

/// Frozen converter as a LandmarkConverter callback.
LandmarkConverter converter_of(Ulc& ulc);

}  // namespace reenact
