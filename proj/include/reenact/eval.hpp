#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "reenact/data.hpp"
#include "reenact/image.hpp"
#include "reenact/train.hpp"

namespace reenact {

struct SsimOptions {
  /// Compare BT.601 luma; otherwise average the per-channel SSIM.
  bool luma = true;
  int window = 11;
  double sigma = 1.5;
};

/// Gaussian-windowed SSIM on images mapped from [-1, 1] to [0, 1], averaged
/// over every fully contained window, with C1 = 0.01^2 and C2 = 0.03^2.
double ssim(const FaceImage& a, const FaceImage& b, const SsimOptions& options = {});
/// Same on [3, H, W] tensors in [-1, 1].
double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& options = {});

struct FidResult {
  double value = 0.0;
  std::vector<std::string> warnings;
};

/// Frechet distance between Gaussian fits of two [N, D] feature sets:
/// |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^1/2), with the square root taken
/// through symmetric eigendecompositions whose negative eigenvalues are
/// clipped to zero. Computed in double precision.
FidResult fid(const torch::Tensor& features_real, const torch::Tensor& features_fake);

std::int64_t count_params(const torch::nn::Module& module);
std::int64_t count_params(const std::vector<const torch::nn::Module*>& modules);

struct SpeedReport {
  std::string device;
  std::int64_t iterations = 0;
  std::int64_t warmup = 0;
  std::int64_t runs = 0;
  double fps_median = 0.0;
  double fps_min = 0.0;
  double fps_max = 0.0;
  /// Median absolute deviation of the per-run FPS values.
  double fps_mad = 0.0;

  nlohmann::json to_json() const;
};

/// Times `runs` batches of `iterations` calls after `warmup` untimed calls.
SpeedReport measure_speed(const std::function<void()>& forward, const std::string& device,
                          std::int64_t iterations, std::int64_t warmup = 3, std::int64_t runs = 5);

/// "cpu: <model name>, <n> threads".
std::string device_descriptor();

struct AblationRow {
  std::string name;
  std::vector<double> ace;  // one per seed
  double mean = 0.0;
  double spread = 0.0;  // max - min over seeds
  double stddev = 0.0;
};

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;  // {L1}, {L1+cyc}, {L1+cyc+D}

  /// ACE strictly decreasing down the rows, each gap wider than both rows' spreads.
  bool ordered() const;
  nlohmann::json to_json() const;
};

/// Trains the three converter variants (adversarial and cycle weights zeroed
/// as needed) once per seed and reports final held-out ACE.
AblationTable run_ablation_table3(const Dataset& dataset, const std::vector<std::uint64_t>& seeds,
                                  const UlcTrainConfig& base,
                                  const std::function<void(const std::string&)>& progress = {});

/// FNV-1a of a file's bytes, hex encoded.
std::string file_hash(const std::filesystem::path& path);

struct EvalOptions {
  std::string extractor = "pixel";
  std::uint64_t seed = 0;
  std::int64_t speed_iterations = 20;
  SsimOptions ssim;
};

/// Full report for a converter and generator pair on a dataset: converter
/// ACE on all cross-identity pairs, SSIM and FID of reenacted faces against
/// the ground truth, parameter counts and speed. Every metric entry carries
/// the dataset hash, checkpoint hash and device descriptor.
nlohmann::json evaluate_checkpoints(const Dataset& dataset, const std::filesystem::path& ulc_path,
                                    const std::filesystem::path& gag_path,
                                    const EvalOptions& options = {});

}  // namespace reenact
