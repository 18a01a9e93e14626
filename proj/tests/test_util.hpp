#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "reenact/data.hpp"
#include "reenact/landmark.hpp"
#include "reenact/train.hpp"

namespace reenact::test {

inline Landmark random_landmark(std::mt19937_64& rng, double lo = 0.1, double hi = 0.9) {
  std::uniform_real_distribution<double> u(lo, hi);
  Landmark l;
  for (auto& p : l.points()) p = {u(rng), u(rng)};
  return l;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = tag;
    if (info) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / ("reenact_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

/// Synthetic dataset rendered into `dir`.
inline Dataset synthetic(const std::filesystem::path& dir, int identities, int expressions,
                         int poses = 1, std::uint64_t seed = 0) {
  return load_dataset(generate_synthetic_dataset({identities, expressions, poses, seed}, dir));
}

/// A converter small enough for unit tests.
inline UlcTrainConfig tiny_ulc_config() {
  UlcTrainConfig c;
  c.model.width_multiplier = 0.125;
  c.epochs = 2;
  c.batch_size = 8;
  c.checkpoint_every = 1;
  return c;
}

inline GagTrainConfig tiny_gag_config() {
  GagTrainConfig c;
  c.model.base_channels = 4;
  c.model.groups = 1;
  c.model.blocks_per_group = 1;
  c.model.image_size = 32;
  c.model.disc_base_channels = 4;
  c.model.disc_layers = 2;
  c.epochs = 2;
  c.batch_size = 2;
  return c;
}

inline double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a - b).abs().max().item<double>();
}

}  // namespace reenact::test
