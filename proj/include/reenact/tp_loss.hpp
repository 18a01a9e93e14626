#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "reenact/data.hpp"
#include "reenact/image.hpp"
#include "reenact/landmark.hpp"

namespace reenact {

class Dataset;

/// Frozen feature network kappa mapping [B, 3, H, W] images to [B, D] features.
class PerceptualExtractor {
 public:
  virtual ~PerceptualExtractor() = default;
  /// Spatial activations [B, C, h, w]; features() flattens them.
  virtual torch::Tensor feature_map(const torch::Tensor& images) const = 0;
  torch::Tensor features(const torch::Tensor& images) const { return feature_map(images).flatten(1); }
  virtual std::string name() const = 0;
};

/// kappa = identity on pixels. Needs no weight file.
class PixelExtractor final : public PerceptualExtractor {
 public:
  torch::Tensor feature_map(const torch::Tensor& images) const override;
  std::string name() const override { return "pixel"; }
};

/// VGG-style stack: per stage, `convs_per_stage` 3x3 convs + ReLU, then 2x2
/// max pooling. Features are the flattened activations after stage
/// `feature_stage` (1-based). Parameters never receive gradients.
class ConvFeatureExtractor final : public PerceptualExtractor {
 public:
  struct Shape {
    std::vector<std::int64_t> stage_channels{64, 128, 256, 512};
    std::int64_t convs_per_stage = 2;
    std::int64_t feature_stage = 3;
  };

  /// Deterministic N(0, sqrt(2 / fan_in)) weights drawn from `seed`.
  ConvFeatureExtractor(const Shape& shape, std::uint64_t seed);
  /// Weight file: versioned container (see checkpoint.hpp) of kind "extractor".
  static std::unique_ptr<ConvFeatureExtractor> load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  torch::Tensor feature_map(const torch::Tensor& images) const override;
  std::string name() const override { return "conv"; }
  const Shape& shape() const noexcept { return shape_; }

 private:
  explicit ConvFeatureExtractor(const Shape& shape);

  Shape shape_;
  mutable torch::nn::Sequential net_{nullptr};
};

struct PerceptualOptions {
  /// Divide features by sqrt(D) before the distance so the margin does not
  /// depend on the feature size.
  bool normalize_by_dimension = true;
  /// Squared instead of plain Euclidean distance.
  bool squared = false;
};

/// Per-sample distance D(kappa(a), kappa(b)); inputs [B, 3, H, W] or [3, H, W].
torch::Tensor perceptual_distance(const torch::Tensor& a, const torch::Tensor& b,
                                  const PerceptualExtractor& kappa,
                                  const PerceptualOptions& options = {});
double perceptual_distance(const FaceImage& a, const FaceImage& b,
                           const PerceptualExtractor& kappa, const PerceptualOptions& options = {});

inline constexpr double kDefaultTripletMargin = 0.3;

/// [margin + D(a, p) - D(a, n)]_+ averaged over the batch.
torch::Tensor tp_loss(const torch::Tensor& anchor, const torch::Tensor& positive,
                      const torch::Tensor& negative, const PerceptualExtractor& kappa,
                      double margin = kDefaultTripletMargin,
                      const PerceptualOptions& options = {});
double tp_loss(const FaceImage& anchor, const FaceImage& positive, const FaceImage& negative,
               const PerceptualExtractor& kappa, double margin = kDefaultTripletMargin,
               const PerceptualOptions& options = {});

/// Identities and expressions behind one triplet:
///   anchor   = G(L^[T, n2], I[T, n1])
///   positive = G(L^[T, n3], I[T, n2])
///   negative = G(L^[R, n2], I[R, n3])
/// L^[X, n] is the converter's retargeting of T's expression-n landmark onto
/// X's reference landmark (X = T for the anchor and positive).
struct TripletRoles {
  std::string target;    // T
  std::string other;     // R
  std::string n1, n2, n3;
  std::string pose;
};

struct TripletInputs {
  LandmarkImage landmark;
  FaceImage reference;
};

struct TripletSpec {
  TripletRoles roles;
  TripletInputs anchor;
  TripletInputs positive;
  TripletInputs negative;
};

/// (target reference landmark, source landmark) -> converted landmark.
using LandmarkConverter = std::function<Landmark(const Landmark&, const Landmark&)>;

/// Role-only draw; no files are read. Throws a config error when the dataset
/// lacks two identities with two expressions in a shared pose.
TripletRoles sample_triplet_roles(const Dataset& dataset, std::mt19937_64& rng);

/// Full draw: rasterizes the landmarks and loads the reference images.
TripletSpec sample_triplet(const Dataset& dataset, std::mt19937_64& rng,
                           const LandmarkConverter& converter,
                           int raster_resolution = kLandmarkRasterSize);
/// Landmarks (already converted) and reference-image keys of the anchor,
/// positive and negative, in that order.
struct TripletSources {
  std::array<Landmark, 3> landmarks;
  std::array<SampleKey, 3> references;
};
TripletSources triplet_sources(const Dataset& dataset, const TripletRoles& roles,
                               const LandmarkConverter& converter);

/// Builds the inputs for already drawn roles.
TripletSpec triplet_inputs(const Dataset& dataset, const TripletRoles& roles,
                           const LandmarkConverter& converter,
                           int raster_resolution = kLandmarkRasterSize);

/// True when the roles satisfy T != R, n2 != n3 and all keys exist in the dataset.
bool triplet_roles_valid(const Dataset& dataset, const TripletRoles& roles);

}  // namespace reenact
