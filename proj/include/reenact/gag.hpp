#pragma once

#include <cstdint>

#include <json.hpp>
#include <torch/torch.h>

#include "reenact/image.hpp"
#include "reenact/landmark.hpp"
#include "reenact/nn.hpp"

namespace reenact {

enum class NormKind { instance, none };

/// Geometry-aware generator and patch discriminator shape.
///
/// Generator, with C = base_channels:
///   image encoder     7x7 conv 3->C at full size, two stride-2 3x3 convs to 4C at size/4
///   landmark encoder  two 3x3 convs 1->C->4C on the size/4 raster
///   transformer       `groups` groups; each concatenates the landmark features,
///                     fuses 8C->4C with a 1x1 conv, then runs `blocks_per_group`
///                     residual blocks
///   image decoder     two stride-2 transposed convs back to C, 7x7 conv to 3, tanh
/// The default C = 77 places the generator at about 17.3M trainable scalars.
struct GagConfig {
  std::int64_t base_channels = 77;
  std::int64_t groups = 3;
  std::int64_t blocks_per_group = 3;
  std::int64_t image_size = kFaceImageSize;
  NormKind norm = NormKind::instance;
  std::int64_t disc_base_channels = 64;
  std::int64_t disc_layers = 3;
  /// Feed the landmark raster to the discriminator alongside the image.
  bool disc_conditional = false;

  std::int64_t landmark_resolution() const { return image_size / 4; }

  nlohmann::json to_json() const;
  static GagConfig from_json(const nlohmann::json& j);
  friend bool operator==(const GagConfig&, const GagConfig&) = default;
};

struct GagLossWeights {
  double lambda_pix = 100.0;
  double lambda_adv = 1.0;
  double lambda_tp = 0.1;
};

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(std::int64_t channels, NormKind norm);
  torch::Tensor forward(const torch::Tensor& x) { return x + body->forward(x); }

  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(ResBlock);

/// One transformer part: landmark-feature concatenation, 1x1 fusion, residual blocks.
class FusionGroupImpl : public torch::nn::Module {
 public:
  FusionGroupImpl(std::int64_t channels, std::int64_t blocks, NormKind norm);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& landmark_features);

  torch::nn::Sequential fuse{nullptr};
  torch::nn::Sequential blocks{nullptr};
};
TORCH_MODULE(FusionGroup);

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GagConfig& config = {});

  /// reference [B, 3, S, S] in [-1, 1], landmark raster [B, 1, S/4, S/4] in [0, 1].
  torch::Tensor forward(const torch::Tensor& reference, const torch::Tensor& landmark_image);

  const GagConfig& config() const noexcept { return config_; }

  torch::nn::Sequential enc_image{nullptr};
  torch::nn::Sequential enc_landmark{nullptr};
  torch::nn::ModuleList transformer{nullptr};
  torch::nn::Sequential dec_image{nullptr};

 private:
  GagConfig config_;
};
TORCH_MODULE(Generator);

/// PatchGAN discriminator: strided 4x4 convolutions ending in a grid of
/// per-patch real probabilities.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(const GagConfig& config = {});

  /// Returns [B, 1, h, w] probabilities. `landmark_image` is used only when
  /// the discriminator is conditional.
  torch::Tensor forward(const torch::Tensor& image, const torch::Tensor& landmark_image = {});

  torch::nn::Sequential net{nullptr};

 private:
  bool conditional_;
};
TORCH_MODULE(PatchDiscriminator);

/// Single-image inference; throws a divergence error on non-finite parameters.
FaceImage generate(const FaceImage& reference, const LandmarkImage& landmark_image,
                   Generator& generator);

/// Mean absolute difference over every scalar.
torch::Tensor pixel_loss(const torch::Tensor& generated, const torch::Tensor& truth);
double pixel_loss(const FaceImage& generated, const FaceImage& truth);

AdversarialTerms gag_adv_loss(const torch::Tensor& real, const torch::Tensor& fake,
                              PatchDiscriminator& disc, const torch::Tensor& landmark_image = {});

template <class T>
T gag_total_loss(const T& pix, const T& adv, const T& tp, const GagLossWeights& w) {
  return pix * w.lambda_pix + adv * w.lambda_adv + tp * w.lambda_tp;
}

}  // namespace reenact
