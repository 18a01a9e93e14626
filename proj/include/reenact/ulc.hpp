#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "reenact/landmark.hpp"
#include "reenact/nn.hpp"

namespace reenact {

/// Unified landmark converter shape. Base widths are 212 -> 512 -> 512 -> 256
/// per encoder and 512 -> 512 -> 512 -> 212 for the shift decoder; every hidden
/// width is scaled by `width_multiplier`. The default multiplier puts the
/// converter at about 4.6M trainable scalars.
struct UlcConfig {
  double width_multiplier = 1.75;
  double leaky_slope = 0.2;

  std::vector<std::int64_t> encoder_widths() const;
  std::vector<std::int64_t> decoder_widths() const;

  nlohmann::json to_json() const;
  static UlcConfig from_json(const nlohmann::json& j);
  friend bool operator==(const UlcConfig&, const UlcConfig&) = default;
};

struct UlcLossWeights {
  double lambda1 = 100.0;  // point-wise L1
  double lambda2 = 10.0;   // cycle
  double lambda3 = 0.1;    // adversarial (both discriminators)
};

/// Fully connected stack with leaky-rectifier activations after every hidden
/// layer. With `out_features > 0` a final linear layer (no activation) is appended.
class MlpImpl : public torch::nn::Module {
 public:
  MlpImpl(std::int64_t in_features, const std::vector<std::int64_t>& hidden,
          std::int64_t out_features, double leaky_slope);

  torch::Tensor forward(const torch::Tensor& x) { return layers->forward(x); }

  /// Last linear layer of the stack.
  torch::nn::Linear last_linear() const;

  torch::nn::Sequential layers{nullptr};

 private:
  torch::nn::Linear last_{nullptr};
};
TORCH_MODULE(Mlp);

/// Fixed affine map applied to landmark vectors before a network sees them:
/// (x - mean) * scale. Starts as the identity; training sets it from the
/// training landmarks. Not trainable.
class LandmarkStandardizerImpl : public torch::nn::Module {
 public:
  LandmarkStandardizerImpl();
  torch::Tensor forward(const torch::Tensor& x) { return (x - mean) * scale; }
  /// Per-coordinate mean and one global scale (inverse RMS deviation) of `rows` [N, 212].
  void fit(const torch::Tensor& rows);
  void copy_from(const LandmarkStandardizerImpl& other);

  torch::Tensor mean;
  torch::Tensor scale;
};
TORCH_MODULE(LandmarkStandardizer);

/// psi: (target reference landmark, source landmark) -> converted landmark,
/// computed as target_ref + shift(enc_target(target_ref), enc_source(source)).
/// The decoder's final layer starts at zero, so a fresh converter returns
/// its first argument exactly.
class UlcImpl : public torch::nn::Module {
 public:
  explicit UlcImpl(const UlcConfig& config = {});

  /// Inputs are [B, 212] flattened landmarks; returns [B, 212].
  torch::Tensor forward(const torch::Tensor& target_ref, const torch::Tensor& source);
  torch::Tensor shift(const torch::Tensor& target_ref, const torch::Tensor& source);

  const UlcConfig& config() const noexcept { return config_; }

  LandmarkStandardizer standardize{nullptr};
  Mlp enc_target{nullptr};
  Mlp enc_source{nullptr};
  Mlp dec_shift{nullptr};

 private:
  UlcConfig config_;
};
TORCH_MODULE(Ulc);

/// D_TF scores a single landmark as real; D_S scores a landmark pair as
/// belonging to one identity. Both end in a sigmoid.
class UlcDiscriminatorsImpl : public torch::nn::Module {
 public:
  explicit UlcDiscriminatorsImpl(const UlcConfig& config = {});

  torch::Tensor real_fake(const torch::Tensor& landmark);
  torch::Tensor same_identity(const torch::Tensor& first, const torch::Tensor& second);

  LandmarkStandardizer standardize{nullptr};
  Mlp d_tf{nullptr};
  Mlp d_s{nullptr};
};
TORCH_MODULE(UlcDiscriminators);

torch::Tensor landmark_tensor(const Landmark& l, torch::ScalarType dtype = torch::kFloat32);
/// [212] or [1, 212] tensor back to a landmark.
Landmark landmark_from_tensor(const torch::Tensor& t);
torch::Tensor landmark_batch(const std::vector<Landmark>& ls,
                             torch::ScalarType dtype = torch::kFloat32);

/// Single-pair inference; throws a divergence error if the converter holds
/// non-finite parameters.
Landmark convert(const Landmark& target_ref, const Landmark& source, Ulc& ulc);

/// Sum of absolute coordinate differences per sample, averaged over the batch.
torch::Tensor landmark_l1(const torch::Tensor& predicted, const torch::Tensor& truth);
double ulc_l1_loss(const Landmark& predicted, const Landmark& truth);

/// || psi(source_ref, psi(target_ref, source)) - source ||_1, batch-averaged.
torch::Tensor cycle_loss(Ulc& ulc, const torch::Tensor& source_ref, const torch::Tensor& target_ref,
                         const torch::Tensor& source);
double ulc_cycle_loss(const Landmark& source_ref, const Landmark& target_ref,
                      const Landmark& source, Ulc& ulc);

AdversarialTerms d_tf_loss(const torch::Tensor& real, const torch::Tensor& fake,
                           UlcDiscriminators& disc);
/// Real pair: two genuine landmarks of one identity. Fake pair: a genuine
/// target-identity landmark and a converted one.
AdversarialTerms d_s_loss(const std::pair<torch::Tensor, torch::Tensor>& pair_real,
                          const std::pair<torch::Tensor, torch::Tensor>& pair_fake,
                          UlcDiscriminators& disc);

/// lambda1 * l1 + lambda2 * cycle + lambda3 * adversarial. Works for plain
/// reals and tensors alike.
template <class T>
T ulc_total_loss(const T& l1, const T& cycle, const T& adversarial, const UlcLossWeights& w) {
  return l1 * w.lambda1 + cycle * w.lambda2 + adversarial * w.lambda3;
}

}  // namespace reenact
