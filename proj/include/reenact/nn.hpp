#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

namespace reenact {

inline constexpr double kProbabilityEpsilon = 1e-7;

/// Discriminator objective and generator term of a log-likelihood GAN.
/// `disc_loss` is the negated discriminator objective -(log D(x) + log(1 - D(G(z))))
/// and `gen_term` the non-saturating generator loss -log D(G(z)); both are
/// averaged over every element of the probability tensors (patch grids included).
struct AdversarialTerms {
  torch::Tensor disc_loss;
  torch::Tensor gen_term;
};

AdversarialTerms adversarial_terms(const torch::Tensor& p_real, const torch::Tensor& p_fake,
                                   double eps = kProbabilityEpsilon);

std::int64_t count_parameters(const torch::nn::Module& module);

/// Throws a divergence error naming the first non-finite parameter.
void check_finite_parameters(const torch::nn::Module& module, const std::string& what);

/// FNV-1a over the raw bytes of every parameter and buffer, in registration order.
std::uint64_t parameter_hash(const torch::nn::Module& module);

std::uint64_t fnv1a(const void* data, std::size_t size,
                    std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

/// N(0, 0.02) for convolution weights, N(1, 0.02) for normalization scales,
/// zero biases. Linear layers keep the default fan-in scheme.
void init_conv_weights(torch::nn::Module& module);

void set_requires_grad(torch::nn::Module& module, bool flag);

}  // namespace reenact
