#include "reenact/nn.hpp"

#include <cstdio>

#include "reenact/error.hpp"

namespace reenact {

AdversarialTerms adversarial_terms(const torch::Tensor& p_real, const torch::Tensor& p_fake,
                                   double eps) {
  const auto real = p_real.clamp(eps, 1.0 - eps);
  const auto fake = p_fake.clamp(eps, 1.0 - eps);
  auto disc = -(torch::log(real).mean() + torch::log(1.0 - fake).mean());
  auto gen = -torch::log(fake).mean();
  return {disc, gen};
}

std::int64_t count_parameters(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

void check_finite_parameters(const torch::nn::Module& module, const std::string& what) {
  torch::NoGradGuard guard;
  for (const auto& item : module.named_parameters()) {
    if (!torch::isfinite(item.value()).all().item<bool>()) {
      fail(ErrorKind::divergence, what + ": parameter '" + item.key() + "' is not finite");
    }
  }
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t parameter_hash(const torch::nn::Module& module) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto absorb = [&](const std::string& name, const torch::Tensor& t) {
    h = fnv1a(name.data(), name.size(), h);
    auto c = t.detach().contiguous();
    h = fnv1a(c.data_ptr(), static_cast<std::size_t>(c.nbytes()), h);
  };
  for (const auto& item : module.named_parameters()) absorb(item.key(), item.value());
  for (const auto& item : module.named_buffers()) absorb(item.key(), item.value());
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

void init_conv_weights(torch::nn::Module& module) {
  torch::NoGradGuard guard;
  for (auto& m : module.modules(/*include_self=*/false)) {
    if (auto* conv = m->as<torch::nn::Conv2d>()) {
      conv->weight.normal_(0.0, 0.02);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* convt = m->as<torch::nn::ConvTranspose2d>()) {
      convt->weight.normal_(0.0, 0.02);
      if (convt->bias.defined()) convt->bias.zero_();
    } else if (auto* norm = m->as<torch::nn::InstanceNorm2d>()) {
      if (norm->weight.defined()) norm->weight.normal_(1.0, 0.02);
      if (norm->bias.defined()) norm->bias.zero_();
    }
  }
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
  for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

}  // namespace reenact
