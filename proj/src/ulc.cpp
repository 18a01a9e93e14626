#include "reenact/ulc.hpp"

#include <cmath>

#include "reenact/config.hpp"
#include "reenact/error.hpp"

namespace reenact {

namespace {

std::int64_t scaled(std::int64_t base, double multiplier) {
  return std::max<std::int64_t>(1, std::llround(static_cast<double>(base) * multiplier));
}

}  // namespace

std::vector<std::int64_t> UlcConfig::encoder_widths() const {
  return {scaled(512, width_multiplier), scaled(512, width_multiplier),
          scaled(256, width_multiplier)};
}

std::vector<std::int64_t> UlcConfig::decoder_widths() const {
  return {scaled(512, width_multiplier), scaled(512, width_multiplier)};
}

nlohmann::json UlcConfig::to_json() const {
  return {{"width_multiplier", width_multiplier}, {"leaky_slope", leaky_slope}};
}

UlcConfig UlcConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"width_multiplier", "leaky_slope"}, "ulc.model");
  UlcConfig c;
  c.width_multiplier = get_or(j, "width_multiplier", c.width_multiplier, "ulc.model");
  c.leaky_slope = get_or(j, "leaky_slope", c.leaky_slope, "ulc.model");
  if (!(c.width_multiplier > 0.0)) fail(ErrorKind::config, "ulc width_multiplier must be positive");
  return c;
}

MlpImpl::MlpImpl(std::int64_t in_features, const std::vector<std::int64_t>& hidden,
                 std::int64_t out_features, double leaky_slope) {
  layers = torch::nn::Sequential();
  std::int64_t width = in_features;
  for (auto h : hidden) {
    last_ = torch::nn::Linear(width, h);
    layers->push_back(last_);
    layers->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(leaky_slope)));
    width = h;
  }
  if (out_features > 0) {
    last_ = torch::nn::Linear(width, out_features);
    layers->push_back(last_);
  }
  register_module("layers", layers);
}

torch::nn::Linear MlpImpl::last_linear() const {
  if (last_.is_empty()) fail(ErrorKind::structural, "mlp has no linear layer");
  return last_;
}

LandmarkStandardizerImpl::LandmarkStandardizerImpl() {
  mean = register_buffer("mean", torch::zeros({static_cast<std::int64_t>(kLandmarkScalars)}));
  scale = register_buffer("scale", torch::ones({1}));
}

void LandmarkStandardizerImpl::fit(const torch::Tensor& rows) {
  if (rows.dim() != 2 || rows.size(1) != static_cast<std::int64_t>(kLandmarkScalars) || rows.size(0) < 1) {
    fail(ErrorKind::structural, "standardizer needs [N, 212] landmark rows");
  }
  torch::NoGradGuard guard;
  const auto x = rows.to(torch::kFloat64);
  const auto m = x.mean(0);
  const double rms = (x - m).pow(2).mean().sqrt().item<double>();
  mean.copy_(m);
  scale.fill_(rms > 1e-12 ? 1.0 / rms : 1.0);
}

void LandmarkStandardizerImpl::copy_from(const LandmarkStandardizerImpl& other) {
  torch::NoGradGuard guard;
  mean.copy_(other.mean);
  scale.copy_(other.scale);
}

UlcImpl::UlcImpl(const UlcConfig& config) : config_(config) {
  const auto enc = config.encoder_widths();
  standardize = register_module("standardize", LandmarkStandardizer());
  enc_target = register_module(
      "enc_target", Mlp(static_cast<std::int64_t>(kLandmarkScalars), enc, 0, config.leaky_slope));
  enc_source = register_module(
      "enc_source", Mlp(static_cast<std::int64_t>(kLandmarkScalars), enc, 0, config.leaky_slope));
  dec_shift = register_module("dec_shift", Mlp(2 * enc.back(), config.decoder_widths(),
                                               static_cast<std::int64_t>(kLandmarkScalars),
                                               config.leaky_slope));
  torch::NoGradGuard guard;
  auto last = dec_shift->last_linear();
  last->weight.zero_();
  last->bias.zero_();
}

torch::Tensor UlcImpl::shift(const torch::Tensor& target_ref, const torch::Tensor& source) {
  return dec_shift(
      torch::cat({enc_target(standardize(target_ref)), enc_source(standardize(source))}, /*dim=*/1));
}

torch::Tensor UlcImpl::forward(const torch::Tensor& target_ref, const torch::Tensor& source) {
  return target_ref + shift(target_ref, source);
}

UlcDiscriminatorsImpl::UlcDiscriminatorsImpl(const UlcConfig& config) {
  const auto widths = config.encoder_widths();
  standardize = register_module("standardize", LandmarkStandardizer());
  d_tf = register_module("d_tf", Mlp(static_cast<std::int64_t>(kLandmarkScalars), widths, 1,
                                     config.leaky_slope));
  d_s = register_module("d_s", Mlp(2 * static_cast<std::int64_t>(kLandmarkScalars), widths, 1,
                                   config.leaky_slope));
}

torch::Tensor UlcDiscriminatorsImpl::real_fake(const torch::Tensor& landmark) {
  return torch::sigmoid(d_tf(standardize(landmark)));
}

torch::Tensor UlcDiscriminatorsImpl::same_identity(const torch::Tensor& first,
                                                   const torch::Tensor& second) {
  return torch::sigmoid(d_s(torch::cat({standardize(first), standardize(second)}, /*dim=*/1)));
}

torch::Tensor landmark_tensor(const Landmark& l, torch::ScalarType dtype) {
  const auto flat = l.flat();
  return torch::tensor(std::vector<double>(flat.begin(), flat.end()), torch::kFloat64).to(dtype);
}

Landmark landmark_from_tensor(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).reshape({-1}).contiguous();
  if (c.numel() != static_cast<std::int64_t>(kLandmarkScalars)) {
    fail(ErrorKind::structural, "landmark tensor must hold 212 values");
  }
  return Landmark::from_flat(std::span<const double>(c.data_ptr<double>(), kLandmarkScalars));
}

torch::Tensor landmark_batch(const std::vector<Landmark>& ls, torch::ScalarType dtype) {
  std::vector<double> values;
  values.reserve(ls.size() * kLandmarkScalars);
  for (const auto& l : ls) {
    const auto flat = l.flat();
    values.insert(values.end(), flat.begin(), flat.end());
  }
  return torch::tensor(values, torch::kFloat64)
      .reshape({static_cast<std::int64_t>(ls.size()), static_cast<std::int64_t>(kLandmarkScalars)})
      .to(dtype);
}

Landmark convert(const Landmark& target_ref, const Landmark& source, Ulc& ulc) {
  check_finite_parameters(*ulc, "converter");
  torch::NoGradGuard guard;
  const auto dtype = ulc->parameters().front().scalar_type();
  auto out = ulc->forward(landmark_tensor(target_ref, dtype).unsqueeze(0),
                          landmark_tensor(source, dtype).unsqueeze(0));
  return landmark_from_tensor(out);
}

torch::Tensor landmark_l1(const torch::Tensor& predicted, const torch::Tensor& truth) {
  if (predicted.sizes() != truth.sizes()) {
    fail(ErrorKind::structural, "landmark l1 needs equal shapes");
  }
  if (predicted.dim() == 1) return (predicted - truth).abs().sum();
  return (predicted - truth).abs().sum(/*dim=*/1).mean();
}

double ulc_l1_loss(const Landmark& predicted, const Landmark& truth) {
  double sum = 0.0;
  for (std::size_t i = 0; i < kLandmarkPoints; ++i) {
    sum += std::abs(predicted[i].x - truth[i].x) + std::abs(predicted[i].y - truth[i].y);
  }
  return sum;
}

torch::Tensor cycle_loss(Ulc& ulc, const torch::Tensor& source_ref, const torch::Tensor& target_ref,
                         const torch::Tensor& source) {
  auto there = ulc->forward(target_ref, source);
  auto back = ulc->forward(source_ref, there);
  return landmark_l1(back, source);
}

double ulc_cycle_loss(const Landmark& source_ref, const Landmark& target_ref,
                      const Landmark& source, Ulc& ulc) {
  torch::NoGradGuard guard;
  const auto dtype = ulc->parameters().front().scalar_type();
  auto t = [&](const Landmark& l) { return landmark_tensor(l, dtype).unsqueeze(0); };
  return cycle_loss(ulc, t(source_ref), t(target_ref), t(source)).item<double>();
}

AdversarialTerms d_tf_loss(const torch::Tensor& real, const torch::Tensor& fake,
                           UlcDiscriminators& disc) {
  return adversarial_terms(disc->real_fake(real), disc->real_fake(fake));
}

AdversarialTerms d_s_loss(const std::pair<torch::Tensor, torch::Tensor>& pair_real,
                          const std::pair<torch::Tensor, torch::Tensor>& pair_fake,
                          UlcDiscriminators& disc) {
  return adversarial_terms(disc->same_identity(pair_real.first, pair_real.second),
                           disc->same_identity(pair_fake.first, pair_fake.second));
}

}  // namespace reenact
