#include "reenact/gag.hpp"

#include "reenact/config.hpp"
#include "reenact/error.hpp"

namespace reenact {

namespace nn = torch::nn;

namespace {

void push_norm(nn::Sequential& seq, std::int64_t channels, NormKind norm) {
  if (norm == NormKind::instance) {
    seq->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true)));
  }
}

nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride = 1,
                std::int64_t padding = 0) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
}

std::string norm_name(NormKind k) { return k == NormKind::instance ? "instance" : "none"; }

NormKind norm_from_name(const std::string& s) {
  if (s == "instance") return NormKind::instance;
  if (s == "none") return NormKind::none;
  fail(ErrorKind::config, "unknown normalization '" + s + "'");
}

}  // namespace

nlohmann::json GagConfig::to_json() const {
  return {{"base_channels", base_channels},
          {"groups", groups},
          {"blocks_per_group", blocks_per_group},
          {"image_size", image_size},
          {"norm", norm_name(norm)},
          {"disc_base_channels", disc_base_channels},
          {"disc_layers", disc_layers},
          {"disc_conditional", disc_conditional}};
}

GagConfig GagConfig::from_json(const nlohmann::json& j) {
  const std::string ctx = "gag.model";
  check_keys(j,
             {"base_channels", "groups", "blocks_per_group", "image_size", "norm",
              "disc_base_channels", "disc_layers", "disc_conditional"},
             ctx);
  GagConfig c;
  c.base_channels = get_or(j, "base_channels", c.base_channels, ctx);
  c.groups = get_or(j, "groups", c.groups, ctx);
  c.blocks_per_group = get_or(j, "blocks_per_group", c.blocks_per_group, ctx);
  c.image_size = get_or(j, "image_size", c.image_size, ctx);
  c.norm = norm_from_name(get_or(j, "norm", norm_name(c.norm), ctx));
  c.disc_base_channels = get_or(j, "disc_base_channels", c.disc_base_channels, ctx);
  c.disc_layers = get_or(j, "disc_layers", c.disc_layers, ctx);
  c.disc_conditional = get_or(j, "disc_conditional", c.disc_conditional, ctx);
  if (c.base_channels < 1 || c.groups < 1 || c.blocks_per_group < 0 || c.disc_layers < 1 ||
      c.disc_base_channels < 1) {
    fail(ErrorKind::config, "generator/discriminator widths and depths must be positive");
  }
  if (c.image_size < 32 || c.image_size % 4 != 0) {
    fail(ErrorKind::config, "image_size must be a multiple of 4 and at least 32");
  }
  return c;
}

ResBlockImpl::ResBlockImpl(std::int64_t channels, NormKind norm) {
  body = nn::Sequential();
  body->push_back(nn::ReflectionPad2d(1));
  body->push_back(conv(channels, channels, 3));
  push_norm(body, channels, norm);
  body->push_back(nn::ReLU());
  body->push_back(nn::ReflectionPad2d(1));
  body->push_back(conv(channels, channels, 3));
  push_norm(body, channels, norm);
  register_module("body", body);
}

FusionGroupImpl::FusionGroupImpl(std::int64_t channels, std::int64_t blocks, NormKind norm) {
  fuse = nn::Sequential();
  fuse->push_back(conv(2 * channels, channels, 1));
  push_norm(fuse, channels, norm);
  fuse->push_back(nn::ReLU());
  this->blocks = nn::Sequential();
  for (std::int64_t i = 0; i < blocks; ++i) this->blocks->push_back(ResBlock(channels, norm));
  register_module("fuse", fuse);
  register_module("blocks", this->blocks);
}

torch::Tensor FusionGroupImpl::forward(const torch::Tensor& x,
                                       const torch::Tensor& landmark_features) {
  auto h = fuse->forward(torch::cat({x, landmark_features}, /*dim=*/1));
  return blocks->is_empty() ? h : blocks->forward(h);
}

GeneratorImpl::GeneratorImpl(const GagConfig& config) : config_(config) {
  const auto c = config.base_channels;
  const auto norm = config.norm;

  enc_image = nn::Sequential();
  enc_image->push_back(nn::ReflectionPad2d(3));
  enc_image->push_back(conv(3, c, 7));
  push_norm(enc_image, c, norm);
  enc_image->push_back(nn::ReLU());
  enc_image->push_back(conv(c, 2 * c, 3, 2, 1));
  push_norm(enc_image, 2 * c, norm);
  enc_image->push_back(nn::ReLU());
  enc_image->push_back(conv(2 * c, 4 * c, 3, 2, 1));
  push_norm(enc_image, 4 * c, norm);
  enc_image->push_back(nn::ReLU());

  enc_landmark = nn::Sequential();
  enc_landmark->push_back(conv(1, c, 3, 1, 1));
  push_norm(enc_landmark, c, norm);
  enc_landmark->push_back(nn::ReLU());
  enc_landmark->push_back(conv(c, 4 * c, 3, 1, 1));
  push_norm(enc_landmark, 4 * c, norm);
  enc_landmark->push_back(nn::ReLU());

  transformer = nn::ModuleList();
  for (std::int64_t g = 0; g < config.groups; ++g) {
    transformer->push_back(FusionGroup(4 * c, config.blocks_per_group, norm));
  }

  dec_image = nn::Sequential();
  dec_image->push_back(nn::ConvTranspose2d(
      nn::ConvTranspose2dOptions(4 * c, 2 * c, 3).stride(2).padding(1).output_padding(1)));
  push_norm(dec_image, 2 * c, norm);
  dec_image->push_back(nn::ReLU());
  dec_image->push_back(nn::ConvTranspose2d(
      nn::ConvTranspose2dOptions(2 * c, c, 3).stride(2).padding(1).output_padding(1)));
  push_norm(dec_image, c, norm);
  dec_image->push_back(nn::ReLU());
  dec_image->push_back(nn::ReflectionPad2d(3));
  dec_image->push_back(conv(c, 3, 7));
  dec_image->push_back(nn::Tanh());

  register_module("enc_image", enc_image);
  register_module("enc_landmark", enc_landmark);
  register_module("transformer", transformer);
  register_module("dec_image", dec_image);
  init_conv_weights(*this);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& reference,
                                     const torch::Tensor& landmark_image) {
  const auto s = config_.image_size;
  const auto r = config_.landmark_resolution();
  if (reference.dim() != 4 || reference.size(1) != 3 || reference.size(2) != s ||
      reference.size(3) != s) {
    fail(ErrorKind::structural, "generator reference must be [B, 3, " + std::to_string(s) + ", " +
                                    std::to_string(s) + "]");
  }
  if (landmark_image.dim() != 4 || landmark_image.size(1) != 1 || landmark_image.size(2) != r ||
      landmark_image.size(3) != r) {
    fail(ErrorKind::structural, "generator landmark image must be [B, 1, " + std::to_string(r) +
                                    ", " + std::to_string(r) + "]");
  }
  auto x = enc_image->forward(reference);
  // One landmark feature tensor is shared by every transformer part.
  auto lm = enc_landmark->forward(landmark_image);
  for (const auto& group : *transformer) x = group->as<FusionGroup>()->forward(x, lm);
  return dec_image->forward(x);
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const GagConfig& config)
    : conditional_(config.disc_conditional) {
  const auto ndf = config.disc_base_channels;
  const auto leaky = nn::LeakyReLUOptions().negative_slope(0.2);
  net = nn::Sequential();
  net->push_back(conv(conditional_ ? 4 : 3, ndf, 4, 2, 1));
  net->push_back(nn::LeakyReLU(leaky));
  std::int64_t mult = 1;
  for (std::int64_t n = 1; n < config.disc_layers; ++n) {
    const auto prev = mult;
    mult = std::min<std::int64_t>(mult * 2, 8);
    net->push_back(conv(ndf * prev, ndf * mult, 4, 2, 1));
    push_norm(net, ndf * mult, config.norm);
    net->push_back(nn::LeakyReLU(leaky));
  }
  const auto prev = mult;
  mult = std::min<std::int64_t>(mult * 2, 8);
  net->push_back(conv(ndf * prev, ndf * mult, 4, 1, 1));
  push_norm(net, ndf * mult, config.norm);
  net->push_back(nn::LeakyReLU(leaky));
  net->push_back(conv(ndf * mult, 1, 4, 1, 1));
  net->push_back(nn::Sigmoid());
  register_module("net", net);
  init_conv_weights(*this);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& image,
                                              const torch::Tensor& landmark_image) {
  if (!conditional_) return net->forward(image);
  if (!landmark_image.defined()) {
    fail(ErrorKind::structural, "conditional discriminator needs the landmark image");
  }
  auto up = torch::nn::functional::interpolate(
      landmark_image, torch::nn::functional::InterpolateFuncOptions()
                          .size(std::vector<std::int64_t>{image.size(2), image.size(3)})
                          .mode(torch::kNearest));
  return net->forward(torch::cat({image, up}, /*dim=*/1));
}

FaceImage generate(const FaceImage& reference, const LandmarkImage& landmark_image,
                   Generator& generator) {
  check_finite_parameters(*generator, "generator");
  torch::NoGradGuard guard;
  const auto dtype = generator->parameters().front().scalar_type();
  auto out = generator->forward(reference.tensor().to(dtype).unsqueeze(0),
                                to_tensor(landmark_image).to(dtype).unsqueeze(0));
  return FaceImage(out.squeeze(0).to(torch::kFloat32));
}

torch::Tensor pixel_loss(const torch::Tensor& generated, const torch::Tensor& truth) {
  if (generated.sizes() != truth.sizes()) fail(ErrorKind::structural, "pixel loss needs equal shapes");
  return (generated - truth).abs().mean();
}

double pixel_loss(const FaceImage& generated, const FaceImage& truth) {
  return pixel_loss(generated.tensor().to(torch::kFloat64), truth.tensor().to(torch::kFloat64))
      .item<double>();
}

AdversarialTerms gag_adv_loss(const torch::Tensor& real, const torch::Tensor& fake,
                              PatchDiscriminator& disc, const torch::Tensor& landmark_image) {
  return adversarial_terms(disc->forward(real, landmark_image), disc->forward(fake, landmark_image));
}

}  // namespace reenact
