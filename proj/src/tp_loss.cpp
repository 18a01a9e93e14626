#include "reenact/tp_loss.hpp"

#include <algorithm>
#include <cmath>

#include "reenact/checkpoint.hpp"
#include "reenact/data.hpp"
#include "reenact/error.hpp"

namespace reenact {

namespace {

torch::Tensor batched(const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

nlohmann::json shape_json(const ConvFeatureExtractor::Shape& s) {
  return {{"stage_channels", s.stage_channels},
          {"convs_per_stage", s.convs_per_stage},
          {"feature_stage", s.feature_stage}};
}

template <class T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

}  // namespace

torch::Tensor PixelExtractor::feature_map(const torch::Tensor& images) const {
  return batched(images);
}

ConvFeatureExtractor::ConvFeatureExtractor(const Shape& shape) : shape_(shape) {
  if (shape_.stage_channels.empty() || shape_.convs_per_stage < 1 || shape_.feature_stage < 1 ||
      shape_.feature_stage > static_cast<std::int64_t>(shape_.stage_channels.size())) {
    fail(ErrorKind::config, "invalid feature extractor shape");
  }
  net_ = torch::nn::Sequential();
  std::int64_t in = 3;
  for (std::int64_t s = 0; s < shape_.feature_stage; ++s) {
    const auto out = shape_.stage_channels[static_cast<std::size_t>(s)];
    for (std::int64_t k = 0; k < shape_.convs_per_stage; ++k) {
      net_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
      net_->push_back(torch::nn::ReLU());
      in = out;
    }
    net_->push_back(torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(2)));
  }
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
}

ConvFeatureExtractor::ConvFeatureExtractor(const Shape& shape, std::uint64_t seed)
    : ConvFeatureExtractor(shape) {
  std::mt19937_64 rng(seed);
  torch::NoGradGuard guard;
  for (auto& p : net_->named_parameters()) {
    auto& t = p.value();
    if (t.dim() == 4) {
      const double fan_in = static_cast<double>(t.size(1) * t.size(2) * t.size(3));
      std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
      auto acc = t.accessor<float, 4>();
      for (std::int64_t a = 0; a < t.size(0); ++a)
        for (std::int64_t b = 0; b < t.size(1); ++b)
          for (std::int64_t c = 0; c < t.size(2); ++c)
            for (std::int64_t d = 0; d < t.size(3); ++d) acc[a][b][c][d] = dist(rng);
    } else {
      t.zero_();
    }
  }
}

std::unique_ptr<ConvFeatureExtractor> ConvFeatureExtractor::load(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path, "extractor");
  Shape shape;
  try {
    shape.stage_channels = ckpt.config.at("stage_channels").get<std::vector<std::int64_t>>();
    shape.convs_per_stage = ckpt.config.at("convs_per_stage").get<std::int64_t>();
    shape.feature_stage = ckpt.config.at("feature_stage").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, path.string() + ": bad extractor config: " + e.what());
  }
  std::unique_ptr<ConvFeatureExtractor> out(new ConvFeatureExtractor(shape));
  restore_module(ckpt.section("extractor.net"), *out->net_);
  return out;
}

void ConvFeatureExtractor::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.kind = "extractor";
  ckpt.config = shape_json(shape_);
  ckpt.config_hash = config_hash(ckpt.config);
  ckpt.sections.push_back(module_section("extractor.net", *net_));
  save_checkpoint(path, ckpt);
}

torch::Tensor ConvFeatureExtractor::feature_map(const torch::Tensor& images) const {
  auto x = batched(images);
  if (x.scalar_type() != torch::kFloat32) {
    // Weights are float32; run in the input precision without touching the module.
    for (const auto& m : net_->children()) {
      if (auto* conv = m->as<torch::nn::Conv2d>()) {
        x = torch::conv2d(x, conv->weight.to(x.scalar_type()), conv->bias.to(x.scalar_type()), 1, 1);
      } else if (m->as<torch::nn::ReLU>()) {
        x = torch::relu(x);
      } else {
        x = torch::max_pool2d(x, 2);
      }
    }
    return x;
  }
  return net_->forward(x);
}

torch::Tensor perceptual_distance(const torch::Tensor& a, const torch::Tensor& b,
                                  const PerceptualExtractor& kappa,
                                  const PerceptualOptions& options) {
  auto fa = kappa.features(a);
  auto fb = kappa.features(b);
  auto diff = fa - fb;
  if (options.normalize_by_dimension) diff = diff / std::sqrt(static_cast<double>(fa.size(1)));
  if (options.squared) return diff.pow(2).sum(1);
  // norm() takes a zero subgradient at coincident points, unlike sqrt(sum(x^2)).
  return diff.norm(2, {1});
}

double perceptual_distance(const FaceImage& a, const FaceImage& b,
                           const PerceptualExtractor& kappa, const PerceptualOptions& options) {
  torch::NoGradGuard guard;
  return perceptual_distance(a.tensor(), b.tensor(), kappa, options).item<double>();
}

torch::Tensor tp_loss(const torch::Tensor& anchor, const torch::Tensor& positive,
                      const torch::Tensor& negative, const PerceptualExtractor& kappa,
                      double margin, const PerceptualOptions& options) {
  if (!(margin >= 0)) fail(ErrorKind::domain, "triplet margin must be non-negative");
  const auto d_ap = perceptual_distance(anchor, positive, kappa, options);
  const auto d_an = perceptual_distance(anchor, negative, kappa, options);
  return torch::relu(d_ap - d_an + margin).mean();
}

double tp_loss(const FaceImage& anchor, const FaceImage& positive, const FaceImage& negative,
               const PerceptualExtractor& kappa, double margin, const PerceptualOptions& options) {
  torch::NoGradGuard guard;
  return tp_loss(anchor.tensor(), positive.tensor(), negative.tensor(), kappa, margin, options)
      .item<double>();
}

bool triplet_roles_valid(const Dataset& dataset, const TripletRoles& r) {
  if (r.target == r.other || r.n2 == r.n3) return false;
  const auto& ref = dataset.reference_expression();
  for (const SampleKey& k : {SampleKey{r.target, ref, r.pose}, SampleKey{r.target, r.n1, r.pose},
                             SampleKey{r.target, r.n2, r.pose},
                             SampleKey{r.target, r.n3, r.pose}, SampleKey{r.other, r.n3, r.pose},
                             SampleKey{r.other, ref, r.pose}}) {
    if (!dataset.contains(k)) return false;
  }
  return true;
}

TripletRoles sample_triplet_roles(const Dataset& dataset, std::mt19937_64& rng) {
  auto expressions_of = [&](const std::string& id, const std::string& pose) {
    std::vector<std::string> out;
    for (const auto& e : dataset.expressions()) {
      if (dataset.contains({id, e, pose})) out.push_back(e);
    }
    return out;
  };
  std::vector<std::string> poses;
  for (const auto& pose : dataset.poses()) {
    int n = 0;
    for (const auto& id : dataset.identities()) {
      if (expressions_of(id, pose).size() >= 2) ++n;
    }
    if (n >= 2) poses.push_back(pose);
  }
  if (poses.empty()) {
    fail(ErrorKind::config,
         "triplet sampling needs at least 2 identities with at least 2 expressions each in a "
         "shared pose");
  }
  for (int attempt = 0; attempt < 1000; ++attempt) {
    TripletRoles r;
    r.pose = pick(poses, rng);
    std::vector<std::string> ids;
    for (const auto& id : dataset.identities()) {
      if (expressions_of(id, r.pose).size() >= 2) ids.push_back(id);
    }
    const auto t = std::uniform_int_distribution<std::size_t>(0, ids.size() - 1)(rng);
    auto o = std::uniform_int_distribution<std::size_t>(0, ids.size() - 2)(rng);
    if (o >= t) ++o;
    r.target = ids[t];
    r.other = ids[o];
    const auto target_exprs = expressions_of(r.target, r.pose);
    r.n1 = pick(target_exprs, rng);
    r.n2 = pick(target_exprs, rng);
    std::vector<std::string> n3_choices;
    for (const auto& e : target_exprs) {
      if (e != r.n2 && dataset.contains({r.other, e, r.pose})) n3_choices.push_back(e);
    }
    if (n3_choices.empty()) continue;
    r.n3 = pick(n3_choices, rng);
    if (triplet_roles_valid(dataset, r)) return r;
  }
  fail(ErrorKind::config, "could not draw a valid triplet from the dataset");
}

TripletSources triplet_sources(const Dataset& dataset, const TripletRoles& r,
                               const LandmarkConverter& converter) {
  const auto& ref = dataset.reference_expression();
  const auto& l_tr = dataset.landmark({r.target, ref, r.pose});
  const auto& l_tn2 = dataset.landmark({r.target, r.n2, r.pose});
  const auto& l_tn3 = dataset.landmark({r.target, r.n3, r.pose});
  const auto& l_rr = dataset.landmark({r.other, ref, r.pose});
  // Every role goes through the converter, including the self-conversions for T.
  return {{converter(l_tr, l_tn2), converter(l_tr, l_tn3), converter(l_rr, l_tn2)},
          {SampleKey{r.target, r.n1, r.pose}, SampleKey{r.target, r.n2, r.pose},
           SampleKey{r.other, r.n3, r.pose}}};
}

TripletSpec triplet_inputs(const Dataset& dataset, const TripletRoles& r,
                           const LandmarkConverter& converter, int raster_resolution) {
  const auto src = triplet_sources(dataset, r, converter);
  auto inputs = [&](int i) {
    return TripletInputs{rasterize(src.landmarks[i], dataset.parts(), raster_resolution),
                         dataset.image(src.references[i])};
  };
  return {r, inputs(0), inputs(1), inputs(2)};
}

TripletSpec sample_triplet(const Dataset& dataset, std::mt19937_64& rng,
                           const LandmarkConverter& converter, int raster_resolution) {
  return triplet_inputs(dataset, sample_triplet_roles(dataset, rng), converter, raster_resolution);
}

}  // namespace reenact
