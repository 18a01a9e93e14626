#include "reenact/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "reenact/config.hpp"
#include "reenact/error.hpp"
#include "reenact/nn.hpp"

namespace reenact {

namespace fs = std::filesystem;

double lr_schedule(double lr0, std::int64_t decay_every, std::int64_t epoch) {
  if (epoch < 0) fail(ErrorKind::domain, "epoch must be non-negative");
  if (decay_every < 1) fail(ErrorKind::config, "decay_every must be at least 1");
  return lr0 * std::pow(10.0, -static_cast<double>(epoch / decay_every));
}

// ---- configs -------------------------------------------------------------------

namespace {

nlohmann::json adam_json(const AdamConfig& a) {
  return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"decay_every", a.decay_every}};
}

AdamConfig adam_from(const nlohmann::json& j, AdamConfig a, const std::string& ctx) {
  check_keys(j, {"lr", "beta1", "beta2", "decay_every"}, ctx);
  a.lr = get_or(j, "lr", a.lr, ctx);
  a.beta1 = get_or(j, "beta1", a.beta1, ctx);
  a.beta2 = get_or(j, "beta2", a.beta2, ctx);
  a.decay_every = get_or(j, "decay_every", a.decay_every, ctx);
  if (!(a.lr > 0)) fail(ErrorKind::config, ctx + ".lr must be positive");
  if (!(a.beta1 >= 0 && a.beta1 < 1 && a.beta2 >= 0 && a.beta2 < 1)) {
    fail(ErrorKind::config, ctx + " betas must lie in [0, 1)");
  }
  if (a.decay_every < 1) fail(ErrorKind::config, ctx + ".decay_every must be at least 1");
  return a;
}

void require_non_negative(double v, const std::string& name) {
  if (!(v >= 0)) fail(ErrorKind::config, name + " must be non-negative");
}

std::unique_ptr<torch::optim::Adam> make_adam(std::vector<torch::Tensor> params, const AdamConfig& a) {
  return std::make_unique<torch::optim::Adam>(
      std::move(params), torch::optim::AdamOptions(a.lr).betas({a.beta1, a.beta2}));
}

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

void step(torch::optim::Adam& opt, const std::vector<torch::Tensor>& params, double clip) {
  if (clip > 0) torch::nn::utils::clip_grad_norm_(params, clip);
  opt.step();
}

void append_line(const fs::path& path, const nlohmann::json& record) {
  std::ofstream out(path, std::ios::app);
  if (!out) fail(ErrorKind::io, "cannot append to " + path.string());
  out << record.dump() << '\n';
}

void prepare_output(const TrainOutput& output) {
  if (output.dir.empty()) return;
  std::error_code ec;
  fs::create_directories(output.dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + output.dir.string() + ": " + ec.message());
  std::ofstream truncate(output.dir / kMetricsLogName, std::ios::trunc);
  if (!truncate) fail(ErrorKind::io, "cannot write " + (output.dir / kMetricsLogName).string());
}

double mean_or_nan(double sum, std::int64_t n) {
  return n > 0 ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json UlcTrainConfig::to_json() const {
  return {{"model", model.to_json()},
          {"weights",
           {{"lambda1", weights.lambda1}, {"lambda2", weights.lambda2}, {"lambda3", weights.lambda3}}},
          {"d_tf_weight", d_tf_weight},
          {"d_s_weight", d_s_weight},
          {"adam", adam_json(adam)},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"holdout_fraction", holdout_fraction},
          {"holdout_seed", holdout_seed},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"grad_clip", grad_clip},
          {"standardize_inputs", standardize_inputs}};
}

UlcTrainConfig UlcTrainConfig::from_json(const nlohmann::json& j) {
  const std::string ctx = "ulc";
  check_keys(j,
             {"model", "weights", "d_tf_weight", "d_s_weight", "adam", "epochs", "batch_size",
              "holdout_fraction", "holdout_seed", "seed", "checkpoint_every", "grad_clip",
              "standardize_inputs"},
             ctx);
  UlcTrainConfig c;
  c.model = UlcConfig::from_json(section_of(j, "model"));
  const auto w = section_of(j, "weights");
  check_keys(w, {"lambda1", "lambda2", "lambda3"}, ctx + ".weights");
  c.weights.lambda1 = get_or(w, "lambda1", c.weights.lambda1, ctx + ".weights");
  c.weights.lambda2 = get_or(w, "lambda2", c.weights.lambda2, ctx + ".weights");
  c.weights.lambda3 = get_or(w, "lambda3", c.weights.lambda3, ctx + ".weights");
  c.d_tf_weight = get_or(j, "d_tf_weight", c.d_tf_weight, ctx);
  c.d_s_weight = get_or(j, "d_s_weight", c.d_s_weight, ctx);
  c.adam = adam_from(section_of(j, "adam"), c.adam, ctx + ".adam");
  c.epochs = get_or(j, "epochs", c.epochs, ctx);
  c.batch_size = get_or(j, "batch_size", c.batch_size, ctx);
  c.holdout_fraction = get_or(j, "holdout_fraction", c.holdout_fraction, ctx);
  c.holdout_seed = get_or(j, "holdout_seed", c.holdout_seed, ctx);
  c.seed = get_or(j, "seed", c.seed, ctx);
  c.checkpoint_every = get_or(j, "checkpoint_every", c.checkpoint_every, ctx);
  c.grad_clip = get_or(j, "grad_clip", c.grad_clip, ctx);
  c.standardize_inputs = get_or(j, "standardize_inputs", c.standardize_inputs, ctx);
  for (auto [v, n] : {std::pair{c.weights.lambda1, "lambda1"}, {c.weights.lambda2, "lambda2"},
                      {c.weights.lambda3, "lambda3"}, {c.d_tf_weight, "d_tf_weight"},
                      {c.d_s_weight, "d_s_weight"}, {c.grad_clip, "grad_clip"}}) {
    require_non_negative(v, ctx + "." + n);
  }
  if (c.epochs < 0) fail(ErrorKind::config, "ulc.epochs must be non-negative");
  if (c.batch_size < 1) fail(ErrorKind::config, "ulc.batch_size must be at least 1");
  if (c.checkpoint_every < 0) fail(ErrorKind::config, "ulc.checkpoint_every must be non-negative");
  if (!(c.holdout_fraction >= 0 && c.holdout_fraction < 1)) {
    fail(ErrorKind::config, "ulc.holdout_fraction must lie in [0, 1)");
  }
  return c;
}

nlohmann::json GagTrainConfig::to_json() const {
  return {{"model", model.to_json()},
          {"weights",
           {{"lambda_pix", weights.lambda_pix},
            {"lambda_adv", weights.lambda_adv},
            {"lambda_tp", weights.lambda_tp}}},
          {"adam", adam_json(adam)},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"margin", margin},
          {"triplets_per_step", triplets_per_step},
          {"perceptual",
           {{"normalize_by_dimension", perceptual.normalize_by_dimension},
            {"squared", perceptual.squared}}},
          {"extractor", extractor},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"grad_clip", grad_clip}};
}

GagTrainConfig GagTrainConfig::from_json(const nlohmann::json& j) {
  const std::string ctx = "gag";
  check_keys(j,
             {"model", "weights", "adam", "epochs", "batch_size", "margin", "triplets_per_step",
              "perceptual", "extractor", "seed", "checkpoint_every", "grad_clip"},
             ctx);
  GagTrainConfig c;
  c.model = GagConfig::from_json(section_of(j, "model"));
  const auto w = section_of(j, "weights");
  check_keys(w, {"lambda_pix", "lambda_adv", "lambda_tp"}, ctx + ".weights");
  c.weights.lambda_pix = get_or(w, "lambda_pix", c.weights.lambda_pix, ctx + ".weights");
  c.weights.lambda_adv = get_or(w, "lambda_adv", c.weights.lambda_adv, ctx + ".weights");
  c.weights.lambda_tp = get_or(w, "lambda_tp", c.weights.lambda_tp, ctx + ".weights");
  c.adam = adam_from(section_of(j, "adam"), c.adam, ctx + ".adam");
  c.epochs = get_or(j, "epochs", c.epochs, ctx);
  c.batch_size = get_or(j, "batch_size", c.batch_size, ctx);
  c.margin = get_or(j, "margin", c.margin, ctx);
  c.triplets_per_step = get_or(j, "triplets_per_step", c.triplets_per_step, ctx);
  const auto p = section_of(j, "perceptual");
  check_keys(p, {"normalize_by_dimension", "squared"}, ctx + ".perceptual");
  c.perceptual.normalize_by_dimension =
      get_or(p, "normalize_by_dimension", c.perceptual.normalize_by_dimension, ctx + ".perceptual");
  c.perceptual.squared = get_or(p, "squared", c.perceptual.squared, ctx + ".perceptual");
  c.extractor = get_or(j, "extractor", c.extractor, ctx);
  c.seed = get_or(j, "seed", c.seed, ctx);
  c.checkpoint_every = get_or(j, "checkpoint_every", c.checkpoint_every, ctx);
  c.grad_clip = get_or(j, "grad_clip", c.grad_clip, ctx);
  for (auto [v, n] : {std::pair{c.weights.lambda_pix, "lambda_pix"}, {c.weights.lambda_adv, "lambda_adv"},
                      {c.weights.lambda_tp, "lambda_tp"}, {c.margin, "margin"},
                      {c.grad_clip, "grad_clip"}}) {
    require_non_negative(v, ctx + "." + n);
  }
  if (c.epochs < 0) fail(ErrorKind::config, "gag.epochs must be non-negative");
  if (c.batch_size < 1) fail(ErrorKind::config, "gag.batch_size must be at least 1");
  if (c.triplets_per_step < 1) fail(ErrorKind::config, "gag.triplets_per_step must be at least 1");
  if (c.checkpoint_every < 0) fail(ErrorKind::config, "gag.checkpoint_every must be non-negative");
  return c;
}

std::unique_ptr<PerceptualExtractor> make_extractor(const std::string& spec, std::uint64_t seed) {
  if (spec == "pixel") return std::make_unique<PixelExtractor>();
  if (spec == "conv") return std::make_unique<ConvFeatureExtractor>(ConvFeatureExtractor::Shape{}, seed);
  return ConvFeatureExtractor::load(spec);
}

// ---- held-out split ---------------------------------------------------------------

bool HoldoutSplit::contains(const SampleKey& key) const {
  return std::find(held_out.begin(), held_out.end(), key) != held_out.end();
}

HoldoutSplit make_holdout_split(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0 && fraction < 1)) fail(ErrorKind::config, "holdout fraction must lie in [0, 1)");
  HoldoutSplit split;
  if (fraction == 0) return split;
  std::mt19937_64 rng(seed);
  const auto& ref = dataset.reference_expression();
  for (const auto& pose : dataset.poses()) {
    std::vector<std::string> exprs;
    for (const auto& e : dataset.expressions()) {
      if (e != ref) exprs.push_back(e);
    }
    std::vector<std::string> ids = dataset.identities();
    std::shuffle(exprs.begin(), exprs.end(), rng);
    std::shuffle(ids.begin(), ids.end(), rng);
    if (exprs.empty()) continue;
    const auto per_id = std::min<std::size_t>(
        exprs.size() - 1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(exprs.size()))));
    // Rotating windows spread each expression's held-out cells over different identities.
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t k = 0; k < per_id; ++k) {
        SampleKey key{ids[i], exprs[(i * per_id + k) % exprs.size()], pose};
        if (dataset.contains(key)) split.held_out.push_back(key);
      }
    }
  }
  std::sort(split.held_out.begin(), split.held_out.end());
  return split;
}

std::vector<UlcTuple> ulc_training_tuples(const Dataset& dataset, const HoldoutSplit& split) {
  std::vector<UlcTuple> out;
  const auto& ref = dataset.reference_expression();
  for (const auto& pose : dataset.poses()) {
    for (const auto& t : dataset.identities()) {
      if (!dataset.contains({t, ref, pose})) continue;
      for (const auto& s : dataset.identities()) {
        if (s == t || !dataset.contains({s, ref, pose})) continue;
        for (const auto& n : dataset.expressions()) {
          const SampleKey src{s, n, pose};
          if (!dataset.contains(src) || split.contains(src)) continue;
          const SampleKey truth{t, n, pose};
          out.push_back({t, s, n, pose, dataset.contains(truth) && !split.contains(truth)});
        }
      }
    }
  }
  return out;
}

double heldout_ace(const Dataset& dataset, const HoldoutSplit& split, UlcImpl& ulc) {
  std::vector<Landmark> refs, sources, truths;
  const auto& ref = dataset.reference_expression();
  for (const auto& cell : split.held_out) {
    for (const auto& s : dataset.identities()) {
      if (s == cell.identity || !dataset.contains({s, cell.expression, cell.pose})) continue;
      refs.push_back(dataset.landmark({cell.identity, ref, cell.pose}));
      sources.push_back(dataset.landmark({s, cell.expression, cell.pose}));
      truths.push_back(dataset.landmark(cell));
    }
  }
  if (refs.empty()) return std::numeric_limits<double>::quiet_NaN();
  torch::NoGradGuard guard;
  const auto dtype = ulc.parameters().front().scalar_type();
  auto out = ulc.forward(landmark_batch(refs, dtype), landmark_batch(sources, dtype));
  auto truth = landmark_batch(truths, torch::kFloat64);
  return (out.to(torch::kFloat64) - truth).abs().mean().item<double>();
}

// ---- state and checkpoints -----------------------------------------------------------

UlcState UlcState::fresh(const UlcTrainConfig& config) {
  torch::manual_seed(config.seed);
  UlcState s;
  s.config = config;
  s.ulc = Ulc(config.model);
  s.disc = UlcDiscriminators(config.model);
  s.opt_gen = make_adam(s.ulc->parameters(), config.adam);
  s.opt_disc = make_adam(s.disc->parameters(), config.adam);
  return s;
}

Checkpoint UlcState::to_checkpoint() const {
  Checkpoint c;
  c.kind = "ulc";
  c.config = {{"train", config.to_json()}};
  c.config_hash = config_hash(c.config);
  c.epoch = epoch;
  c.sections.push_back(module_section("ulc.standardize", *ulc->standardize));
  c.sections.push_back(module_section("ulc.enc_target", *ulc->enc_target));
  c.sections.push_back(module_section("ulc.enc_source", *ulc->enc_source));
  c.sections.push_back(module_section("ulc.dec_shift", *ulc->dec_shift));
  c.sections.push_back(module_section("ulc.d_standardize", *disc->standardize));
  c.sections.push_back(module_section("ulc.d_tf", *disc->d_tf));
  c.sections.push_back(module_section("ulc.d_s", *disc->d_s));
  c.sections.push_back(adam_section("ulc.optim.gen", *opt_gen, *ulc));
  c.sections.push_back(adam_section("ulc.optim.disc", *opt_disc, *disc));
  return c;
}

UlcState UlcState::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "ulc") fail(ErrorKind::data, "expected a 'ulc' checkpoint, found '" + ckpt.kind + "'");
  auto s = fresh(UlcTrainConfig::from_json(section_of(ckpt.config, "train")));
  restore_module(ckpt.section("ulc.standardize"), *s.ulc->standardize);
  restore_module(ckpt.section("ulc.enc_target"), *s.ulc->enc_target);
  restore_module(ckpt.section("ulc.enc_source"), *s.ulc->enc_source);
  restore_module(ckpt.section("ulc.dec_shift"), *s.ulc->dec_shift);
  restore_module(ckpt.section("ulc.d_standardize"), *s.disc->standardize);
  restore_module(ckpt.section("ulc.d_tf"), *s.disc->d_tf);
  restore_module(ckpt.section("ulc.d_s"), *s.disc->d_s);
  restore_adam(ckpt.section("ulc.optim.gen"), *s.opt_gen, *s.ulc);
  restore_adam(ckpt.section("ulc.optim.disc"), *s.opt_disc, *s.disc);
  s.epoch = ckpt.epoch;
  return s;
}

GagState GagState::fresh(const GagTrainConfig& config) {
  torch::manual_seed(config.seed);
  GagState s;
  s.config = config;
  s.generator = Generator(config.model);
  s.disc = PatchDiscriminator(config.model);
  s.opt_gen = make_adam(s.generator->parameters(), config.adam);
  s.opt_disc = make_adam(s.disc->parameters(), config.adam);
  return s;
}

Checkpoint GagState::to_checkpoint() const {
  Checkpoint c;
  c.kind = "gag";
  c.config = {{"train", config.to_json()}, {"ulc_hash", ulc_hash}};
  c.config_hash = config_hash(c.config);
  c.epoch = epoch;
  c.sections.push_back(module_section("gag.enc_image", *generator->enc_image));
  c.sections.push_back(module_section("gag.enc_landmark", *generator->enc_landmark));
  c.sections.push_back(module_section("gag.transformer", *generator->transformer));
  c.sections.push_back(module_section("gag.dec_image", *generator->dec_image));
  c.sections.push_back(module_section("gag.disc", *disc));
  c.sections.push_back(adam_section("gag.optim.gen", *opt_gen, *generator));
  c.sections.push_back(adam_section("gag.optim.disc", *opt_disc, *disc));
  return c;
}

namespace {

void restore_generator(const Checkpoint& ckpt, GeneratorImpl& g) {
  restore_module(ckpt.section("gag.enc_image"), *g.enc_image);
  restore_module(ckpt.section("gag.enc_landmark"), *g.enc_landmark);
  restore_module(ckpt.section("gag.transformer"), *g.transformer);
  restore_module(ckpt.section("gag.dec_image"), *g.dec_image);
}

}  // namespace

GagState GagState::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "gag") fail(ErrorKind::data, "expected a 'gag' checkpoint, found '" + ckpt.kind + "'");
  auto s = fresh(GagTrainConfig::from_json(section_of(ckpt.config, "train")));
  restore_generator(ckpt, *s.generator);
  restore_module(ckpt.section("gag.disc"), *s.disc);
  restore_adam(ckpt.section("gag.optim.gen"), *s.opt_gen, *s.generator);
  restore_adam(ckpt.section("gag.optim.disc"), *s.opt_disc, *s.disc);
  s.epoch = ckpt.epoch;
  s.ulc_hash = ckpt.config.value("ulc_hash", "");
  return s;
}

Ulc load_ulc(const fs::path& path) {
  const auto ckpt = load_checkpoint(path, "ulc");
  const auto config = UlcTrainConfig::from_json(section_of(ckpt.config, "train"));
  Ulc ulc(config.model);
  restore_module(ckpt.section("ulc.standardize"), *ulc->standardize);
  restore_module(ckpt.section("ulc.enc_target"), *ulc->enc_target);
  restore_module(ckpt.section("ulc.enc_source"), *ulc->enc_source);
  restore_module(ckpt.section("ulc.dec_shift"), *ulc->dec_shift);
  check_finite_parameters(*ulc, path.string());
  return ulc;
}

Generator load_generator(const fs::path& path) {
  const auto ckpt = load_checkpoint(path, "gag");
  const auto config = GagTrainConfig::from_json(section_of(ckpt.config, "train"));
  Generator g(config.model);
  restore_generator(ckpt, *g);
  check_finite_parameters(*g, path.string());
  return g;
}

torch::Tensor load_face_tensor(const Dataset& dataset, const SampleKey& key, std::int64_t size) {
  auto t = dataset.image(key).tensor();
  if (t.size(1) == size && t.size(2) == size) return t;
  return torch::adaptive_avg_pool2d(t.unsqueeze(0), {size, size}).squeeze(0);
}

LandmarkConverter converter_of(Ulc& ulc) {
  check_finite_parameters(*ulc, "converter");
  Ulc handle = ulc;
  return [handle](const Landmark& target_ref, const Landmark& source) mutable {
    torch::NoGradGuard guard;
    const auto dtype = handle->parameters().front().scalar_type();
    return landmark_from_tensor(handle->forward(landmark_tensor(target_ref, dtype).unsqueeze(0),
                                                landmark_tensor(source, dtype).unsqueeze(0)));
  };
}

// ---- phase 1 ---------------------------------------------------------------------------

namespace {

struct IndexedTuple {
  std::int64_t target_ref, source, source_ref, truth;  // rows of the landmark table; truth -1 if unsupervised
  std::vector<std::int64_t> target_real;              // observed landmarks of T in the pose
};

void save_state(const fs::path& dir, const char* name, const Checkpoint& ckpt) {
  if (!dir.empty()) save_checkpoint(dir / name, ckpt);
}

bool due(std::int64_t every, std::int64_t epoch, std::int64_t last) {
  return epoch == last || (every > 0 && epoch % every == 0);
}

}  // namespace

UlcTrainResult train_ulc(const Dataset& dataset, const UlcTrainConfig& config,
                         const TrainOutput& output) {
  if (dataset.identities().size() < 2) {
    fail(ErrorKind::config, "converter training needs at least 2 identities");
  }
  const auto split = make_holdout_split(dataset, config.holdout_fraction, config.holdout_seed);
  const auto tuples = ulc_training_tuples(dataset, split);
  if (tuples.empty()) fail(ErrorKind::config, "no converter training tuples in the dataset");

  // Landmark table: one row per record, indexed by key.
  std::map<SampleKey, std::int64_t> row;
  std::vector<Landmark> table;
  for (const auto& r : dataset.manifest().records) {
    row.emplace(r.key, static_cast<std::int64_t>(table.size()));
    table.push_back(dataset.landmark(r.key));
  }
  const auto landmarks = landmark_batch(table, torch::kFloat32);
  const auto& ref = dataset.reference_expression();
  std::vector<IndexedTuple> indexed;
  for (const auto& t : tuples) {
    IndexedTuple it{row.at({t.target, ref, t.pose}), row.at({t.source, t.expression, t.pose}),
                    row.at({t.source, ref, t.pose}),
                    t.supervised ? row.at({t.target, t.expression, t.pose}) : -1,
                    {}};
    for (const auto& e : dataset.expressions()) {
      const SampleKey k{t.target, e, t.pose};
      if (dataset.contains(k) && !split.contains(k)) it.target_real.push_back(row.at(k));
    }
    indexed.push_back(std::move(it));
  }

  UlcTrainResult result{UlcState::fresh(config), {}};
  auto& st = result.state;
  std::vector<std::int64_t> train_rows;
  for (const auto& r : dataset.manifest().records) {
    if (!split.contains(r.key)) train_rows.push_back(row.at(r.key));
  }
  if (config.standardize_inputs) {
    st.ulc->standardize->fit(landmarks.index_select(0, torch::tensor(train_rows, torch::kInt64)));
    st.disc->standardize->copy_from(*st.ulc->standardize);
  }
  const auto& w = config.weights;
  const bool adversarial = w.lambda3 > 0;
  const auto gen_params = st.ulc->parameters();
  const auto disc_params = st.disc->parameters();
  std::mt19937_64 rng(config.seed);

  prepare_output(output);
  save_state(output.dir, kUlcCheckpointName, st.to_checkpoint());

  std::vector<std::size_t> order(indexed.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_schedule(config.adam.lr, config.adam.decay_every, epoch);
    set_lr(*st.opt_gen, lr);
    set_lr(*st.opt_disc, lr);
    std::shuffle(order.begin(), order.end(), rng);

    double sum_l1 = 0, sum_cyc = 0, sum_adv = 0, sum_disc = 0, sum_total = 0;
    std::int64_t n_l1 = 0, steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const auto end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<std::int64_t> i_tref, i_src, i_sref, i_truth, i_real, i_any;
      std::vector<float> mask;
      for (auto k = begin; k < end; ++k) {
        const auto& t = indexed[order[k]];
        i_tref.push_back(t.target_ref);
        i_src.push_back(t.source);
        i_sref.push_back(t.source_ref);
        i_truth.push_back(std::max<std::int64_t>(t.truth, 0));
        mask.push_back(t.truth >= 0 ? 1.0f : 0.0f);
        i_real.push_back(t.target_real[std::uniform_int_distribution<std::size_t>(
            0, t.target_real.size() - 1)(rng)]);
        i_any.push_back(train_rows[std::uniform_int_distribution<std::size_t>(0, train_rows.size() - 1)(rng)]);
      }
      auto rows = [&](const std::vector<std::int64_t>& idx) {
        return landmarks.index_select(0, torch::tensor(idx, torch::kInt64));
      };
      const auto t_ref = rows(i_tref), src = rows(i_src), s_ref = rows(i_sref);
      // D_TF sees any observed landmark as real; D_S pairs the target reference with one of T's own.
      const auto truth = rows(i_truth), real = rows(i_real), real_any = rows(i_any);
      const auto m = torch::tensor(mask);
      const auto n_sup = m.sum().item<double>();

      auto fake = st.ulc->forward(t_ref, src);

      torch::Tensor adv_gen = torch::zeros({});
      if (adversarial) {
        const auto fake_d = fake.detach();
        auto tf = d_tf_loss(real_any, fake_d, st.disc);
        auto ds = d_s_loss({t_ref, real}, {t_ref, fake_d}, st.disc);
        auto d_loss = tf.disc_loss + ds.disc_loss;
        st.opt_disc->zero_grad();
        d_loss.backward();
        step(*st.opt_disc, disc_params, config.grad_clip);
        sum_disc += d_loss.item<double>();

        set_requires_grad(*st.disc, false);
        auto tf_g = d_tf_loss(real_any, fake, st.disc);
        auto ds_g = d_s_loss({t_ref, real}, {t_ref, fake}, st.disc);
        adv_gen = tf_g.gen_term * config.d_tf_weight + ds_g.gen_term * config.d_s_weight;
        set_requires_grad(*st.disc, true);
      }

      torch::Tensor l1 = torch::zeros({});
      if (n_sup > 0) l1 = ((fake - truth).abs().sum(1) * m).sum() / n_sup;
      torch::Tensor cyc;
      if (w.lambda2 > 0) {
        cyc = cycle_loss(st.ulc, s_ref, t_ref, src);
      } else {
        torch::NoGradGuard guard;
        cyc = cycle_loss(st.ulc, s_ref, t_ref, src);
      }
      auto total = ulc_total_loss(w.lambda1 > 0 ? l1 : l1.detach(), w.lambda2 > 0 ? cyc : cyc.detach(),
                                  adv_gen, w);
      const double total_v = total.item<double>();
      if (!std::isfinite(total_v)) {
        fail(ErrorKind::divergence, "converter loss became non-finite at epoch " +
                                        std::to_string(epoch + 1) + ", step " + std::to_string(steps + 1));
      }
      st.opt_gen->zero_grad();
      if (total.requires_grad()) {
        total.backward();
        step(*st.opt_gen, gen_params, config.grad_clip);
      }
      if (n_sup > 0) {
        sum_l1 += l1.item<double>() * n_sup;
        n_l1 += static_cast<std::int64_t>(n_sup);
      }
      sum_cyc += cyc.item<double>();
      sum_adv += adv_gen.item<double>();
      sum_total += total_v;
      ++steps;
    }
    check_finite_parameters(*st.ulc, "converter");
    st.epoch = static_cast<std::uint64_t>(epoch + 1);

    nlohmann::json record = {
        {"epoch", epoch + 1},
        {"lr", lr},
        {"l1", number_or_null(mean_or_nan(sum_l1, n_l1))},
        {"cycle", sum_cyc / static_cast<double>(steps)},
        {"adv_gen", adversarial ? nlohmann::json(sum_adv / static_cast<double>(steps)) : nlohmann::json(nullptr)},
        {"disc", adversarial ? nlohmann::json(sum_disc / static_cast<double>(steps)) : nlohmann::json(nullptr)},
        {"total", sum_total / static_cast<double>(steps)},
        {"heldout_ace", number_or_null(heldout_ace(dataset, split, *st.ulc))}};
    result.log.push_back(record);
    if (!output.dir.empty()) {
      append_line(output.dir / kMetricsLogName, record);
      if (due(config.checkpoint_every, epoch + 1, config.epochs)) {
        save_state(output.dir, kUlcCheckpointName, st.to_checkpoint());
      }
    }
    if (output.on_epoch) output.on_epoch(record);
  }
  return result;
}

// ---- phase 2 ---------------------------------------------------------------------------

namespace {

class FaceCache {
 public:
  FaceCache(const Dataset& dataset, std::int64_t size) : dataset_(dataset), size_(size) {}

  const torch::Tensor& get(const SampleKey& key) {
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, load_face_tensor(dataset_, key, size_)).first;
    return it->second;
  }

 private:
  const Dataset& dataset_;
  std::int64_t size_;
  std::map<SampleKey, torch::Tensor> cache_;
};

}  // namespace

GagTrainResult train_gag(const Dataset& dataset, Ulc& ulc, const GagTrainConfig& config,
                         const TrainOutput& output) {
  const auto& ref = dataset.reference_expression();
  std::vector<SampleKey> samples;
  for (const auto& r : dataset.manifest().records) {
    if (dataset.contains({r.key.identity, ref, r.key.pose})) samples.push_back(r.key);
  }
  if (samples.empty()) fail(ErrorKind::config, "no generator training samples in the dataset");

  ulc->eval();
  set_requires_grad(*ulc, false);
  GagTrainResult result{GagState::fresh(config), {}, hex64(parameter_hash(*ulc)), {}};
  auto& st = result.state;
  st.ulc_hash = result.ulc_hash_before;
  const auto converter = converter_of(ulc);
  const auto kappa = make_extractor(config.extractor, config.seed);
  const auto& w = config.weights;
  const bool adversarial = w.lambda_adv > 0;
  const bool triplets = w.lambda_tp > 0;
  const auto size = config.model.image_size;
  const int res = static_cast<int>(config.model.landmark_resolution());
  const auto gen_params = st.generator->parameters();
  const auto disc_params = st.disc->parameters();
  const auto disc_landmarks = config.model.disc_conditional;
  FaceCache faces(dataset, size);
  std::mt19937_64 rng(config.seed);

  prepare_output(output);
  save_state(output.dir, kGagCheckpointName, st.to_checkpoint());

  auto raster = [&](const Landmark& l) { return to_tensor(rasterize(l, dataset.parts(), res)); };

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_schedule(config.adam.lr, config.adam.decay_every, epoch);
    set_lr(*st.opt_gen, lr);
    set_lr(*st.opt_disc, lr);
    std::shuffle(order.begin(), order.end(), rng);

    double sum_pix = 0, sum_adv = 0, sum_disc = 0, sum_tp = 0, sum_total = 0;
    std::int64_t steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const auto end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<torch::Tensor> refs, truths, lms;
      for (auto k = begin; k < end; ++k) {
        const auto& key = samples[order[k]];
        std::vector<std::string> sources;
        for (const auto& id : dataset.identities()) {
          if (id != key.identity && dataset.contains({id, key.expression, key.pose})) sources.push_back(id);
        }
        const auto& s = sources.empty()
                            ? key.identity
                            : sources[std::uniform_int_distribution<std::size_t>(0, sources.size() - 1)(rng)];
        const auto converted = converter(dataset.landmark({key.identity, ref, key.pose}),
                                         dataset.landmark({s, key.expression, key.pose}));
        refs.push_back(faces.get({key.identity, ref, key.pose}));
        truths.push_back(faces.get(key));
        lms.push_back(raster(converted));
      }
      const auto reference = torch::stack(refs), truth = torch::stack(truths), lm = torch::stack(lms);
      const auto lm_d = disc_landmarks ? lm : torch::Tensor();

      auto fake = st.generator->forward(reference, lm);

      torch::Tensor adv_gen = torch::zeros({});
      if (adversarial) {
        auto d = gag_adv_loss(truth, fake.detach(), st.disc, lm_d);
        st.opt_disc->zero_grad();
        d.disc_loss.backward();
        step(*st.opt_disc, disc_params, config.grad_clip);
        sum_disc += d.disc_loss.item<double>();
        set_requires_grad(*st.disc, false);
        adv_gen = gag_adv_loss(truth, fake, st.disc, lm_d).gen_term;
        set_requires_grad(*st.disc, true);
      }

      torch::Tensor tp = torch::zeros({});
      if (triplets) {
        std::vector<torch::Tensor> t_refs[3], t_lms[3];
        for (std::int64_t k = 0; k < config.triplets_per_step; ++k) {
          const auto roles = sample_triplet_roles(dataset, rng);
          const auto src = triplet_sources(dataset, roles, converter);
          for (int role = 0; role < 3; ++role) {
            t_refs[role].push_back(faces.get(src.references[role]));
            t_lms[role].push_back(raster(src.landmarks[role]));
          }
        }
        std::vector<torch::Tensor> all_refs, all_lms;
        for (int role = 0; role < 3; ++role) {
          all_refs.insert(all_refs.end(), t_refs[role].begin(), t_refs[role].end());
          all_lms.insert(all_lms.end(), t_lms[role].begin(), t_lms[role].end());
        }
        auto out = st.generator->forward(torch::stack(all_refs), torch::stack(all_lms));
        auto parts = out.chunk(3, 0);
        tp = tp_loss(parts[0], parts[1], parts[2], *kappa, config.margin, config.perceptual);
      }

      auto pix = pixel_loss(fake, truth);
      auto total = gag_total_loss(pix, adv_gen, tp, w);
      const double total_v = total.item<double>();
      if (!std::isfinite(total_v)) {
        fail(ErrorKind::divergence, "generator loss became non-finite at epoch " +
                                        std::to_string(epoch + 1) + ", step " + std::to_string(steps + 1));
      }
      st.opt_gen->zero_grad();
      total.backward();
      step(*st.opt_gen, gen_params, config.grad_clip);

      sum_pix += pix.item<double>();
      sum_adv += adv_gen.item<double>();
      sum_tp += tp.item<double>();
      sum_total += total_v;
      ++steps;
    }
    check_finite_parameters(*st.generator, "generator");
    st.epoch = static_cast<std::uint64_t>(epoch + 1);

    const auto n = static_cast<double>(steps);
    nlohmann::json record = {
        {"epoch", epoch + 1},
        {"lr", lr},
        {"pixel", sum_pix / n},
        {"adv_gen", adversarial ? nlohmann::json(sum_adv / n) : nlohmann::json(nullptr)},
        {"disc", adversarial ? nlohmann::json(sum_disc / n) : nlohmann::json(nullptr)},
        {"tp", triplets ? nlohmann::json(sum_tp / n) : nlohmann::json(nullptr)},
        {"total", sum_total / n}};
    result.log.push_back(record);
    if (!output.dir.empty()) {
      append_line(output.dir / kMetricsLogName, record);
      if (due(config.checkpoint_every, epoch + 1, config.epochs)) {
        save_state(output.dir, kGagCheckpointName, st.to_checkpoint());
      }
    }
    if (output.on_epoch) output.on_epoch(record);
  }

  result.ulc_hash_after = hex64(parameter_hash(*ulc));
  if (result.ulc_hash_after != result.ulc_hash_before) {
    fail(ErrorKind::structural, "frozen converter changed during generator training");
  }
  return result;
}

}  // namespace reenact
