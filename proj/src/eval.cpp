#include "reenact/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <thread>

#include "reenact/error.hpp"
#include "reenact/nn.hpp"

namespace reenact {

namespace {

torch::Tensor gaussian_window(int size, double sigma) {
  auto x = torch::arange(size, torch::kFloat64) - (size - 1) / 2.0;
  auto g = torch::exp(-(x * x) / (2 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g).reshape({1, 1, size, size});
}

// Mean SSIM of two [C, H, W] float64 images in [0, 1], averaged over channels.
double ssim_planes(const torch::Tensor& a, const torch::Tensor& b, int window, double sigma) {
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  if (a.size(1) < window || a.size(2) < window) {
    fail(ErrorKind::domain, "images are smaller than the SSIM window");
  }
  const auto w = gaussian_window(window, sigma);
  auto filt = [&](const torch::Tensor& x) { return torch::conv2d(x.unsqueeze(1), w); };
  const auto mu_a = filt(a), mu_b = filt(b);
  const auto s_aa = filt(a * a) - mu_a * mu_a;
  const auto s_bb = filt(b * b) - mu_b * mu_b;
  const auto s_ab = filt(a * b) - mu_a * mu_b;
  const auto map = ((2 * mu_a * mu_b + c1) * (2 * s_ab + c2)) /
                   ((mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2));
  return map.mean().item<double>();
}

torch::Tensor to_unit_planes(const torch::Tensor& img, bool luma) {
  auto x = (img.detach().to(torch::kFloat64) + 1.0) / 2.0;
  if (!luma) return x;
  return (x[0] * 0.299 + x[1] * 0.587 + x[2] * 0.114).unsqueeze(0);
}

// Symmetric square root with negative eigenvalues clipped to zero.
torch::Tensor sqrt_psd(const torch::Tensor& m) {
  auto [vals, vecs] = torch::linalg_eigh((m + m.transpose(0, 1)) / 2);
  return vecs.matmul(torch::diag(vals.clamp_min(0).sqrt())).matmul(vecs.transpose(0, 1));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

}  // namespace

double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& options) {
  if (a.sizes() != b.sizes() || a.dim() != 3 || a.size(0) != 3) {
    fail(ErrorKind::structural, "ssim needs two [3, H, W] images of equal shape");
  }
  return ssim_planes(to_unit_planes(a, options.luma), to_unit_planes(b, options.luma), options.window,
                     options.sigma);
}

double ssim(const FaceImage& a, const FaceImage& b, const SsimOptions& options) {
  return ssim(a.tensor(), b.tensor(), options);
}

FidResult fid(const torch::Tensor& features_real, const torch::Tensor& features_fake) {
  if (features_real.dim() != 2 || features_fake.dim() != 2 ||
      features_real.size(1) != features_fake.size(1)) {
    fail(ErrorKind::structural, "fid needs two [N, D] feature sets of equal dimension");
  }
  FidResult out;
  const auto d = features_real.size(1);
  for (const auto* f : {&features_real, &features_fake}) {
    if (f->size(0) < 2) fail(ErrorKind::data, "fid needs at least 2 samples per set");
    const auto msg = "sample count " + std::to_string(f->size(0)) +
                     " does not exceed feature dimension " + std::to_string(d) +
                     "; covariance is rank deficient";
    if (f->size(0) <= d && (out.warnings.empty() || out.warnings.back() != msg)) {
      out.warnings.push_back(msg);
    }
  }
  auto stats = [](const torch::Tensor& f) {
    auto x = f.detach().to(torch::kFloat64);
    auto mu = x.mean(0);
    auto c = x - mu;
    return std::pair{mu, c.transpose(0, 1).matmul(c) / static_cast<double>(x.size(0) - 1)};
  };
  const auto [mu1, s1] = stats(features_real);
  const auto [mu2, s2] = stats(features_fake);
  if (!torch::isfinite(s1).all().item<bool>() || !torch::isfinite(s2).all().item<bool>()) {
    fail(ErrorKind::data, "fid covariance is not finite");
  }
  // tr((S1 S2)^1/2) = tr((S1^1/2 S2 S1^1/2)^1/2), whose argument is symmetric.
  const auto r1 = sqrt_psd(s1);
  const auto inner = r1.matmul(s2).matmul(r1);
  const auto eig = torch::linalg_eigvalsh((inner + inner.transpose(0, 1)) / 2);
  const double tr_sqrt = eig.clamp_min(0).sqrt().sum().item<double>();
  const double mean_term = (mu1 - mu2).pow(2).sum().item<double>();
  out.value = std::max(0.0, mean_term + s1.trace().item<double>() + s2.trace().item<double>() - 2 * tr_sqrt);
  return out;
}

std::int64_t count_params(const torch::nn::Module& module) { return count_parameters(module); }

std::int64_t count_params(const std::vector<const torch::nn::Module*>& modules) {
  std::int64_t n = 0;
  for (const auto* m : modules) n += count_parameters(*m);
  return n;
}

nlohmann::json SpeedReport::to_json() const {
  return {{"device", device},       {"iterations", iterations}, {"warmup", warmup},
          {"runs", runs},           {"fps_median", fps_median}, {"fps_min", fps_min},
          {"fps_max", fps_max},     {"fps_mad", fps_mad}};
}

SpeedReport measure_speed(const std::function<void()>& forward, const std::string& device,
                          std::int64_t iterations, std::int64_t warmup, std::int64_t runs) {
  if (iterations < 1) fail(ErrorKind::config, "speed measurement needs at least 1 iteration");
  if (runs < 1) fail(ErrorKind::config, "speed measurement needs at least 1 run");
  if (warmup < 0) fail(ErrorKind::config, "warmup must be non-negative");
  for (std::int64_t i = 0; i < warmup; ++i) forward();
  std::vector<double> fps;
  for (std::int64_t r = 0; r < runs; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::int64_t i = 0; i < iterations; ++i) forward();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    fps.push_back(static_cast<double>(iterations) / std::max(secs, 1e-12));
  }
  SpeedReport rep{device, iterations, warmup, runs};
  rep.fps_median = median(fps);
  rep.fps_min = *std::min_element(fps.begin(), fps.end());
  rep.fps_max = *std::max_element(fps.begin(), fps.end());
  std::vector<double> dev;
  for (double f : fps) dev.push_back(std::abs(f - rep.fps_median));
  rep.fps_mad = median(dev);
  return rep;
}

std::string device_descriptor() {
  std::string model = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
  return "cpu: " + model + ", " + std::to_string(torch::get_num_threads()) + " threads";
}

bool AblationTable::ordered() const {
  if (rows.size() < 2) return false;
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const double gap = rows[i].mean - rows[i + 1].mean;
    if (!(gap > std::max(rows[i].spread, rows[i + 1].spread))) return false;
  }
  return true;
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rows) {
    rs.push_back({{"name", r.name}, {"ace", r.ace}, {"mean", r.mean}, {"spread", r.spread},
                  {"stddev", r.stddev}});
  }
  return {{"seeds", seeds}, {"rows", rs}, {"ordered", ordered()}};
}

AblationTable run_ablation_table3(const Dataset& dataset, const std::vector<std::uint64_t>& seeds,
                                  const UlcTrainConfig& base,
                                  const std::function<void(const std::string&)>& progress) {
  if (seeds.size() < 2) fail(ErrorKind::config, "the ablation needs at least 2 seeds");
  if (!(base.holdout_fraction > 0)) fail(ErrorKind::config, "the ablation needs a held-out split");
  struct Variant {
    const char* name;
    bool cycle;
    bool adversarial;
  };
  const Variant variants[] = {{"L1", false, false}, {"L1+cyc", true, false}, {"L1+cyc+D", true, true}};
  AblationTable table;
  table.seeds = seeds;
  for (const auto& v : variants) {
    AblationRow row;
    row.name = v.name;
    for (auto seed : seeds) {
      auto cfg = base;
      cfg.seed = seed;
      if (!v.cycle) cfg.weights.lambda2 = 0;
      if (!v.adversarial) cfg.weights.lambda3 = 0;
      auto result = train_ulc(dataset, cfg);
      const auto split = make_holdout_split(dataset, cfg.holdout_fraction, cfg.holdout_seed);
      row.ace.push_back(heldout_ace(dataset, split, *result.state.ulc));
      if (progress) {
        progress(std::string(v.name) + " seed " + std::to_string(seed) + ": held-out ACE " +
                 std::to_string(row.ace.back()));
      }
    }
    const auto n = static_cast<double>(row.ace.size());
    double sum = 0;
    for (double a : row.ace) sum += a;
    row.mean = sum / n;
    double sq = 0;
    for (double a : row.ace) sq += (a - row.mean) * (a - row.mean);
    row.stddev = std::sqrt(sq / (n - 1));
    row.spread = *std::max_element(row.ace.begin(), row.ace.end()) -
                 *std::min_element(row.ace.begin(), row.ace.end());
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a(bytes.data(), bytes.size()));
}

nlohmann::json evaluate_checkpoints(const Dataset& dataset, const std::filesystem::path& ulc_path,
                                    const std::filesystem::path& gag_path,
                                    const EvalOptions& options) {
  auto ulc = load_ulc(ulc_path);
  auto gen = load_generator(gag_path);
  ulc->eval();
  gen->eval();
  const auto converter = converter_of(ulc);
  const auto kappa = make_extractor(options.extractor, options.seed);
  const auto size = gen->config().image_size;
  const int res = static_cast<int>(gen->config().landmark_resolution());
  const auto& ref = dataset.reference_expression();
  std::mt19937_64 rng(options.seed);
  torch::NoGradGuard guard;

  // Converter ACE over every cross-identity (T, S, n) with ground truth.
  double ace_sum = 0;
  std::int64_t ace_n = 0;
  // Reenactment: each record (T, n) driven by a random other identity's expression n.
  std::vector<torch::Tensor> real, fake;
  double ssim_sum = 0;
  for (const auto& r : dataset.manifest().records) {
    const auto& k = r.key;
    if (!dataset.contains({k.identity, ref, k.pose})) continue;
    const auto& t_ref = dataset.landmark({k.identity, ref, k.pose});
    std::vector<std::string> sources;
    for (const auto& s : dataset.identities()) {
      if (s == k.identity || !dataset.contains({s, k.expression, k.pose})) continue;
      sources.push_back(s);
      ace_sum += ace(converter(t_ref, dataset.landmark({s, k.expression, k.pose})), dataset.landmark(k));
      ++ace_n;
    }
    if (sources.empty()) continue;
    const auto& s = sources[std::uniform_int_distribution<std::size_t>(0, sources.size() - 1)(rng)];
    const auto lm = to_tensor(rasterize(converter(t_ref, dataset.landmark({s, k.expression, k.pose})),
                                        dataset.parts(), res));
    const auto reference = load_face_tensor(dataset, {k.identity, ref, k.pose}, size);
    const auto truth = load_face_tensor(dataset, k, size);
    auto out = gen->forward(reference.unsqueeze(0), lm.unsqueeze(0)).squeeze(0);
    ssim_sum += ssim(out, truth, options.ssim);
    real.push_back(truth);
    fake.push_back(out);
  }

  const auto dataset_hash = dataset.hash();
  const auto ckpt_hash = file_hash(ulc_path) + ":" + file_hash(gag_path);
  const auto device = device_descriptor();
  nlohmann::json metrics = nlohmann::json::array();
  auto add = [&](const std::string& name, nlohmann::json value, nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json m = {{"metric", name},
                        {"value", std::move(value)},
                        {"dataset_hash", dataset_hash},
                        {"checkpoint_hash", ckpt_hash},
                        {"device", device}};
    m.update(extra);
    metrics.push_back(std::move(m));
  };
  add("ace", ace_n > 0 ? nlohmann::json(ace_sum / static_cast<double>(ace_n)) : nlohmann::json(nullptr),
      {{"pairs", ace_n}});
  if (!real.empty()) {
    add("ssim", ssim_sum / static_cast<double>(real.size()), {{"pairs", real.size()}});
    auto pooled = [&](const std::vector<torch::Tensor>& imgs) {
      return torch::adaptive_avg_pool2d(kappa->feature_map(torch::stack(imgs)), {2, 2}).flatten(1);
    };
    if (real.size() >= 2) {
      const auto f = fid(pooled(real), pooled(fake));
      add("fid", f.value, {{"extractor", kappa->name()}, {"warnings", f.warnings}});
    }
  }
  add("ulc_parameters", count_params(*ulc));
  add("gag_parameters", count_params(*gen));

  const auto some = dataset.manifest().records.front().key;
  const auto l_in = landmark_tensor(dataset.landmark(some)).unsqueeze(0);
  const auto ulc_speed = measure_speed([&] { ulc->forward(l_in, l_in); }, device, options.speed_iterations);
  add("ulc_fps", ulc_speed.fps_median, ulc_speed.to_json());
  const auto img_in = torch::zeros({1, 3, size, size});
  const auto lm_in = torch::zeros({1, 1, res, res});
  const auto gag_speed = measure_speed([&] { gen->forward(img_in, lm_in); }, device,
                                       std::max<std::int64_t>(1, options.speed_iterations / 10), 1, 3);
  add("gag_fps", gag_speed.fps_median, gag_speed.to_json());
  return {{"metrics", metrics},
          {"dataset_hash", dataset_hash},
          {"checkpoint_hash", ckpt_hash},
          {"device", device}};
}

}  // namespace reenact
