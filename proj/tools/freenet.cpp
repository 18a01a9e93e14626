#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <torch/torch.h>

#include "reenact/config.hpp"
#include "reenact/data.hpp"
#include "reenact/error.hpp"
#include "reenact/eval.hpp"
#include "reenact/gag.hpp"
#include "reenact/image.hpp"
#include "reenact/landmark.hpp"
#include "reenact/service.hpp"
#include "reenact/train.hpp"
#include "reenact/ulc.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace reenact;

namespace {

constexpr const char* kConfigEnv = "FREENET_CONFIG";

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& common) {
  cmd->add_option("--config", common.config_path,
                  std::string("flat key = value config file (default: $") + kConfigEnv + ")");
  cmd->add_option("--set", common.overrides, "override one config key, e.g. --set ulc.epochs=50");
  cmd->add_option("--seed", common.seed, "random seed");
}

/// File (explicit or from the environment), then --set overrides.
json layered_config(const CommonOptions& common) {
  json config = json::object();
  fs::path path = common.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnv); env && *env) path = env;
  }
  if (!path.empty()) config = read_flat_config(path);
  for (const auto& o : common.overrides) apply_override(config, o);
  check_keys(config, {"ulc", "gag", "data", "eval", "serve", "ablation"}, "config");
  return config;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot write " + path.string());
  f << text;
  if (!f) fail(ErrorKind::io, "cannot write " + path.string());
}

void seed_torch(const CommonOptions& common) {
  torch::manual_seed(common.seed.value_or(0));
}

FaceImage reference_at(const fs::path& path, std::int64_t size) {
  auto t = FaceImage::from_rgb8(read_png(path)).tensor();
  if (t.size(1) != size || t.size(2) != size) {
    t = torch::adaptive_avg_pool2d(t.unsqueeze(0), {size, size}).squeeze(0);
  }
  return FaceImage(t);
}

FaceImage render(const FaceImage& reference, const Landmark& l, Generator& gen) {
  const auto res = static_cast<int>(gen->config().landmark_resolution());
  return generate(reference, rasterize(l, default_part_grouping(), res), gen);
}

void print_record(const json& record) { std::cout << record.dump() << std::endl; }

// ---- subcommands -------------------------------------------------------------

struct SynthArgs {
  CommonOptions common;
  std::string out;
  std::optional<int> identities, expressions, poses;
};

int run_synth(const SynthArgs& a) {
  const auto config = layered_config(a.common);
  const auto data = section_of(config, "data");
  check_keys(data, {"identities", "expressions", "poses", "seed"}, "data");
  SyntheticSpec spec;
  spec.identities = a.identities.value_or(get_or(data, "identities", spec.identities, "data"));
  spec.expressions = a.expressions.value_or(get_or(data, "expressions", spec.expressions, "data"));
  spec.poses = a.poses.value_or(get_or(data, "poses", spec.poses, "data"));
  spec.seed = a.common.seed.value_or(get_or(data, "seed", spec.seed, "data"));
  const auto manifest = generate_synthetic_dataset(spec, a.out);
  print_record({{"manifest", manifest.string()}, {"dataset_hash", load_dataset(manifest).hash()}});
  return 0;
}

struct TrainUlcArgs {
  CommonOptions common;
  std::string data, out;
  std::optional<std::int64_t> epochs;
};

int run_train_ulc(const TrainUlcArgs& a) {
  auto cfg = UlcTrainConfig::from_json(section_of(layered_config(a.common), "ulc"));
  if (a.common.seed) cfg.seed = *a.common.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  const auto dataset = load_dataset(a.data);
  train_ulc(dataset, cfg, {a.out, print_record});
  return 0;
}

struct TrainGagArgs {
  CommonOptions common;
  std::string data, ulc, out;
  std::optional<std::int64_t> epochs;
};

int run_train_gag(const TrainGagArgs& a) {
  auto cfg = GagTrainConfig::from_json(section_of(layered_config(a.common), "gag"));
  if (a.common.seed) cfg.seed = *a.common.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  const auto dataset = load_dataset(a.data);
  auto ulc = load_ulc(a.ulc);
  train_gag(dataset, ulc, cfg, {a.out, print_record});
  return 0;
}

struct ReenactArgs {
  CommonOptions common;
  std::string reference, ref_landmarks, source_landmarks, ulc, gag, out;
};

int run_reenact(const ReenactArgs& a) {
  layered_config(a.common);
  seed_torch(a.common);
  auto ulc = load_ulc(a.ulc);
  auto gen = load_generator(a.gag);
  const auto converted =
      convert(read_landmark_file(a.ref_landmarks), read_landmark_file(a.source_landmarks), ulc);
  const auto out = render(reference_at(a.reference, gen->config().image_size), converted, gen);
  const fs::path out_path(a.out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_png(out_path, out.to_rgb8());
  print_record({{"image", a.out}, {"converted_landmarks", landmark_to_json(converted)}});
  return 0;
}

struct InterpolateArgs {
  CommonOptions common;
  std::string a, b, reference, gag, out;
  int steps = 5;
};

int run_interpolate(const InterpolateArgs& a) {
  layered_config(a.common);
  seed_torch(a.common);
  if (a.steps < 1) fail(ErrorKind::config, "--steps must be at least 1");
  const auto la = read_landmark_file(a.a);
  const auto lb = read_landmark_file(a.b);
  std::optional<Generator> gen;
  std::optional<FaceImage> reference;
  if (!a.gag.empty()) {
    if (a.reference.empty()) fail(ErrorKind::config, "--gag needs --reference");
    gen = load_generator(a.gag);
    reference = reference_at(a.reference, (*gen)->config().image_size);
  }
  const fs::path out(a.out);
  fs::create_directories(out);
  json frames = json::array();
  for (int i = 0; i < a.steps; ++i) {
    const double t = a.steps == 1 ? 0.0 : static_cast<double>(i) / (a.steps - 1);
    const auto l = interpolate(la, lb, t);
    char stem[32];
    std::snprintf(stem, sizeof stem, "frame_%03d", i);
    write_landmark_file(out / (std::string(stem) + ".json"), l);
    json frame = {{"t", t}, {"landmarks", std::string(stem) + ".json"}};
    if (gen) {
      write_png(out / (std::string(stem) + ".png"), render(*reference, l, *gen).to_rgb8());
      frame["image"] = std::string(stem) + ".png";
    }
    frames.push_back(frame);
  }
  print_record({{"frames", frames}});
  return 0;
}

struct ManipulateArgs {
  CommonOptions common;
  std::string landmarks, edits_file, reference, gag, out;
  std::vector<std::string> edits;
};

/// "index:dx,dy"
LandmarkEdit parse_edit(const std::string& text) {
  LandmarkEdit e;
  double dx = 0, dy = 0;
  std::size_t index = 0;
  char tail = 0;
  if (std::sscanf(text.c_str(), "%zu:%lf,%lf%c", &index, &dx, &dy, &tail) != 3) {
    fail(ErrorKind::config, "edit '" + text + "' is not of the form index:dx,dy");
  }
  e.point_index = index;
  e.delta = {dx, dy};
  return e;
}

int run_manipulate(const ManipulateArgs& a) {
  layered_config(a.common);
  seed_torch(a.common);
  std::vector<LandmarkEdit> edits;
  for (const auto& e : a.edits) edits.push_back(parse_edit(e));
  if (!a.edits_file.empty()) {
    std::ifstream f(a.edits_file);
    if (!f) fail(ErrorKind::io, "cannot read " + a.edits_file);
    const auto doc = json::parse(f, nullptr, false);
    if (!doc.is_array()) fail(ErrorKind::data, a.edits_file + ": expected an array of edits");
    for (const auto& item : doc) {
      if (!item.is_object() || !item.contains("point") || !item.contains("delta") ||
          !item["point"].is_number_unsigned() || !item["delta"].is_array() ||
          item["delta"].size() != 2) {
        fail(ErrorKind::data, a.edits_file + ": each edit is {\"point\": i, \"delta\": [dx, dy]}");
      }
      edits.push_back({item["point"].get<std::size_t>(),
                       {item["delta"][0].get<double>(), item["delta"][1].get<double>()}});
    }
  }
  const auto edited = manipulate(read_landmark_file(a.landmarks), edits);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_landmark_file(out / "landmarks.json", edited);
  json record = {{"landmarks", "landmarks.json"}, {"edits", edits.size()}};
  if (!a.gag.empty()) {
    if (a.reference.empty()) fail(ErrorKind::config, "--gag needs --reference");
    auto gen = load_generator(a.gag);
    write_png(out / "image.png",
              render(reference_at(a.reference, gen->config().image_size), edited, gen).to_rgb8());
    record["image"] = "image.png";
  }
  print_record(record);
  return 0;
}

struct EvalArgs {
  CommonOptions common;
  std::string data, ulc, gag, out;
};

int run_eval(const EvalArgs& a) {
  const auto ev = section_of(layered_config(a.common), "eval");
  check_keys(ev, {"extractor", "speed_iterations", "ssim_luma", "seed"}, "eval");
  EvalOptions opts;
  opts.extractor = get_or(ev, "extractor", opts.extractor, "eval");
  opts.speed_iterations = get_or(ev, "speed_iterations", opts.speed_iterations, "eval");
  opts.ssim.luma = get_or(ev, "ssim_luma", opts.ssim.luma, "eval");
  opts.seed = a.common.seed.value_or(get_or(ev, "seed", opts.seed, "eval"));
  seed_torch(a.common);
  const auto report = evaluate_checkpoints(load_dataset(a.data), a.ulc, a.gag, opts);
  write_text(a.out, report.dump(2) + "\n");
  print_record(report);
  return 0;
}

struct AblationArgs {
  CommonOptions common;
  std::string data, out;
  std::vector<std::uint64_t> seeds;
};

int run_ablation(const AblationArgs& a) {
  const auto config = layered_config(a.common);
  auto base = UlcTrainConfig::from_json(section_of(config, "ulc"));
  const auto abl = section_of(config, "ablation");
  check_keys(abl, {"seeds"}, "ablation");
  auto seeds = a.seeds;
  if (seeds.empty()) seeds = get_or(abl, "seeds", std::vector<std::uint64_t>{1, 2, 3}, "ablation");
  if (a.common.seed) base.holdout_seed = *a.common.seed;
  const auto table = run_ablation_table3(load_dataset(a.data), seeds, base, [](const std::string& msg) {
    print_record({{"progress", msg}});
  });
  auto doc = table.to_json();
  write_text(a.out, doc.dump(2) + "\n");
  print_record(doc);
  return 0;
}

struct ServeArgs {
  CommonOptions common;
  std::string ulc, gag;
  std::optional<std::string> host;
  std::optional<int> port;
};

int run_serve(const ServeArgs& a) {
  const auto sv = section_of(layered_config(a.common), "serve");
  check_keys(sv, {"host", "port"}, "serve");
  const auto host = a.host.value_or(get_or<std::string>(sv, "host", "127.0.0.1", "serve"));
  const auto port = a.port.value_or(get_or(sv, "port", 8080, "serve"));
  seed_torch(a.common);
  InferenceService service;
  service.load_async(a.ulc, a.gag);
  std::cerr << json{{"listening", host + ":" + std::to_string(port)}}.dump() << std::endl;
  service.listen(host, port);
  return 0;
}

void report_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Landmark-driven face reenactment toolkit", "freenet"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth-data", "render a seeded synthetic face dataset");
  add_common(c_synth, synth.common);
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--identities", synth.identities);
  c_synth->add_option("--expressions", synth.expressions);
  c_synth->add_option("--poses", synth.poses);

  TrainUlcArgs tulc;
  auto* c_tulc = app.add_subcommand("train-ulc", "phase 1: train the landmark converter");
  add_common(c_tulc, tulc.common);
  c_tulc->add_option("--data", tulc.data, "dataset manifest")->required();
  c_tulc->add_option("--out", tulc.out, "output directory")->required();
  c_tulc->add_option("--epochs", tulc.epochs);

  TrainGagArgs tgag;
  auto* c_tgag = app.add_subcommand("train-gag", "phase 2: train the generator with a frozen converter");
  add_common(c_tgag, tgag.common);
  c_tgag->add_option("--data", tgag.data, "dataset manifest")->required();
  c_tgag->add_option("--ulc", tgag.ulc, "converter checkpoint")->required();
  c_tgag->add_option("--out", tgag.out, "output directory")->required();
  c_tgag->add_option("--epochs", tgag.epochs);

  ReenactArgs re;
  auto* c_re = app.add_subcommand("reenact", "drive a reference face with source landmarks");
  add_common(c_re, re.common);
  c_re->add_option("--reference", re.reference, "reference face PNG")->required();
  c_re->add_option("--ref-landmarks", re.ref_landmarks, "reference landmark JSON")->required();
  c_re->add_option("--source-landmarks", re.source_landmarks, "driving landmark JSON")->required();
  c_re->add_option("--ulc", re.ulc)->required();
  c_re->add_option("--gag", re.gag)->required();
  c_re->add_option("--out", re.out, "output PNG")->required();

  InterpolateArgs ip;
  auto* c_ip = app.add_subcommand("interpolate", "frames along a straight landmark path");
  add_common(c_ip, ip.common);
  c_ip->add_option("--a", ip.a, "start landmark JSON")->required();
  c_ip->add_option("--b", ip.b, "end landmark JSON")->required();
  c_ip->add_option("--steps", ip.steps, "frame count")->capture_default_str();
  c_ip->add_option("--reference", ip.reference, "reference face PNG (renders frames)");
  c_ip->add_option("--gag", ip.gag, "generator checkpoint (renders frames)");
  c_ip->add_option("--out", ip.out, "output directory")->required();

  ManipulateArgs mp;
  auto* c_mp = app.add_subcommand("manipulate", "move individual landmark points");
  add_common(c_mp, mp.common);
  c_mp->add_option("--landmarks", mp.landmarks, "landmark JSON")->required();
  c_mp->add_option("--edit", mp.edits, "index:dx,dy (repeatable)");
  c_mp->add_option("--edits", mp.edits_file, "JSON array of {point, delta}");
  c_mp->add_option("--reference", mp.reference, "reference face PNG (renders the result)");
  c_mp->add_option("--gag", mp.gag, "generator checkpoint (renders the result)");
  c_mp->add_option("--out", mp.out, "output directory")->required();

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "ACE, SSIM, FID, parameter counts and speed");
  add_common(c_ev, ev.common);
  c_ev->add_option("--data", ev.data, "dataset manifest")->required();
  c_ev->add_option("--ulc", ev.ulc)->required();
  c_ev->add_option("--gag", ev.gag)->required();
  c_ev->add_option("--out", ev.out, "report JSON")->required();

  AblationArgs ab;
  auto* c_ab = app.add_subcommand("ablation", "converter loss-term ablation over seeds");
  add_common(c_ab, ab.common);
  c_ab->add_option("--data", ab.data, "dataset manifest")->required();
  c_ab->add_option("--seeds", ab.seeds, "training seeds")->delimiter(',');
  c_ab->add_option("--out", ab.out, "table JSON")->required();

  ServeArgs sv;
  auto* c_sv = app.add_subcommand("serve", "HTTP inference service");
  add_common(c_sv, sv.common);
  c_sv->add_option("--ulc", sv.ulc)->required();
  c_sv->add_option("--gag", sv.gag)->required();
  c_sv->add_option("--host", sv.host);
  c_sv->add_option("--port", sv.port);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    report_error("usage", e.what());
    return 2;
  }

  try {
    if (c_synth->parsed()) return run_synth(synth);
    if (c_tulc->parsed()) return run_train_ulc(tulc);
    if (c_tgag->parsed()) return run_train_gag(tgag);
    if (c_re->parsed()) return run_reenact(re);
    if (c_ip->parsed()) return run_interpolate(ip);
    if (c_mp->parsed()) return run_manipulate(mp);
    if (c_ev->parsed()) return run_eval(ev);
    if (c_ab->parsed()) return run_ablation(ab);
    if (c_sv->parsed()) return run_serve(sv);
  } catch (const Error& e) {
    report_error(std::string(to_string(e.kind())), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
  return 1;
}
