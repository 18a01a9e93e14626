#include "reenact/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "reenact/error.hpp"
#include "reenact/nn.hpp"

namespace reenact {

namespace fs = std::filesystem;

// ---- manifest ----------------------------------------------------------------

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records) {
    recs.push_back({{"identity", r.key.identity},
                    {"expression", r.key.expression},
                    {"pose", r.key.pose},
                    {"image", r.image},
                    {"landmarks", r.landmarks}});
  }
  return {{"version", version},
          {"crop",
           {{"source_size", crop.source_size},
            {"output_size", crop.output_size},
            {"mode", crop.mode}}},
          {"reference_expression", reference_expression},
          {"poses", poses},
          {"parts", parts_to_json(parts)},
          {"records", std::move(recs)}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != 1) fail(ErrorKind::data, "unsupported manifest version " + std::to_string(m.version));
    if (j.contains("crop")) {
      const auto& c = j["crop"];
      m.crop.source_size = c.value("source_size", m.crop.source_size);
      m.crop.output_size = c.value("output_size", m.crop.output_size);
      m.crop.mode = c.value("mode", m.crop.mode);
    }
    m.reference_expression = j.at("reference_expression").get<std::string>();
    m.poses = j.at("poses").get<std::vector<std::string>>();
    m.parts = j.contains("parts") ? parts_from_json(j["parts"]) : default_part_grouping();
    for (const auto& r : j.at("records")) {
      m.records.push_back({{r.at("identity").get<std::string>(), r.at("expression").get<std::string>(),
                            r.at("pose").get<std::string>()},
                           r.at("image").get<std::string>(),
                           r.at("landmarks").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

// ---- dataset -----------------------------------------------------------------

Dataset::Dataset(DatasetManifest manifest, fs::path root)
    : manifest_(std::move(manifest)), root_(std::move(root)) {
  validate_grouping(manifest_.parts);
  std::set<std::string> poses(manifest_.poses.begin(), manifest_.poses.end());
  std::set<std::string> ids;
  std::set<std::string> exprs;
  landmarks_.reserve(manifest_.records.size());
  for (std::size_t i = 0; i < manifest_.records.size(); ++i) {
    const auto& r = manifest_.records[i];
    if (!poses.contains(r.key.pose)) {
      fail(ErrorKind::data, "record " + r.key.str() + " uses undeclared pose '" + r.key.pose + "'");
    }
    if (!index_.emplace(r.key, i).second) {
      fail(ErrorKind::data, "duplicate record " + r.key.str());
    }
    if (!fs::exists(root_ / r.image)) {
      fail(ErrorKind::io, "missing image file " + (root_ / r.image).string());
    }
    landmarks_.push_back(read_landmark_file(root_ / r.landmarks));
    ids.insert(r.key.identity);
    exprs.insert(r.key.expression);
  }
  identities_.assign(ids.begin(), ids.end());
  expressions_.assign(exprs.begin(), exprs.end());
  // Reference expression first, the rest in manifest order of appearance.
  std::vector<std::string> ordered;
  for (const auto& r : manifest_.records) {
    if (std::find(ordered.begin(), ordered.end(), r.key.expression) == ordered.end()) {
      ordered.push_back(r.key.expression);
    }
  }
  expressions_ = ordered;

  for (const auto& id : identities_) {
    for (const auto& pose : manifest_.poses) {
      bool has_any = false;
      for (const auto& r : manifest_.records) {
        if (r.key.identity == id && r.key.pose == pose) has_any = true;
      }
      if (has_any && !contains({id, manifest_.reference_expression, pose})) {
        fail(ErrorKind::data, "identity '" + id + "' lacks reference expression '" +
                                  manifest_.reference_expression + "' in pose '" + pose + "'");
      }
    }
  }
}

std::size_t Dataset::find(const SampleKey& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) fail(ErrorKind::config, "dataset has no record " + key.str());
  return it->second;
}

const Landmark& Dataset::landmark(const SampleKey& key) const { return landmarks_[find(key)]; }

fs::path Dataset::image_path(const SampleKey& key) const {
  return root_ / manifest_.records[find(key)].image;
}

FaceImage Dataset::image(const SampleKey& key) const {
  return FaceImage::from_rgb8(read_png(image_path(key)));
}

std::string Dataset::hash() const {
  const auto text = manifest_.to_json().dump();
  auto h = fnv1a(text.data(), text.size());
  for (const auto& l : landmarks_) {
    const auto flat = l.flat();
    h = fnv1a(flat.data(), flat.size() * sizeof(double), h);
  }
  return hex64(h);
}

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorKind::io, "cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, manifest_path.string() + ": " + e.what());
  }
  return Dataset(DatasetManifest::from_json(j), manifest_path.parent_path());
}

UlcSample sample_ulc_pair(const Dataset& dataset, std::mt19937_64& rng) {
  std::vector<std::string> usable_poses;
  for (const auto& pose : dataset.poses()) {
    int n = 0;
    for (const auto& id : dataset.identities()) {
      if (dataset.contains({id, dataset.reference_expression(), pose})) ++n;
    }
    if (n >= 2) usable_poses.push_back(pose);
  }
  if (usable_poses.empty()) {
    fail(ErrorKind::config,
         "converter pairs need at least 2 identities sharing a pose with a reference expression");
  }
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const auto& pose =
        usable_poses[std::uniform_int_distribution<std::size_t>(0, usable_poses.size() - 1)(rng)];
    std::vector<std::string> ids;
    for (const auto& id : dataset.identities()) {
      if (dataset.contains({id, dataset.reference_expression(), pose})) ids.push_back(id);
    }
    const auto t = std::uniform_int_distribution<std::size_t>(0, ids.size() - 1)(rng);
    auto s = std::uniform_int_distribution<std::size_t>(0, ids.size() - 2)(rng);
    if (s >= t) ++s;
    std::vector<std::string> shared;
    for (const auto& e : dataset.expressions()) {
      if (dataset.contains({ids[t], e, pose}) && dataset.contains({ids[s], e, pose})) {
        shared.push_back(e);
      }
    }
    if (shared.empty()) continue;
    const auto& expr = shared[std::uniform_int_distribution<std::size_t>(0, shared.size() - 1)(rng)];
    const auto& ref = dataset.reference_expression();
    return {ids[t],
            ids[s],
            expr,
            pose,
            dataset.landmark({ids[t], ref, pose}),
            dataset.landmark({ids[s], expr, pose}),
            dataset.landmark({ids[t], expr, pose}),
            dataset.landmark({ids[s], ref, pose})};
  }
  fail(ErrorKind::config, "could not find an identity pair sharing an expression");
}

// ---- synthetic faces -----------------------------------------------------------

namespace synth {

namespace {

constexpr double kPi = std::numbers::pi;

const char* const kExpressionNames[] = {"neutral",   "happy",   "sad",       "angry",
                                        "surprised", "fearful", "disgusted", "contemptuous"};

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t salt, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb scale(const Rgb& a, double s) { return {a.r * s, a.g * s, a.b * s}; }

// Per-side corner lift blended toward the mouth center.
double corner_lift(double u, double left, double right) { return (u < 0 ? left : right) * u * u; }

double lip_profile(double u) { return std::pow(std::max(0.0, 1.0 - u * u), 0.7); }

}  // namespace

std::string identity_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "id%02d", index);
  return buf;
}

std::string expression_name(int index) {
  if (index < 8) return kExpressionNames[index];
  char buf[16];
  std::snprintf(buf, sizeof(buf), "expr%02d", index);
  return buf;
}

std::string pose_name(int index) { return "p" + std::to_string(index); }

IdentityParams identity_params(std::uint64_t seed, int index) {
  auto rng = stream(seed, 0x1d, index);
  IdentityParams p{};
  p.face_half_w = uniform(rng, 0.26, 0.33);
  p.face_half_h = uniform(rng, 0.33, 0.40);
  p.face_cy = uniform(rng, 0.50, 0.54);
  p.eye_half_sep = uniform(rng, 0.095, 0.13);
  p.eye_y = p.face_cy - p.face_half_h * uniform(rng, 0.18, 0.28);
  p.eye_half_w = uniform(rng, 0.040, 0.055);
  p.eye_half_h = uniform(rng, 0.014, 0.022);
  p.brow_gap = uniform(rng, 0.035, 0.055);
  p.brow_half_len = uniform(rng, 0.045, 0.065);
  p.brow_arch = uniform(rng, 0.008, 0.020);
  p.nose_len = uniform(rng, 0.09, 0.13);
  p.nose_half_w = uniform(rng, 0.025, 0.040);
  p.mouth_y = p.eye_y + p.nose_len + uniform(rng, 0.06, 0.09);
  p.mouth_half_w = uniform(rng, 0.060, 0.090);
  p.upper_lip = uniform(rng, 0.010, 0.016);
  p.lower_lip = uniform(rng, 0.012, 0.020);

  const Rgb light{0.96, 0.82, 0.72};
  const Rgb dark{0.45, 0.30, 0.22};
  p.skin = mix(light, dark, uniform(rng, 0.0, 1.0));
  p.skin.r = std::clamp(p.skin.r + uniform(rng, -0.04, 0.04), 0.0, 1.0);
  p.background = {uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85)};
  p.brow = {uniform(rng, 0.05, 0.35), uniform(rng, 0.04, 0.25), uniform(rng, 0.02, 0.18)};
  const Rgb irises[] = {{0.35, 0.20, 0.10}, {0.20, 0.40, 0.65}, {0.25, 0.45, 0.25}, {0.15, 0.10, 0.08}};
  p.iris = irises[std::uniform_int_distribution<int>(0, 3)(rng)];
  p.lip = mix(scale(p.skin, 0.8), Rgb{0.75, 0.25, 0.30}, uniform(rng, 0.4, 0.7));
  return p;
}

ExpressionParams expression_params(std::uint64_t seed, int index) {
  switch (index) {
    case 0: return {};
    case 1: return {.smile = 1.0, .mouth_open = 0.35, .mouth_width = 0.2, .brow_raise = 0.1, .eye_open = -0.25};
    case 2: return {.smile = -0.7, .mouth_width = -0.1, .brow_inner = 0.9, .eye_open = -0.15};
    case 3: return {.smile = -0.2, .mouth_width = -0.25, .brow_raise = -0.3, .brow_inner = -1.0, .eye_open = 0.1};
    case 4: return {.mouth_open = 1.2, .mouth_width = -0.35, .brow_raise = 1.0, .eye_open = 0.7, .jaw_drop = 1.0};
    case 5: return {.smile = -0.3, .mouth_open = 0.5, .mouth_width = 0.35, .brow_raise = 0.6, .brow_inner = 0.6, .eye_open = 0.55};
    case 6: return {.smile = -0.4, .mouth_open = 0.15, .brow_inner = -0.6, .eye_open = -0.3, .nose_raise = 1.0};
    case 7: return {.smile = 0.1, .eye_open = -0.1, .asymmetry = 1.0};
    default: break;
  }
  auto rng = stream(seed, 0xe7, index);
  ExpressionParams e;
  e.smile = uniform(rng, -0.8, 1.0);
  e.mouth_open = uniform(rng, 0.0, 1.0);
  e.mouth_width = uniform(rng, -0.3, 0.3);
  e.brow_raise = uniform(rng, -0.3, 1.0);
  e.brow_inner = uniform(rng, -1.0, 1.0);
  e.eye_open = uniform(rng, -0.3, 0.6);
  e.jaw_drop = e.mouth_open * uniform(rng, 0.0, 0.8);
  e.nose_raise = uniform(rng, 0.0, 0.6);
  e.asymmetry = uniform(rng, -0.5, 0.5);
  return e;
}

Landmark face_geometry(const IdentityParams& id, const ExpressionParams& e) {
  Landmark l;
  const double cx = 0.5;

  // Jaw: lower face contour from the left temple through the chin to the right.
  for (int i = 0; i <= 32; ++i) {
    const double phi = kPi + 0.25 - i * (kPi + 0.5) / 32.0;
    const double s = std::sin(phi);
    double y = id.face_cy + id.face_half_h * s;
    if (s > 0) y += e.jaw_drop * 0.08 * id.face_half_h * s * s;
    l[i] = {cx + id.face_half_w * std::cos(phi), y};
  }

  // Eyes, pupils and brows; side -1 is the image-left eye.
  for (int side = 0; side < 2; ++side) {
    const double dir = side == 0 ? -1.0 : 1.0;
    const double ex = cx + dir * id.eye_half_sep;
    const double ey = id.eye_y;
    const double eh = id.eye_half_h * std::max(0.15, 1.0 + e.eye_open);
    const std::size_t eye0 = side == 0 ? 64 : 74;
    for (int k = 0; k < 10; ++k) {
      const double th = 2.0 * kPi * k / 10.0;
      double y = ey + eh * std::sin(th);
      if (std::sin(th) > 0) y -= std::max(0.0, e.smile) * 0.3 * id.eye_half_h * std::sin(th);
      l[eye0 + k] = {ex + id.eye_half_w * std::cos(th), y};
    }
    l[side == 0 ? 104 : 105] = {ex, ey};

    const std::size_t brow0 = side == 0 ? 33 : 42;
    const double base_y = ey - id.eye_half_h - id.brow_gap;
    for (int k = 0; k < 9; ++k) {
      const double u = -1.0 + k / 4.0;           // -1 .. 1, image left to right
      const double inner = (1.0 + dir * -u) / 2;  // 1 at the end nearest the nose
      double y = base_y - id.brow_arch * (1.0 - u * u);
      y -= e.brow_raise * 0.5 * id.brow_gap;
      y -= e.brow_inner * 0.45 * id.brow_gap * inner * inner;
      double x = ex + u * id.brow_half_len;
      x -= dir * std::min(0.0, e.brow_inner) * -0.15 * id.brow_half_len * inner;
      l[brow0 + k] = {x, y};
    }
  }

  // Nose bridge and base.
  const double nose_base_y = id.eye_y + id.nose_len;
  for (int k = 0; k < 4; ++k) {
    l[51 + k] = {cx, id.eye_y + 0.01 + (0.85 * id.nose_len - 0.01) * k / 3.0};
  }
  for (int k = 0; k < 9; ++k) {
    const double u = -1.0 + k / 4.0;
    const double flare = 1.0 + 0.2 * e.nose_raise;
    l[55 + k] = {cx + u * id.nose_half_w * flare,
                 nose_base_y + 0.006 * (1.0 - u * u) - e.nose_raise * 0.25 * id.nose_half_w};
  }

  // Lips. Corners lift with the smile; asymmetry lifts only the image-right corner.
  const double mw = id.mouth_half_w * (1.0 + 0.25 * e.mouth_width + 0.15 * std::max(0.0, e.smile));
  const double lift = -e.smile * 0.25 * id.mouth_half_w;
  const double left_dy = lift;
  const double right_dy = lift - e.asymmetry * 0.25 * id.mouth_half_w;
  const double open = std::max(0.0, e.mouth_open) * 0.6 * id.mouth_half_w;
  const double my = id.mouth_y + e.jaw_drop * 0.03 * id.face_half_h - e.nose_raise * 0.2 * id.upper_lip;
  const double outer_top[] = {-1.0, -2.0 / 3, -1.0 / 3, 0.0, 1.0 / 3, 2.0 / 3, 1.0};
  const double outer_bottom[] = {2.0 / 3, 1.0 / 3, 0.0, -1.0 / 3, -2.0 / 3};
  std::size_t k = 84;
  for (double u : outer_top) {
    l[k++] = {cx + u * mw,
              my + corner_lift(u, left_dy, right_dy) - (open / 2 + id.upper_lip) * lip_profile(u)};
  }
  for (double u : outer_bottom) {
    l[k++] = {cx + u * mw,
              my + corner_lift(u, left_dy, right_dy) + (open / 2 + id.lower_lip) * lip_profile(u)};
  }
  const double inner_top[] = {-0.75, -0.25, 0.25, 0.75};
  const double inner_bottom[] = {0.75, 0.25, -0.25, -0.75};
  const double iw = 0.85 * mw;
  for (double u : inner_top) {
    l[k++] = {cx + u * iw, my + corner_lift(u, left_dy, right_dy) - open / 2 * lip_profile(u)};
  }
  for (double u : inner_bottom) {
    l[k++] = {cx + u * iw, my + corner_lift(u, left_dy, right_dy) + open / 2 * lip_profile(u)};
  }
  return l;
}

std::array<Point2, kLandmarkPoints> expression_displacement(const IdentityParams& id,
                                                            const ExpressionParams& expr) {
  const auto moved = face_geometry(id, expr);
  const auto base = face_geometry(id, {});
  std::array<Point2, kLandmarkPoints> d{};
  for (std::size_t i = 0; i < kLandmarkPoints; ++i) {
    d[i] = {moved[i].x - base[i].x, moved[i].y - base[i].y};
  }
  return d;
}

Landmark apply_pose(const Landmark& l, int index, int count) {
  if (count <= 1) return l;
  const double s = -1.0 + 2.0 * index / (count - 1);
  const double cx = 0.5, cy = 0.5;
  Landmark out;
  for (std::size_t i = 0; i < kLandmarkPoints; ++i) {
    const double dx = l[i].x - cx;
    const double dy = l[i].y - cy;
    out[i] = {cx + dx * (1.0 - 0.12 * std::abs(s)) + 0.05 * s + 0.10 * s * dy, l[i].y};
  }
  return out;
}

namespace {

struct Shape {
  std::vector<Point2> pts;  // normalized coordinates
  double min_x, min_y, max_x, max_y;
};

Shape make_shape(std::vector<Point2> pts, double pad = 0.0) {
  Shape s{std::move(pts), 1e9, 1e9, -1e9, -1e9};
  for (const auto& p : s.pts) {
    s.min_x = std::min(s.min_x, p.x - pad);
    s.min_y = std::min(s.min_y, p.y - pad);
    s.max_x = std::max(s.max_x, p.x + pad);
    s.max_y = std::max(s.max_y, p.y + pad);
  }
  return s;
}

bool in_box(const Shape& s, double x, double y) {
  return x >= s.min_x && x <= s.max_x && y >= s.min_y && y <= s.max_y;
}

bool inside_polygon(const Shape& s, double x, double y) {
  if (!in_box(s, x, y)) return false;
  bool in = false;
  const auto& p = s.pts;
  for (std::size_t i = 0, j = p.size() - 1; i < p.size(); j = i++) {
    if ((p[i].y > y) != (p[j].y > y) &&
        x < (p[j].x - p[i].x) * (y - p[i].y) / (p[j].y - p[i].y) + p[i].x) {
      in = !in;
    }
  }
  return in;
}

bool near_polyline(const Shape& s, double x, double y, double half_width) {
  if (!in_box(s, x, y)) return false;
  for (std::size_t i = 0; i + 1 < s.pts.size(); ++i) {
    const auto& a = s.pts[i];
    const auto& b = s.pts[i + 1];
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((x - a.x) * dx + (y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double qx = a.x + t * dx - x, qy = a.y + t * dy - y;
    if (qx * qx + qy * qy <= half_width * half_width) return true;
  }
  return false;
}

std::vector<Point2> take(const Landmark& l, std::size_t first, std::size_t count) {
  return std::vector<Point2>(l.points().begin() + static_cast<std::ptrdiff_t>(first),
                             l.points().begin() + static_cast<std::ptrdiff_t>(first + count));
}

}  // namespace

Rgb8Image render_face(const Landmark& l, const IdentityParams& id, int size) {
  // Face outline: jaw plus an elliptical forehead arc between the temples.
  std::vector<Point2> face = take(l, 0, 33);
  const Point2 lt = l[0], rt = l[32];
  const Point2 mid{(lt.x + rt.x) / 2, (lt.y + rt.y) / 2};
  const double hw = std::hypot(rt.x - lt.x, rt.y - lt.y) / 2;
  const double hh = std::max(0.05, l[16].y - mid.y) * 0.95;
  for (int k = 1; k < 16; ++k) {
    const double a = kPi * k / 16.0;
    face.push_back({mid.x + hw * std::cos(a), mid.y - hh * std::sin(a)});
  }
  const Shape face_s = make_shape(face);
  const Shape hair_s = [&] {
    std::vector<Point2> hair;
    for (int k = 0; k <= 16; ++k) {
      const double a = kPi * k / 16.0;
      hair.push_back({mid.x + hw * 1.08 * std::cos(a), mid.y + 0.02 - hh * 1.12 * std::sin(a)});
    }
    return make_shape(hair);
  }();

  const double brow_w = 0.007;
  const double nose_w = 0.0035;
  const Shape brows[] = {make_shape(take(l, 33, 9), brow_w), make_shape(take(l, 42, 9), brow_w)};
  const Shape eyes[] = {make_shape(take(l, 64, 10)), make_shape(take(l, 74, 10))};
  const Point2 pupils[] = {l[104], l[105]};
  const Shape bridge = make_shape(take(l, 51, 4), nose_w);
  const Shape base = make_shape(take(l, 55, 9), nose_w);
  const Shape outer = make_shape(take(l, 84, 12));
  const Shape inner = make_shape(take(l, 96, 8));
  const double iris_r = id.eye_half_h * 1.05;

  const Rgb white{0.95, 0.95, 0.93};
  const Rgb mouth{0.25, 0.06, 0.07};
  const Rgb nose = scale(id.skin, 0.72);
  const Rgb hair = scale(id.brow, 0.9);

  Rgb8Image img{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size * 3)};
  const double offsets[2] = {0.25, 0.75};
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      Rgb acc{};
      for (double oy : offsets) {
        for (double ox : offsets) {
          const double x = (c + ox) / size;
          const double y = (r + oy) / size;
          Rgb col = mix(id.background, scale(id.background, 0.7), y);
          if (inside_polygon(hair_s, x, y)) col = hair;
          if (inside_polygon(face_s, x, y)) {
            const double dx = (x - mid.x) / hw, dy = (y - l[16].y * 0.5 - mid.y * 0.5) / (hh * 1.5);
            col = scale(id.skin, 1.0 - 0.12 * std::min(1.0, dx * dx + dy * dy));
          }
          for (const auto& b : brows) {
            if (near_polyline(b, x, y, brow_w)) col = id.brow;
          }
          for (int e = 0; e < 2; ++e) {
            if (inside_polygon(eyes[e], x, y)) {
              col = white;
              const double d = std::hypot(x - pupils[e].x, y - pupils[e].y);
              if (d < iris_r) col = id.iris;
              if (d < iris_r * 0.4) col = {0.03, 0.03, 0.03};
            }
          }
          if (near_polyline(bridge, x, y, nose_w) || near_polyline(base, x, y, nose_w)) col = nose;
          if (inside_polygon(outer, x, y)) col = id.lip;
          if (inside_polygon(inner, x, y)) col = mouth;
          acc.r += col.r;
          acc.g += col.g;
          acc.b += col.b;
        }
      }
      auto* px = img.data.data() + (static_cast<std::size_t>(r) * size + c) * 3;
      px[0] = static_cast<std::uint8_t>(std::lround(std::clamp(acc.r / 4, 0.0, 1.0) * 255));
      px[1] = static_cast<std::uint8_t>(std::lround(std::clamp(acc.g / 4, 0.0, 1.0) * 255));
      px[2] = static_cast<std::uint8_t>(std::lround(std::clamp(acc.b / 4, 0.0, 1.0) * 255));
    }
  }
  return img;
}

}  // namespace synth

fs::path generate_synthetic_dataset(const SyntheticSpec& spec, const fs::path& out_dir) {
  if (spec.identities < 1 || spec.expressions < 1 || spec.poses < 1) {
    fail(ErrorKind::config, "synthetic dataset counts must be at least 1");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.reference_expression = synth::expression_name(0);
  m.parts = default_part_grouping();
  for (int p = 0; p < spec.poses; ++p) m.poses.push_back(synth::pose_name(p));

  for (int i = 0; i < spec.identities; ++i) {
    const auto id = synth::identity_params(spec.seed, i);
    const auto id_name = synth::identity_name(i);
    fs::create_directories(out_dir / id_name, ec);
    if (ec) fail(ErrorKind::io, "cannot create " + (out_dir / id_name).string());
    for (int e = 0; e < spec.expressions; ++e) {
      const auto frontal = synth::face_geometry(id, synth::expression_params(spec.seed, e));
      for (int p = 0; p < spec.poses; ++p) {
        const auto l = synth::apply_pose(frontal, p, spec.poses);
        const std::string stem = synth::expression_name(e) + "_" + synth::pose_name(p);
        const auto image_rel = id_name + "/" + stem + ".png";
        const auto lm_rel = id_name + "/" + stem + ".json";
        write_png(out_dir / image_rel, synth::render_face(l, id));
        write_landmark_file(out_dir / lm_rel, l);
        m.records.push_back({{id_name, synth::expression_name(e), synth::pose_name(p)}, image_rel, lm_rel});
      }
    }
  }
  const auto manifest_path = out_dir / "manifest.json";
  std::ofstream out(manifest_path);
  if (!out) fail(ErrorKind::io, "cannot write " + manifest_path.string());
  out << m.to_json().dump(2) << '\n';
  return manifest_path;
}

}  // namespace reenact
