#include "reenact/landmark.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "reenact/error.hpp"

namespace reenact {

namespace {

FacePart make_part(std::string name, std::size_t first, std::size_t count, bool closed) {
  FacePart part{std::move(name), std::vector<std::size_t>(count), closed};
  std::iota(part.indices.begin(), part.indices.end(), first);
  return part;
}

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax;
  const double dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((px - ax) * dx + (py - ay) * dy) / len2, 0.0, 1.0);
  const double qx = ax + t * dx - px;
  const double qy = ay + t * dy - py;
  return std::sqrt(qx * qx + qy * qy);
}

void draw_segment(LandmarkImage& img, double ax, double ay, double bx, double by) {
  const int res = img.resolution();
  const int c0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - 1.0)));
  const int c1 = std::min(res - 1, static_cast<int>(std::ceil(std::max(ax, bx) + 1.0)));
  const int r0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - 1.0)));
  const int r1 = std::min(res - 1, static_cast<int>(std::ceil(std::max(ay, by) + 1.0)));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double d = point_segment_distance(c, r, ax, ay, bx, by);
      const float v = static_cast<float>(std::max(0.0, 1.0 - d));
      float& px = img.at(r, c);
      px = std::max(px, v);
    }
  }
}

}  // namespace

Landmark Landmark::from_flat(std::span<const double> values) {
  if (values.size() != kLandmarkScalars) {
    fail(ErrorKind::structural, "landmark needs " + std::to_string(kLandmarkScalars) +
                                    " values, got " + std::to_string(values.size()));
  }
  Landmark l;
  for (std::size_t i = 0; i < kLandmarkPoints; ++i) {
    l.points_[i] = {values[2 * i], values[2 * i + 1]};
  }
  return l;
}

std::array<double, kLandmarkScalars> Landmark::flat() const {
  std::array<double, kLandmarkScalars> out{};
  for (std::size_t i = 0; i < kLandmarkPoints; ++i) {
    out[2 * i] = points_[i].x;
    out[2 * i + 1] = points_[i].y;
  }
  return out;
}

Landmark Landmark::filled(double value) {
  Landmark l;
  l.points_.fill({value, value});
  return l;
}

bool Landmark::all_finite() const noexcept {
  return std::all_of(points_.begin(), points_.end(),
                     [](const Point2& p) { return std::isfinite(p.x) && std::isfinite(p.y); });
}

bool Landmark::in_unit_square() const noexcept {
  return std::all_of(points_.begin(), points_.end(), [](const Point2& p) {
    return p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0;
  });
}

LandmarkImage::LandmarkImage(int resolution)
    : resolution_(resolution),
      pixels_(static_cast<std::size_t>(resolution) * static_cast<std::size_t>(resolution), 0.0f) {
  if (resolution < 1) fail(ErrorKind::domain, "raster resolution must be positive");
}

const PartGrouping& default_part_grouping() {
  static const PartGrouping parts = {
      make_part("jaw", 0, 33, false),
      make_part("left_brow", 33, 9, false),
      make_part("right_brow", 42, 9, false),
      make_part("nose_bridge", 51, 4, false),
      make_part("nose_base", 55, 9, false),
      make_part("left_eye", 64, 10, true),
      make_part("right_eye", 74, 10, true),
      make_part("outer_lips", 84, 12, true),
      make_part("inner_lips", 96, 8, true),
      make_part("left_pupil", 104, 1, false),
      make_part("right_pupil", 105, 1, false),
  };
  return parts;
}

void validate_grouping(const PartGrouping& parts) {
  for (const auto& part : parts) {
    if (part.indices.empty()) fail(ErrorKind::structural, "face part '" + part.name + "' is empty");
    for (auto i : part.indices) {
      if (i >= kLandmarkPoints) {
        fail(ErrorKind::structural,
             "face part '" + part.name + "' references point " + std::to_string(i));
      }
    }
  }
}

Landmark normalize_landmarks(std::span<const Point2> raw_points, const CropRect& crop) {
  if (raw_points.size() != kLandmarkPoints) {
    fail(ErrorKind::structural,
         "expected 106 landmark points, got " + std::to_string(raw_points.size()));
  }
  if (!(crop.width > 0.0) || !(crop.height > 0.0)) {
    fail(ErrorKind::domain, "crop rectangle must have positive width and height");
  }
  Landmark l;
  for (std::size_t i = 0; i < kLandmarkPoints; ++i) {
    l[i] = {(raw_points[i].x - crop.x) / crop.width, (raw_points[i].y - crop.y) / crop.height};
  }
  return l;
}

std::vector<Point2> denormalize_landmarks(const Landmark& l, const CropRect& crop) {
  if (!(crop.width > 0.0) || !(crop.height > 0.0)) {
    fail(ErrorKind::domain, "crop rectangle must have positive width and height");
  }
  std::vector<Point2> out(kLandmarkPoints);
  for (std::size_t i = 0; i < kLandmarkPoints; ++i) {
    out[i] = {crop.x + l[i].x * crop.width, crop.y + l[i].y * crop.height};
  }
  return out;
}

LandmarkImage rasterize(const Landmark& l, const PartGrouping& parts, int resolution,
                        RasterDiagnostics* diagnostics) {
  if (resolution < 8) fail(ErrorKind::domain, "raster resolution must be at least 8");
  if (!l.all_finite()) fail(ErrorKind::domain, "cannot rasterize a non-finite landmark");

  std::size_t clamped = 0;
  std::array<Point2, kLandmarkPoints> px{};
  for (std::size_t i = 0; i < kLandmarkPoints; ++i) {
    const double x = std::clamp(l[i].x, 0.0, 1.0);
    const double y = std::clamp(l[i].y, 0.0, 1.0);
    if (x != l[i].x || y != l[i].y) ++clamped;
    px[i] = {x * resolution - 0.5, y * resolution - 0.5};
  }
  if (diagnostics) diagnostics->clamped_points += clamped;

  LandmarkImage img(resolution);
  for (const auto& part : parts) {
    const auto& idx = part.indices;
    if (idx.size() == 1) {
      const Point2& p = px[idx[0]];
      draw_segment(img, p.x, p.y, p.x, p.y);
      continue;
    }
    for (std::size_t k = 0; k + 1 < idx.size(); ++k) {
      draw_segment(img, px[idx[k]].x, px[idx[k]].y, px[idx[k + 1]].x, px[idx[k + 1]].y);
    }
    if (part.closed && idx.size() > 2) {
      draw_segment(img, px[idx.back()].x, px[idx.back()].y, px[idx.front()].x, px[idx.front()].y);
    }
  }
  return img;
}

double ace(const Landmark& a, const Landmark& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < kLandmarkPoints; ++i) {
    sum += std::abs(a[i].x - b[i].x) + std::abs(a[i].y - b[i].y);
  }
  return sum / static_cast<double>(kLandmarkScalars);
}

Landmark interpolate(const Landmark& a, const Landmark& b, double t) {
  if (!(t >= 0.0 && t <= 1.0)) fail(ErrorKind::domain, "interpolation weight must lie in [0, 1]");
  if (t == 0.0) return a;
  if (t == 1.0) return b;
  Landmark out;
  for (std::size_t i = 0; i < kLandmarkPoints; ++i) {
    out[i] = {a[i].x + t * (b[i].x - a[i].x), a[i].y + t * (b[i].y - a[i].y)};
  }
  return out;
}

Landmark manipulate(const Landmark& l, std::span<const LandmarkEdit> edits) {
  for (const auto& e : edits) {
    if (e.point_index >= kLandmarkPoints) {
      fail(ErrorKind::structural, "landmark edit index " + std::to_string(e.point_index) +
                                      " out of range [0, 106)");
    }
  }
  // Sum deltas per index first so repeated edits to one point compose exactly.
  std::array<Point2, kLandmarkPoints> delta{};
  std::array<bool, kLandmarkPoints> touched{};
  for (const auto& e : edits) {
    delta[e.point_index].x += e.delta.x;
    delta[e.point_index].y += e.delta.y;
    touched[e.point_index] = true;
  }
  Landmark out = l;
  for (std::size_t i = 0; i < kLandmarkPoints; ++i) {
    if (!touched[i]) continue;
    out[i].x += delta[i].x;
    out[i].y += delta[i].y;
  }
  return out;
}

nlohmann::json landmark_to_json(const Landmark& l) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : l.points()) points.push_back({p.x, p.y});
  return {{"version", 1}, {"points", std::move(points)}};
}

Landmark landmark_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("points") || !doc["points"].is_array()) {
    fail(ErrorKind::data, "landmark document needs a 'points' array");
  }
  if (doc.contains("version") && doc["version"] != 1) {
    fail(ErrorKind::data, "unsupported landmark document version " + doc["version"].dump());
  }
  const auto& pts = doc["points"];
  if (pts.size() != kLandmarkPoints) {
    fail(ErrorKind::structural,
         "landmark document has " + std::to_string(pts.size()) + " points, expected 106");
  }
  Landmark l;
  for (std::size_t i = 0; i < kLandmarkPoints; ++i) {
    const auto& p = pts[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      fail(ErrorKind::data, "landmark point " + std::to_string(i) + " is not an [x, y] pair");
    }
    l[i] = {p[0].get<double>(), p[1].get<double>()};
  }
  if (!l.all_finite()) fail(ErrorKind::data, "landmark document contains non-finite values");
  return l;
}

Landmark read_landmark_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open landmark file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
    return landmark_from_json(doc);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void write_landmark_file(const std::filesystem::path& path, const Landmark& l) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write landmark file " + path.string());
  out << landmark_to_json(l).dump() << '\n';
}

nlohmann::json parts_to_json(const PartGrouping& parts) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : parts) {
    arr.push_back({{"name", p.name}, {"indices", p.indices}, {"closed", p.closed}});
  }
  return arr;
}

PartGrouping parts_from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) fail(ErrorKind::data, "part grouping must be an array");
  PartGrouping parts;
  for (const auto& p : doc) {
    FacePart part;
    part.name = p.at("name").get<std::string>();
    part.indices = p.at("indices").get<std::vector<std::size_t>>();
    part.closed = p.value("closed", false);
    parts.push_back(std::move(part));
  }
  validate_grouping(parts);
  return parts;
}

}  // namespace reenact
