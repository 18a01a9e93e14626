#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace reenact {

inline constexpr std::size_t kLandmarkPoints = 106;
inline constexpr std::size_t kLandmarkScalars = 2 * kLandmarkPoints;
inline constexpr int kLandmarkRasterSize = 64;

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// 106 facial points in the normalized crop frame: (0, 0) is the crop's
/// top-left corner and (1, 1) its bottom-right. Converter outputs may leave
/// the unit square; `in_unit_square()` flags that.
class Landmark {
 public:
  using Points = std::array<Point2, kLandmarkPoints>;

  Landmark() = default;
  explicit Landmark(const Points& points) : points_(points) {}

  /// Builds from interleaved x0, y0, x1, y1, ... values; throws a structural
  /// error unless exactly 212 values are given.
  static Landmark from_flat(std::span<const double> values);
  std::array<double, kLandmarkScalars> flat() const;

  /// Same value at every coordinate; mostly useful in tests.
  static Landmark filled(double value);

  const Points& points() const noexcept { return points_; }
  Points& points() noexcept { return points_; }
  const Point2& operator[](std::size_t i) const { return points_[i]; }
  Point2& operator[](std::size_t i) { return points_[i]; }

  bool all_finite() const noexcept;
  bool in_unit_square() const noexcept;

  friend bool operator==(const Landmark&, const Landmark&) = default;

 private:
  Points points_{};
};

/// Single-channel raster of a landmark, row-major, values in [0, 1].
class LandmarkImage {
 public:
  explicit LandmarkImage(int resolution);

  int resolution() const noexcept { return resolution_; }
  float at(int row, int col) const { return pixels_[index(row, col)]; }
  float& at(int row, int col) { return pixels_[index(row, col)]; }
  std::span<const float> pixels() const noexcept { return pixels_; }
  std::span<float> pixels() noexcept { return pixels_; }

  friend bool operator==(const LandmarkImage&, const LandmarkImage&) = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(resolution_) +
           static_cast<std::size_t>(col);
  }

  int resolution_;
  std::vector<float> pixels_;
};

struct LandmarkEdit {
  std::size_t point_index = 0;
  Point2 delta;
};

/// A named polyline over landmark indices. Closed parts also connect the
/// last point back to the first; single-index parts render as a dot.
struct FacePart {
  std::string name;
  std::vector<std::size_t> indices;
  bool closed = false;

  friend bool operator==(const FacePart&, const FacePart&) = default;
};

using PartGrouping = std::vector<FacePart>;

/// Layout used by the synthetic dataset generator. Real-detector datasets
/// declare their own grouping in the manifest.
const PartGrouping& default_part_grouping();

/// Throws a structural error when an index is out of range.
void validate_grouping(const PartGrouping& parts);

struct CropRect {
  double x = 0.0;
  double y = 0.0;
  double width = 0.0;
  double height = 0.0;
};

Landmark normalize_landmarks(std::span<const Point2> raw_points, const CropRect& crop);
std::vector<Point2> denormalize_landmarks(const Landmark& l, const CropRect& crop);

struct RasterDiagnostics {
  /// Number of points clamped into the unit square before drawing.
  std::size_t clamped_points = 0;
};

/// Draws each part as 1-pixel-wide anti-aliased segments (intensity falls off
/// linearly with distance to the segment) at 1.0 on a 0.0 background.
/// Pixel (row, col) has its center at ((col + 0.5) / res, (row + 0.5) / res).
LandmarkImage rasterize(const Landmark& l, const PartGrouping& parts = default_part_grouping(),
                        int resolution = kLandmarkRasterSize,
                        RasterDiagnostics* diagnostics = nullptr);

/// Average coordinate-wise error over all 212 scalars.
double ace(const Landmark& a, const Landmark& b);

Landmark interpolate(const Landmark& a, const Landmark& b, double t);

Landmark manipulate(const Landmark& l, std::span<const LandmarkEdit> edits);

// JSON document: {"version": 1, "points": [[x, y], ...]}.
nlohmann::json landmark_to_json(const Landmark& l);
Landmark landmark_from_json(const nlohmann::json& doc);
Landmark read_landmark_file(const std::filesystem::path& path);
void write_landmark_file(const std::filesystem::path& path, const Landmark& l);

nlohmann::json parts_to_json(const PartGrouping& parts);
PartGrouping parts_from_json(const nlohmann::json& doc);

}  // namespace reenact
