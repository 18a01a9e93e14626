#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "reenact/image.hpp"
#include "reenact/landmark.hpp"

namespace reenact {

struct SampleKey {
  std::string identity;
  std::string expression;
  std::string pose;

  auto operator<=>(const SampleKey&) const = default;
  std::string str() const { return identity + "/" + expression + "_" + pose; }
};

struct ManifestRecord {
  SampleKey key;
  std::string image;      // relative to the manifest directory
  std::string landmarks;  // relative to the manifest directory
};

struct CropConvention {
  int source_size = 416;
  int output_size = kFaceImageSize;
  std::string mode = "center";
};

struct DatasetManifest {
  int version = 1;
  CropConvention crop;
  std::string reference_expression = "neutral";
  std::vector<std::string> poses;
  PartGrouping parts;
  std::vector<ManifestRecord> records;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

/// Immutable, validated view over a manifest and its landmark files. Images
/// are read on demand.
class Dataset {
 public:
  /// Validates eagerly: every landmark file parses to 106 points, every image
  /// file exists, and every (identity, pose) has the reference expression.
  Dataset(DatasetManifest manifest, std::filesystem::path root);

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  const std::filesystem::path& root() const noexcept { return root_; }
  std::size_t size() const noexcept { return manifest_.records.size(); }

  const std::vector<std::string>& identities() const noexcept { return identities_; }
  const std::vector<std::string>& expressions() const noexcept { return expressions_; }
  const std::vector<std::string>& poses() const noexcept { return manifest_.poses; }
  const std::string& reference_expression() const noexcept {
    return manifest_.reference_expression;
  }
  const PartGrouping& parts() const noexcept { return manifest_.parts; }

  bool contains(const SampleKey& key) const { return index_.contains(key); }
  /// Throws a config error for unknown keys.
  const Landmark& landmark(const SampleKey& key) const;
  FaceImage image(const SampleKey& key) const;
  std::filesystem::path image_path(const SampleKey& key) const;

  /// Hash of the manifest and every landmark value.
  std::string hash() const;

 private:
  std::size_t find(const SampleKey& key) const;

  DatasetManifest manifest_;
  std::filesystem::path root_;
  std::vector<Landmark> landmarks_;
  std::map<SampleKey, std::size_t> index_;
  std::vector<std::string> identities_;
  std::vector<std::string> expressions_;
};

Dataset load_dataset(const std::filesystem::path& manifest_path);

/// (l[T, r], l[S, n], l[T, n], l[S, r]) with T != S, all in one pose bucket.
struct UlcSample {
  std::string target, source, expression, pose;
  Landmark target_ref;
  Landmark source_landmark;
  Landmark target_truth;
  Landmark source_ref;
};

/// Uniform over ordered (T, S) pairs within a uniformly drawn pose that has at
/// least two identities; the expression is uniform over those both identities have.
UlcSample sample_ulc_pair(const Dataset& dataset, std::mt19937_64& rng);

// ---- synthetic dataset -----------------------------------------------------

struct SyntheticSpec {
  int identities = 4;
  int expressions = 8;
  int poses = 1;
  std::uint64_t seed = 0;
};

/// Writes <out>/<identity>/<expression>_<pose>.{png,json} plus
/// <out>/manifest.json and returns the manifest path. Output is a pure
/// function of the spec.
std::filesystem::path generate_synthetic_dataset(const SyntheticSpec& spec,
                                                 const std::filesystem::path& out_dir);

namespace synth {

struct Rgb {
  double r = 0, g = 0, b = 0;
};

/// Identity-controlled proportions and colors.
struct IdentityParams {
  double face_half_w, face_half_h, face_cy;
  double eye_half_sep, eye_y, eye_half_w, eye_half_h;
  double brow_gap, brow_half_len, brow_arch;
  double nose_len, nose_half_w;
  double mouth_y, mouth_half_w, upper_lip, lower_lip;
  Rgb skin, background, brow, iris, lip;
};

/// Expression action strengths; all zero is the neutral expression.
struct ExpressionParams {
  double smile = 0, mouth_open = 0, mouth_width = 0;
  double brow_raise = 0, brow_inner = 0;
  double eye_open = 0, jaw_drop = 0, nose_raise = 0, asymmetry = 0;
};

std::string identity_name(int index);
std::string expression_name(int index);
std::string pose_name(int index);

IdentityParams identity_params(std::uint64_t seed, int index);
ExpressionParams expression_params(std::uint64_t seed, int index);

/// Frontal landmark of an identity performing an expression.
Landmark face_geometry(const IdentityParams& id, const ExpressionParams& expr);
/// face_geometry(id, expr) - face_geometry(id, neutral), per point.
std::array<Point2, kLandmarkPoints> expression_displacement(const IdentityParams& id,
                                                            const ExpressionParams& expr);
/// Affine skew for pose bucket `index` out of `count`; index 0 of 1 is the identity map.
Landmark apply_pose(const Landmark& l, int index, int count);

Rgb8Image render_face(const Landmark& l, const IdentityParams& id, int size = kFaceImageSize);

}  // namespace synth

}  // namespace reenact
