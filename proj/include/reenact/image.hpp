#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "reenact/landmark.hpp"

namespace reenact {

inline constexpr int kFaceImageSize = 256;

/// 8-bit interleaved RGB, row-major.
struct Rgb8Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // width * height * 3

  friend bool operator==(const Rgb8Image&, const Rgb8Image&) = default;
};

/// A 3 x H x W float tensor with values in [-1, 1]. Stored 8-bit values map
/// linearly: 0 -> -1, 255 -> 1.
class FaceImage {
 public:
  explicit FaceImage(torch::Tensor pixels);

  static FaceImage from_rgb8(const Rgb8Image& img);
  static FaceImage filled(float value, int size = kFaceImageSize);
  Rgb8Image to_rgb8() const;

  const torch::Tensor& tensor() const noexcept { return pixels_; }
  int height() const { return static_cast<int>(pixels_.size(1)); }
  int width() const { return static_cast<int>(pixels_.size(2)); }

 private:
  torch::Tensor pixels_;
};

Rgb8Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Rgb8Image& img);
std::vector<std::uint8_t> encode_png(const Rgb8Image& img);
Rgb8Image decode_png(std::span<const std::uint8_t> bytes);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws a data error on characters outside the standard alphabet or bad padding.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// [1, R, R] float tensor view of a landmark raster.
torch::Tensor to_tensor(const LandmarkImage& img);

/// Stacks images into [B, 3, H, W] / [B, 1, R, R].
torch::Tensor stack_images(std::span<const FaceImage> images);
torch::Tensor stack_rasters(std::span<const LandmarkImage> rasters);

}  // namespace reenact
