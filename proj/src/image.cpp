#include "reenact/image.hpp"

#include <png.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "reenact/error.hpp"

namespace reenact {

namespace {

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void png_read_from_memory(png_structp png, png_bytep out, png_size_t count) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + count > cur->bytes.size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, cur->bytes.data() + cur->offset, count);
  cur->offset += count;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t count) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + count);
}

void png_flush_noop(png_structp) {}

struct PngErrorSink {
  char message[256] = {};
};

[[noreturn]] void png_error_longjmp(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<PngErrorSink*>(png_get_error_ptr(png));
  std::snprintf(sink->message, sizeof(sink->message), "%s", msg);
  png_longjmp(png, 1);
}

void png_warning_ignore(png_structp, png_const_charp) {}

constexpr std::string_view kBase64Alphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

FaceImage::FaceImage(torch::Tensor pixels) : pixels_(std::move(pixels)) {
  if (pixels_.dim() != 3 || pixels_.size(0) != 3) {
    fail(ErrorKind::structural, "face image must be a 3 x H x W tensor");
  }
  if (!torch::isfinite(pixels_).all().item<bool>()) {
    fail(ErrorKind::domain, "face image contains non-finite values");
  }
}

FaceImage FaceImage::from_rgb8(const Rgb8Image& img) {
  if (img.data.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
    fail(ErrorKind::structural, "rgb buffer size does not match its dimensions");
  }
  auto t = torch::from_blob(const_cast<std::uint8_t*>(img.data.data()),
                            {img.height, img.width, 3}, torch::kUInt8)
               .to(torch::kFloat32)
               .permute({2, 0, 1})
               .contiguous();
  return FaceImage(t / 127.5f - 1.0f);
}

FaceImage FaceImage::filled(float value, int size) {
  return FaceImage(torch::full({3, size, size}, value, torch::kFloat32));
}

Rgb8Image FaceImage::to_rgb8() const {
  auto t = ((pixels_.to(torch::kFloat32).clamp(-1.0, 1.0) + 1.0f) * 127.5f)
               .round()
               .to(torch::kUInt8)
               .permute({1, 2, 0})
               .contiguous();
  Rgb8Image out{width(), height(), {}};
  out.data.assign(t.data_ptr<std::uint8_t>(), t.data_ptr<std::uint8_t>() + t.numel());
  return out;
}

std::vector<std::uint8_t> encode_png(const Rgb8Image& img) {
  PngErrorSink sink;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &sink, png_error_longjmp,
                                            png_warning_ignore);
  if (!png) fail(ErrorKind::io, "png: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::data, std::string("png: ") + sink.message);
  }
  {
    png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (int r = 0; r < img.height; ++r) {
      auto* row = const_cast<png_bytep>(img.data.data() + static_cast<std::size_t>(r) * img.width * 3);
      png_write_row(png, row);
    }
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Rgb8Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    fail(ErrorKind::data, "png: missing PNG signature");
  }
  PngErrorSink sink;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &sink, png_error_longjmp,
                                           png_warning_ignore);
  if (!png) fail(ErrorKind::io, "png: cannot allocate reader");
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{bytes, 0};
  Rgb8Image img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::data, std::string("png: ") + sink.message);
  }
  {
    png_set_read_fn(png, &cursor, png_read_from_memory);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(img.width) * 3) {
      png_error(png, "unsupported pixel layout");
    }
    img.data.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    for (int r = 0; r < img.height; ++r) {
      png_read_row(png, img.data.data() + static_cast<std::size_t>(r) * img.width * 3, nullptr);
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Rgb8Image read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const Rgb8Image& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write image " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kBase64Alphabet[(v >> 18) & 63];
    out += kBase64Alphabet[(v >> 12) & 63];
    out += kBase64Alphabet[(v >> 6) & 63];
    out += kBase64Alphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = bytes[i] << 16;
    out += kBase64Alphabet[(v >> 18) & 63];
    out += kBase64Alphabet[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kBase64Alphabet[(v >> 18) & 63];
    out += kBase64Alphabet[(v >> 12) & 63];
    out += kBase64Alphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::array<int, 256> lookup{};
  lookup.fill(-1);
  for (std::size_t i = 0; i < kBase64Alphabet.size(); ++i) {
    lookup[static_cast<unsigned char>(kBase64Alphabet[i])] = static_cast<int>(i);
  }
  if (text.size() % 4 != 0) fail(ErrorKind::data, "base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int pad = 0;
    std::uint32_t v = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) fail(ErrorKind::data, "misplaced base64 padding");
        ++pad;
        v <<= 6;
        continue;
      }
      if (pad > 0) fail(ErrorKind::data, "misplaced base64 padding");
      const int d = lookup[static_cast<unsigned char>(c)];
      if (d < 0) fail(ErrorKind::data, "invalid base64 character");
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xff));
  }
  return out;
}

torch::Tensor to_tensor(const LandmarkImage& img) {
  const int r = img.resolution();
  return torch::from_blob(const_cast<float*>(img.pixels().data()), {1, r, r}, torch::kFloat32)
      .clone();
}

torch::Tensor stack_images(std::span<const FaceImage> images) {
  std::vector<torch::Tensor> ts;
  ts.reserve(images.size());
  for (const auto& im : images) ts.push_back(im.tensor());
  return torch::stack(ts);
}

torch::Tensor stack_rasters(std::span<const LandmarkImage> rasters) {
  std::vector<torch::Tensor> ts;
  ts.reserve(rasters.size());
  for (const auto& r : rasters) ts.push_back(to_tensor(r));
  return torch::stack(ts);
}

}  // namespace reenact
