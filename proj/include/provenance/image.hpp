#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace provenance {

// Row-major, channel-interleaved image with samples in [0, 1].
struct ImageTensor {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> values;

  ImageTensor() = default;
  ImageTensor(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c),
        values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill) {}

  std::size_t offset(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(c);
  }
  double at(int x, int y, int c = 0) const { return values[offset(x, y, c)]; }
  double& at(int x, int y, int c = 0) { return values[offset(x, y, c)]; }

  bool operator==(const ImageTensor&) const = default;
};

inline constexpr int kDefaultPreprocessSide = 224;

// Decodes PNG, JPEG, BMP and netpbm bytes. Gray sources yield one channel,
// everything else three (RGB order); alpha is discarded.
ImageTensor decode_image(std::span<const std::uint8_t> bytes);

// Rec. 601 luma. One-channel input is returned unchanged.
ImageTensor to_grayscale(const ImageTensor& image);

// Separable triangle-filter resampling whose support widens with the
// downscale factor, so shrinking averages every covered source pixel.
ImageTensor resize(const ImageTensor& image, int width, int height);

ImageTensor center_crop(const ImageTensor& image, int width, int height);

// Shorter side resized to `target_side`, then center-cropped to a square.
ImageTensor preprocess(const ImageTensor& decoded, int target_side, bool gray);
ImageTensor preprocess(std::span<const std::uint8_t> raw_bytes, int target_side, bool gray);

// Lossless 8-bit encodings (values are rounded to the nearest level).
std::vector<std::uint8_t> encode_png(const ImageTensor& image);
std::vector<std::uint8_t> encode_pnm(const ImageTensor& image);

// Best-effort media type sniffed from magic bytes; empty when unknown.
std::string sniff_media_type(std::span<const std::uint8_t> bytes);

}  // namespace provenance
