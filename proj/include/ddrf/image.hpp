// Grayscale rasters in [0,1] and their PNG interchange.

#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "ddrf/autodiff.hpp"

namespace ddrf {

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // row-major

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  std::size_t size() const { return pixels.size(); }
  bool same_shape(const Image& other) const { return height == other.height && width == other.width; }

  bool operator==(const Image&) const = default;
};

/// Throws ValidationError naming `what` when shapes differ.
void require_same_shape(const Image& a, const Image& b, const char* what);

Image crop(const Image& image, std::size_t top, std::size_t left, std::size_t h, std::size_t w);
Image clamp01(Image image);
Image upsample_bilinear(const Image& image, std::size_t factor);
double mean_value(const Image& image);

/// [1,H,W] constant array.
ad::DiffArray to_array(const Image& image);
/// Accepts [1,H,W] or [H,W].
Image to_image(const ad::DiffArray& array);

/// 8-bit value with round-half-to-even of v*255, v clamped to [0,1].
unsigned char quantize8(double v);

/// Reads 8/16-bit gray, gray+alpha, RGB or RGBA. Color is reduced to luminance
/// (0.299 R + 0.587 G + 0.114 B).
Image read_png(const std::filesystem::path& path);
/// Writes 8-bit grayscale using quantize8.
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace ddrf
