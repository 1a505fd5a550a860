#include "ddrf/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ddrf/errors.hpp"

namespace ddrf {

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ValidationError(std::string(what) + ": shape mismatch " + std::to_string(a.height) + "x" +
                          std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                          std::to_string(b.width));
  }
}

Image crop(const Image& image, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  if (top + h > image.height || left + w > image.width) {
    throw ValidationError("crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                          std::to_string(top) + "," + std::to_string(left) + ") exceeds " +
                          std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  Image out(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    std::copy_n(&image.pixels[(top + r) * image.width + left], w, &out.pixels[r * w]);
  }
  return out;
}

Image clamp01(Image image) {
  for (double& v : image.pixels) v = std::clamp(v, 0.0, 1.0);
  return image;
}

Image upsample_bilinear(const Image& image, std::size_t factor) {
  return to_image(ad::upsample_bilinear(to_array(image), factor));
}

double mean_value(const Image& image) {
  return std::accumulate(image.pixels.begin(), image.pixels.end(), 0.0) /
         static_cast<double>(image.size());
}

ad::DiffArray to_array(const Image& image) {
  return ad::DiffArray({1, image.height, image.width}, image.pixels);
}

Image to_image(const ad::DiffArray& array) {
  std::size_t h = 0, w = 0;
  if (array.rank() == 3 && array.dim(0) == 1) {
    h = array.dim(1);
    w = array.dim(2);
  } else if (array.rank() == 2) {
    h = array.dim(0);
    w = array.dim(1);
  } else {
    throw ad::ShapeError("to_image: expected [1,H,W] or [H,W], got " + ad::to_string(array.shape()));
  }
  Image out(h, w);
  std::copy(array.values().begin(), array.values().end(), out.pixels.begin());
  return out;
}

unsigned char quantize8(double v) {
  return static_cast<unsigned char>(std::nearbyint(std::clamp(v, 0.0, 1.0) * 255.0));
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw ValidationError("cannot read PNG " + path.string() + ": " + png.message);
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGBA : PNG_FORMAT_GA;
  const std::size_t channels = color ? 4 : 2;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    throw ValidationError("cannot decode PNG " + path.string() + ": " + png.message);
  }

  Image out(png.height, png.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const png_byte* px = &buffer[i * channels];
    const double luma = color ? 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2] : px[0];
    out.pixels[i] = luma / 255.0;
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  std::vector<png_byte> buffer(image.size());
  std::transform(image.pixels.begin(), image.pixels.end(), buffer.begin(), quantize8);

  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + png.message);
  }
}

}  // namespace ddrf
