#include "ddrf/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "ddrf/errors.hpp"
#include "ddrf/losses.hpp"

namespace ddrf {

namespace {

Image to_255(const Image& image) {
  Image out = image;
  for (double& v : out.pixels) v *= 255.0;
  return out;
}

std::vector<double> gaussian_window(std::size_t n, double sigma) {
  std::vector<double> w(n * n);
  const double half = (static_cast<double>(n) - 1) / 2.0;
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double dy = r - half, dx = c - half;
      w[r * n + c] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      total += w[r * n + c];
    }
  }
  for (double& v : w) v /= total;
  return w;
}

// Correlation with an n x n window over valid positions only.
Image filter_valid(const Image& image, const std::vector<double>& window, std::size_t n) {
  Image out(image.height - n + 1, image.width - n + 1);
  for (std::size_t r = 0; r < out.height; ++r) {
    for (std::size_t c = 0; c < out.width; ++c) {
      double acc = 0;
      for (std::size_t u = 0; u < n; ++u) {
        const double* row = &image.pixels[(r + u) * image.width + c];
        const double* w = &window[u * n];
        for (std::size_t v = 0; v < n; ++v) acc += w[v] * row[v];
      }
      out.at(r, c) = acc;
    }
  }
  return out;
}

Image pad_replicate(const Image& image, std::size_t p) {
  Image out(image.height + 2 * p, image.width + 2 * p);
  for (std::size_t r = 0; r < out.height; ++r) {
    const std::size_t sr = std::min(r < p ? 0 : r - p, image.height - 1);
    for (std::size_t c = 0; c < out.width; ++c) {
      out.at(r, c) = image.at(sr, std::min(c < p ? 0 : c - p, image.width - 1));
    }
  }
  return out;
}

Image product(const Image& a, const Image& b) {
  Image out(a.height, a.width);
  for (std::size_t i = 0; i < out.size(); ++i) out.pixels[i] = a.pixels[i] * b.pixels[i];
  return out;
}

// Gaussian 5x5 blur (replicate edges) then keep every second pixel.
Image pyramid_down(const Image& image) {
  static const std::vector<double> window = gaussian_window(5, 1.0);
  Image out((image.height + 1) / 2, (image.width + 1) / 2);
  const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
  for (std::size_t r = 0; r < out.height; ++r) {
    for (std::size_t c = 0; c < out.width; ++c) {
      double acc = 0;
      for (int u = 0; u < 5; ++u) {
        const int sr = std::clamp(static_cast<int>(2 * r) + u - 2, 0, h - 1);
        for (int v = 0; v < 5; ++v) {
          const int sc = std::clamp(static_cast<int>(2 * c) + v - 2, 0, w - 1);
          acc += window[u * 5 + v] * image.at(sr, sc);
        }
      }
      out.at(r, c) = acc;
    }
  }
  return out;
}

}  // namespace

double entropy(const Image& image) {
  if (image.size() == 0) return 0.0;
  std::array<std::size_t, 256> histogram{};
  for (double v : image.pixels) ++histogram[quantize8(v)];
  const double n = static_cast<double>(image.size());
  double h = 0;
  for (std::size_t count : histogram) {
    if (count == 0) continue;
    const double p = static_cast<double>(count) / n;
    h -= p * std::log2(p);
  }
  return h;
}

double average_gradient(const Image& image) {
  if (image.height < 2 || image.width < 2) {
    throw ValidationError("average_gradient: image must be at least 2x2");
  }
  double total = 0;
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < image.width; ++c) {
      const double dx = c + 1 < image.width ? 255.0 * (image.at(r, c + 1) - image.at(r, c)) : 0.0;
      const double dy = r + 1 < image.height ? 255.0 * (image.at(r + 1, c) - image.at(r, c)) : 0.0;
      total += std::sqrt((dx * dx + dy * dy) / 2.0);
    }
  }
  return total / static_cast<double>(image.size());
}

double ssim_metric(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  if (a.height < kSsimWindow || a.width < kSsimWindow) {
    throw ValidationError("ssim: images must be at least 11x11");
  }
  static const std::vector<double> window = gaussian_window(kSsimWindow, kSsimSigma);
  const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  // Replicate-padded so the map covers every pixel.
  const Image x = pad_replicate(to_255(a), kSsimWindow / 2), y = pad_replicate(to_255(b), kSsimWindow / 2);
  const Image mu_x = filter_valid(x, window, kSsimWindow), mu_y = filter_valid(y, window, kSsimWindow);
  const Image xx = filter_valid(product(x, x), window, kSsimWindow);
  const Image yy = filter_valid(product(y, y), window, kSsimWindow);
  const Image xy = filter_valid(product(x, y), window, kSsimWindow);
  double total = 0;
  for (std::size_t i = 0; i < mu_x.size(); ++i) {
    const double mx = mu_x.pixels[i], my = mu_y.pixels[i];
    const double vx = xx.pixels[i] - mx * mx, vy = yy.pixels[i] - my * my, cxy = xy.pixels[i] - mx * my;
    total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mu_x.size());
}

double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b, "psnr");
  double sse = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = 255.0 * (a.pixels[i] - b.pixels[i]);
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(a.size());
  if (mse < 1e-12) return kPsnrCap;
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

VifResult vif(const Image& reference, const Image& distorted) {
  require_same_shape(reference, distorted, "vif");
  static const std::vector<double> window = gaussian_window(kVifWindow, kVifWindow / 5.0);
  constexpr double eps = 1e-10;

  Image ref = to_255(reference), dist = to_255(distorted);
  VifResult result;
  double num = 0, den = 0;
  for (int level = 0; level < kVifLevels; ++level) {
    if (level > 0) {
      ref = pyramid_down(ref);
      dist = pyramid_down(dist);
    }
    if (ref.height < kVifWindow || ref.width < kVifWindow) {
      result.truncated = true;
      break;
    }
    const Image mu1 = filter_valid(ref, window, kVifWindow), mu2 = filter_valid(dist, window, kVifWindow);
    const Image s11 = filter_valid(product(ref, ref), window, kVifWindow);
    const Image s22 = filter_valid(product(dist, dist), window, kVifWindow);
    const Image s12 = filter_valid(product(ref, dist), window, kVifWindow);
    for (std::size_t i = 0; i < mu1.size(); ++i) {
      double var1 = std::max(0.0, s11.pixels[i] - mu1.pixels[i] * mu1.pixels[i]);
      const double var2 = std::max(0.0, s22.pixels[i] - mu2.pixels[i] * mu2.pixels[i]);
      const double cov = s12.pixels[i] - mu1.pixels[i] * mu2.pixels[i];

      double g = cov / (var1 + eps);
      double sv = var2 - g * cov;
      if (var1 < eps) {
        g = 0;
        sv = var2;
        var1 = 0;
      }
      if (var2 < eps) {
        g = 0;
        sv = 0;
      }
      if (g < 0) {
        sv = var2;
        g = 0;
      }
      sv = std::max(sv, eps);
      num += std::log10(1.0 + g * g * var1 / (sv + kVifNoiseVariance));
      den += std::log10(1.0 + var1 / kVifNoiseVariance);
    }
    ++result.levels_used;
  }
  if (result.levels_used == 0) throw ValidationError("vif: image smaller than one 9x9 window");
  // A flat reference carries no information; treat identical flat images as
  // perfect fidelity.
  result.value = den > 0 ? num / den : 1.0;
  return result;
}

double report_mean(const MetricReport& r) { return (r.en + r.ag + r.ssim + r.vif + r.psnr) / 5.0; }

MetricReport evaluate_pair(const Image& x_v, const Image& x_i, const Image& fused) {
  require_same_shape(x_v, x_i, "evaluate_pair");
  require_same_shape(x_v, fused, "evaluate_pair");
  MetricReport r;
  r.en = entropy(fused);
  r.ag = average_gradient(fused);
  r.ssim = 0.5 * (ssim_metric(fused, x_v) + ssim_metric(fused, x_i));
  const VifResult vv = vif(x_v, fused), vi = vif(x_i, fused);
  r.vif = 0.5 * (vv.value + vi.value);
  r.vif_truncated = vv.truncated || vi.truncated;
  r.psnr = 0.5 * (psnr(fused, x_v) + psnr(fused, x_i));
  r.mean = report_mean(r);
  return r;
}

}  // namespace ddrf
