// Evaluation metrics. SSIM, PSNR, AG and VIF work on the 0-255 scale.

#pragma once

#include "ddrf/image.hpp"

namespace ddrf {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kVifNoiseVariance = 2.0;
inline constexpr int kVifLevels = 4;
inline constexpr std::size_t kVifWindow = 9;

/// Shannon entropy (bits) of the 256-bin histogram of round(255 * v).
double entropy(const Image& image);

/// Mean of sqrt((dx^2 + dy^2) / 2) over all pixels with forward differences;
/// the last column's dx and last row's dy are 0.
double average_gradient(const Image& image);

/// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), replicate-padded so
/// every pixel has a centred window.
double ssim_metric(const Image& a, const Image& b);

/// 10 log10(255^2 / MSE), capped at kPsnrCap when MSE < 1e-12.
double psnr(const Image& a, const Image& b);

struct VifResult {
  double value = 0;
  int levels_used = 0;
  bool truncated = false;  // fewer than kVifLevels levels fit the image
};

/// Pixel-domain multi-scale VIF of `distorted` against `reference`.
VifResult vif(const Image& reference, const Image& distorted);

struct MetricReport {
  double en = 0, ag = 0, ssim = 0, vif = 0, psnr = 0;
  double mean = 0;
  bool vif_truncated = false;
};

double report_mean(const MetricReport& r);

/// EN and AG of `fused`; SSIM, VIF and PSNR averaged over the two sources.
MetricReport evaluate_pair(const Image& x_v, const Image& x_i, const Image& fused);

}  // namespace ddrf
