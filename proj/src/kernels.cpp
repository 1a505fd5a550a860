#include "ddrf/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ddrf/errors.hpp"

namespace ddrf {

namespace {

constexpr int kHalf = static_cast<int>(kKernelSize / 2);

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

Kernel normalized(Kernel k) {
  const double total = k.mass();
  for (double& v : k.values) v /= total;
  return k;
}

void require_index(int j, const char* name) {
  if (j < 1 || j > kVariantsPerFamily) {
    throw ValidationError(std::string("kernel index ") + name + " = " + std::to_string(j) +
                          " outside 1.." + std::to_string(kVariantsPerFamily));
  }
}

}  // namespace

double Kernel::mass() const { return std::accumulate(values.begin(), values.end(), 0.0); }
double Kernel::min() const { return *std::min_element(values.begin(), values.end()); }
double Kernel::max() const { return *std::max_element(values.begin(), values.end()); }

Kernel Kernel::delta() {
  Kernel k;
  k.at(kHalf, kHalf) = 1.0;
  return k;
}

Kernel motion_blur_kernel(const MotionBlurParams& p) {
  const double theta = radians(p.angle_deg);
  const double cs = std::cos(theta), sn = std::sin(theta);
  const int half = p.length / 2;
  Kernel k;
  // Step one pixel at a time along the dominant axis; y points up, rows down.
  for (int t = -half; t <= half; ++t) {
    int row = 0, col = 0;
    if (std::abs(cs) >= std::abs(sn)) {
      col = t;
      row = static_cast<int>(std::lround(-t * sn / cs));
    } else {
      row = -t;
      col = static_cast<int>(std::lround(t * cs / sn));
    }
    k.at(kHalf + row, kHalf + col) = 1.0;
  }
  return normalized(k);
}

Kernel gaussian_kernel(double sigma_minor, double sigma_major, double angle_deg) {
  const double theta = radians(angle_deg);
  const double cs = std::cos(theta), sn = std::sin(theta);
  Kernel k;
  for (int r = 0; r < static_cast<int>(kKernelSize); ++r) {
    for (int c = 0; c < static_cast<int>(kKernelSize); ++c) {
      const double x = c - kHalf, y = kHalf - r;
      const double along = x * cs + y * sn;
      const double across = -x * sn + y * cs;
      k.at(r, c) = std::exp(-0.5 * (along * along / (sigma_major * sigma_major) +
                                    across * across / (sigma_minor * sigma_minor)));
    }
  }
  return normalized(k);
}

KernelBank::KernelBank(std::array<Kernel, kBankSize> kernels, std::uint64_t seed)
    : kernels_(kernels), seed_(seed) {
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    if (kernels_[i].min() < 0 || std::abs(kernels_[i].mass() - 1.0) > 1e-9) {
      throw ValidationError("basis kernel " + std::to_string(i) + " is not a nonnegative unit-mass kernel");
    }
  }
}

const Kernel& KernelBank::kernel(KernelFamily family, int j) const {
  require_index(j, "j");
  return kernels_[static_cast<std::size_t>(family) * kVariantsPerFamily + (j - 1)];
}

Kernel KernelBank::mean_kernel() const {
  Kernel k;
  for (const Kernel& basis : kernels_) {
    for (std::size_t i = 0; i < kKernelArea; ++i) k.values[i] += basis.values[i];
  }
  for (double& v : k.values) v /= static_cast<double>(kernels_.size());
  return k;
}

KernelBank build_kernel_bank(std::uint64_t seed) {
  std::array<Kernel, kBankSize> kernels;
  for (int j = 0; j < kVariantsPerFamily; ++j) {
    kernels[j] = motion_blur_kernel(kMotionParams[j]);
    kernels[kVariantsPerFamily + j] = gaussian_kernel(kIsotropicSigmas[j], kIsotropicSigmas[j], 0.0);
    const auto& an = kAnisotropicParams[j];
    kernels[2 * kVariantsPerFamily + j] = gaussian_kernel(an.sigma_minor, an.sigma_major, an.angle_deg);
  }
  return KernelBank(kernels, seed);
}

DynamicKernel synthesize_dynamic_kernel(const KernelBank& bank, double a, double b, double c,
                                        int j_m, int j_i, int j_a) {
  for (double w : {a, b, c}) {
    if (!(w >= 0.0 && w <= 1.0)) {
      std::ostringstream msg;
      msg << "dynamic kernel weight " << w << " outside [0,1]";
      throw ValidationError(msg.str());
    }
  }
  const double total = a + b + c;
  if (std::abs(total - 1.0) > 1e-9) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "dynamic kernel weights must sum to 1, got " << total;
    throw ValidationError(msg.str());
  }
  require_index(j_m, "j_m");
  require_index(j_i, "j_i");
  require_index(j_a, "j_a");

  DynamicKernel dk{a, b, c, j_m, j_i, j_a, {}};
  const Kernel& km = bank.kernel(KernelFamily::motion, j_m);
  const Kernel& ki = bank.kernel(KernelFamily::isotropic, j_i);
  const Kernel& ka = bank.kernel(KernelFamily::anisotropic, j_a);
  for (std::size_t i = 0; i < kKernelArea; ++i) {
    dk.realized.values[i] = a * km.values[i] + b * ki.values[i] + c * ka.values[i];
  }
  return dk;
}

DynamicKernel sample_dynamic_kernel(const KernelBank& bank, Rng& rng, int variants) {
  const double u1 = rng.uniform(), u2 = rng.uniform();
  const double lo = std::min(u1, u2), hi = std::max(u1, u2);
  const int j_m = rng.uniform_int(1, variants);
  const int j_i = rng.uniform_int(1, variants);
  const int j_a = rng.uniform_int(1, variants);
  return synthesize_dynamic_kernel(bank, lo, hi - lo, 1.0 - hi, j_m, j_i, j_a);
}

DegradationSpec sample_degradation_spec(const KernelBank& bank, Rng& rng, int model_index,
                                        const SpecSampling& sampling) {
  DegradationSpec spec;
  spec.kernel = sample_dynamic_kernel(bank, rng, sampling.variants);
  spec.scale = sampling.scale;
  spec.noise_sigma = rng.uniform(0.0, kMaxNoiseSigma);
  spec.model_index = model_index;
  // Always consume the draw so the stream layout does not depend on the flag.
  const double gain = rng.uniform(0.3, 1.0);
  spec.gain = sampling.low_light ? gain : 1.0;
  return spec;
}

Image blur(const Image& image, const Kernel& kernel) {
  const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
  Image out(image.height, image.width);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int u = 0; u < static_cast<int>(kKernelSize); ++u) {
        const int sr = std::clamp(r - (u - kHalf), 0, h - 1);
        const double* row = &image.pixels[static_cast<std::size_t>(sr) * image.width];
        for (int v = 0; v < static_cast<int>(kKernelSize); ++v) {
          const int sc = std::clamp(c - (v - kHalf), 0, w - 1);
          acc += kernel.at(u, v) * row[sc];
        }
      }
      out.at(r, c) = acc;
    }
  }
  return out;
}

Image degrade(const Image& image, const DegradationSpec& spec, Rng& rng) {
  if (image.height < kKernelSize || image.width < kKernelSize) {
    throw ValidationError("degrade: image " + std::to_string(image.height) + "x" +
                          std::to_string(image.width) + " is smaller than the " +
                          std::to_string(kKernelSize) + "x" + std::to_string(kKernelSize) + " kernel");
  }
  if (spec.scale < 1) throw ValidationError("degrade: scale must be >= 1");
  if (spec.noise_sigma < 0) throw ValidationError("degrade: noise sigma must be >= 0");

  Image lit = image;
  if (spec.gain != 1.0) {
    for (double& v : lit.pixels) v *= spec.gain;
  }
  const Image blurred = blur(lit, spec.kernel.realized);
  const auto s = static_cast<std::size_t>(spec.scale);
  Image out((image.height + s - 1) / s, (image.width + s - 1) / s);
  for (std::size_t r = 0; r < out.height; ++r) {
    for (std::size_t c = 0; c < out.width; ++c) {
      const double noise = rng.normal();
      out.at(r, c) = std::clamp(blurred.at(r * s, c * s) + spec.noise_sigma * noise, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace ddrf
