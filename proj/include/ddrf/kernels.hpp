// Degradation kernels: a fixed basis bank of blur kernels, their convex
// combinations, and the blur / subsample / noise degradation operator.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

#include "ddrf/image.hpp"
#include "ddrf/rng.hpp"

namespace ddrf {

inline constexpr std::size_t kKernelSize = 15;
inline constexpr std::size_t kKernelArea = kKernelSize * kKernelSize;
inline constexpr int kVariantsPerFamily = 4;
inline constexpr std::size_t kBankSize = 3 * kVariantsPerFamily;

/// Square kernel_size x kernel_size support, row-major.
struct Kernel {
  std::array<double, kKernelArea> values{};

  double at(std::size_t r, std::size_t c) const { return values[r * kKernelSize + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * kKernelSize + c]; }
  double mass() const;
  double min() const;
  double max() const;

  static Kernel delta();
  bool operator==(const Kernel&) const = default;
};

enum class KernelFamily { motion = 0, isotropic = 1, anisotropic = 2 };

struct MotionBlurParams {
  int length;  // pixels along the dominant axis
  double angle_deg;
};
struct AnisotropicParams {
  double sigma_minor, sigma_major;
  double angle_deg;  // rotation of the major axis
};

inline constexpr std::array<MotionBlurParams, 4> kMotionParams{{{5, 0}, {5, 45}, {9, 90}, {9, 135}}};
inline constexpr std::array<double, 4> kIsotropicSigmas{0.8, 1.6, 2.4, 3.2};
inline constexpr std::array<AnisotropicParams, 4> kAnisotropicParams{
    {{0.8, 2.4, 0}, {1.2, 3.2, 30}, {0.6, 1.8, 60}, {1.0, 4.0, 120}}};

Kernel motion_blur_kernel(const MotionBlurParams& p);
Kernel gaussian_kernel(double sigma_minor, double sigma_major, double angle_deg);

class KernelBank {
 public:
  /// Custom bank (tests). Every kernel must be nonnegative with unit mass.
  KernelBank(std::array<Kernel, kBankSize> kernels, std::uint64_t seed);

  /// j in 1..4.
  const Kernel& kernel(KernelFamily family, int j) const;
  std::span<const Kernel> all() const { return kernels_; }
  std::uint64_t seed() const { return seed_; }
  /// Average of all basis kernels.
  Kernel mean_kernel() const;

 private:
  std::array<Kernel, kBankSize> kernels_;
  std::uint64_t seed_;
};

/// Motion (1-4), isotropic (1-4), anisotropic (1-4) from the fixed parameter
/// tables above. The seed is recorded for provenance; the construction itself
/// has no random component.
KernelBank build_kernel_bank(std::uint64_t seed);

struct DynamicKernel {
  double a = 1, b = 0, c = 0;  // motion, isotropic, anisotropic weights
  int j_m = 1, j_i = 1, j_a = 1;
  Kernel realized;
};

/// a*k_m(j_m) + b*k_i(j_i) + c*k_a(j_a). Throws ValidationError when a weight
/// leaves [0,1], the weights do not sum to 1 within 1e-9, or an index is out
/// of range.
DynamicKernel synthesize_dynamic_kernel(const KernelBank& bank, double a, double b, double c,
                                        int j_m, int j_i, int j_a);

/// Weights uniform on the simplex (sorted-uniform spacings), indices uniform
/// on 1..variants.
DynamicKernel sample_dynamic_kernel(const KernelBank& bank, Rng& rng,
                                    int variants = kVariantsPerFamily);

struct DegradationSpec {
  DynamicKernel kernel;
  int scale = 1;             // 1 or 2
  double noise_sigma = 0.0;  // on the [0,1] scale
  int model_index = 1;       // 1 visible, 2 infrared, 3 fused
  double gain = 1.0;         // illumination gain applied before blurring
};

inline constexpr double kMaxNoiseSigma = 10.0 / 255.0;

struct SpecSampling {
  int scale = 1;
  int variants = kVariantsPerFamily;
  bool low_light = false;  // gain ~ U[0.3, 1.0] when set
};

DegradationSpec sample_degradation_spec(const KernelBank& bank, Rng& rng, int model_index,
                                        const SpecSampling& sampling = {});

/// Blur with replicate-edge padding (true convolution).
Image blur(const Image& image, const Kernel& kernel);

/// ((gain * image) conv k) subsampled by s from offset 0, plus N(0, sigma^2)
/// noise drawn in row-major order from `rng`, clamped to [0,1].
Image degrade(const Image& image, const DegradationSpec& spec, Rng& rng);

}  // namespace ddrf
