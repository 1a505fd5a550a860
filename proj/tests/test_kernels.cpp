#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ddrf/errors.hpp"
#include "ddrf/kernels.hpp"
#include "support.hpp"

using namespace ddrf;

namespace {

constexpr int kHalf = static_cast<int>(kKernelSize / 2);

// Second-moment matrix of a kernel in (x right, y up) coordinates.
struct Moments {
  double xx = 0, yy = 0, xy = 0;
};

Moments moments(const Kernel& k) {
  Moments m;
  for (int r = 0; r < static_cast<int>(kKernelSize); ++r) {
    for (int c = 0; c < static_cast<int>(kKernelSize); ++c) {
      const double x = c - kHalf, y = kHalf - r, w = k.at(r, c);
      m.xx += w * x * x;
      m.yy += w * y * y;
      m.xy += w * x * y;
    }
  }
  return m;
}

double principal_angle_deg(const Moments& m) {
  double a = 0.5 * std::atan2(2 * m.xy, m.xx - m.yy) * 180.0 / std::numbers::pi;
  return a < 0 ? a + 180.0 : a;
}

// Direct true convolution with replicate edges.
Image blur_oracle(const Image& img, const Kernel& k) {
  Image out(img.height, img.width);
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int u = -kHalf; u <= kHalf; ++u) {
        for (int v = -kHalf; v <= kHalf; ++v) {
          const int sr = std::clamp(r - u, 0, h - 1), sc = std::clamp(c - v, 0, w - 1);
          acc += k.at(kHalf + u, kHalf + v) * img.at(sr, sc);
        }
      }
      out.at(r, c) = acc;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("basis kernels are nonnegative with unit mass") {
  const KernelBank bank = build_kernel_bank(0);
  REQUIRE(bank.all().size() == 12);
  for (const Kernel& k : bank.all()) {
    CHECK(k.min() >= 0.0);
    CHECK(std::abs(k.mass() - 1.0) <= 1e-9);
  }
}

TEST_CASE("bank construction ignores the seed") {
  CHECK(build_kernel_bank(1).mean_kernel() == build_kernel_bank(99).mean_kernel());
}

TEST_CASE("horizontal motion kernel is a centered 5-pixel line") {
  const Kernel k = motion_blur_kernel({5, 0});
  for (int c = -2; c <= 2; ++c) CHECK(k.at(kHalf, kHalf + c) == doctest::Approx(0.2));
  CHECK(k.at(kHalf, kHalf + 3) == 0.0);
  CHECK(k.at(kHalf - 1, kHalf) == 0.0);
}

TEST_CASE("motion kernels follow their angle") {
  const Kernel vertical = motion_blur_kernel({9, 90});
  for (int r = -4; r <= 4; ++r) CHECK(vertical.at(kHalf + r, kHalf) == doctest::Approx(1.0 / 9));
  const Kernel diag = motion_blur_kernel({5, 45});
  // 45 degrees counter-clockwise: up and to the right.
  CHECK(diag.at(kHalf - 1, kHalf + 1) == doctest::Approx(0.2));
  CHECK(diag.at(kHalf + 2, kHalf - 2) == doctest::Approx(0.2));
  CHECK(principal_angle_deg(moments(motion_blur_kernel({9, 135}))) == doctest::Approx(135.0).epsilon(1e-9));
}

TEST_CASE("isotropic Gaussian matches the closed form") {
  for (double sigma : kIsotropicSigmas) {
    const Kernel k = gaussian_kernel(sigma, sigma, 0.0);
    double total = 0;
    for (int r = -kHalf; r <= kHalf; ++r)
      for (int c = -kHalf; c <= kHalf; ++c) total += std::exp(-(r * r + c * c) / (2 * sigma * sigma));
    for (int r = -kHalf; r <= kHalf; ++r)
      for (int c = -kHalf; c <= kHalf; ++c)
        CHECK(k.at(kHalf + r, kHalf + c) ==
              doctest::Approx(std::exp(-(r * r + c * c) / (2 * sigma * sigma)) / total).epsilon(1e-12));
  }
}

TEST_CASE("anisotropic Gaussians match the rotated-covariance closed form") {
  for (const auto& p : kAnisotropicParams) {
    const Kernel k = gaussian_kernel(p.sigma_minor, p.sigma_major, p.angle_deg);
    // Precision matrix R diag(1/major^2, 1/minor^2) R^T, x right and y up.
    const double t = p.angle_deg * std::numbers::pi / 180.0, cs = std::cos(t), sn = std::sin(t);
    const double a = 1 / (p.sigma_major * p.sigma_major), b = 1 / (p.sigma_minor * p.sigma_minor);
    const double pxx = a * cs * cs + b * sn * sn, pyy = a * sn * sn + b * cs * cs, pxy = (a - b) * cs * sn;
    std::vector<double> expect;
    double total = 0;
    for (int r = 0; r < static_cast<int>(kKernelSize); ++r) {
      for (int c = 0; c < static_cast<int>(kKernelSize); ++c) {
        const double x = c - kHalf, y = kHalf - r;
        expect.push_back(std::exp(-0.5 * (pxx * x * x + 2 * pxy * x * y + pyy * y * y)));
        total += expect.back();
      }
    }
    for (double& e : expect) e /= total;
    CHECK(testsupport::max_abs_diff(k.values, expect) < 1e-12);
  }
  // Small enough to sit well inside the window: moments recover the angle.
  CHECK(principal_angle_deg(moments(gaussian_kernel(0.6, 1.8, 60))) == doctest::Approx(60.0).epsilon(1e-4));
  const Moments flat = moments(gaussian_kernel(0.8, 2.4, 0));
  CHECK(flat.xx > 5 * flat.yy);
}

TEST_CASE("dynamic kernel synthesis validates its weights") {
  const KernelBank bank = build_kernel_bank(0);
  const DynamicKernel dk = synthesize_dynamic_kernel(bank, 0.2, 0.3, 0.5, 1, 2, 3);
  CHECK(std::abs(dk.realized.mass() - 1.0) < 1e-12);
  for (std::size_t i = 0; i < kKernelArea; ++i) {
    const double expect = 0.2 * bank.kernel(KernelFamily::motion, 1).values[i] +
                          0.3 * bank.kernel(KernelFamily::isotropic, 2).values[i] +
                          0.5 * bank.kernel(KernelFamily::anisotropic, 3).values[i];
    CHECK(dk.realized.values[i] == doctest::Approx(expect).epsilon(1e-15));
  }
  CHECK_THROWS_AS(synthesize_dynamic_kernel(bank, 0.5, 0.5, 0.5, 1, 1, 1), ValidationError);
  CHECK_THROWS_AS(synthesize_dynamic_kernel(bank, -0.1, 0.6, 0.5, 1, 1, 1), ValidationError);
  CHECK_THROWS_AS(synthesize_dynamic_kernel(bank, 1.0, 0.0, 0.0, 5, 1, 1), ValidationError);
  CHECK_THROWS_AS(synthesize_dynamic_kernel(bank, 1.0, 0.0, 0.0, 1, 0, 1), ValidationError);
  try {
    synthesize_dynamic_kernel(bank, 0.4, 0.4, 0.4, 1, 1, 1);
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("1.2") != std::string::npos);
  }
}

TEST_CASE("one-hot weights reproduce a basis kernel") {
  const KernelBank bank = build_kernel_bank(0);
  CHECK(synthesize_dynamic_kernel(bank, 0, 1, 0, 1, 4, 1).realized == bank.kernel(KernelFamily::isotropic, 4));
}

TEST_CASE("sampled dynamic kernels stay on the simplex") {
  const KernelBank bank = build_kernel_bank(0);
  Rng rng(11);
  double ma = 0, mb = 0, mc = 0;
  const int n = 10000;
  for (int s = 0; s < n; ++s) {
    const DynamicKernel dk = sample_dynamic_kernel(bank, rng);
    CHECK(std::abs(dk.a + dk.b + dk.c - 1.0) < 1e-12);
    ma += dk.a / n;
    mb += dk.b / n;
    mc += dk.c / n;
    if (s < 1000) {
      CHECK(dk.realized.min() >= 0.0);
      CHECK(std::abs(dk.realized.mass() - 1.0) <= 1e-9);
    }
  }
  for (double m : {ma, mb, mc}) {
    CHECK(m >= 0.32);
    CHECK(m <= 0.35);
  }
}

TEST_CASE("restricting variants restricts the sampled indices") {
  const KernelBank bank = build_kernel_bank(0);
  Rng rng(12);
  for (int s = 0; s < 500; ++s) {
    const DynamicKernel dk = sample_dynamic_kernel(bank, rng, 2);
    CHECK(dk.j_m <= 2);
    CHECK(dk.j_i <= 2);
    CHECK(dk.j_a <= 2);
  }
}

TEST_CASE("blur is a true convolution with replicate edges") {
  Rng rng(13);
  const Image img = testsupport::random_image(20, 23, rng);
  Kernel shift;
  shift.at(kHalf, kHalf + 1) = 1.0;  // true convolution moves content right
  const Image moved = blur(img, shift);
  for (std::size_t r = 0; r < img.height; ++r) {
    CHECK(moved.at(r, 0) == img.at(r, 0));
    for (std::size_t c = 1; c < img.width; ++c) CHECK(moved.at(r, c) == img.at(r, c - 1));
  }
  Kernel lopsided;
  for (std::size_t i = 0; i < kKernelArea; ++i) lopsided.values[i] = rng.uniform();
  CHECK(testsupport::max_abs_diff(blur(img, lopsided).pixels, blur_oracle(img, lopsided).pixels) < 1e-12);
}

TEST_CASE("delta kernel without noise is the identity") {
  Rng rng(14);
  const Image img = testsupport::random_image(32, 32, rng);
  DegradationSpec spec;
  spec.kernel.realized = Kernel::delta();
  Rng noise(1);
  CHECK(testsupport::max_abs_diff(degrade(img, spec, noise).pixels, img.pixels) <= 1e-12);
}

TEST_CASE("constant images survive every basis kernel") {
  const KernelBank bank = build_kernel_bank(0);
  const Image flat(24, 24, 0.37);
  for (const Kernel& k : bank.all()) {
    DegradationSpec spec;
    spec.kernel.realized = k;
    Rng noise(1);
    CHECK(testsupport::max_abs_diff(degrade(flat, spec, noise).pixels, flat.pixels) <= 1e-12);
  }
}

TEST_CASE("subsampling keeps every second pixel from offset 0") {
  Rng rng(15);
  const Image img = testsupport::random_image(31, 32, rng);
  DegradationSpec spec;
  spec.kernel.realized = Kernel::delta();
  spec.scale = 2;
  Rng noise(1);
  const Image low = degrade(img, spec, noise);
  CHECK(low.height == 16);
  CHECK(low.width == 16);
  CHECK(low.at(3, 5) == img.at(6, 10));
}

TEST_CASE("noise has the requested spread and output is clamped") {
  DegradationSpec spec;
  spec.kernel.realized = Kernel::delta();
  spec.noise_sigma = 0.03;
  Rng noise(2);
  const Image out = degrade(Image(128, 128, 0.5), spec, noise);
  double m = 0, v = 0;
  for (double x : out.pixels) m += x / out.size();
  for (double x : out.pixels) v += (x - m) * (x - m) / out.size();
  CHECK(m == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::sqrt(v) == doctest::Approx(0.03).epsilon(0.05));

  spec.noise_sigma = kMaxNoiseSigma;
  Rng noise2(3);
  for (double x : degrade(Image(32, 32, 0.999), spec, noise2).pixels) {
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
  }
}

TEST_CASE("gain scales intensity before blurring") {
  DegradationSpec spec;
  spec.kernel.realized = Kernel::delta();
  spec.gain = 0.5;
  Rng noise(1);
  CHECK(degrade(Image(16, 16, 0.8), spec, noise).at(3, 3) == doctest::Approx(0.4));
}

TEST_CASE("degradation rejects images smaller than the kernel") {
  DegradationSpec spec;
  spec.kernel.realized = Kernel::delta();
  Rng noise(1);
  CHECK_THROWS_AS(degrade(Image(10, 40, 0.1), spec, noise), ValidationError);
}

TEST_CASE("sampled specs respect the ranges") {
  const KernelBank bank = build_kernel_bank(0);
  Rng rng(16);
  for (int s = 0; s < 200; ++s) {
    const DegradationSpec spec = sample_degradation_spec(bank, rng, 2, {2, 4, true});
    CHECK(spec.scale == 2);
    CHECK(spec.model_index == 2);
    CHECK(spec.noise_sigma >= 0.0);
    CHECK(spec.noise_sigma <= kMaxNoiseSigma);
    CHECK(spec.gain >= 0.3);
    CHECK(spec.gain <= 1.0);
  }
  Rng plain(17);
  CHECK(sample_degradation_spec(bank, plain, 1).gain == 1.0);
}
