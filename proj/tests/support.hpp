// Shared helpers for the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <vector>

#include "ddrf/autodiff.hpp"
#include "ddrf/image.hpp"
#include "ddrf/rng.hpp"

namespace testsupport {

using ddrf::ad::DiffArray;
using ddrf::ad::Shape;

inline DiffArray random_array(const Shape& shape, ddrf::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ddrf::ad::element_count(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return DiffArray(shape, std::move(v));
}

inline ddrf::Image random_image(std::size_t h, std::size_t w, ddrf::Rng& rng, double lo = 0.0, double hi = 1.0) {
  ddrf::Image img(h, w);
  for (double& x : img.pixels) x = rng.uniform(lo, hi);
  return img;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

using Fn = std::function<DiffArray(const std::vector<DiffArray>&)>;

struct GradientReport {
  double worst = 0;        // largest per-input relative error
  std::size_t checked = 0; // entries compared
};

/// Compares reverse-mode gradients of sum(f(x) * probe) with central
/// differences, per input, as ||analytic - numeric|| / max(||numeric||, floor).
/// `max_entries` > 0 checks that many random entries per input instead of all.
inline GradientReport check_gradients(const Fn& f, const std::vector<DiffArray>& inputs, std::uint64_t seed,
                                      std::size_t max_entries = 0, double h = 1e-6, double floor = 1e-6) {
  ddrf::Rng rng(seed);
  const DiffArray out0 = f(inputs);
  const DiffArray probe = random_array(out0.shape(), rng);

  auto objective = [&](const std::vector<DiffArray>& xs) {
    const DiffArray out = f(xs);
    double acc = 0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * probe[i];
    return acc;
  };

  // Below this magnitude a central difference cannot resolve a relative error
  // of 1e-4: rounding in the objective alone contributes ~ulp(f) / h.
  const double resolution = 1e4 * 8 * std::numeric_limits<double>::epsilon() *
                            std::max(1.0, std::abs(objective(inputs))) / (2 * h);
  floor = std::max(floor, resolution);

  ddrf::ad::Tape tape;
  std::vector<DiffArray> vars;
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  const DiffArray loss = ddrf::ad::sum(ddrf::ad::mul(f(vars), probe));
  const ddrf::ad::Gradients grads = tape.backward(loss);

  GradientReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::vector<double> analytic = grads.wrt(vars[i]);
    std::vector<std::size_t> entries(inputs[i].size());
    for (std::size_t j = 0; j < entries.size(); ++j) entries[j] = j;
    if (max_entries > 0 && entries.size() > max_entries) {
      for (std::size_t j = 0; j < max_entries; ++j) {
        std::swap(entries[j], entries[j + static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(entries.size() - j - 1)))]);
      }
      entries.resize(max_entries);
    }
    double diff2 = 0, num2 = 0;
    for (std::size_t j : entries) {
      std::vector<DiffArray> xs = inputs;
      std::vector<double> v(inputs[i].values().begin(), inputs[i].values().end());
      const double x0 = v[j];
      v[j] = x0 + h;
      xs[i] = DiffArray(inputs[i].shape(), v);
      const double up = objective(xs);
      v[j] = x0 - h;
      xs[i] = DiffArray(inputs[i].shape(), v);
      const double down = objective(xs);
      const double numeric = (up - down) / (2 * h);
      diff2 += (analytic[j] - numeric) * (analytic[j] - numeric);
      num2 += numeric * numeric;
    }
    report.checked += entries.size();
    report.worst = std::max(report.worst, std::sqrt(diff2) / std::max(std::sqrt(num2), floor));
  }
  return report;
}

}  // namespace testsupport
