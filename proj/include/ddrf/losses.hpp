// Training objective: similarity to clean sources, distance from degraded
// renditions (negatives), and similarity to a reference fusion (positive).

#pragma once

#include <span>
#include <utility>
#include <vector>

#include "ddrf/autodiff.hpp"

namespace ddrf {

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;  // [0,1] scale
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Normalized kSsimWindow x kSsimWindow Gaussian, row-major.
std::vector<double> ssim_window();

/// Differentiable mean SSIM of two [1,H,W] arrays (replicate-padded, H,W >= 11).
ad::DiffArray ssim(const ad::DiffArray& a, const ad::DiffArray& b);

/// One similarity term: SSIM(prediction, target) averaged over `targets`.
struct SimilarityTerm {
  ad::DiffArray prediction;
  std::vector<ad::DiffArray> targets;
};

/// 1 - mean over terms of the term's averaged SSIM.
ad::DiffArray loss_similarity(std::span<const SimilarityTerm> terms);

/// Per-negative penalty: SSIM(negative, fused), or 1 - SSIM under
/// `eq8_literal`.
std::vector<ad::DiffArray> negative_terms(const ad::DiffArray& fused, std::span<const ad::DiffArray> negatives,
                                          bool eq8_literal = false);
/// Mean of negative_terms.
ad::DiffArray loss_negative(const ad::DiffArray& fused, std::span<const ad::DiffArray> negatives,
                            bool eq8_literal = false);

/// 1 - SSIM(fused, reference).
ad::DiffArray loss_positive(const ad::DiffArray& fused, const ad::DiffArray& reference);

struct LossWeights {
  double negative = 1.0;
  double similarity = 1.0;
  double positive = 1.0;
};

struct LossReport {
  double similarity = 0;
  double negative = 0;  // mean of the per-negative terms
  double positive = 0;
  double total = 0;
  LossWeights weights;
};

/// total = w_neg * mean(negatives) + w_sim * similarity + w_pos * positive.
LossReport combine_losses(std::span<const double> negatives, double similarity, double positive,
                          const LossWeights& weights = {});

struct LossParts {
  std::vector<ad::DiffArray> negatives;  // scalar per-negative terms
  ad::DiffArray similarity;
  ad::DiffArray positive;
};

std::pair<ad::DiffArray, LossReport> loss_total(const LossParts& parts, const LossWeights& weights = {});

}  // namespace ddrf
