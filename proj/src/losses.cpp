#include "ddrf/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "ddrf/errors.hpp"

namespace ddrf {

std::vector<double> ssim_window() {
  std::vector<double> w(kSsimWindow * kSsimWindow);
  const double half = (kSsimWindow - 1) / 2.0;
  double total = 0;
  for (std::size_t r = 0; r < kSsimWindow; ++r) {
    for (std::size_t c = 0; c < kSsimWindow; ++c) {
      const double dy = r - half, dx = c - half;
      w[r * kSsimWindow + c] = std::exp(-(dx * dx + dy * dy) / (2 * kSsimSigma * kSsimSigma));
      total += w[r * kSsimWindow + c];
    }
  }
  for (double& v : w) v /= total;
  return w;
}

ad::DiffArray ssim(const ad::DiffArray& a, const ad::DiffArray& b) {
  if (a.shape() != b.shape()) {
    throw ad::ShapeError("ssim: shape mismatch " + ad::to_string(a.shape()) + " vs " + ad::to_string(b.shape()));
  }
  if (a.rank() != 3 || a.dim(0) != 1) throw ad::ShapeError("ssim: inputs must be [1,H,W]");
  if (a.dim(1) < kSsimWindow || a.dim(2) < kSsimWindow) {
    throw ad::ShapeError("ssim: inputs must be at least 11x11, got " + ad::to_string(a.shape()));
  }
  static const ad::DiffArray window({1, 1, kSsimWindow, kSsimWindow}, ssim_window());
  static const ad::DiffArray zero({1}, {0.0});
  // Replicate padding gives every pixel its own centred window, so border
  // pixels weigh as much as interior ones.
  constexpr std::size_t pad = kSsimWindow / 2;
  auto filter = [&](const ad::DiffArray& x) { return ad::conv2d(ad::pad_replicate(x, pad), window, zero, 1, 0); };

  using namespace ad;
  const DiffArray mu_a = filter(a), mu_b = filter(b);
  const DiffArray mu_aa = mul(mu_a, mu_a), mu_bb = mul(mu_b, mu_b), mu_ab = mul(mu_a, mu_b);
  const DiffArray var_a = sub(filter(mul(a, a)), mu_aa);
  const DiffArray var_b = sub(filter(mul(b, b)), mu_bb);
  const DiffArray cov = sub(filter(mul(a, b)), mu_ab);

  const DiffArray num = mul(add_scalar(scale(mu_ab, 2.0), kSsimC1), add_scalar(scale(cov, 2.0), kSsimC2));
  const DiffArray den = mul(add_scalar(add(mu_aa, mu_bb), kSsimC1), add_scalar(add(var_a, var_b), kSsimC2));
  return mean(div(num, den));
}

ad::DiffArray loss_similarity(std::span<const SimilarityTerm> terms) {
  if (terms.empty()) throw ValidationError("loss_similarity: no prediction/target pairs");
  std::vector<ad::DiffArray> scores;
  for (const auto& term : terms) {
    if (term.targets.empty()) throw ValidationError("loss_similarity: term without targets");
    std::vector<ad::DiffArray> per_target;
    for (const auto& target : term.targets) per_target.push_back(ssim(term.prediction, target));
    scores.push_back(per_target.size() == 1
                         ? per_target[0]
                         : ad::weighted_sum(ad::DiffArray::filled({per_target.size()}, 1.0 / per_target.size()),
                                            per_target));
  }
  const ad::DiffArray avg =
      scores.size() == 1 ? scores[0]
                         : ad::weighted_sum(ad::DiffArray::filled({scores.size()}, 1.0 / scores.size()), scores);
  return ad::add_scalar(ad::scale(avg, -1.0), 1.0);
}

std::vector<ad::DiffArray> negative_terms(const ad::DiffArray& fused, std::span<const ad::DiffArray> negatives,
                                          bool eq8_literal) {
  if (negatives.empty()) throw ValidationError("loss_negative: no negative samples");
  std::vector<ad::DiffArray> terms;
  for (const auto& negative : negatives) {
    ad::DiffArray s = ssim(negative, fused);
    terms.push_back(eq8_literal ? ad::add_scalar(ad::scale(s, -1.0), 1.0) : s);
  }
  return terms;
}

ad::DiffArray loss_negative(const ad::DiffArray& fused, std::span<const ad::DiffArray> negatives, bool eq8_literal) {
  const auto terms = negative_terms(fused, negatives, eq8_literal);
  return ad::weighted_sum(ad::DiffArray::filled({terms.size()}, 1.0 / terms.size()), terms);
}

ad::DiffArray loss_positive(const ad::DiffArray& fused, const ad::DiffArray& reference) {
  if (fused.shape() != reference.shape()) {
    throw ValidationError("loss_positive: shape mismatch " + ad::to_string(fused.shape()) + " vs " +
                          ad::to_string(reference.shape()));
  }
  return ad::add_scalar(ad::scale(ssim(fused, reference), -1.0), 1.0);
}

LossReport combine_losses(std::span<const double> negatives, double similarity, double positive,
                          const LossWeights& weights) {
  LossReport report;
  report.weights = weights;
  report.similarity = similarity;
  report.positive = positive;
  double acc = 0;
  for (double n : negatives) acc += n;
  report.negative = negatives.empty() ? 0.0 : acc / static_cast<double>(negatives.size());
  report.total = weights.negative * report.negative + weights.similarity * similarity + weights.positive * positive;
  return report;
}

std::pair<ad::DiffArray, LossReport> loss_total(const LossParts& parts, const LossWeights& weights) {
  std::vector<double> negative_values;
  for (const auto& n : parts.negatives) negative_values.push_back(n.item());
  const LossReport report =
      combine_losses(negative_values, parts.similarity.item(), parts.positive.item(), weights);

  std::vector<ad::DiffArray> terms;
  std::vector<double> coeffs;
  for (const auto& n : parts.negatives) {
    terms.push_back(n);
    coeffs.push_back(weights.negative / static_cast<double>(parts.negatives.size()));
  }
  terms.push_back(parts.similarity);
  coeffs.push_back(weights.similarity);
  terms.push_back(parts.positive);
  coeffs.push_back(weights.positive);
  return {ad::weighted_sum(ad::DiffArray({coeffs.size()}, coeffs), terms), report};
}

}  // namespace ddrf
