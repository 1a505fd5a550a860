#include "ddrf/network.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "ddrf/errors.hpp"

namespace ddrf {

// KernelProjector -------------------------------------------------------------

KernelProjector::KernelProjector(std::vector<double> basis, std::vector<double> mean)
    : basis_(std::move(basis)), mean_(std::move(mean)) {
  if (mean_.size() != kKernelArea || basis_.empty() || basis_.size() % kKernelArea != 0) {
    throw ValidationError("kernel projector: basis must be [t x " + std::to_string(kKernelArea) +
                          "] and mean must have " + std::to_string(kKernelArea) + " entries");
  }
}

std::vector<double> KernelProjector::project(const Kernel& kernel) const {
  std::vector<double> coeffs(dims(), 0.0);
  for (std::size_t d = 0; d < coeffs.size(); ++d) {
    const double* row = &basis_[d * kKernelArea];
    double acc = 0;
    for (std::size_t i = 0; i < kKernelArea; ++i) acc += row[i] * (kernel.values[i] - mean_[i]);
    coeffs[d] = acc;
  }
  return coeffs;
}

Kernel KernelProjector::backproject(std::span<const double> coeffs) const {
  Kernel k;
  std::copy(mean_.begin(), mean_.end(), k.values.begin());
  for (std::size_t d = 0; d < std::min(coeffs.size(), dims()); ++d) {
    const double* row = &basis_[d * kKernelArea];
    for (std::size_t i = 0; i < kKernelArea; ++i) k.values[i] += coeffs[d] * row[i];
  }
  return k;
}

KernelProjector fit_projector(const KernelBank& bank, std::size_t samples, std::uint64_t seed,
                              std::size_t dims) {
  if (samples < 1000) throw ValidationError("fit_projector: need at least 1000 samples");
  if (dims == 0 || dims > kKernelArea) throw ValidationError("fit_projector: invalid dimension count");

  Rng rng(seed);
  Eigen::MatrixXd data(samples, kKernelArea);
  for (std::size_t s = 0; s < samples; ++s) {
    const DynamicKernel dk = sample_dynamic_kernel(bank, rng);
    for (std::size_t i = 0; i < kKernelArea; ++i) data(s, i) = dk.realized.values[i];
  }
  const Eigen::RowVectorXd mean = data.colwise().mean();
  data.rowwise() -= mean;
  const Eigen::MatrixXd cov = (data.transpose() * data) / static_cast<double>(samples - 1);
  if (cov.diagonal().maxCoeff() < 1e-20) {
    throw ValidationError("fit_projector: degenerate covariance (all sampled kernels identical)");
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  std::vector<double> basis(dims * kKernelArea);
  for (std::size_t d = 0; d < dims; ++d) {
    // Eigenvalues ascend; take from the top.
    Eigen::VectorXd v = eig.eigenvectors().col(static_cast<Eigen::Index>(kKernelArea - 1 - d));
    Eigen::Index peak = 0;
    v.cwiseAbs().maxCoeff(&peak);
    if (v(peak) < 0) v = -v;
    v.normalize();
    std::copy(v.data(), v.data() + kKernelArea, basis.begin() + static_cast<std::ptrdiff_t>(d * kKernelArea));
  }
  return KernelProjector(std::move(basis), std::vector<double>(mean.data(), mean.data() + kKernelArea));
}

ad::DiffArray project_and_stretch(const KernelProjector& projector, const Kernel& kernel,
                                  std::size_t height, std::size_t width) {
  const std::vector<double> coeffs = projector.project(kernel);
  const std::size_t plane = height * width;
  std::vector<double> out(coeffs.size() * plane);
  for (std::size_t c = 0; c < coeffs.size(); ++c) {
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(c * plane), plane, coeffs[c]);
  }
  return ad::DiffArray({coeffs.size(), height, width}, std::move(out));
}

// DdrfNetwork -----------------------------------------------------------------

namespace {

constexpr std::size_t kConvSize = 3;

std::vector<ConvLayer> make_branch(const std::string& name, LayerKind kind, std::size_t in,
                                   const DynamicConvOptions& options, Rng& rng) {
  std::vector<ConvLayer> layers;
  for (std::size_t l = 0; l < 3; ++l) {
    layers.emplace_back(kind, name + "." + std::to_string(l), in, kBranchWidths[l], kConvSize, options, rng);
    in = kBranchWidths[l];
  }
  return layers;
}

}  // namespace

DdrfNetwork::DdrfNetwork(const NetworkConfig& config, KernelProjector projector)
    : config_(config), projector_(std::move(projector)) {
  if (projector_.dims() == 0) throw ValidationError("network: kernel projector is empty");
  Rng rng(derive_seed(config.seed, 0x6e6574));
  const DynamicConvOptions options{config.candidates, config.eq6_literal};

  branch_v_ = make_branch("branch_v", config.branch_kind, branch_input_channels(), options, rng);
  heads_.emplace_back("head_v", kBranchWidths[2], 1, kConvSize, rng);
  branch_i_ = make_branch("branch_i", config.branch_kind, branch_input_channels(), options, rng);
  heads_.emplace_back("head_i", kBranchWidths[2], 1, kConvSize, rng);

  std::size_t in = fusion_input_channels();
  for (std::size_t l = 0; l < 4; ++l) {
    fusion_.emplace_back(LayerKind::dynamic_conv, "fusion." + std::to_string(l), in, kFusionWidths[l],
                         kConvSize, options, rng);
    in = kFusionWidths[l];
  }
}

std::size_t DdrfNetwork::branch_input_channels() const {
  return 1 + (config_.condition_branches ? projector_.dims() : 0);
}

std::size_t DdrfNetwork::fusion_input_channels() const {
  return 2 * kBranchWidths[2] + (config_.condition_fusion ? 2 * projector_.dims() : 0);
}

ad::DiffArray DdrfNetwork::run_branch(const std::vector<ConvLayer>& layers, const ad::DiffArray& input,
                                      const ParamBinding& bind) const {
  ad::DiffArray x = input;
  for (const ConvLayer& layer : layers) x = ad::relu(layer.forward(x, bind));
  return x;
}

NetworkOutputs DdrfNetwork::forward(const ad::DiffArray& x_v, const ad::DiffArray& x_i, const Kernel& k_v,
                                    const Kernel& k_i, const ParamBinding& bind) const {
  if (x_v.rank() != 3 || x_v.dim(0) != 1) {
    throw ad::ShapeError("network: visible input must be [1,H,W], got " + ad::to_string(x_v.shape()));
  }
  if (x_i.shape() != x_v.shape()) {
    throw ValidationError("network: modality shape mismatch " + ad::to_string(x_v.shape()) + " vs " +
                          ad::to_string(x_i.shape()));
  }
  const std::size_t h = x_v.dim(1), w = x_v.dim(2);
  const ad::DiffArray g_v = project_and_stretch(projector_, k_v, h, w);
  const ad::DiffArray g_i = project_and_stretch(projector_, k_i, h, w);

  auto branch_input = [&](const ad::DiffArray& x, const ad::DiffArray& g) {
    if (!config_.condition_branches) return x;
    const ad::DiffArray parts[] = {x, g};
    return ad::concat_channels(parts);
  };
  const ad::DiffArray f_v = run_branch(branch_v_, branch_input(x_v, g_v), bind);
  const ad::DiffArray f_i = run_branch(branch_i_, branch_input(x_i, g_i), bind);

  NetworkOutputs out;
  out.restored_v = ad::sigmoid(heads_[0].forward(f_v, bind));
  out.restored_i = ad::sigmoid(heads_[1].forward(f_i, bind));

  std::vector<ad::DiffArray> parts{f_v, f_i};
  if (config_.condition_fusion) {
    parts.push_back(g_v);
    parts.push_back(g_i);
  }
  ad::DiffArray x = ad::concat_channels(parts);
  for (std::size_t l = 0; l < fusion_.size(); ++l) {
    x = fusion_[l].forward(x, bind);
    x = (l + 1 < fusion_.size()) ? ad::relu(x) : ad::sigmoid(x);
  }
  out.fused = x;
  return out;
}

FusionImages DdrfNetwork::infer(const Image& x_v, const Image& x_i, const Kernel& k_v, const Kernel& k_i) const {
  require_same_shape(x_v, x_i, "network");
  const NetworkOutputs out = forward(to_array(x_v), to_array(x_i), k_v, k_i);
  return {to_image(out.restored_v), to_image(out.restored_i), to_image(out.fused)};
}

void DdrfNetwork::for_each_param(const std::function<void(ParamTensor&)>& fn) {
  for (auto& layer : branch_v_) layer.for_each_param(fn);
  heads_[0].for_each_param(fn);
  for (auto& layer : branch_i_) layer.for_each_param(fn);
  heads_[1].for_each_param(fn);
  for (auto& layer : fusion_) layer.for_each_param(fn);
}

void DdrfNetwork::for_each_param(const std::function<void(const ParamTensor&)>& fn) const {
  const_cast<DdrfNetwork*>(this)->for_each_param([&](ParamTensor& p) { fn(p); });
}

std::size_t DdrfNetwork::parameter_count() const {
  std::size_t n = 0;
  for_each_param([&](const ParamTensor& p) { n += p.value.size(); });
  return n;
}

void DdrfNetwork::swap_branches() {
  std::vector<ParamTensor*> v, i;
  for (auto& layer : branch_v_) layer.for_each_param([&](ParamTensor& p) { v.push_back(&p); });
  heads_[0].for_each_param([&](ParamTensor& p) { v.push_back(&p); });
  for (auto& layer : branch_i_) layer.for_each_param([&](ParamTensor& p) { i.push_back(&p); });
  heads_[1].for_each_param([&](ParamTensor& p) { i.push_back(&p); });
  for (std::size_t k = 0; k < v.size(); ++k) std::swap(v[k]->value, i[k]->value);
}

// Manual fusion ---------------------------------------------------------------

Image laplacian(const Image& image) {
  Image out(image.height, image.width);
  const std::size_t h = image.height, w = image.width;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double up = image.at(r == 0 ? 0 : r - 1, c);
      const double down = image.at(r + 1 == h ? r : r + 1, c);
      const double left = image.at(r, c == 0 ? 0 : c - 1);
      const double right = image.at(r, c + 1 == w ? c : c + 1);
      out.at(r, c) = 4.0 * image.at(r, c) - (up + down + left + right);
    }
  }
  return out;
}

Image fuse_manual(const Image& x_v, const Image& x_i) {
  require_same_shape(x_v, x_i, "fuse_manual");
  const Image lap_v = laplacian(x_v), lap_i = laplacian(x_i);
  Image out(x_v.height, x_v.width);
  for (std::size_t p = 0; p < out.size(); ++p) {
    const double v = x_v.pixels[p], i = x_i.pixels[p];
    double value = std::max(v, i);
    if (std::abs(v - i) > 1e-9) value += 0.5 * (v >= i ? lap_i.pixels[p] : lap_v.pixels[p]);
    out.pixels[p] = std::clamp(value, 0.0, 1.0);
  }
  return out;
}

}  // namespace ddrf
