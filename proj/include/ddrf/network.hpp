// Siamese restore-and-fuse network conditioned on projected degradation
// kernels.
//
//   visible  ─┬─ concat(x_v, proj(k_v)) ─ branch_v (3 conv) ─ f_v ─ head_v ─ restored_v
//   infrared ─┴─ concat(x_i, proj(k_i)) ─ branch_i (3 conv) ─ f_i ─ head_i ─ restored_i
//   concat(f_v, f_i, proj(k_v), proj(k_i)) ─ 4 dynamic conv ─ fused
//
// proj projects a 15x15 kernel onto a fixed PCA basis and broadcasts each
// coefficient to a constant plane. Branch weights are not shared.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ddrf/dynamic_conv.hpp"
#include "ddrf/image.hpp"
#include "ddrf/kernels.hpp"

namespace ddrf {

class KernelProjector {
 public:
  KernelProjector() = default;
  /// `basis` is [dims x kKernelArea] row-major with orthonormal rows.
  KernelProjector(std::vector<double> basis, std::vector<double> mean);

  std::size_t dims() const { return mean_.empty() ? 0 : basis_.size() / mean_.size(); }
  const std::vector<double>& basis() const { return basis_; }
  const std::vector<double>& mean() const { return mean_; }

  std::vector<double> project(const Kernel& kernel) const;
  Kernel backproject(std::span<const double> coeffs) const;

 private:
  std::vector<double> basis_;
  std::vector<double> mean_;
};

/// Mean and top-`dims` principal directions of `samples` sampled dynamic
/// kernels. Each direction's largest-magnitude entry is made positive.
KernelProjector fit_projector(const KernelBank& bank, std::size_t samples, std::uint64_t seed,
                              std::size_t dims = 8);

/// [dims, H, W]; plane c is filled with projection coefficient c.
ad::DiffArray project_and_stretch(const KernelProjector& projector, const Kernel& kernel,
                                  std::size_t height, std::size_t width);

struct NetworkConfig {
  LayerKind branch_kind = LayerKind::dynamic_conv;
  std::size_t candidates = 4;
  bool eq6_literal = true;
  bool condition_branches = true;
  bool condition_fusion = true;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kBranchWidths[3] = {16, 32, 32};
inline constexpr std::size_t kFusionWidths[4] = {64, 32, 16, 1};

struct NetworkOutputs {
  ad::DiffArray restored_v;
  ad::DiffArray restored_i;
  ad::DiffArray fused;
};

struct FusionImages {
  Image restored_v;
  Image restored_i;
  Image fused;
};

class DdrfNetwork {
 public:
  /// Parameters drawn from `config.seed`.
  DdrfNetwork(const NetworkConfig& config, KernelProjector projector);

  /// x_v, x_i: [1,H,W] in [0,1]. Outputs are [1,H,W] in [0,1].
  NetworkOutputs forward(const ad::DiffArray& x_v, const ad::DiffArray& x_i, const Kernel& k_v,
                         const Kernel& k_i, const ParamBinding& bind = {}) const;
  FusionImages infer(const Image& x_v, const Image& x_i, const Kernel& k_v, const Kernel& k_i) const;

  /// Declaration order: branch_v, head_v, branch_i, head_i, fusion.
  void for_each_param(const std::function<void(ParamTensor&)>& fn);
  void for_each_param(const std::function<void(const ParamTensor&)>& fn) const;
  std::size_t parameter_count() const;

  /// Exchanges the parameter values of the two branches (and heads).
  void swap_branches();

  const NetworkConfig& config() const { return config_; }
  const KernelProjector& projector() const { return projector_; }
  std::size_t branch_input_channels() const;
  std::size_t fusion_input_channels() const;

  std::vector<ConvLayer>& fusion_layers() { return fusion_; }
  std::vector<ConvLayer>& branch_layers_v() { return branch_v_; }

 private:
  ad::DiffArray run_branch(const std::vector<ConvLayer>& layers, const ad::DiffArray& input,
                           const ParamBinding& bind) const;

  NetworkConfig config_;
  KernelProjector projector_;
  std::vector<ConvLayer> branch_v_, branch_i_;
  std::vector<StaticConv> heads_;  // [visible, infrared]
  std::vector<ConvLayer> fusion_;
};

/// Hand-designed reference fusion: per-pixel maximum plus half the Laplacian
/// detail of the input that was not selected, clamped to [0,1]. The detail
/// term is dropped where the inputs agree within 1e-9.
Image fuse_manual(const Image& x_v, const Image& x_i);

/// 4-neighbour Laplacian 4x - (up + down + left + right), replicate edges.
Image laplacian(const Image& image);

// Checkpoints ------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const DdrfNetwork& network);
DdrfNetwork load_checkpoint(const std::filesystem::path& path);

}  // namespace ddrf
