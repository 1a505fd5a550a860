// Static and dynamic (attention-mixed) convolution layers.

#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "ddrf/autodiff.hpp"
#include "ddrf/rng.hpp"

namespace ddrf {

/// A named learnable array. `value` is an untracked DiffArray; a
/// ParamBinding decides whether a forward pass sees it as a constant or as a
/// tape variable.
struct ParamTensor {
  std::string name;
  ad::DiffArray value;
};

class ParamBinding {
 public:
  /// Parameters enter the forward pass as constants (inference).
  ParamBinding() = default;
  /// Parameters become leaves on `tape`, one per tensor, created on first use.
  explicit ParamBinding(ad::Tape& tape) : tape_(&tape) {}

  ad::DiffArray operator()(const ParamTensor& p) const;
  /// Bound leaf of `p`; an untracked constant if `p` was never used.
  ad::DiffArray bound(const ParamTensor& p) const;

 private:
  ad::Tape* tape_ = nullptr;
  mutable std::unordered_map<const ParamTensor*, ad::DiffArray> bound_;
};

/// He-scaled normal weights for a [c_out, c_in, k, k] conv.
std::vector<double> he_normal(std::size_t c_out, std::size_t c_in, std::size_t k, Rng& rng,
                              double gain = 1.0);

/// conv2d with stride 1 and same padding.
ad::DiffArray static_forward(const ad::DiffArray& weights, const ad::DiffArray& bias,
                             const ad::DiffArray& input);

class StaticConv {
 public:
  StaticConv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, Rng& rng);

  ad::DiffArray forward(const ad::DiffArray& input, const ParamBinding& bind) const;
  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }

  void for_each_param(const std::function<void(ParamTensor&)>& fn);
  void for_each_param(const std::function<void(const ParamTensor&)>& fn) const;

  ParamTensor weight;
  ParamTensor bias;
};

struct DynamicConvOptions {
  std::size_t candidates = 4;
  /// Keep the 1/N factor in front of the attention-weighted kernel sum.
  bool eq6_literal = true;
};

/// N candidate kernels mixed by weights a = softmax(MLP(global-average-pool(x))),
/// then one same-padded convolution with
///   W = c * sum_k a_k W_k,  b = c * sum_k a_k b_k,  c = 1/N or 1.
/// The MLP is C_in -> ceil(C_in/4) (sigmoid) -> N.
class DynamicConv {
 public:
  DynamicConv(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
              const DynamicConvOptions& options, Rng& rng);

  ad::DiffArray forward(const ad::DiffArray& input, const ParamBinding& bind) const;
  /// Mixing weights (shape [N]) for `input`.
  ad::DiffArray attention(const ad::DiffArray& input, const ParamBinding& bind) const;

  std::size_t in_channels() const { return candidate_weights.front().value.dim(1); }
  std::size_t out_channels() const { return candidate_weights.front().value.dim(0); }
  std::size_t candidates() const { return candidate_weights.size(); }
  bool eq6_literal() const { return eq6_literal_; }
  void set_eq6_literal(bool on) { eq6_literal_ = on; }

  void for_each_param(const std::function<void(ParamTensor&)>& fn);
  void for_each_param(const std::function<void(const ParamTensor&)>& fn) const;

  std::vector<ParamTensor> candidate_weights;
  std::vector<ParamTensor> candidate_biases;
  ParamTensor attention_w1, attention_b1, attention_w2, attention_b2;

 private:
  bool eq6_literal_ = true;
};

enum class LayerKind { static_conv, dynamic_conv };

const char* to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& text);

/// Either layer kind behind one interface.
class ConvLayer {
 public:
  ConvLayer(LayerKind kind, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
            const DynamicConvOptions& options, Rng& rng);

  LayerKind kind() const;
  ad::DiffArray forward(const ad::DiffArray& input, const ParamBinding& bind) const;
  std::size_t in_channels() const;
  std::size_t out_channels() const;

  void for_each_param(const std::function<void(ParamTensor&)>& fn);
  void for_each_param(const std::function<void(const ParamTensor&)>& fn) const;

  StaticConv* as_static() { return std::get_if<StaticConv>(&layer_); }
  DynamicConv* as_dynamic() { return std::get_if<DynamicConv>(&layer_); }
  const DynamicConv* as_dynamic() const { return std::get_if<DynamicConv>(&layer_); }

 private:
  std::variant<StaticConv, DynamicConv> layer_;
};

}  // namespace ddrf
