#include "ddrf/dynamic_conv.hpp"

#include <cmath>

#include "ddrf/errors.hpp"

namespace ddrf {

ad::DiffArray ParamBinding::operator()(const ParamTensor& p) const {
  if (!tape_) return p.value;
  auto [it, inserted] = bound_.try_emplace(&p);
  if (inserted) it->second = tape_->variable(p.value);
  return it->second;
}

ad::DiffArray ParamBinding::bound(const ParamTensor& p) const {
  auto it = bound_.find(&p);
  return it == bound_.end() ? p.value : it->second;
}

std::vector<double> he_normal(std::size_t c_out, std::size_t c_in, std::size_t k, Rng& rng, double gain) {
  const double stddev = gain * std::sqrt(2.0 / static_cast<double>(c_in * k * k));
  std::vector<double> w(c_out * c_in * k * k);
  for (double& v : w) v = stddev * rng.normal();
  return w;
}

ad::DiffArray static_forward(const ad::DiffArray& weights, const ad::DiffArray& bias,
                             const ad::DiffArray& input) {
  if (weights.rank() != 4) {
    throw ad::ShapeError("static_forward: weights must be [C_out,C_in,k,k], got " +
                         ad::to_string(weights.shape()));
  }
  return ad::conv2d(input, weights, bias, 1, (weights.dim(2) - 1) / 2);
}

// StaticConv ------------------------------------------------------------------

StaticConv::StaticConv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, Rng& rng)
    : weight{name + ".weight", ad::DiffArray({out, in, k, k}, he_normal(out, in, k, rng))},
      bias{name + ".bias", ad::DiffArray::filled({out}, 0.0)} {}

ad::DiffArray StaticConv::forward(const ad::DiffArray& input, const ParamBinding& bind) const {
  return static_forward(bind(weight), bind(bias), input);
}

void StaticConv::for_each_param(const std::function<void(ParamTensor&)>& fn) {
  fn(weight);
  fn(bias);
}

void StaticConv::for_each_param(const std::function<void(const ParamTensor&)>& fn) const {
  fn(weight);
  fn(bias);
}

// DynamicConv -----------------------------------------------------------------

DynamicConv::DynamicConv(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                         const DynamicConvOptions& options, Rng& rng)
    : eq6_literal_(options.eq6_literal) {
  const std::size_t n = options.candidates;
  if (n == 0) throw ValidationError("dynamic conv '" + name + "': candidate count must be positive");
  const std::size_t hidden = (in + 3) / 4;
  // The literal form multiplies the mixture by an extra 1/N; scaling the
  // candidates by N starts it at the same magnitude as the plain mixture.
  const double gain = eq6_literal_ ? static_cast<double>(n) : 1.0;
  for (std::size_t kk = 0; kk < n; ++kk) {
    const std::string prefix = name + ".candidate" + std::to_string(kk);
    candidate_weights.push_back({prefix + ".weight", ad::DiffArray({out, in, k, k}, he_normal(out, in, k, rng, gain))});
    candidate_biases.push_back({prefix + ".bias", ad::DiffArray::filled({out}, 0.0)});
  }
  attention_w1 = {name + ".attention.w1", ad::DiffArray({hidden, in, 1, 1}, he_normal(hidden, in, 1, rng))};
  attention_b1 = {name + ".attention.b1", ad::DiffArray::filled({hidden}, 0.0)};
  // Zero output layer: the mixing weights start exactly uniform.
  attention_w2 = {name + ".attention.w2", ad::DiffArray::filled({n, hidden, 1, 1}, 0.0)};
  attention_b2 = {name + ".attention.b2", ad::DiffArray::filled({n}, 0.0)};
}

ad::DiffArray DynamicConv::attention(const ad::DiffArray& input, const ParamBinding& bind) const {
  if (input.rank() != 3 || input.dim(0) != in_channels()) {
    throw ad::ShapeError("dynamic conv: input " + ad::to_string(input.shape()) + " does not have " +
                         std::to_string(in_channels()) + " channels on axis 0");
  }
  const ad::DiffArray pooled = ad::global_average_pool(input);
  const ad::DiffArray hidden = ad::sigmoid(ad::conv2d(pooled, bind(attention_w1), bind(attention_b1)));
  const ad::DiffArray logits = ad::conv2d(hidden, bind(attention_w2), bind(attention_b2));
  return ad::softmax(ad::reshape(logits, {candidates()}), 0);
}

ad::DiffArray DynamicConv::forward(const ad::DiffArray& input, const ParamBinding& bind) const {
  ad::DiffArray mix = attention(input, bind);
  if (eq6_literal_) mix = ad::scale(mix, 1.0 / static_cast<double>(candidates()));

  std::vector<ad::DiffArray> weights, biases;
  for (std::size_t kk = 0; kk < candidates(); ++kk) {
    weights.push_back(bind(candidate_weights[kk]));
    biases.push_back(bind(candidate_biases[kk]));
  }
  return static_forward(ad::weighted_sum(mix, weights), ad::weighted_sum(mix, biases), input);
}

void DynamicConv::for_each_param(const std::function<void(ParamTensor&)>& fn) {
  for (std::size_t kk = 0; kk < candidates(); ++kk) {
    fn(candidate_weights[kk]);
    fn(candidate_biases[kk]);
  }
  fn(attention_w1);
  fn(attention_b1);
  fn(attention_w2);
  fn(attention_b2);
}

void DynamicConv::for_each_param(const std::function<void(const ParamTensor&)>& fn) const {
  const_cast<DynamicConv*>(this)->for_each_param([&](ParamTensor& p) { fn(p); });
}

// ConvLayer -------------------------------------------------------------------

const char* to_string(LayerKind kind) { return kind == LayerKind::static_conv ? "static" : "dynamic"; }

LayerKind parse_layer_kind(const std::string& text) {
  if (text == "static") return LayerKind::static_conv;
  if (text == "dynamic") return LayerKind::dynamic_conv;
  throw ValidationError("layer kind must be 'static' or 'dynamic', got '" + text + "'");
}

namespace {

std::variant<StaticConv, DynamicConv> make_layer(LayerKind kind, const std::string& name, std::size_t in,
                                                 std::size_t out, std::size_t k,
                                                 const DynamicConvOptions& options, Rng& rng) {
  if (kind == LayerKind::static_conv) return StaticConv(name, in, out, k, rng);
  return DynamicConv(name, in, out, k, options, rng);
}

}  // namespace

ConvLayer::ConvLayer(LayerKind kind, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                     const DynamicConvOptions& options, Rng& rng)
    : layer_(make_layer(kind, name, in, out, k, options, rng)) {}

LayerKind ConvLayer::kind() const {
  return std::holds_alternative<StaticConv>(layer_) ? LayerKind::static_conv : LayerKind::dynamic_conv;
}

ad::DiffArray ConvLayer::forward(const ad::DiffArray& input, const ParamBinding& bind) const {
  return std::visit([&](const auto& layer) { return layer.forward(input, bind); }, layer_);
}

std::size_t ConvLayer::in_channels() const {
  return std::visit([](const auto& layer) { return layer.in_channels(); }, layer_);
}

std::size_t ConvLayer::out_channels() const {
  return std::visit([](const auto& layer) { return layer.out_channels(); }, layer_);
}

void ConvLayer::for_each_param(const std::function<void(ParamTensor&)>& fn) {
  std::visit([&](auto& layer) { layer.for_each_param(fn); }, layer_);
}

void ConvLayer::for_each_param(const std::function<void(const ParamTensor&)>& fn) const {
  std::visit([&](const auto& layer) { layer.for_each_param(fn); }, layer_);
}

}  // namespace ddrf
