// Reverse-mode differentiable arrays.
//
// A DiffArray is an immutable, shaped block of doubles. Arrays created by
// Tape::variable (or computed from one) carry a node id on that tape; arrays
// with no tracked input are plain constants and record nothing, so inference
// runs without building a graph.
//
// Convolution follows the cross-correlation convention (no kernel flip).

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace ddrf::ad {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised for any shape/axis contract violation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tape;

class DiffArray {
 public:
  DiffArray() = default;
  /// Constant array. `values.size()` must equal the product of `shape`.
  DiffArray(Shape shape, std::vector<double> values);

  static DiffArray filled(Shape shape, double value);
  static DiffArray scalar(double value) { return filled({1}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return values_ ? values_->size() : 0; }
  bool empty() const { return size() == 0; }

  std::span<const double> values() const;
  double operator[](std::size_t i) const { return (*values_)[i]; }
  /// Value of a single-element array.
  double item() const;

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> values_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

/// Gradient buffers of the leaves reached by one backward pass.
class Gradients {
 public:
  /// Gradient of the loss w.r.t. `x`; all zeros when `x` was not reached.
  std::vector<double> wrt(const DiffArray& x) const;
  bool reached(const DiffArray& x) const;

 private:
  friend class Tape;
  std::unordered_map<int, std::vector<double>> grads_;
};

/// Accumulates the input gradients of one node. `grad_in[i]` is null when
/// input i is untracked; otherwise it is sized to that input and must be
/// added to, never overwritten (the same input may appear twice).
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<std::vector<double>* const> grad_in)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf node sharing storage with `value`.
  DiffArray variable(const DiffArray& value);
  DiffArray variable(Shape shape, std::vector<double> values);

  /// Reverse sweep from a scalar `loss`. Every node is visited at most once,
  /// in reverse recording order.
  Gradients backward(const DiffArray& loss);

  std::size_t node_count() const { return nodes_.size(); }

  /// Creates the result of a primitive. When none of `inputs` is tracked the
  /// result is a constant and `fn` is dropped.
  static DiffArray record(Shape shape, std::vector<double> values,
                          std::initializer_list<const DiffArray*> inputs, BackwardFn fn);
  static DiffArray record(Shape shape, std::vector<double> values,
                          std::span<const DiffArray> inputs, BackwardFn fn);

 private:
  struct Node {
    std::vector<int> inputs;
    std::vector<std::size_t> input_sizes;
    BackwardFn fn;
    std::size_t size = 0;
  };

  static DiffArray record_impl(Shape shape, std::vector<double> values,
                               const std::vector<const DiffArray*>& inputs, BackwardFn fn);

  std::vector<Node> nodes_;
};

/// Asks the C allocator to keep freed multi-megabyte arrays for reuse instead
/// of returning them to the kernel, which would otherwise fault and zero every
/// page again on the next forward pass. Process-wide; no-op off glibc.
void retain_freed_buffers();

// Primitives -----------------------------------------------------------------

/// input [C_in,H,W], weights [C_out,C_in,k,k], bias [C_out].
DiffArray conv2d(const DiffArray& input, const DiffArray& weights, const DiffArray& bias,
                 std::size_t stride = 1, std::size_t padding = 0);

/// Stacks [C_j,H,W] arrays along the channel axis.
DiffArray concat_channels(std::span<const DiffArray> arrays);

DiffArray add(const DiffArray& a, const DiffArray& b);
DiffArray sub(const DiffArray& a, const DiffArray& b);
DiffArray mul(const DiffArray& a, const DiffArray& b);
DiffArray div(const DiffArray& a, const DiffArray& b);
DiffArray scale(const DiffArray& x, double factor);
DiffArray add_scalar(const DiffArray& x, double offset);
DiffArray sigmoid(const DiffArray& x);
DiffArray relu(const DiffArray& x);

/// Scalar ({1}) reductions.
DiffArray sum(const DiffArray& x);
DiffArray mean(const DiffArray& x);

DiffArray softmax(const DiffArray& x, std::size_t axis);
/// [C,H,W] -> [C,1,1]
DiffArray global_average_pool(const DiffArray& x);
/// [C,H,W] -> [C,f*H,f*W], half-pixel centers with edge clamping; f in {1,2}.
DiffArray upsample_bilinear(const DiffArray& x, std::size_t factor);
/// [C,H,W] -> [C,H+2p,W+2p], border pixels repeated outward.
DiffArray pad_replicate(const DiffArray& x, std::size_t p);

/// sum_k coeffs[k] * arrays[k]; `coeffs` holds exactly arrays.size() values.
DiffArray weighted_sum(const DiffArray& coeffs, std::span<const DiffArray> arrays);
DiffArray reshape(const DiffArray& x, Shape shape);
/// Same values, cut from the graph.
DiffArray detach(const DiffArray& x);

}  // namespace ddrf::ad
