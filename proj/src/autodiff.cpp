#include "ddrf/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ddrf::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

void require_same_shape(const DiffArray& a, const DiffArray& b, const char* op) {
  if (a.shape() == b.shape()) return;
  std::ostringstream out;
  out << op << ": shape mismatch " << to_string(a.shape()) << " vs " << to_string(b.shape());
  for (std::size_t axis = 0; axis < std::min(a.rank(), b.rank()); ++axis) {
    if (a.dim(axis) != b.dim(axis)) {
      out << " (axis " << axis << ": " << a.dim(axis) << " != " << b.dim(axis) << ")";
      break;
    }
  }
  throw ShapeError(out.str());
}

void require_chw(const DiffArray& x, const char* op, const char* what) {
  if (x.rank() != 3) {
    throw ShapeError(std::string(op) + ": " + what + " must be [C,H,W], got " +
                     to_string(x.shape()));
  }
}

template <typename F>
std::vector<double> unary_map(const DiffArray& x, F&& f) {
  std::vector<double> out(x.size());
  auto in = x.values();
  std::transform(in.begin(), in.end(), out.begin(), f);
  return out;
}

// Output rows processed per im2col tile; bounds the scratch buffer for large
// images.
constexpr std::size_t kTilePixels = 4096;

struct ConvGeometry {
  std::size_t in_channels, out_channels, height, width, ksize, stride, padding;
  std::size_t out_height, out_width;

  std::size_t patch() const { return in_channels * ksize * ksize; }
  std::size_t pixels() const { return out_height * out_width; }
  std::size_t rows_per_tile() const { return std::max<std::size_t>(1, kTilePixels / out_width); }
};

// Eigen picks vectorization peeling by operand address, so every operand it
// sees lives in a max-aligned buffer; otherwise the rounding of a product
// depends on where the heap placed its inputs. Reused across calls to avoid
// zero-filling megabytes each time.
using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

enum Scratch { kCols, kDcols, kWeights, kTile, kDweights, kWinoWeights, kWinoInput, kWinoProduct, kScratchCount };

AlignedVector& scratch(Scratch slot, std::size_t size) {
  thread_local AlignedVector buffers[kScratchCount];
  buffers[slot].resize(size);
  return buffers[slot];
}

AlignedVector& aligned_copy(Scratch slot, std::span<const double> values) {
  AlignedVector& out = scratch(slot, values.size());
  std::copy(values.begin(), values.end(), out.begin());
  return out;
}

// Fills `cols` ([patch, rows*out_width], row-major) for output rows [row0, row0+rows).

void im2col(const double* input, const ConvGeometry& g, std::size_t row0, std::size_t rows,
            double* cols) {
  const std::size_t tile = rows * g.out_width;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    const double* plane = input + ci * g.height * g.width;
    for (std::size_t ky = 0; ky < g.ksize; ++ky) {
      for (std::size_t kx = 0; kx < g.ksize; ++kx) {
        double* dst = cols + ((ci * g.ksize + ky) * g.ksize + kx) * tile;
        for (std::size_t r = 0; r < rows; ++r) {
          const long iy = static_cast<long>((row0 + r) * g.stride + ky) - static_cast<long>(g.padding);
          double* drow = dst + r * g.out_width;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(drow, drow + g.out_width, 0.0);
            continue;
          }
          const double* srow = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            drow[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? 0.0 : srow[ix];
          }
        }
      }
    }
  }
}

// Few output channels leave GEMM nothing to block over; accumulate shifted
// input rows directly instead (stride 1).
constexpr std::size_t kDirectMaxOutputs = 2;

void direct_conv(const double* input, const double* weights, const double* bias, const ConvGeometry& g,
                 double* out) {
  const long pad = static_cast<long>(g.padding), w = static_cast<long>(g.width);
  const long ow = static_cast<long>(g.out_width);
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t oy = 0; oy < g.out_height; ++oy) {
      double* orow = out + (co * g.out_height + oy) * g.out_width;
      std::fill(orow, orow + g.out_width, bias[co]);
      for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        const double* wk = weights + (co * g.in_channels + ci) * g.ksize * g.ksize;
        for (std::size_t ky = 0; ky < g.ksize; ++ky) {
          const long iy = static_cast<long>(oy + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          const double* irow = input + (ci * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t kx = 0; kx < g.ksize; ++kx) {
            const double wv = wk[ky * g.ksize + kx];
            const long shift = static_cast<long>(kx) - pad;  // ix = ox + shift
            const long lo = std::max(0L, -shift), hi = std::min(ow, w - shift);
            for (long ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox + shift];
          }
        }
      }
    }
  }
}

// 3x3 stride-1 forward via Winograd F(2x2, 3x3): each 2x2 output tile costs
// 16 products per channel pair instead of 36. The 16 transformed positions
// become 16 independent GEMMs over a chunk of tile rows.
constexpr std::size_t kWinogradTiles = 512;

std::size_t round_up8(std::size_t n) { return (n + 7) / 8 * 8; }

void winograd_conv3x3(const double* input, const double* weights, const double* bias, const ConvGeometry& g,
                      double* out) {
  const std::size_t c_in = g.in_channels, c_out = g.out_channels;
  // Matrix offsets stay multiples of 8 doubles so every GEMM operand starts
  // 64-byte aligned.
  const std::size_t u_stride = round_up8(c_out * c_in);
  AlignedVector& u = scratch(kWinoWeights, 16 * u_stride);
  for (std::size_t co = 0; co < c_out; ++co) {
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      const double* w = weights + (co * c_in + ci) * 9;
      double gw[4][3];
      for (int c = 0; c < 3; ++c) {
        gw[0][c] = w[c];
        gw[1][c] = 0.5 * (w[c] + w[3 + c] + w[6 + c]);
        gw[2][c] = 0.5 * (w[c] - w[3 + c] + w[6 + c]);
        gw[3][c] = w[6 + c];
      }
      for (int r = 0; r < 4; ++r) {
        const double row[4] = {gw[r][0], 0.5 * (gw[r][0] + gw[r][1] + gw[r][2]),
                               0.5 * (gw[r][0] - gw[r][1] + gw[r][2]), gw[r][2]};
        for (int c = 0; c < 4; ++c) u[(r * 4 + c) * u_stride + co * c_in + ci] = row[c];
      }
    }
  }

  const std::size_t tiles_x = (g.out_width + 1) / 2, tiles_y = (g.out_height + 1) / 2;
  const std::size_t rows_per_chunk = std::max<std::size_t>(1, kWinogradTiles / tiles_x);
  // Four zero-padded input rows, so the transform loops carry no bounds checks.
  const std::size_t band_width = 2 * tiles_x + 2;
  std::vector<double> band(4 * band_width);
  std::vector<double> out_rows(2 * 2 * tiles_x);

  for (std::size_t ty0 = 0; ty0 < tiles_y; ty0 += rows_per_chunk) {
    const std::size_t chunk_rows = std::min(rows_per_chunk, tiles_y - ty0);
    const std::size_t tiles = chunk_rows * tiles_x;
    const std::size_t cols = round_up8(tiles);
    // The extra 8 doubles stagger the 16 matrices so the transform's 16
    // write streams do not share cache sets.
    const std::size_t v_stride = c_in * cols + 8;
    AlignedVector& v = scratch(kWinoInput, 16 * v_stride);
    for (std::size_t xi = 0; xi < 16; ++xi) {
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        double* row = v.data() + xi * v_stride + ci * cols;
        std::fill(row + tiles, row + cols, 0.0);
      }
    }

    for (std::size_t ci = 0; ci < c_in; ++ci) {
      const double* plane = input + ci * g.height * g.width;
      for (std::size_t ty = 0; ty < chunk_rows; ++ty) {
        const long y0 = static_cast<long>(2 * (ty0 + ty)) - static_cast<long>(g.padding);
        for (long r = 0; r < 4; ++r) {
          double* dst = band.data() + r * band_width;
          std::fill(dst, dst + band_width, 0.0);
          const long y = y0 + r;
          if (y < 0 || y >= static_cast<long>(g.height)) continue;
          const std::size_t n = std::min(g.width, band_width - g.padding);
          std::copy_n(plane + y * static_cast<long>(g.width), n, dst + g.padding);
        }
        const double* d0 = band.data();
        const double* d1 = d0 + band_width;
        const double* d2 = d1 + band_width;
        const double* d3 = d2 + band_width;
        double* base = v.data() + ci * cols + ty * tiles_x;
        for (std::size_t tx = 0; tx < tiles_x; ++tx) {
          const std::size_t x = 2 * tx;
          double bd[4][4];
          for (int c = 0; c < 4; ++c) {
            bd[0][c] = d0[x + c] - d2[x + c];
            bd[1][c] = d1[x + c] + d2[x + c];
            bd[2][c] = d2[x + c] - d1[x + c];
            bd[3][c] = d1[x + c] - d3[x + c];
          }
          for (int r = 0; r < 4; ++r) {
            double* at = base + (4 * r) * v_stride + tx;
            at[0] = bd[r][0] - bd[r][2];
            at[v_stride] = bd[r][1] + bd[r][2];
            at[2 * v_stride] = bd[r][2] - bd[r][1];
            at[3 * v_stride] = bd[r][1] - bd[r][3];
          }
        }
      }
    }

    const std::size_t m_stride = c_out * cols + 8;
    AlignedVector& m = scratch(kWinoProduct, 16 * m_stride);
    for (std::size_t xi = 0; xi < 16; ++xi) {
      RowMap(m.data() + xi * m_stride, c_out, cols).noalias() =
          ConstRowMap(u.data() + xi * u_stride, c_out, c_in) * ConstRowMap(v.data() + xi * v_stride, c_in, cols);
    }

    for (std::size_t co = 0; co < c_out; ++co) {
      for (std::size_t ty = 0; ty < chunk_rows; ++ty) {
        const double* base = m.data() + co * cols + ty * tiles_x;
        double* top = out_rows.data();
        double* bottom = top + 2 * tiles_x;
        for (std::size_t tx = 0; tx < tiles_x; ++tx) {
          double mm[4][4];
          for (int xi = 0; xi < 16; ++xi) mm[xi / 4][xi % 4] = base[xi * m_stride + tx];
          double am[2][4];
          for (int c = 0; c < 4; ++c) {
            am[0][c] = mm[0][c] + mm[1][c] + mm[2][c];
            am[1][c] = mm[1][c] - mm[2][c] - mm[3][c];
          }
          top[2 * tx] = am[0][0] + am[0][1] + am[0][2];
          top[2 * tx + 1] = am[0][1] - am[0][2] - am[0][3];
          bottom[2 * tx] = am[1][0] + am[1][1] + am[1][2];
          bottom[2 * tx + 1] = am[1][1] - am[1][2] - am[1][3];
        }
        const std::size_t oy = 2 * (ty0 + ty);
        for (std::size_t r = 0; r < 2 && oy + r < g.out_height; ++r) {
          const double* src = r == 0 ? top : bottom;
          double* orow = out + (co * g.out_height + oy + r) * g.out_width;
          for (std::size_t x = 0; x < g.out_width; ++x) orow[x] = src[x] + bias[co];
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, std::size_t row0, std::size_t rows,
                double* grad_input) {
  const std::size_t tile = rows * g.out_width;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    double* plane = grad_input + ci * g.height * g.width;
    for (std::size_t ky = 0; ky < g.ksize; ++ky) {
      for (std::size_t kx = 0; kx < g.ksize; ++kx) {
        const double* src = cols + ((ci * g.ksize + ky) * g.ksize + kx) * tile;
        for (std::size_t r = 0; r < rows; ++r) {
          const long iy = static_cast<long>((row0 + r) * g.stride + ky) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          double* drow = plane + static_cast<std::size_t>(iy) * g.width;
          const double* srow = src + r * g.out_width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            if (ix >= 0 && ix < static_cast<long>(g.width)) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

void retain_freed_buffers() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

// DiffArray -------------------------------------------------------------------

DiffArray::DiffArray(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  for (std::size_t axis = 0; axis < shape_.size(); ++axis) {
    if (shape_[axis] == 0) throw ShapeError("DiffArray: axis " + std::to_string(axis) + " has size 0");
  }
  if (element_count(shape_) != values.size()) {
    throw ShapeError("DiffArray: shape " + to_string(shape_) + " needs " +
                     std::to_string(element_count(shape_)) + " values, got " +
                     std::to_string(values.size()));
  }
  values_ = std::make_shared<const std::vector<double>>(std::move(values));
}

DiffArray DiffArray::filled(Shape shape, double value) {
  const std::size_t n = element_count(shape);
  return DiffArray(std::move(shape), std::vector<double>(n, value));
}

std::size_t DiffArray::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(shape_.size()));
  }
  return shape_[axis];
}

std::span<const double> DiffArray::values() const {
  if (!values_) return {};
  return {values_->data(), values_->size()};
}

double DiffArray::item() const {
  if (size() != 1) throw ShapeError("item(): array of shape " + to_string(shape_) + " is not scalar");
  return (*values_)[0];
}

// Gradients -------------------------------------------------------------------

std::vector<double> Gradients::wrt(const DiffArray& x) const {
  if (x.tracked()) {
    if (auto it = grads_.find(x.node()); it != grads_.end()) return it->second;
  }
  return std::vector<double>(x.size(), 0.0);
}

bool Gradients::reached(const DiffArray& x) const {
  return x.tracked() && grads_.count(x.node()) > 0;
}

// Tape ------------------------------------------------------------------------

DiffArray Tape::variable(const DiffArray& value) {
  if (value.empty()) throw ShapeError("Tape::variable: empty array");
  DiffArray out = value;
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{{}, {}, nullptr, value.size()});
  return out;
}

DiffArray Tape::variable(Shape shape, std::vector<double> values) {
  return variable(DiffArray(std::move(shape), std::move(values)));
}

DiffArray Tape::record(Shape shape, std::vector<double> values,
                       std::initializer_list<const DiffArray*> inputs, BackwardFn fn) {
  return record_impl(std::move(shape), std::move(values), std::vector<const DiffArray*>(inputs),
                     std::move(fn));
}

DiffArray Tape::record(Shape shape, std::vector<double> values, std::span<const DiffArray> inputs,
                       BackwardFn fn) {
  std::vector<const DiffArray*> ptrs;
  ptrs.reserve(inputs.size());
  for (const auto& x : inputs) ptrs.push_back(&x);
  return record_impl(std::move(shape), std::move(values), ptrs, std::move(fn));
}

DiffArray Tape::record_impl(Shape shape, std::vector<double> values,
                            const std::vector<const DiffArray*>& inputs, BackwardFn fn) {
  DiffArray out(std::move(shape), std::move(values));
  Tape* tape = nullptr;
  for (const DiffArray* x : inputs) {
    if (!x->tracked()) continue;
    if (tape && tape != x->tape()) throw std::logic_error("inputs recorded on different tapes");
    tape = x->tape();
  }
  if (!tape) return out;

  Node node;
  node.fn = std::move(fn);
  node.size = out.size();
  for (const DiffArray* x : inputs) {
    node.inputs.push_back(x->tracked() ? x->node() : -1);
    node.input_sizes.push_back(x->size());
  }
  out.tape_ = tape;
  out.node_ = static_cast<int>(tape->nodes_.size());
  tape->nodes_.push_back(std::move(node));
  return out;
}

Gradients Tape::backward(const DiffArray& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + to_string(loss.shape()));
  }
  if (loss.tape() != this) throw std::invalid_argument("backward: loss is not recorded on this tape");

  std::vector<std::vector<double>> grads(nodes_.size());
  grads[loss.node()] = {1.0};
  std::vector<std::vector<double>*> grad_in;

  Gradients result;
  for (int id = loss.node(); id >= 0; --id) {
    auto& g = grads[id];
    if (g.empty()) continue;
    Node& node = nodes_[id];
    if (!node.fn) {
      result.grads_.emplace(id, std::move(g));
      continue;
    }
    grad_in.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const int in = node.inputs[k];
      if (in < 0) continue;
      if (grads[in].empty()) grads[in].assign(node.input_sizes[k], 0.0);
      grad_in[k] = &grads[in];
    }
    node.fn(g, grad_in);
    std::vector<double>().swap(g);
  }
  return result;
}

// Primitives ------------------------------------------------------------------

DiffArray conv2d(const DiffArray& input, const DiffArray& weights, const DiffArray& bias,
                 std::size_t stride, std::size_t padding) {
  require_chw(input, "conv2d", "input");
  require(weights.rank() == 4, "conv2d: weights must be [C_out,C_in,k,k], got " + to_string(weights.shape()));
  require(stride >= 1, "conv2d: stride must be positive");
  const std::size_t c_out = weights.dim(0), k = weights.dim(2);
  if (weights.dim(1) != input.dim(0)) {
    throw ShapeError("conv2d: axis 1 (C_in) of weights is " + std::to_string(weights.dim(1)) +
                     " but input has " + std::to_string(input.dim(0)) + " channels");
  }
  if (weights.dim(3) != k) {
    throw ShapeError("conv2d: axis 3 of weights (" + std::to_string(weights.dim(3)) +
                     ") differs from axis 2 (" + std::to_string(k) + "); kernels must be square");
  }
  require(k % 2 == 1, "conv2d: kernel size must be odd, got " + std::to_string(k));
  if (bias.rank() != 1 || bias.dim(0) != c_out) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(c_out) + "], got " + to_string(bias.shape()));
  }
  const std::size_t h = input.dim(1), w = input.dim(2);
  if (h + 2 * padding < k) {
    throw ShapeError("conv2d: axis 1 (H=" + std::to_string(h) + ") smaller than kernel " + std::to_string(k));
  }
  if (w + 2 * padding < k) {
    throw ShapeError("conv2d: axis 2 (W=" + std::to_string(w) + ") smaller than kernel " + std::to_string(k));
  }

  ConvGeometry g{input.dim(0), c_out, h, w, k, stride, padding,
                 (h + 2 * padding - k) / stride + 1, (w + 2 * padding - k) / stride + 1};
  const std::size_t pixels = g.pixels();
  std::vector<double> out(c_out * pixels);
  if (c_out <= kDirectMaxOutputs && stride == 1) {
    direct_conv(input.values().data(), weights.values().data(), bias.values().data(), g, out.data());
  } else if (k == 3 && stride == 1) {
    winograd_conv3x3(input.values().data(), weights.values().data(), bias.values().data(), g, out.data());
  } else {
    const AlignedVector& w_buf = aligned_copy(kWeights, weights.values());
    ConstRowMap w_mat(w_buf.data(), c_out, g.patch());
    auto b = bias.values();
    for (std::size_t row0 = 0; row0 < g.out_height; row0 += g.rows_per_tile()) {
      const std::size_t rows = std::min(g.rows_per_tile(), g.out_height - row0);
      const std::size_t tile = rows * g.out_width;
      AlignedVector& cols = scratch(kCols, g.patch() * tile);
      im2col(input.values().data(), g, row0, rows, cols.data());
      AlignedVector& result = scratch(kTile, c_out * tile);
      RowMap(result.data(), c_out, tile).noalias() = w_mat * ConstRowMap(cols.data(), g.patch(), tile);
      for (std::size_t c = 0; c < c_out; ++c) {
        double* dst = out.data() + c * pixels + row0 * g.out_width;
        const double* src = result.data() + c * tile;
        for (std::size_t i = 0; i < tile; ++i) dst[i] = src[i] + b[c];
      }
    }
  }

  return Tape::record(
      {c_out, g.out_height, g.out_width}, std::move(out), {&input, &weights, &bias},
      [input, weights, g](std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in) {
        const std::size_t pixels = g.pixels();
        const std::size_t c_out = g.out_channels;
        if (auto* db = grad_in[2]) {
          for (std::size_t c = 0; c < c_out; ++c) {
            double acc = 0;
            for (std::size_t i = 0; i < pixels; ++i) acc += grad_out[c * pixels + i];
            (*db)[c] += acc;
          }
        }
        if (!grad_in[0] && !grad_in[1]) return;
        const AlignedVector& w_buf = aligned_copy(kWeights, weights.values());
        ConstRowMap w_mat(w_buf.data(), c_out, g.patch());
        for (std::size_t row0 = 0; row0 < g.out_height; row0 += g.rows_per_tile()) {
          const std::size_t rows = std::min(g.rows_per_tile(), g.out_height - row0);
          const std::size_t tile = rows * g.out_width;
          AlignedVector& dout_buf = scratch(kTile, c_out * tile);
          for (std::size_t c = 0; c < c_out; ++c) {
            const double* src = grad_out.data() + c * pixels + row0 * g.out_width;
            std::copy(src, src + tile, dout_buf.begin() + static_cast<std::ptrdiff_t>(c * tile));
          }
          ConstRowMap dout_tile(dout_buf.data(), c_out, tile);
          if (auto* dw = grad_in[1]) {
            AlignedVector& cols = scratch(kCols, g.patch() * tile);
            im2col(input.values().data(), g, row0, rows, cols.data());
            AlignedVector& dw_tile = scratch(kDweights, c_out * g.patch());
            RowMap(dw_tile.data(), c_out, g.patch()).noalias() =
                dout_tile * ConstRowMap(cols.data(), g.patch(), tile).transpose();
            for (std::size_t i = 0; i < dw_tile.size(); ++i) (*dw)[i] += dw_tile[i];
          }
          if (auto* dx = grad_in[0]) {
            AlignedVector& dcols = scratch(kDcols, g.patch() * tile);
            RowMap(dcols.data(), g.patch(), tile).noalias() = w_mat.transpose() * dout_tile;
            col2im_add(dcols.data(), g, row0, rows, dx->data());
          }
        }
      });
}

DiffArray concat_channels(std::span<const DiffArray> arrays) {
  require(arrays.size() >= 2, "concat_channels: needs at least 2 arrays");
  for (const auto& a : arrays) require_chw(a, "concat_channels", "every input");
  const std::size_t h = arrays[0].dim(1), w = arrays[0].dim(2);
  std::size_t channels = 0;
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    if (arrays[i].dim(1) != h) {
      throw ShapeError("concat_channels: axis 1 (H) of input " + std::to_string(i) + " is " +
                       std::to_string(arrays[i].dim(1)) + ", expected " + std::to_string(h));
    }
    if (arrays[i].dim(2) != w) {
      throw ShapeError("concat_channels: axis 2 (W) of input " + std::to_string(i) + " is " +
                       std::to_string(arrays[i].dim(2)) + ", expected " + std::to_string(w));
    }
    channels += arrays[i].dim(0);
  }
  std::vector<double> out;
  out.reserve(channels * h * w);
  for (const auto& a : arrays) out.insert(out.end(), a.values().begin(), a.values().end());

  std::vector<std::size_t> sizes;
  for (const auto& a : arrays) sizes.push_back(a.size());
  return Tape::record({channels, h, w}, std::move(out), arrays,
                      [sizes](std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in) {
                        std::size_t offset = 0;
                        for (std::size_t i = 0; i < sizes.size(); ++i) {
                          if (auto* g = grad_in[i]) {
                            for (std::size_t j = 0; j < sizes[i]; ++j) (*g)[j] += grad_out[offset + j];
                          }
                          offset += sizes[i];
                        }
                      });
}

namespace {

template <typename Forward, typename Backward>
DiffArray binary_op(const DiffArray& a, const DiffArray& b, const char* name, Forward f, Backward df) {
  require_same_shape(a, b, name);
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  return Tape::record(a.shape(), std::move(out), {&a, &b},
                      [a, b, df](std::span<const double> g, std::span<std::vector<double>* const> grad_in) {
                        auto av = a.values(), bv = b.values();
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          auto [da, db] = df(av[i], bv[i]);
                          if (grad_in[0]) (*grad_in[0])[i] += g[i] * da;
                          if (grad_in[1]) (*grad_in[1])[i] += g[i] * db;
                        }
                      });
}

}  // namespace

DiffArray add(const DiffArray& a, const DiffArray& b) {
  return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                   [](double, double) { return std::pair{1.0, 1.0}; });
}

DiffArray sub(const DiffArray& a, const DiffArray& b) {
  return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                   [](double, double) { return std::pair{1.0, -1.0}; });
}

DiffArray mul(const DiffArray& a, const DiffArray& b) {
  return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                   [](double x, double y) { return std::pair{y, x}; });
}

DiffArray div(const DiffArray& a, const DiffArray& b) {
  return binary_op(a, b, "div", [](double x, double y) { return x / y; },
                   [](double x, double y) { return std::pair{1.0 / y, -x / (y * y)}; });
}

DiffArray scale(const DiffArray& x, double factor) {
  return Tape::record(x.shape(), unary_map(x, [factor](double v) { return v * factor; }), {&x},
                      [factor](std::span<const double> g, std::span<std::vector<double>* const> grad_in) {
                        auto& dx = *grad_in[0];
                        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += factor * g[i];
                      });
}

DiffArray add_scalar(const DiffArray& x, double offset) {
  return Tape::record(x.shape(), unary_map(x, [offset](double v) { return v + offset; }), {&x},
                      [](std::span<const double> g, std::span<std::vector<double>* const> grad_in) {
                        auto& dx = *grad_in[0];
                        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
                      });
}

DiffArray sigmoid(const DiffArray& x) {
  std::vector<double> out(x.size());
  auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Split by sign so exp never overflows.
    const double v = in[i];
    if (v >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  auto y = std::make_shared<const std::vector<double>>(out);
  return Tape::record(x.shape(), std::move(out), {&x},
                      [y](std::span<const double> g, std::span<std::vector<double>* const> grad_in) {
                        auto& dx = *grad_in[0];
                        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (*y)[i] * (1.0 - (*y)[i]);
                      });
}

DiffArray relu(const DiffArray& x) {
  // NaN passes through so a diverging run is not silently masked.
  auto rectify = [](double v) { return v > 0 || std::isnan(v) ? v : 0.0; };
  return Tape::record(x.shape(), unary_map(x, rectify), {&x},
                      [x](std::span<const double> g, std::span<std::vector<double>* const> grad_in) {
                        auto& dx = *grad_in[0];
                        auto in = x.values();
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          if (in[i] > 0) dx[i] += g[i];
                        }
                      });
}

DiffArray sum(const DiffArray& x) {
  const auto v = x.values();
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  return Tape::record({1}, {total}, {&x},
                      [](std::span<const double> g, std::span<std::vector<double>* const> grad_in) {
                        for (double& d : *grad_in[0]) d += g[0];
                      });
}

DiffArray mean(const DiffArray& x) {
  require(!x.empty(), "mean: empty array");
  const auto v = x.values();
  const double n = static_cast<double>(x.size());
  const double avg = std::accumulate(v.begin(), v.end(), 0.0) / n;
  return Tape::record({1}, {avg}, {&x},
                      [n](std::span<const double> g, std::span<std::vector<double>* const> grad_in) {
                        const double share = g[0] / n;
                        for (double& d : *grad_in[0]) d += share;
                      });
}

DiffArray softmax(const DiffArray& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);

  std::vector<double> out(x.size());
  auto in = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t q = 0; q < inner; ++q) {
      const std::size_t base = o * n * inner + q;
      double peak = in[base];
      for (std::size_t k = 1; k < n; ++k) peak = std::max(peak, in[base + k * inner]);
      double total = 0;
      for (std::size_t k = 0; k < n; ++k) {
        out[base + k * inner] = std::exp(in[base + k * inner] - peak);
        total += out[base + k * inner];
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= total;
    }
  }
  auto y = std::make_shared<const std::vector<double>>(out);
  return Tape::record(
      x.shape(), std::move(out), {&x},
      [y, outer, inner, n](std::span<const double> g, std::span<std::vector<double>* const> grad_in) {
        auto& dx = *grad_in[0];
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t q = 0; q < inner; ++q) {
            const std::size_t base = o * n * inner + q;
            double dot = 0;
            for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * (*y)[base + k * inner];
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t i = base + k * inner;
              dx[i] += (*y)[i] * (g[i] - dot);
            }
          }
        }
      });
}

DiffArray global_average_pool(const DiffArray& x) {
  require_chw(x, "global_average_pool", "input");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  std::vector<double> out(c);
  auto in = x.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    out[ch] = std::accumulate(in.begin() + ch * plane, in.begin() + (ch + 1) * plane, 0.0) /
              static_cast<double>(plane);
  }
  return Tape::record({c, 1, 1}, std::move(out), {&x},
                      [c, plane](std::span<const double> g, std::span<std::vector<double>* const> grad_in) {
                        auto& dx = *grad_in[0];
                        for (std::size_t ch = 0; ch < c; ++ch) {
                          const double share = g[ch] / static_cast<double>(plane);
                          for (std::size_t i = 0; i < plane; ++i) dx[ch * plane + i] += share;
                        }
                      });
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double w_hi;
};

// Source taps for half-pixel-centered upsampling along one axis.
std::vector<Tap> upsample_taps(std::size_t n, std::size_t factor) {
  std::vector<Tap> taps(n * factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, n - 1);
    taps[o] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

DiffArray upsample_bilinear(const DiffArray& x, std::size_t factor) {
  require_chw(x, "upsample_bilinear", "input");
  require(factor == 1 || factor == 2, "upsample_bilinear: factor must be 1 or 2, got " + std::to_string(factor));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h * factor, ow = w * factor;
  const auto rows = upsample_taps(h, factor), cols = upsample_taps(w, factor);

  std::vector<double> out(c * oh * ow);
  auto in = x.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* p = in.data() + ch * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const Tap& ty = rows[oy];
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const Tap& tx = cols[ox];
        const double top = p[ty.lo * w + tx.lo] * (1 - tx.w_hi) + p[ty.lo * w + tx.hi] * tx.w_hi;
        const double bottom = p[ty.hi * w + tx.lo] * (1 - tx.w_hi) + p[ty.hi * w + tx.hi] * tx.w_hi;
        out[(ch * oh + oy) * ow + ox] = top * (1 - ty.w_hi) + bottom * ty.w_hi;
      }
    }
  }
  return Tape::record(
      {c, oh, ow}, std::move(out), {&x},
      [rows, cols, c, h, w, oh, ow](std::span<const double> g, std::span<std::vector<double>* const> grad_in) {
        auto& dx = *grad_in[0];
        for (std::size_t ch = 0; ch < c; ++ch) {
          double* p = dx.data() + ch * h * w;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const Tap& ty = rows[oy];
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const Tap& tx = cols[ox];
              const double v = g[(ch * oh + oy) * ow + ox];
              p[ty.lo * w + tx.lo] += v * (1 - ty.w_hi) * (1 - tx.w_hi);
              p[ty.lo * w + tx.hi] += v * (1 - ty.w_hi) * tx.w_hi;
              p[ty.hi * w + tx.lo] += v * ty.w_hi * (1 - tx.w_hi);
              p[ty.hi * w + tx.hi] += v * ty.w_hi * tx.w_hi;
            }
          }
        }
      });
}

DiffArray pad_replicate(const DiffArray& x, std::size_t p) {
  require_chw(x, "pad_replicate", "input");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h + 2 * p, ow = w + 2 * p;
  auto source = [p](std::size_t o, std::size_t n) { return std::min(o < p ? 0 : o - p, n - 1); };

  std::vector<double> out(c * oh * ow);
  auto in = x.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const double* row = in.data() + (ch * h + source(oy, h)) * w;
      for (std::size_t ox = 0; ox < ow; ++ox) out[(ch * oh + oy) * ow + ox] = row[source(ox, w)];
    }
  }
  return Tape::record({c, oh, ow}, std::move(out), {&x},
                      [source, c, h, w, oh, ow](std::span<const double> g, std::span<std::vector<double>* const> grad_in) {
                        auto& dx = *grad_in[0];
                        for (std::size_t ch = 0; ch < c; ++ch) {
                          for (std::size_t oy = 0; oy < oh; ++oy) {
                            double* row = dx.data() + (ch * h + source(oy, h)) * w;
                            for (std::size_t ox = 0; ox < ow; ++ox) row[source(ox, w)] += g[(ch * oh + oy) * ow + ox];
                          }
                        }
                      });
}

DiffArray weighted_sum(const DiffArray& coeffs, std::span<const DiffArray> arrays) {
  require(!arrays.empty(), "weighted_sum: no arrays");
  if (coeffs.size() != arrays.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(coeffs.size()) + " coefficients for " +
                     std::to_string(arrays.size()) + " arrays");
  }
  for (const auto& a : arrays) require_same_shape(arrays[0], a, "weighted_sum");

  std::vector<double> out(arrays[0].size(), 0.0);
  for (std::size_t k = 0; k < arrays.size(); ++k) {
    const double ck = coeffs[k];
    auto v = arrays[k].values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += ck * v[i];
  }

  std::vector<DiffArray> inputs;
  inputs.reserve(arrays.size() + 1);
  inputs.push_back(coeffs);
  inputs.insert(inputs.end(), arrays.begin(), arrays.end());
  return Tape::record(arrays[0].shape(), std::move(out), inputs,
                      [inputs](std::span<const double> g, std::span<std::vector<double>* const> grad_in) {
                        const DiffArray& coeffs = inputs[0];
                        for (std::size_t k = 1; k < inputs.size(); ++k) {
                          auto v = inputs[k].values();
                          if (auto* dc = grad_in[0]) {
                            double dot = 0;
                            for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * v[i];
                            (*dc)[k - 1] += dot;
                          }
                          if (auto* da = grad_in[k]) {
                            const double ck = coeffs[k - 1];
                            for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += ck * g[i];
                          }
                        }
                      });
}

DiffArray reshape(const DiffArray& x, Shape shape) {
  if (element_count(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  return Tape::record(std::move(shape), {x.values().begin(), x.values().end()}, {&x},
                      [](std::span<const double> g, std::span<std::vector<double>* const> grad_in) {
                        auto& dx = *grad_in[0];
                        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
                      });
}

DiffArray detach(const DiffArray& x) {
  return DiffArray(x.shape(), {x.values().begin(), x.values().end()});
}

}  // namespace ddrf::ad
