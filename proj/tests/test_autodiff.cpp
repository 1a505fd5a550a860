#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ddrf/autodiff.hpp"
#include "support.hpp"

using namespace ddrf;
using namespace ddrf::ad;
using testsupport::check_gradients;
using testsupport::random_array;

namespace {

// Direct cross-correlation with zero padding.
std::vector<double> conv_oracle(const DiffArray& x, const DiffArray& w, const DiffArray& b, std::size_t stride,
                                std::size_t pad) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(cout * oh * ow);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = b[co];
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
              acc += w[((co * cin + ci) * k + ky) * k + kx] * x[(ci * h + iy) * wd + ix];
            }
        out[(co * oh + oy) * ow + ox] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("constants record nothing on any tape") {
  Tape tape;
  Rng rng(1);
  const DiffArray a = random_array({2, 4, 4}, rng), b = random_array({2, 4, 4}, rng);
  const DiffArray c = relu(add(mul(a, b), a));
  CHECK_FALSE(c.tracked());
  CHECK(tape.node_count() == 0);
  const DiffArray v = tape.variable(a);
  const DiffArray d = mul(v, b);
  CHECK(d.tracked());
  CHECK(tape.node_count() == 2);
}

TEST_CASE("shape contract violations name the axis") {
  Rng rng(2);
  const DiffArray x = random_array({3, 8, 8}, rng);
  const DiffArray w = random_array({4, 2, 3, 3}, rng);
  const DiffArray b = random_array({4}, rng);
  try {
    conv2d(x, w, b, 1, 1);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
  }
  CHECK_THROWS_AS(DiffArray({2, 3}, std::vector<double>(5)), ShapeError);
  CHECK_THROWS_AS(add(random_array({2, 2}, rng), random_array({2, 3}, rng)), ShapeError);
  CHECK_THROWS_AS(conv2d(x, random_array({4, 3, 2, 2}, rng), b), ShapeError);
}

TEST_CASE("backward needs a scalar root") {
  Tape tape;
  const DiffArray x = tape.variable({2}, {1.0, 2.0});
  CHECK_THROWS_AS(tape.backward(scale(x, 2.0)), ShapeError);
}

TEST_CASE("conv2d matches direct cross-correlation") {
  Rng rng(3);
  for (std::size_t out : {1u, 2u, 5u}) {
    for (std::size_t k : {3u, 5u}) {
      for (std::size_t stride : {1u, 2u}) {
        for (std::size_t pad : {0u, 1u, 2u}) {
          const DiffArray x = random_array({3, 9, 11}, rng);
          const DiffArray w = random_array({out, 3, k, k}, rng);
          const DiffArray b = random_array({out}, rng);
          const DiffArray y = conv2d(x, w, b, stride, pad);
          const auto expect = conv_oracle(x, w, b, stride, pad);
          REQUIRE(y.size() == expect.size());
          CHECK(testsupport::max_abs_diff(y.values(), expect) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("conv2d tiles large images consistently") {
  Rng rng(4);
  const DiffArray x = random_array({2, 130, 70}, rng);
  const DiffArray w = random_array({3, 2, 3, 3}, rng);
  const DiffArray b = random_array({3}, rng);
  CHECK(testsupport::max_abs_diff(conv2d(x, w, b, 1, 1).values(), conv_oracle(x, w, b, 1, 1)) < 1e-12);
  const DiffArray odd = random_array({2, 131, 69}, rng);
  CHECK(testsupport::max_abs_diff(conv2d(odd, w, b, 1, 0).values(), conv_oracle(odd, w, b, 1, 0)) < 1e-12);
}

TEST_CASE("a reused input accumulates both gradient paths") {
  Tape tape;
  const DiffArray x = tape.variable({3}, {1.0, -2.0, 0.5});
  const Gradients g = tape.backward(sum(mul(x, x)));
  const auto gx = g.wrt(x);
  CHECK(gx[0] == doctest::Approx(2.0));
  CHECK(gx[1] == doctest::Approx(-4.0));
  CHECK(gx[2] == doctest::Approx(1.0));
}

TEST_CASE("unreached leaves get zero gradients") {
  Tape tape;
  const DiffArray x = tape.variable({2}, {1.0, 2.0});
  const DiffArray y = tape.variable({2}, {3.0, 4.0});
  const Gradients g = tape.backward(sum(x));
  CHECK_FALSE(g.reached(y));
  CHECK(g.wrt(y) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("softmax is a shift-invariant distribution") {
  Rng rng(5);
  const DiffArray x = random_array({6}, rng, -3, 3);
  const DiffArray p = softmax(x, 0), q = softmax(add_scalar(x, 100.0), 0);
  double total = 0;
  for (double v : p.values()) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(testsupport::max_abs_diff(p.values(), q.values()) < 1e-14);
  const DiffArray big = DiffArray({3}, {1000.0, 0.0, -1000.0});
  CHECK(softmax(big, 0)[0] == doctest::Approx(1.0));
}

TEST_CASE("sigmoid stays finite at extremes") {
  CHECK(std::isnan(relu(DiffArray({1}, {std::nan("")}))[0]));
  const DiffArray s = sigmoid(DiffArray({2}, {-800.0, 800.0}));
  CHECK(s[0] == 0.0);
  CHECK(s[1] == 1.0);
}

TEST_CASE("upsample keeps constants and factor 1 is the identity") {
  Rng rng(6);
  const DiffArray x = random_array({2, 5, 7}, rng);
  CHECK(testsupport::max_abs_diff(upsample_bilinear(x, 1).values(), x.values()) == 0.0);
  const DiffArray c = DiffArray::filled({1, 4, 4}, 0.3);
  const DiffArray u = upsample_bilinear(c, 2);
  CHECK(u.shape() == Shape{1, 8, 8});
  for (double v : u.values()) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));
  CHECK_THROWS_AS(upsample_bilinear(x, 3), ShapeError);
}

TEST_CASE("replicate padding repeats the border outward") {
  const DiffArray x({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const DiffArray p = pad_replicate(x, 2);
  CHECK(p.shape() == Shape{1, 6, 7});
  const std::vector<double> top{1, 1, 1, 2, 3, 3, 3}, bottom{4, 4, 4, 5, 6, 6, 6};
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 7; ++c) CHECK(p[r * 7 + c] == (r < 3 ? top[c] : bottom[c]));
  }
  CHECK(pad_replicate(x, 0).values().size() == 6);
  // Each corner source collects its whole replicated block in the backward pass.
  Tape tape;
  const DiffArray v = tape.variable(x);
  const auto g = tape.backward(sum(pad_replicate(v, 2))).wrt(v);
  CHECK(g == std::vector<double>{9, 3, 9, 9, 3, 9});
}

TEST_CASE("global average pool and concat") {
  const DiffArray a({1, 2, 2}, {1, 2, 3, 4});
  const DiffArray b({2, 2, 2}, {0, 0, 0, 0, 1, 1, 1, 1});
  const DiffArray parts[] = {a, b};
  const DiffArray c = concat_channels(parts);
  CHECK(c.shape() == Shape{3, 2, 2});
  const DiffArray p = global_average_pool(c);
  CHECK(p.shape() == Shape{3, 1, 1});
  CHECK(p[0] == doctest::Approx(2.5));
  CHECK(p[1] == 0.0);
  CHECK(p[2] == 1.0);
}

TEST_CASE("detach cuts the graph") {
  Tape tape;
  const DiffArray x = tape.variable({2}, {1.0, 2.0});
  const DiffArray y = detach(mul(x, x));
  CHECK_FALSE(y.tracked());
  CHECK(y[1] == 4.0);
}

// Gradient checks on random 16x16 cases ----------------------------------------

TEST_CASE("primitive gradients match central differences") {
  Rng rng(7);
  const Shape img{2, 16, 16};
  struct Case {
    const char* name;
    testsupport::Fn fn;
    std::vector<DiffArray> inputs;
  };
  std::vector<Case> cases;
  for (int rep = 0; rep < 2; ++rep) {
    cases.push_back({"conv2d", [](const auto& v) { return conv2d(v[0], v[1], v[2], 1, 1); },
                     {random_array(img, rng), random_array({3, 2, 3, 3}, rng), random_array({3}, rng)}});
    cases.push_back({"conv2d-stride2", [](const auto& v) { return conv2d(v[0], v[1], v[2], 2, 1); },
                     {random_array(img, rng), random_array({2, 2, 3, 3}, rng), random_array({2}, rng)}});
    cases.push_back({"conv2d-single-output", [](const auto& v) { return conv2d(v[0], v[1], v[2], 1, 1); },
                     {random_array(img, rng), random_array({1, 2, 3, 3}, rng), random_array({1}, rng)}});
    cases.push_back({"add", [](const auto& v) { return add(v[0], v[1]); }, {random_array(img, rng), random_array(img, rng)}});
    cases.push_back({"sub", [](const auto& v) { return sub(v[0], v[1]); }, {random_array(img, rng), random_array(img, rng)}});
    cases.push_back({"mul", [](const auto& v) { return mul(v[0], v[1]); }, {random_array(img, rng), random_array(img, rng)}});
    cases.push_back({"div", [](const auto& v) { return div(v[0], v[1]); },
                     {random_array(img, rng), random_array(img, rng, 0.5, 2.0)}});
    cases.push_back({"scale", [](const auto& v) { return scale(v[0], -1.7); }, {random_array(img, rng)}});
    cases.push_back({"add_scalar", [](const auto& v) { return add_scalar(v[0], 0.3); }, {random_array(img, rng)}});
    cases.push_back({"sigmoid", [](const auto& v) { return sigmoid(v[0]); }, {random_array(img, rng, -4, 4)}});
    cases.push_back({"relu", [](const auto& v) { return relu(v[0]); }, {random_array(img, rng)}});
    cases.push_back({"sum", [](const auto& v) { return sum(v[0]); }, {random_array(img, rng)}});
    cases.push_back({"mean", [](const auto& v) { return mean(v[0]); }, {random_array(img, rng)}});
    cases.push_back({"softmax", [](const auto& v) { return softmax(v[0], 0); }, {random_array(img, rng, -2, 2)}});
    cases.push_back({"global_average_pool", [](const auto& v) { return global_average_pool(v[0]); },
                     {random_array(img, rng)}});
    cases.push_back({"upsample_bilinear", [](const auto& v) { return upsample_bilinear(v[0], 2); },
                     {random_array(img, rng)}});
    cases.push_back({"pad_replicate", [](const auto& v) { return pad_replicate(v[0], 5); },
                     {random_array(img, rng)}});
    cases.push_back({"concat_channels", [](const auto& v) { return concat_channels(v); },
                     {random_array(img, rng), random_array({1, 16, 16}, rng)}});
    cases.push_back({"weighted_sum",
                     [](const auto& v) { return weighted_sum(v[0], std::span<const DiffArray>(v).subspan(1)); },
                     {random_array({3}, rng), random_array(img, rng), random_array(img, rng), random_array(img, rng)}});
    cases.push_back({"reshape", [](const auto& v) { return reshape(v[0], {512}); }, {random_array(img, rng)}});
  }
  CHECK(cases.size() >= 20);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto report = check_gradients(cases[i].fn, cases[i].inputs, 100 + i);
    INFO(cases[i].name << " case " << i);
    CHECK(report.worst < 1e-4);
  }
}
