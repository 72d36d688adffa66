#include "support.hpp"

#include <algorithm>
#include <limits>

#include "udet/gradcheck.hpp"
#include "udet/ops.hpp"

using namespace udet;
using Td = Tensor<double>;

namespace {

// Direct loop oracle for cross-correlation with zero padding.
Td naive_conv(const Td& x, const Conv2DSpec& s, const Td& w, const Td& b) {
  const Shape xs = x.shape();
  std::size_t oh, ow, ph = 0, pw = 0;
  if (s.padding == Padding::valid) {
    oh = (xs.h - s.kernel_h) / s.stride + 1;
    ow = (xs.w - s.kernel_w) / s.stride + 1;
  } else {
    oh = (xs.h + s.stride - 1) / s.stride;
    ow = (xs.w + s.stride - 1) / s.stride;
    const long th = std::max<long>(0, long((oh - 1) * s.stride + s.kernel_h) - long(xs.h));
    const long tw = std::max<long>(0, long((ow - 1) * s.stride + s.kernel_w) - long(xs.w));
    ph = std::size_t(th / 2);
    pw = std::size_t(tw / 2);
  }
  Td out(Shape{xs.n, s.out_channels, oh, ow});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < s.out_channels; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b.defined() ? b.data()[o] : 0.0;
          for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t ki = 0; ki < s.kernel_h; ++ki)
              for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
                const long r = long(i * s.stride + ki) - long(ph);
                const long q = long(j * s.stride + kj) - long(pw);
                if (r < 0 || q < 0 || r >= long(xs.h) || q >= long(xs.w)) continue;
                acc += x.at(n, c, std::size_t(r), std::size_t(q)) * w.at(o, c, ki, kj);
              }
          out.at(n, o, i, j) = acc;
        }
  return out;
}

void check_close(const Td& a, const Td& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double scale = std::max(1.0, std::abs(b.data()[i]));
    CHECK(std::abs(a.data()[i] - b.data()[i]) <= tol * scale);
  }
}

bool grad_ok(const OpClosure& op, std::vector<Td> inputs, double tol = 1e-4) {
  const auto r = grad_check(op, std::move(inputs), tol);
  if (!r.passed) MESSAGE("max rel error " << r.max_rel_error << " " << r.failure);
  return r.passed;
}

}  // namespace

TEST_CASE("conv2d examples") {
  Tape<double> tape;
  SUBCASE("1x1 identity kernel") {
    Rng rng(1);
    const Td x = test::random_tensor<double>({2, 1, 4, 5}, rng);
    const Conv2DSpec s{1, 1, 1, 1, 1, Padding::same, true};
    const Td y = ops::conv2d(tape, x, s, Td(s.weight_shape(), 1.0), Td(Shape{1, 1, 1, 1}, 0.0));
    check_close(y, x, 0);
  }
  SUBCASE("ones kernel on ones input") {
    const Conv2DSpec s{1, 1, 3, 3, 1, Padding::same, false};
    const Td y = ops::conv2d(tape, Td(Shape{1, 1, 3, 3}, 1.0), s, Td(s.weight_shape(), 1.0), Td{});
    CHECK(y.at(0, 0, 1, 1) == 9);
    CHECK(y.at(0, 0, 0, 0) == 4);
    CHECK(y.at(0, 0, 2, 2) == 4);
    CHECK(y.at(0, 0, 0, 1) == 6);
  }
  SUBCASE("errors") {
    const Conv2DSpec s{2, 1, 3, 3, 1, Padding::valid, false};
    CHECK_THROWS_AS(ops::conv2d(tape, Td(Shape{1, 3, 4, 4}), s, Td(s.weight_shape()), Td{}), ShapeError);
    CHECK_THROWS_AS(ops::conv2d(tape, Td(Shape{1, 2, 2, 2}), s, Td(s.weight_shape()), Td{}), ShapeError);
  }
}

TEST_CASE("conv2d matches the loop oracle on 100 random specs") {
  Rng rng(2024);
  Tape<double> tape;
  for (int trial = 0; trial < 100; ++trial) {
    Conv2DSpec s;
    s.in_channels = 1 + rng() % 3;
    s.out_channels = 1 + rng() % 3;
    s.kernel_h = 1 + 2 * (rng() % 2);
    s.kernel_w = 1 + 2 * (rng() % 2);
    s.stride = 1 + rng() % 2;
    s.padding = rng() % 2 ? Padding::same : Padding::valid;
    s.bias = rng() % 2;
    const Shape xs{1 + rng() % 2, s.in_channels, 3 + rng() % 5, 3 + rng() % 5};
    const Td x = test::random_tensor<double>(xs, rng);
    const Td w = test::random_tensor<double>(s.weight_shape(), rng);
    const Td b = s.bias ? test::random_tensor<double>(Shape{1, s.out_channels, 1, 1}, rng) : Td{};
    check_close(ops::conv2d(tape, x, s, w, b), naive_conv(x, s, w, b), 1e-6);
  }
}

TEST_CASE("same padding with stride 1 preserves spatial dims") {
  Tape<float> tape;
  const Conv2DSpec s{3, 5, 3, 3, 1, Padding::same, true};
  const Tensorf y = ops::conv2d(tape, Tensorf(Shape{2, 3, 7, 9}, 1.f), s, Tensorf(s.weight_shape(), 0.1f),
                                Tensorf(Shape{1, 5, 1, 1}));
  CHECK(y.shape() == Shape{2, 5, 7, 9});
  CHECK(s.param_count() == 3 * 3 * 3 * 5 + 5);
}

TEST_CASE("transposed conv examples") {
  Tape<double> tape;
  const Conv2DSpec s{1, 1, 2, 2, 2, Padding::valid, true};
  SUBCASE("single pixel spread") {
    const Td y = ops::transposed_conv2d(tape, Td(Shape{1, 1, 1, 1}, 3.5), s, Td(s.transposed_weight_shape(), 1.0),
                                        Td(Shape{1, 1, 1, 1}, 0.0));
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (double v : y.data()) CHECK(v == 3.5);
  }
  SUBCASE("equals the input gradient of the matching conv2d") {
    Rng rng(5);
    const Conv2DSpec ts{3, 2, 2, 2, 2, Padding::valid, false};
    const Td x = test::random_tensor<double>({1, 3, 2, 2}, rng);
    const Td w = test::random_tensor<double>(ts.transposed_weight_shape(), rng);
    const Td y = ops::transposed_conv2d(tape, x, ts, w, Td{});
    REQUIRE(y.shape() == Shape{1, 2, 4, 4});
    // conv2d mapping 2 -> 3 channels uses the same (3, 2, 2, 2) tensor as its
    // (out, in, kh, kw) weight; feeding x as its upstream grad yields y.
    const Conv2DSpec cs{2, 3, 2, 2, 2, Padding::valid, false};
    Td z(Shape{1, 2, 4, 4}, 0.0);
    z.set_requires_grad(true);
    Tape<double> t2;
    const Td conv = ops::conv2d(t2, z, cs, w, Td{});
    t2.backward(ops::sum(t2, ops::mul(t2, conv, x)));
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(z.grad()[i] == doctest::Approx(y.data()[i]).epsilon(1e-12));
  }
  SUBCASE("parameter count 1024 to 512") {
    const Conv2DSpec big{1024, 512, 2, 2, 2, Padding::valid, true};
    CHECK(big.param_count() == 2097664);
  }
  SUBCASE("channel mismatch") {
    CHECK_THROWS_AS(ops::transposed_conv2d(tape, Td(Shape{1, 2, 2, 2}), s, Td(s.transposed_weight_shape()),
                                           Td(Shape{1, 1, 1, 1})),
                    ShapeError);
  }
}

TEST_CASE("depthwise conv") {
  Tape<double> tape;
  Rng rng(8);
  const Td x = test::random_tensor<double>({2, 3, 5, 6}, rng);
  SUBCASE("centre kernel is identity") {
    Td w(Shape{3, 1, 3, 3}, 0.0);
    for (std::size_t c = 0; c < 3; ++c) w.at(c, 0, 1, 1) = 1;
    check_close(ops::depthwise_conv2d(tape, x, w), x, 0);
  }
  SUBCASE("channels do not mix") {
    Td w(Shape{3, 1, 3, 3}, 0.0);
    w.at(0, 0, 1, 1) = 1;
    w.at(2, 0, 1, 1) = 1;
    const Td y = ops::depthwise_conv2d(tape, x, w);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
          CHECK(y.at(n, 1, i, j) == 0);
          CHECK(y.at(n, 0, i, j) == x.at(n, 0, i, j));
        }
  }
  SUBCASE("grouped loop oracle") {
    const Td w = test::random_tensor<double>({3, 1, 3, 3}, rng);
    const Td y = ops::depthwise_conv2d(tape, x, w);
    const Conv2DSpec one{1, 1, 3, 3, 1, Padding::same, false};
    for (std::size_t c = 0; c < 3; ++c) {
      Td xc(Shape{2, 1, 5, 6}), wc(Shape{1, 1, 3, 3});
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 5; ++i)
          for (std::size_t j = 0; j < 6; ++j) xc.at(n, 0, i, j) = x.at(n, c, i, j);
      for (std::size_t k = 0; k < 9; ++k) wc.data()[k] = w.data()[c * 9 + k];
      const Td ref = naive_conv(xc, one, wc, Td{});
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 5; ++i)
          for (std::size_t j = 0; j < 6; ++j)
            CHECK(y.at(n, c, i, j) == doctest::Approx(ref.at(n, 0, i, j)).epsilon(1e-9));
    }
  }
  SUBCASE("filter count mismatch") {
    CHECK_THROWS_AS(ops::depthwise_conv2d(tape, x, Td(Shape{2, 1, 3, 3})), ShapeError);
  }
}

TEST_CASE("maxpool") {
  Tape<double> tape;
  SUBCASE("window max") {
    const Td y = ops::maxpool2d(tape, Td(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
    CHECK(y.item() == 4);
  }
  SUBCASE("constant input and tie rule") {
    Td x(Shape{1, 2, 4, 4}, 1.5);
    x.set_requires_grad(true);
    const Td y = ops::maxpool2d(tape, x);
    for (double v : y.data()) CHECK(v == 1.5);
    tape.backward(ops::sum(tape, y));
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
          CHECK(x.grad()[x.index(0, c, i, j)] == ((i % 2 == 0 && j % 2 == 0) ? 1.0 : 0.0));
  }
  SUBCASE("window scan oracle") {
    Rng rng(3);
    const Td x = test::random_tensor<double>({1, 3, 8, 8}, rng);
    const Td y = ops::maxpool2d(tape, x);
    REQUIRE(y.shape() == Shape{1, 3, 4, 4});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
          double m = -std::numeric_limits<double>::infinity();
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) m = std::max(m, x.at(0, c, 2 * i + a, 2 * j + b));
          CHECK(y.at(0, c, i, j) == m);
        }
  }
  SUBCASE("odd dims") { CHECK_THROWS_AS(ops::maxpool2d(tape, Td(Shape{1, 1, 3, 4})), ShapeError); }
}

TEST_CASE("nearest upsample") {
  Tape<double> tape;
  Rng rng(6);
  const Td x = test::random_tensor<double>({2, 3, 3, 4}, rng);
  const Td y = ops::upsample2x_nearest(tape, x);
  REQUIRE(y.shape() == Shape{2, 3, 6, 8});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 8; ++j) CHECK(y.at(n, c, i, j) == x.at(n, c, i / 2, j / 2));
  check_close(ops::maxpool2d(tape, y), x, 0);
  const Td one = ops::upsample2x_nearest(tape, Td(Shape{1, 1, 1, 1}, 2.5));
  for (double v : one.data()) CHECK(v == 2.5);
}

TEST_CASE("batch norm") {
  Tape<double> tape;
  Rng rng(12);
  const BatchNormSpec spec{3};
  auto fresh_state = [&] {
    return BatchNormState<double>{Td(Shape{1, 3, 1, 1}, 1.0), Td(Shape{1, 3, 1, 1}, 0.0), Td(Shape{1, 3, 1, 1}, 0.0),
                                  Td(Shape{1, 3, 1, 1}, 1.0)};
  };
  const Td x = test::random_tensor<double>({4, 3, 5, 5}, rng, -3, 7);

  SUBCASE("train statistics") {
    auto st = fresh_state();
    const Td y = ops::batchnorm2d(tape, x, spec, st, Mode::train);
    for (std::size_t c = 0; c < 3; ++c) {
      double sum = 0, sq = 0;
      std::size_t count = 0;
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t k = 0; k < 25; ++k) {
          const double v = y.data()[(n * 3 + c) * 25 + k];
          sum += v;
          sq += v * v;
          ++count;
        }
      const double mean = sum / count;
      CHECK(std::abs(mean) < 1e-5);
      CHECK(std::abs(sq / count - mean * mean - 1) < 1e-3);
    }
    // running stats moved away from their initial values
    CHECK(st.running_mean.data()[0] != 0.0);
    CHECK(st.running_var.data()[0] != 1.0);
  }
  SUBCASE("gamma zero gives beta") {
    auto st = fresh_state();
    for (auto& g : st.gamma.data()) g = 0;
    st.beta.data()[1] = 0.25;
    const Td y = ops::batchnorm2d(tape, x, spec, st, Mode::train);
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t k = 0; k < 25; ++k) CHECK(y.data()[(n * 3 + 1) * 25 + k] == 0.25);
  }
  SUBCASE("standardized input passes through") {
    auto st = fresh_state();
    Td z(Shape{1, 3, 1, 2}, std::vector<double>{-1, 1, -1, 1, -1, 1});
    const Td y = ops::batchnorm2d(tape, z, spec, st, Mode::train);
    for (std::size_t i = 0; i < 6; ++i) CHECK(y.data()[i] == doctest::Approx(z.data()[i]).epsilon(1e-3));
  }
  SUBCASE("infer uses running stats only") {
    auto st = fresh_state();
    st.running_mean.data()[0] = 2;
    st.running_var.data()[0] = 4;
    const Td y = ops::batchnorm2d(tape, x, spec, st, Mode::infer);
    const double expect = (x.data()[0] - 2) / std::sqrt(4 + spec.epsilon);
    CHECK(y.data()[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(st.running_mean.data()[0] == 2);
  }
  SUBCASE("errors") {
    auto st = fresh_state();
    CHECK_THROWS_AS(ops::batchnorm2d(tape, Td(Shape{1, 2, 2, 2}), spec, st, Mode::train), ShapeError);
    CHECK_THROWS_AS(ops::batchnorm2d(tape, Td(Shape{1, 3, 1, 1}), spec, st, Mode::train), ShapeError);
  }
  CHECK(spec.param_count() == 12);
}

TEST_CASE("dropout") {
  Tape<float> tape;
  Rng rng(77);
  const Tensorf ones(Shape{1, 1, 1000, 1000}, 1.f);
  SUBCASE("rate 0 and infer mode are identity") {
    const Tensorf a = ops::dropout(tape, ones, 0.0, Mode::train, rng);
    const Tensorf b = ops::dropout(tape, ones, 0.5, Mode::infer, rng);
    for (std::size_t i = 0; i < 1000; ++i) {
      CHECK(a.data()[i] == 1.f);
      CHECK(b.data()[i] == 1.f);
    }
  }
  SUBCASE("rate 0.5 statistics on a million elements") {
    const Tensorf y = ops::dropout(tape, ones, 0.5, Mode::train, rng);
    double sum = 0;
    std::size_t zeros = 0;
    for (float v : y.data()) {
      sum += v;
      zeros += v == 0.f;
      CHECK((v == 0.f || v == 2.f));
    }
    const double mean = sum / 1e6, frac = double(zeros) / 1e6;
    CHECK(mean >= 0.99);
    CHECK(mean <= 1.01);
    CHECK(frac >= 0.498);
    CHECK(frac <= 0.502);
  }
  SUBCASE("rate out of range") { CHECK_THROWS_AS(ops::dropout(tape, ones, 1.0, Mode::train, rng), std::invalid_argument); }
}

TEST_CASE("concat and slice") {
  Tape<double> tape;
  Rng rng(10);
  const Td a = test::random_tensor<double>({1, 2, 4, 4}, rng);
  const Td b = test::random_tensor<double>({1, 3, 4, 4}, rng);
  const Td c = ops::concat_channels(tape, a, b);
  CHECK(c.shape() == Shape{1, 5, 4, 4});
  check_close(ops::slice_channels(tape, c, 0, 2), a, 0);
  check_close(ops::slice_channels(tape, c, 2, 3), b, 0);
  CHECK_THROWS_AS(ops::concat_channels(tape, a, Td(Shape{1, 1, 4, 5})), ShapeError);
  CHECK_THROWS_AS(ops::slice_channels(tape, c, 4, 2), ShapeError);
}

TEST_CASE("activation values") {
  CHECK(mish_value(0) == 0);
  CHECK(mish_value(1) == doctest::Approx(0.865098).epsilon(1e-6));
  CHECK(sigmoid_value(0) == 0.5);
  CHECK(softplus_value(20) - 20 < 1e-8);
  CHECK(softplus_value(20) - 20 > 0);
  Tape<double> tape;
  const Td r = ops::relu(tape, Td(Shape{1, 1, 1, 2}, std::vector<double>{-3, 3}));
  CHECK(r.data()[0] == 0);
  CHECK(r.data()[1] == 3);
  const Td big = ops::sigmoid(tape, Td(Shape{1, 1, 1, 2}, std::vector<double>{-1e4, 1e4}));
  CHECK(big.data()[0] == 0);
  CHECK(big.data()[1] == 1);
  const Td ident = ops::activation(tape, r, ActivationKind::identity);
  CHECK(ident.data()[1] == 3);
}

TEST_CASE("mish on a dense grid") {
  double lowest = 1e9, arg = 0;
  for (int k = -200000; k <= 200000; ++k) {
    const double x = k * 1e-4;
    const double m = mish_value(x);
    REQUIRE(std::isfinite(m));
    if (x >= 0) CHECK(m <= x);
    if (m < lowest) {
      lowest = m;
      arg = x;
    }
  }
  CHECK(lowest >= -0.30885);
  CHECK(lowest == doctest::Approx(-0.30884).epsilon(1e-4));
  CHECK(arg == doctest::Approx(-1.1924).epsilon(1e-3));
  for (double x : {-1e4, -700.0, 700.0, 1e4}) CHECK(std::isfinite(mish_value(x)));
  Tape<float> tape;
  const Tensorf f = ops::mish(tape, Tensorf(Shape{1, 1, 1, 2}, std::vector<float>{-1e4f, 1e4f}));
  CHECK(std::isfinite(f.data()[0]));
  CHECK(f.data()[1] == 1e4f);
}

TEST_CASE("shape algebra") {
  Tape<float> tape;
  const Tensorf x(Shape{1, 4, 8, 6}, 0.5f);
  CHECK(ops::mish(tape, x).shape() == x.shape());
  CHECK(ops::depthwise_conv2d(tape, x, Tensorf(Shape{4, 1, 3, 3}, 0.1f)).shape() == x.shape());
  CHECK(ops::maxpool2d(tape, x).shape() == Shape{1, 4, 4, 3});
  CHECK(ops::upsample2x_nearest(tape, x).shape() == Shape{1, 4, 16, 12});
  const Conv2DSpec up{4, 2, 2, 2, 2, Padding::valid, true};
  CHECK(ops::transposed_conv2d(tape, x, up, Tensorf(up.transposed_weight_shape()), Tensorf(Shape{1, 2, 1, 1}))
            .shape() == Shape{1, 2, 16, 12});
}

TEST_CASE("fusion formula") {
  Tape<double> tape;
  SUBCASE("equal weights") {
    const std::vector<Td> in{Td::scalar(2.0), Td::scalar(4.0)};
    const Td y = ops::fuse(tape, Td(Shape{1, 1, 1, 2}, std::vector<double>{1, 1}), std::span<const Td>(in));
    CHECK(y.item() == doctest::Approx(6.0 / 2.0001).epsilon(1e-12));
    CHECK(y.item() == doctest::Approx(2.99985).epsilon(1e-6));
  }
  SUBCASE("zero weight suppresses an input") {
    const std::vector<Td> in{Td::scalar(3.0), Td::scalar(4.0)};
    const Td y = ops::fuse(tape, Td(Shape{1, 1, 1, 2}, std::vector<double>{1, 0}), std::span<const Td>(in));
    CHECK(y.item() == doctest::Approx(3.0 / (1 + 1e-4)).epsilon(1e-14));
  }
  SUBCASE("negative weight clamps") {
    const std::vector<Td> in{Td::scalar(3.0), Td::scalar(4.0)};
    const Td y = ops::fuse(tape, Td(Shape{1, 1, 1, 2}, std::vector<double>{-5, 1}), std::span<const Td>(in));
    CHECK(y.item() == doctest::Approx(4.0 / (1 + 1e-4)).epsilon(1e-14));
  }
  SUBCASE("arity and shape errors") {
    const std::vector<Td> in{Td::scalar(3.0), Td(Shape{1, 1, 1, 2})};
    CHECK_THROWS(ops::fuse(tape, Td(Shape{1, 1, 1, 3}, 1.0), std::span<const Td>(in)));
    CHECK_THROWS_AS(ops::fuse(tape, Td(Shape{1, 1, 1, 2}, 1.0), std::span<const Td>(in)), ShapeError);
  }
}

TEST_CASE("every primitive passes grad_check on five seeds") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    Rng rng(seed + 100);
    auto r = [&](Shape s) { return test::random_tensor<double>(s, rng); };
    // Keep inputs off the kinks of relu and maxpool ties.
    auto offzero = [&](Shape s) {
      Td t = r(s);
      for (double& v : t.data()) v = (v < 0 ? -0.1 : 0.1) + v;
      return t;
    };
    const Conv2DSpec c3{2, 3, 3, 3, 1, Padding::same, true};
    CHECK(grad_ok([c3](Tape<double>& t, std::span<const Td> in) { return ops::conv2d(t, in[0], c3, in[1], in[2]); },
                  {r({2, 2, 5, 5}), r(c3.weight_shape()), r({1, 3, 1, 1})}));
    const Conv2DSpec cs{2, 2, 3, 3, 2, Padding::same, false};
    CHECK(grad_ok([cs](Tape<double>& t, std::span<const Td> in) { return ops::conv2d(t, in[0], cs, in[1], Td{}); },
                  {r({1, 2, 6, 5}), r(cs.weight_shape())}));
    const Conv2DSpec tc{3, 2, 2, 2, 2, Padding::valid, true};
    CHECK(grad_ok(
        [tc](Tape<double>& t, std::span<const Td> in) { return ops::transposed_conv2d(t, in[0], tc, in[1], in[2]); },
        {r({2, 3, 3, 2}), r(tc.transposed_weight_shape()), r({1, 2, 1, 1})}));
    CHECK(grad_ok([](Tape<double>& t, std::span<const Td> in) { return ops::depthwise_conv2d(t, in[0], in[1]); },
                  {r({2, 3, 4, 5}), r({3, 1, 3, 3})}));
    Td pool_in(Shape{1, 2, 4, 4});
    for (std::size_t i = 0; i < pool_in.numel(); ++i) pool_in.data()[i] = 0.01 * double((i * 37) % 101);
    CHECK(grad_ok([](Tape<double>& t, std::span<const Td> in) { return ops::maxpool2d(t, in[0]); }, {pool_in}));
    CHECK(grad_ok([](Tape<double>& t, std::span<const Td> in) { return ops::upsample2x_nearest(t, in[0]); },
                  {r({1, 2, 3, 3})}));
    for (Mode mode : {Mode::train, Mode::infer}) {
      CHECK(grad_ok(
          [mode](Tape<double>& t, std::span<const Td> in) {
            BatchNormState<double> st{in[1], in[2], Td(Shape{1, 2, 1, 1}, 0.1), Td(Shape{1, 2, 1, 1}, 1.3)};
            return ops::batchnorm2d(t, in[0], BatchNormSpec{2}, st, mode);
          },
          {r({2, 2, 3, 3}), r({1, 2, 1, 1}), r({1, 2, 1, 1})}));
    }
    CHECK(grad_ok(
        [seed](Tape<double>& t, std::span<const Td> in) {
          Rng d(seed);
          return ops::dropout(t, in[0], 0.5, Mode::train, d);
        },
        {r({1, 2, 4, 4})}));
    CHECK(grad_ok([](Tape<double>& t, std::span<const Td> in) { return ops::concat_channels(t, in[0], in[1]); },
                  {r({1, 2, 3, 3}), r({1, 1, 3, 3})}));
    CHECK(grad_ok([](Tape<double>& t, std::span<const Td> in) { return ops::slice_channels(t, in[0], 1, 2); },
                  {r({2, 4, 3, 3})}));
    for (ActivationKind k : {ActivationKind::mish, ActivationKind::relu, ActivationKind::sigmoid,
                             ActivationKind::softplus}) {
      CAPTURE(to_string(k));
      CHECK(grad_ok([k](Tape<double>& t, std::span<const Td> in) { return ops::activation(t, in[0], k); },
                    {offzero({1, 2, 3, 3})}));
    }
    CHECK(grad_ok(
        [](Tape<double>& t, std::span<const Td> in) {
          return ops::fuse(t, in[0], std::span<const Td>(in.begin() + 1, in.end()));
        },
        {offzero({1, 1, 1, 3}), r({1, 2, 3, 3}), r({1, 2, 3, 3}), r({1, 2, 3, 3})}));
  }
}
