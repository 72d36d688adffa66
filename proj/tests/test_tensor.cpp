#include "support.hpp"

#include <cstring>

#include "udet/gradcheck.hpp"
#include "udet/ops.hpp"

using namespace udet;
using Td = Tensor<double>;

TEST_CASE("tensor construction validates shapes") {
  CHECK_THROWS_AS(Td(Shape{0, 1, 2, 2}), ShapeError);
  CHECK_THROWS_AS(Td(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Td t(Shape{2, 3, 4, 5}, 1.5);
  CHECK(t.numel() == 120);
  CHECK(t.at(1, 2, 3, 4) == 1.5);
  CHECK(t.index(1, 2, 3, 4) == 119);
  CHECK_THROWS_AS(t.item(), ShapeError);
  CHECK(Td::scalar(3.0).item() == 3.0);
}

TEST_CASE("copies share storage, clone does not") {
  Td a(Shape{1, 1, 2, 2}, 1.0);
  Td b = a;
  Td c = a.clone();
  b.data()[0] = 7;
  CHECK(a.data()[0] == 7);
  CHECK(c.data()[0] == 1);
  CHECK(a.same_storage(b));
  CHECK_FALSE(a.same_storage(c));
}

TEST_CASE("forward_record appends nodes only when needed") {
  Tape<double> tape;
  Td a(Shape{1, 1, 2, 2}, 1.0), b(Shape{1, 1, 2, 2}, 1.0);

  SUBCASE("no input requires grad") {
    const Td out = ops::add(tape, a, b);
    for (double v : out.data()) CHECK(v == 2.0);
    CHECK(tape.size() == 0);
  }
  SUBCASE("one input requires grad") {
    a.set_requires_grad(true);
    const Td out = ops::add(tape, a, b);
    for (double v : out.data()) CHECK(v == 2.0);
    CHECK(tape.size() == 1);
    CHECK(tape.node(0).op == "add");
  }
  SUBCASE("disabled tape records nothing") {
    a.set_requires_grad(true);
    {
      NoGradGuard<double> guard(tape);
      ops::add(tape, a, b);
    }
    CHECK(tape.size() == 0);
    CHECK(tape.enabled());
  }
}

TEST_CASE("shape mismatch names the op and both shapes") {
  Tape<double> tape;
  Td a(Shape{1, 1, 2, 2}), b(Shape{1, 1, 2, 3});
  try {
    ops::add(tape, a, b);
    FAIL("expected a ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find(a.shape().str()) != std::string::npos);
    CHECK(msg.find(b.shape().str()) != std::string::npos);
  }
}

TEST_CASE("chain of three ops matches finite differences") {
  Tape<double> tape;
  Td x(Shape{1, 1, 1, 3}, std::vector<double>{0.3, -0.7, 1.1});
  x.set_requires_grad(true);
  auto f = [](Tape<double>& t, const Td& in) {
    return ops::sum(t, ops::mish(t, ops::scale(t, in, 2.0)));
  };
  const Td loss = f(tape, x);
  CHECK(tape.size() == 3);
  tape.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) {
    const double h = 1e-6, saved = x.data()[i];
    Tape<double> off;
    off.set_enabled(false);
    x.data()[i] = saved + h;
    const double up = f(off, x).item();
    x.data()[i] = saved - h;
    const double down = f(off, x).item();
    x.data()[i] = saved;
    CHECK(x.grad()[i] != 0.0);
    CHECK(x.grad()[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-7));
  }
}

TEST_CASE("backward examples") {
  SUBCASE("bilinear form") {
    Tape<double> tape;
    Td w = Td::scalar(2.0), x = Td::scalar(3.0);
    w.set_requires_grad(true);
    x.set_requires_grad(true);
    tape.backward(ops::sum(tape, ops::mul(tape, w, x)));
    CHECK(w.grad()[0] == 3.0);
    CHECK(x.grad()[0] == 2.0);
  }
  SUBCASE("mish slope at zero") {
    Tape<double> tape;
    Td x = Td::scalar(0.0);
    x.set_requires_grad(true);
    tape.backward(ops::sum(tape, ops::mish(tape, x)));
    const double h = 1e-4;
    const double fd = (mish_value(h) - mish_value(-h)) / (2 * h);
    CHECK(x.grad()[0] == doctest::Approx(fd).epsilon(1e-7));
    CHECK(x.grad()[0] == doctest::Approx(0.6).epsilon(1e-12));
  }
  SUBCASE("two backward calls double the grads exactly") {
    Rng rng(1);
    Tape<double> tape;
    Td x = test::random_tensor<double>({1, 2, 3, 3}, rng);
    x.set_requires_grad(true);
    const Td loss = ops::sum(tape, ops::mish(tape, ops::mul(tape, x, x)));
    tape.backward(loss);
    const std::vector<double> once(x.grad().begin(), x.grad().end());
    tape.backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(x.grad()[i] == 2 * once[i]);
  }
}

TEST_CASE("backward errors") {
  Tape<double> tape, other;
  Td x(Shape{1, 1, 2, 2}, 1.0);
  x.set_requires_grad(true);
  const Td y = ops::scale(tape, x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);  // not a scalar
  const Td s = ops::sum(other, x);
  CHECK_THROWS_AS(tape.backward(s), std::invalid_argument);  // produced elsewhere
}

TEST_CASE("diamond graph sums both paths exactly") {
  Tape<double> tape;
  Td x = Td::scalar(0.7);
  x.set_requires_grad(true);
  // f = g + h with g = 3x, h = x^2
  const Td g = ops::scale(tape, x, 3.0);
  const Td h = ops::mul(tape, x, x);
  tape.backward(ops::sum(tape, ops::add(tape, g, h)));
  CHECK(x.grad()[0] == 3.0 + 2 * 0.7);
}

TEST_CASE("zeroing then backward reproduces grads bit for bit") {
  Rng rng(9);
  Td x = test::random_tensor<double>({2, 3, 4, 4}, rng);
  Td w = test::random_tensor<double>({4, 3, 3, 3}, rng);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  const Conv2DSpec spec{3, 4, 3, 3, 1, Padding::same, false};
  auto run = [&] {
    Tape<double> tape;
    tape.backward(ops::sum(tape, ops::mish(tape, ops::conv2d(tape, x, spec, w, Td{}))));
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  const auto first = run();
  w.zero_grad();
  x.zero_grad();
  const auto second = run();
  CHECK(std::memcmp(first.data(), second.data(), first.size() * sizeof(double)) == 0);
}

TEST_CASE("parameter set") {
  ParameterSet<float> ps;
  ps.add("a.weight", Shape{2, 1, 3, 3});
  ps.add("a.running_mean", Shape{1, 2, 1, 1}, ParamKind::buffer);
  CHECK_THROWS_AS(ps.add("a.weight", Shape{1, 1, 1, 1}), std::invalid_argument);
  CHECK(ps.size() == 2);
  CHECK(ps.total_elements() == 20);
  CHECK(ps.contains("a.weight"));
  CHECK_THROWS_AS(ps.get("missing"), std::out_of_range);
  ps.get("a.weight").grad_buffer()[0] = 5;
  ps.zero_grads();
  CHECK(ps.get("a.weight").grad()[0] == 0);
}

TEST_CASE("grad_check examples") {
  SUBCASE("identity has zero error") {
    const auto r = grad_check([](Tape<double>& t, std::span<const Td> in) { return ops::scale(t, in[0], 1.0); },
                              {Td::scalar(0.0)}, 1e-12);
    CHECK(r.passed);
    CHECK(r.max_rel_error == 0.0);
  }
  SUBCASE("conv2d on (1,2,5,5) with a (3,2,3,3) kernel") {
    Rng rng(4);
    const Conv2DSpec spec{2, 3, 3, 3, 1, Padding::same, false};
    const auto r = grad_check(
        [spec](Tape<double>& t, std::span<const Td> in) { return ops::conv2d(t, in[0], spec, in[1], Td{}); },
        {test::random_tensor<double>({1, 2, 5, 5}, rng), test::random_tensor<double>({3, 2, 3, 3}, rng)}, 1e-4);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.inputs.size() == 2);
    CHECK(r.inputs[0].checked == 50);
  }
  SUBCASE("maxpool tie routes to the first index") {
    // Analytic grad at the tie equals the finite difference at a point where
    // the first element is the strict maximum.
    Td tied(Shape{1, 1, 2, 2}, 0.5);
    tied.set_requires_grad(true);
    Tape<double> tape;
    tape.backward(ops::sum(tape, ops::maxpool2d(tape, tied)));
    Td moved = tied.clone();
    moved.data()[0] += 1e-3;
    const auto r = grad_check([](Tape<double>& t, std::span<const Td> in) { return ops::maxpool2d(t, in[0]); },
                              {moved}, 1e-4);
    CHECK(r.passed);
    Td again = moved.clone();
    again.set_requires_grad(true);
    Tape<double> t2;
    t2.backward(ops::sum(t2, ops::maxpool2d(t2, again)));
    for (std::size_t i = 0; i < 4; ++i) CHECK(tied.grad()[i] == again.grad()[i]);
    CHECK(tied.grad()[0] == 1.0);
    CHECK(tied.grad()[1] == 0.0);
  }
  SUBCASE("non-finite values are reported") {
    const auto r = grad_check(
        [](Tape<double>& t, std::span<const Td> in) { return ops::scale(t, ops::mul(t, in[0], in[0]), 1e308); },
        {Td(Shape{1, 1, 1, 2}, std::vector<double>{1e3, 2.0})}, 1e-4);
    CHECK_FALSE(r.passed);
    CHECK(r.failure.find("non-finite") != std::string::npos);
  }
  SUBCASE("large inputs need sampling") {
    CHECK_THROWS_AS(grad_check([](Tape<double>& t, std::span<const Td> in) { return ops::sum(t, in[0]); },
                               {Td(Shape{1, 1, 101, 100})}, 1e-4),
                    std::invalid_argument);
  }
}

TEST_CASE("cast between precisions") {
  Td d(Shape{1, 1, 1, 2}, std::vector<double>{0.1, -2.5});
  const auto f = cast<float>(d);
  CHECK(f.data()[0] == 0.1f);
  CHECK(f.data()[1] == -2.5f);
}
