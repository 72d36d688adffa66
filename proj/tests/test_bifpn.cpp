#include "support.hpp"

#include <algorithm>

#include "udet/bifpn.hpp"
#include "udet/gradcheck.hpp"

using namespace udet;
using Td = Tensor<double>;

namespace {

template <typename T>
void randomize(ParameterSet<T>& ps, Rng& rng) {
  for (auto& e : ps.entries()) {
    if (e.kind == ParamKind::buffer) continue;
    if (e.name.ends_with(".gamma") || e.name.ends_with(".beta") || e.name.ends_with("fuse.weight")) continue;
    for (T& v : e.value.data()) v = static_cast<T>(uniform(rng, -0.5, 0.5));
  }
}

BifpnConfig small_config(std::size_t width) {
  BifpnConfig c;
  c.entry_channels = {3, 4, 5, 6, 7};
  c.width = width;
  return c;
}

PyramidFeatures<double> pyramid(const BifpnConfig& c, std::size_t top, Rng& rng, std::size_t batch = 2) {
  PyramidFeatures<double> p;
  std::size_t s = top;
  for (std::size_t ch : c.entry_channels) {
    p.levels.push_back(test::random_tensor<double>({batch, ch, s, s}, rng));
    s /= 2;
  }
  return p;
}

}  // namespace

TEST_CASE("full-width parameter audit and census") {
  Bifpn<float> net(BifpnConfig{});
  std::size_t lateral = 0, depthwise = 0, bn = 0, fusion = 0;
  for (const auto& e : net.params().entries()) {
    const std::size_t n = e.value.numel();
    if (e.name.find(".fuse.") != std::string::npos) fusion += n;
    else if (e.name.find(".bn.") != std::string::npos) bn += n;
    else if (e.name.ends_with(".dw.weight")) depthwise += n;
    else if (e.name.starts_with("bifpn.lateral")) lateral += n;
  }
  CHECK(net.params().get("bifpn.lateral1.weight").numel() == 4096);
  CHECK(lateral == 126976);
  CHECK(depthwise == 4032);
  CHECK(bn == 3072);
  CHECK(lateral + depthwise + bn == 134080);
  CHECK(net.params().total_elements() == 134080 + fusion);
  CHECK(fusion == 3 * 2 + 2 + 3 * 3);

  const LayerList& l = net.layers();
  CHECK(l.count(Section::bifpn, LayerKind::depthwise_conv) == 7);
  CHECK(l.count(Section::bifpn, LayerKind::batch_norm) == 12);
  CHECK(l.count(Section::bifpn, LayerKind::activation, ActivationKind::relu) == 12);
  CHECK(l.count(Section::bifpn, LayerKind::maxpool) == 3);
  CHECK(l.count(Section::bifpn, LayerKind::conv2d) == 5);
  CHECK(l.count(Section::bifpn, LayerKind::fuse) == 7);
}

TEST_CASE("fusion coefficients") {
  Tape<double> tape;
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t arity = 2 + trial % 2;
    Td w(Shape{arity, 1, 1, 1});
    for (double& v : w.data()) v = uniform(rng, -1, 3);
    // Unit impulses read off each coefficient directly.
    std::vector<Td> in;
    double s = 0;
    for (std::size_t i = 0; i < arity; ++i) s += std::max(0.0, w.data()[i]);
    double total = 0;
    for (std::size_t k = 0; k < arity; ++k) {
      in.assign(arity, Td::scalar(0.0));
      in[k] = Td::scalar(1.0);
      const double c = ops::fuse(tape, w, std::span<const Td>(in)).item();
      CHECK(c >= 0);
      total += c;
    }
    CHECK(total == doctest::Approx(s / (1e-4 + s)).epsilon(1e-12));
    CHECK(total < 1);
    // 1-Lipschitz per input path
    std::vector<Td> base, moved;
    for (std::size_t i = 0; i < arity; ++i) base.push_back(test::random_tensor<double>({1, 1, 2, 2}, rng));
    moved = base;
    moved[0] = base[0].clone();
    for (double& v : moved[0].data()) v += uniform(rng, -1, 1);
    const Td a = ops::fuse(tape, w, std::span<const Td>(base));
    const Td b = ops::fuse(tape, w, std::span<const Td>(moved));
    for (std::size_t e = 0; e < 4; ++e)
      CHECK(std::abs(a.data()[e] - b.data()[e]) <= std::abs(moved[0].data()[e] - base[0].data()[e]) + 1e-15);
  }
  // equal positive weights give equal coefficients
  const Td w(Shape{3, 1, 1, 1}, 0.7);
  std::vector<Td> in{Td::scalar(1.0), Td::scalar(0.0), Td::scalar(0.0)};
  const double c0 = ops::fuse(tape, w, std::span<const Td>(in)).item();
  in = {Td::scalar(0.0), Td::scalar(0.0), Td::scalar(1.0)};
  CHECK(ops::fuse(tape, w, std::span<const Td>(in)).item() == c0);
}

TEST_CASE("level dims are preserved") {
  const BifpnConfig c = small_config(4);
  Bifpn<double> net(c);
  Rng rng(1);
  randomize(net.params(), rng);
  for (std::size_t k : {1, 2}) {
    Tape<double> tape;
    const auto in = pyramid(c, 16 * k, rng);
    const auto out = net.forward(tape, in, Mode::train);
    REQUIRE(out.levels.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      const Shape s = in.levels[i].shape();
      CHECK(out.levels[i].shape() == Shape{s.n, 4, s.h, s.w});
    }
  }
}

TEST_CASE("lateral projection") {
  const BifpnConfig c = small_config(3);
  Bifpn<double> net(c);
  Rng rng(2);
  randomize(net.params(), rng);
  Tape<double> tape;
  const auto in = pyramid(c, 16, rng);
  const auto lat = net.lateral(tape, in, Mode::train);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(lat.levels[i].shape().h == in.levels[i].shape().h);
    CHECK(lat.levels[i].shape().c == 3);
  }
  // identity 1x1 weights on a width-channel input: output is BN (then relu) of the input
  BifpnConfig same = c;
  same.entry_channels = {3, 3, 3, 3, 3};
  Bifpn<double> id(same);
  for (std::size_t l = 1; l <= 5; ++l) {
    Td& w = id.params().get("bifpn.lateral" + std::to_string(l) + ".weight");
    for (std::size_t o = 0; o < 3; ++o) w.at(o, o, 0, 0) = 1;
  }
  auto p = pyramid(same, 16, rng);
  const auto out = id.lateral(tape, p, Mode::infer);
  const double scale = 1 / std::sqrt(1 + 1e-3);
  for (std::size_t i = 0; i < p.levels[0].numel(); ++i)
    CHECK(out.levels[0].data()[i] == doctest::Approx(std::max(0.0, p.levels[0].data()[i] * scale)).epsilon(1e-12));
  // wrong entry channels
  auto bad = pyramid(c, 16, rng);
  bad.levels[2] = Td(Shape{2, 9, 4, 4});
  CHECK_THROWS_AS(net.lateral(tape, bad, Mode::train), ShapeError);
}

TEST_CASE("broken level chain") {
  const BifpnConfig c = small_config(2);
  Bifpn<double> net(c);
  Rng rng(4);
  auto p = pyramid(c, 16, rng);
  p.levels[3] = Td(Shape{2, 6, 3, 3});
  Tape<double> tape;
  CHECK_THROWS_AS(net.forward(tape, p, Mode::train), ShapeError);
}

TEST_CASE("gradient reaches every lateral weight") {
  const BifpnConfig c = small_config(4);
  Bifpn<double> net(c);
  Rng rng(5);
  randomize(net.params(), rng);
  for (auto& e : net.params().entries())
    if (e.kind == ParamKind::trainable) e.value.set_requires_grad(true);
  Tape<double> tape;
  const auto out = net.forward(tape, pyramid(c, 16, rng), Mode::train);
  Td loss = ops::sum(tape, out.levels[0]);
  for (std::size_t i = 1; i < 5; ++i) loss = ops::add(tape, loss, ops::sum(tape, out.levels[i]));
  tape.backward(loss);
  for (std::size_t l = 1; l <= 5; ++l) {
    const Td& w = net.params().get("bifpn.lateral" + std::to_string(l) + ".weight");
    REQUIRE(w.has_grad());
    CHECK(std::any_of(w.grad().begin(), w.grad().end(), [](double g) { return g != 0; }));
  }
}

TEST_CASE("miniature topologies pass grad_check") {
  for (std::size_t levels : {2, 3}) {
    CAPTURE(levels);
    BifpnConfig c;
    c.entry_channels.assign(levels, 0);
    for (std::size_t i = 0; i < levels; ++i) c.entry_channels[i] = 2 + i;
    c.width = levels;
    Bifpn<double> net(c);
    Rng rng(11 + levels);
    randomize(net.params(), rng);
    // Params and pyramid levels are all checked inputs; the closure rebinds
    // them by name so perturbations reach the forward pass.
    std::vector<std::string> names;
    std::vector<Td> inputs;
    std::size_t s = 8;
    for (std::size_t i = 0; i < levels; ++i, s /= 2)
      inputs.push_back(test::random_tensor<double>({2, c.entry_channels[i], s, s}, rng));
    for (auto& e : net.params().entries())
      if (e.kind == ParamKind::trainable) {
        names.push_back(e.name);
        inputs.push_back(e.value);
      }
    const auto report = grad_check(
        [&](Tape<double>& t, std::span<const Td> in) {
          PyramidFeatures<double> p;
          for (std::size_t i = 0; i < levels; ++i) p.levels.push_back(in[i]);
          for (std::size_t k = 0; k < names.size(); ++k) net.params().get(names[k]) = in[levels + k];
          for (auto& e : net.params().entries())
            if (e.kind == ParamKind::buffer)
              for (double& v : e.value.data()) v = e.name.ends_with("running_var") ? 1.0 : 0.0;
          const auto out = net.forward(t, p, Mode::train);
          Td acc = ops::sum(t, out.levels[0]);
          for (std::size_t i = 1; i < levels; ++i) acc = ops::add(t, acc, ops::sum(t, ops::mish(t, out.levels[i])));
          return acc;
        },
        inputs, 1e-4);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-4);
  }
}
