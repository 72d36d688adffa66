#include "udet/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "udet/bifpn.hpp"
#include "udet/gradcheck.hpp"
#include "udet/metrics.hpp"
#include "udet/model.hpp"
#include "udet/ops.hpp"

namespace udet {

namespace {

using Td = Tensor<double>;
using Inputs = std::span<const Td>;

Td random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Td t(s);
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

// Values bounded away from zero, for ops with a kink there.
Td off_zero(Shape s, Rng& rng, double margin = 0.1) {
  Td t(s);
  for (double& v : t.data()) {
    const double mag = uniform(rng, margin, 1.0);
    v = uniform01(rng) < 0.5 ? -mag : mag;
  }
  return t;
}

// Distinct values at least 1e-2 apart, so finite steps never reorder them.
Td distinct(Shape s, Rng& rng) {
  Td t(s);
  auto d = t.data();
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[std::min(i - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)))]);
  for (std::size_t i = 0; i < d.size(); ++i) d[order[i]] = -1.0 + 0.01 * static_cast<double>(i);
  return t;
}

Td project_levels(Tape<double>& tape, const PyramidFeatures<double>& out, std::uint64_t seed) {
  Td total;
  for (std::size_t l = 0; l < out.levels.size(); ++l) {
    Rng rng(derive_seed(seed, {0x6c766cULL, l}));
    const Td r = random_tensor(out.levels[l].shape(), rng);
    const Td term = ops::sum(tape, ops::mul(tape, out.levels[l], r));
    total = total.defined() ? ops::add(tape, total, term) : term;
  }
  return total;
}

struct Runner {
  const SuiteOptions& opts;
  const std::function<void(const SuiteCase&)>& on_case;
  std::vector<SuiteCase> results;

  void check(const std::string& name, const OpClosure& op, std::vector<Td> inputs,
             double tolerance, std::size_t sample = 0) {
    SuiteCase c;
    c.name = name;
    c.tolerance = tolerance;
    try {
      GradCheckOptions go;
      go.seed = derive_seed(opts.seed, {results.size()});
      go.max_elements_per_input = sample;
      const GradCheckReport r = grad_check(op, std::move(inputs), tolerance, go);
      c.max_rel_error = r.max_rel_error;
      for (const auto& i : r.inputs) c.checked += i.checked;
      c.passed = r.passed && r.failure.empty();
      if (!r.failure.empty()) {
        c.detail = r.failure;
      } else if (!r.passed) {
        for (std::size_t k = 0; k < r.inputs.size(); ++k)
          if (r.inputs[k].max_rel_error > tolerance) {
            c.detail = "input " + std::to_string(k) + " element " + std::to_string(r.inputs[k].worst_index);
            break;
          }
      }
    } catch (const std::exception& e) {
      c.passed = false;
      c.detail = e.what();
    }
    if (on_case) on_case(c);
    results.push_back(std::move(c));
  }
};

void primitive_cases(Runner& run, Rng& rng) {
  const double tol = run.opts.op_tolerance;
  const Shape s{2, 3, 4, 5};

  run.check("add", [](Tape<double>& t, Inputs in) { return ops::add(t, in[0], in[1]); },
            {random_tensor(s, rng), random_tensor(s, rng)}, tol);
  run.check("mul", [](Tape<double>& t, Inputs in) { return ops::mul(t, in[0], in[1]); },
            {random_tensor(s, rng), random_tensor(s, rng)}, tol);
  run.check("scale", [](Tape<double>& t, Inputs in) { return ops::scale(t, in[0], -1.7); },
            {random_tensor(s, rng)}, tol);
  run.check("sum", [](Tape<double>& t, Inputs in) { return ops::sum(t, in[0]); },
            {random_tensor(s, rng)}, tol);

  {
    const Conv2DSpec spec{3, 4, 3, 3, 1, Padding::same, true};
    run.check("conv2d 3x3 same",
              [spec](Tape<double>& t, Inputs in) { return ops::conv2d(t, in[0], spec, in[1], in[2]); },
              {random_tensor({2, 3, 5, 5}, rng), random_tensor(spec.weight_shape(), rng),
               random_tensor({1, 4, 1, 1}, rng)},
              tol);
  }
  {
    const Conv2DSpec spec{2, 3, 3, 3, 2, Padding::valid, false};
    run.check("conv2d 3x3 valid stride 2",
              [spec](Tape<double>& t, Inputs in) { return ops::conv2d(t, in[0], spec, in[1], Td{}); },
              {random_tensor({1, 2, 7, 7}, rng), random_tensor(spec.weight_shape(), rng)}, tol);
  }
  {
    const Conv2DSpec spec{2, 3, 3, 3, 2, Padding::same, true};
    run.check("conv2d 3x3 same stride 2",
              [spec](Tape<double>& t, Inputs in) { return ops::conv2d(t, in[0], spec, in[1], in[2]); },
              {random_tensor({1, 2, 6, 6}, rng), random_tensor(spec.weight_shape(), rng),
               random_tensor({1, 3, 1, 1}, rng)},
              tol);
  }
  {
    const Conv2DSpec spec{4, 2, 1, 1, 1, Padding::same, true};
    run.check("conv2d 1x1",
              [spec](Tape<double>& t, Inputs in) { return ops::conv2d(t, in[0], spec, in[1], in[2]); },
              {random_tensor({2, 4, 3, 3}, rng), random_tensor(spec.weight_shape(), rng),
               random_tensor({1, 2, 1, 1}, rng)},
              tol);
  }
  {
    const Conv2DSpec spec{3, 4, 2, 2, 2, Padding::valid, true};
    run.check("transposed_conv2d 2x2 stride 2",
              [spec](Tape<double>& t, Inputs in) {
                return ops::transposed_conv2d(t, in[0], spec, in[1], in[2]);
              },
              {random_tensor({2, 3, 3, 3}, rng), random_tensor(spec.transposed_weight_shape(), rng),
               random_tensor({1, 4, 1, 1}, rng)},
              tol);
  }
  run.check("depthwise_conv2d",
            [](Tape<double>& t, Inputs in) { return ops::depthwise_conv2d(t, in[0], in[1]); },
            {random_tensor({2, 3, 5, 5}, rng), random_tensor({3, 1, 3, 3}, rng)}, tol);
  run.check("maxpool2d", [](Tape<double>& t, Inputs in) { return ops::maxpool2d(t, in[0]); },
            {distinct({2, 2, 4, 6}, rng)}, tol);
  run.check("upsample2x_nearest",
            [](Tape<double>& t, Inputs in) { return ops::upsample2x_nearest(t, in[0]); },
            {random_tensor({2, 2, 3, 2}, rng)}, tol);

  {
    const BatchNormSpec spec{3};
    run.check("batchnorm2d train",
              [spec](Tape<double>& t, Inputs in) {
                BatchNormState<double> st{in[1], in[2], Td({1, 3, 1, 1}, 0.0), Td({1, 3, 1, 1}, 1.0)};
                return ops::batchnorm2d(t, in[0], spec, st, Mode::train);
              },
              {random_tensor({2, 3, 3, 3}, rng), random_tensor({1, 3, 1, 1}, rng, 0.5, 1.5),
               random_tensor({1, 3, 1, 1}, rng)},
              tol);
    const Td mean = random_tensor({1, 3, 1, 1}, rng), var = random_tensor({1, 3, 1, 1}, rng, 0.5, 2.0);
    run.check("batchnorm2d infer",
              [spec, mean, var](Tape<double>& t, Inputs in) {
                BatchNormState<double> st{in[1], in[2], mean, var};
                return ops::batchnorm2d(t, in[0], spec, st, Mode::infer);
              },
              {random_tensor({2, 3, 3, 3}, rng), random_tensor({1, 3, 1, 1}, rng, 0.5, 1.5),
               random_tensor({1, 3, 1, 1}, rng)},
              tol);
  }
  {
    const std::uint64_t seed = rng();
    run.check("dropout train",
              [seed](Tape<double>& t, Inputs in) {
                Rng r(seed);
                return ops::dropout(t, in[0], 0.3, Mode::train, r);
              },
              {random_tensor(s, rng)}, tol);
  }
  run.check("concat_channels",
            [](Tape<double>& t, Inputs in) { return ops::concat_channels(t, in[0], in[1]); },
            {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 3, 3, 3}, rng)}, tol);
  run.check("slice_channels",
            [](Tape<double>& t, Inputs in) { return ops::slice_channels(t, in[0], 1, 2); },
            {random_tensor({2, 4, 3, 3}, rng)}, tol);

  run.check("mish", [](Tape<double>& t, Inputs in) { return ops::mish(t, in[0]); },
            {random_tensor(s, rng, -6.0, 6.0)}, tol);
  run.check("relu", [](Tape<double>& t, Inputs in) { return ops::relu(t, in[0]); },
            {off_zero(s, rng)}, tol);
  run.check("sigmoid", [](Tape<double>& t, Inputs in) { return ops::sigmoid(t, in[0]); },
            {random_tensor(s, rng, -6.0, 6.0)}, tol);
  run.check("softplus", [](Tape<double>& t, Inputs in) { return ops::softplus(t, in[0]); },
            {random_tensor(s, rng, -6.0, 6.0)}, tol);

  {
    const Shape f{2, 2, 3, 3};
    run.check("fuse",
              [](Tape<double>& t, Inputs in) {
                const std::vector<Td> xs{in[1], in[2], in[3]};
                return ops::fuse(t, in[0], std::span<const Td>(xs), 1e-4);
              },
              {random_tensor({3, 1, 1, 1}, rng, 0.2, 1.5), random_tensor(f, rng),
               random_tensor(f, rng), random_tensor(f, rng)},
              tol);
    Td w({3, 1, 1, 1}, std::vector<double>{0.8, -0.5, 1.2});
    run.check("fuse with a clipped weight",
              [](Tape<double>& t, Inputs in) {
                const std::vector<Td> xs{in[1], in[2], in[3]};
                return ops::fuse(t, in[0], std::span<const Td>(xs), 1e-4);
              },
              {w, random_tensor(f, rng), random_tensor(f, rng), random_tensor(f, rng)}, tol);
  }
  {
    Td target({2, 1, 4, 4});
    for (double& v : target.data()) v = uniform01(rng) < 0.3 ? 1.0 : 0.0;
    run.check("weighted_bce",
              [target](Tape<double>& t, Inputs in) {
                return weighted_bce(t, in[0], target, ClassWeight{3.5});
              },
              {random_tensor({2, 1, 4, 4}, rng, 0.05, 0.95)}, tol);
  }
}

void bifpn_case(Runner& run, Rng& rng, std::vector<std::size_t> channels, std::size_t width,
                std::size_t top) {
  auto net = std::make_shared<Bifpn<double>>(BifpnConfig{channels, width, 1e-4});
  std::vector<Td> inputs;
  for (auto& e : net->params().entries()) {
    if (e.kind != ParamKind::trainable) continue;
    if (e.name.find(".gamma") != std::string::npos) {
      for (double& v : e.value.data()) v = uniform(rng, 0.5, 1.5);
    } else if (e.name.find("fuse") != std::string::npos) {
      for (double& v : e.value.data()) v = uniform(rng, 0.3, 1.5);
    } else {
      for (double& v : e.value.data()) v = uniform(rng, -1.0, 1.0);
    }
    inputs.push_back(e.value);
  }
  const std::size_t n_params = inputs.size();
  std::size_t size = top;
  for (std::size_t c : channels) {
    inputs.push_back(random_tensor({2, c, size, size}, rng));
    size /= 2;
  }
  const std::uint64_t seed = rng();
  run.check("bifpn L=" + std::to_string(channels.size()),
            [net, n_params, seed](Tape<double>& t, Inputs in) {
              PyramidFeatures<double> f;
              for (std::size_t i = n_params; i < in.size(); ++i) f.levels.push_back(in[i]);
              return project_levels(t, net->forward(t, f, Mode::train), seed);
            },
            std::move(inputs), run.opts.op_tolerance);
}

void end_to_end_case(Runner& run, Rng& rng) {
  auto model = std::make_shared<UDetModel<double>>(build(VariantSpec::udet(), 32, 8));
  std::vector<Td> inputs;
  for (auto& e : model->params().entries()) {
    if (e.kind != ParamKind::trainable) continue;
    const bool gamma = e.name.find(".gamma") != std::string::npos;
    const bool fuse = e.name.find(".fuse") != std::string::npos;
    const double fan = static_cast<double>(e.value.numel()) / static_cast<double>(e.value.shape().n);
    const double limit = std::sqrt(3.0 / std::max(1.0, fan));
    for (double& v : e.value.data())
      v = gamma ? uniform(rng, 0.5, 1.5) : fuse ? uniform(rng, 0.3, 1.5) : uniform(rng, -limit, limit);
    inputs.push_back(e.value);
  }
  inputs.push_back(random_tensor({2, 1, 32, 32}, rng, 0.0, 1.0));
  Td target({2, 1, 32, 32});
  for (double& v : target.data()) v = uniform01(rng) < 0.2 ? 1.0 : 0.0;
  const std::uint64_t seed = rng();
  run.check("end-to-end udet 1/8 width 32x32",
            [model, target, seed](Tape<double>& t, Inputs in) {
              Rng drop(seed);
              const Td p = model->forward(t, in.back(), Mode::train, drop);
              return weighted_bce(t, p, target, ClassWeight{4.0});
            },
            std::move(inputs), run.opts.end_to_end_tolerance, run.opts.end_to_end_samples);
}

}  // namespace

std::vector<SuiteCase> run_gradient_suite(const SuiteOptions& options,
                                          const std::function<void(const SuiteCase&)>& on_case) {
  Runner run{options, on_case, {}};
  Rng rng(derive_seed(options.seed, {0x6772616473ULL}));
  primitive_cases(run, rng);
  bifpn_case(run, rng, {2, 3}, 2, 8);
  bifpn_case(run, rng, {2, 3, 4}, 3, 8);
  if (options.end_to_end) end_to_end_case(run, rng);
  return std::move(run.results);
}

}  // namespace udet
