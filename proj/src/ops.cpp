#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "udet/ops.hpp"

namespace udet {

const char* to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::mish: return "mish";
    case ActivationKind::relu: return "relu";
    case ActivationKind::sigmoid: return "sigmoid";
    case ActivationKind::softplus: return "softplus";
    case ActivationKind::identity: return "identity";
  }
  return "?";
}

namespace ops {

namespace {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
}

// Elementwise op y = f(x) whose derivative is computed from (x, y).
template <typename T, typename F, typename D>
Tensor<T> unary(Tape<T>& tape, const char* name, const Tensor<T>& x, F f, D df) {
  Tensor<T> out(x.shape());
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = f(xd[i]);
  Tensor<T> y = out;
  return tape.record(name, {x}, out, [x, y, df](std::span<const T> g) mutable {
    if (!x.requires_grad()) return;
    auto dx = x.grad_buffer();
    auto xd = x.data();
    auto yd = y.data();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * df(xd[i], yd[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  Tensor<T> out(a.shape());
  auto ad = a.data(), bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  return tape.record("add", {a, b}, out, [a, b](std::span<const T> g) mutable {
    for (const Tensor<T>* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto d = t->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  Tensor<T> out(a.shape());
  auto ad = a.data(), bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  return tape.record("mul", {a, b}, out, [a, b](std::span<const T> g) mutable {
    if (a.requires_grad()) {
      auto d = a.grad_buffer();
      auto bd = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bd[i];
    }
    if (b.requires_grad()) {
      auto d = b.grad_buffer();
      auto ad = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * ad[i];
    }
  });
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor) {
  return unary(
      tape, "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  double acc = 0;
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  return tape.record("sum", {x}, out, [x](std::span<const T> g) mutable {
    if (!x.requires_grad()) return;
    for (T& d : x.grad_buffer()) d += g[0];
  });
}

template <typename T>
Tensor<T> maxpool2d(Tape<T>& tape, const Tensor<T>& x) {
  const Shape xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0)
    throw ShapeError("maxpool2d: spatial dims must be even, got " + xs.str());
  const Shape os{xs.n, xs.c, xs.h / 2, xs.w / 2};
  Tensor<T> out(os);
  std::vector<std::uint32_t> argmax(os.numel());
  auto xd = x.data();
  auto od = out.data();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const std::size_t base = nc * xs.plane();
    for (std::size_t y = 0; y < os.h; ++y)
      for (std::size_t xx = 0; xx < os.w; ++xx, ++o) {
        std::size_t best = base + (2 * y) * xs.w + 2 * xx;
        // Row-major scan; strict > keeps the first maximum on ties.
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) {
            const std::size_t idx = base + (2 * y + a) * xs.w + 2 * xx + b;
            if (xd[idx] > xd[best]) best = idx;
          }
        od[o] = xd[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
  }
  return tape.record("maxpool2d", {x}, out, [x, argmax](std::span<const T> g) mutable {
    if (!x.requires_grad()) return;
    auto dx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dx[argmax[i]] += g[i];
  });
}

template <typename T>
Tensor<T> upsample2x_nearest(Tape<T>& tape, const Tensor<T>& x) {
  const Shape xs = x.shape();
  const Shape os{xs.n, xs.c, xs.h * 2, xs.w * 2};
  Tensor<T> out(os);
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc)
    for (std::size_t y = 0; y < os.h; ++y)
      for (std::size_t xx = 0; xx < os.w; ++xx)
        od[nc * os.plane() + y * os.w + xx] = xd[nc * xs.plane() + (y / 2) * xs.w + xx / 2];
  return tape.record("upsample2x_nearest", {x}, out, [x, os](std::span<const T> g) mutable {
    if (!x.requires_grad()) return;
    const Shape xs = x.shape();
    auto dx = x.grad_buffer();
    for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc)
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t xx = 0; xx < os.w; ++xx)
          dx[nc * xs.plane() + (y / 2) * xs.w + xx / 2] += g[nc * os.plane() + y * os.w + xx];
  });
}

template <typename T>
Tensor<T> batchnorm2d(Tape<T>& tape, const Tensor<T>& x, const BatchNormSpec& spec,
                      BatchNormState<T>& state, Mode mode) {
  const Shape xs = x.shape();
  if (xs.c != spec.channels)
    throw ShapeError("batchnorm2d: input " + xs.str() + " has " + std::to_string(xs.c) +
                     " channels, spec expects " + std::to_string(spec.channels));
  const std::size_t count = xs.n * xs.plane();
  if (mode == Mode::train && count < 2)
    throw ShapeError("batchnorm2d: train mode needs batch*height*width >= 2, got " + xs.str());

  const std::size_t c = xs.c;
  std::vector<T> mean(c), inv_std(c);
  auto xd = x.data();
  if (mode == Mode::train) {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0, ss = 0;
      for (std::size_t n = 0; n < xs.n; ++n) {
        const T* p = xd.data() + (n * c + ch) * xs.plane();
        for (std::size_t i = 0; i < xs.plane(); ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      for (std::size_t n = 0; n < xs.n; ++n) {
        const T* p = xd.data() + (n * c + ch) * xs.plane();
        for (std::size_t i = 0; i < xs.plane(); ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + spec.epsilon));
      rm[ch] = static_cast<T>(spec.momentum * rm[ch] + (1.0 - spec.momentum) * mu);
      rv[ch] = static_cast<T>(spec.momentum * rv[ch] + (1.0 - spec.momentum) * var);
    }
  } else {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[ch]) + spec.epsilon));
    }
  }

  Tensor<T> out(xs);
  Tensor<T> xhat(xs);
  auto od = out.data();
  auto hd = xhat.data();
  auto gd = state.gamma.data();
  auto bd = state.beta.data();
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (n * c + ch) * xs.plane();
      for (std::size_t i = 0; i < xs.plane(); ++i) {
        const T v = (xd[base + i] - mean[ch]) * inv_std[ch];
        hd[base + i] = v;
        od[base + i] = gd[ch] * v + bd[ch];
      }
    }

  Tensor<T> gamma = state.gamma;
  Tensor<T> beta = state.beta;
  return tape.record(
      "batchnorm2d", {x, gamma, beta}, out,
      [x, gamma, beta, xhat, inv_std, mode, count](std::span<const T> g) mutable {
        const Shape xs = x.shape();
        const std::size_t c = xs.c;
        auto hd = xhat.data();
        std::vector<double> sum_g(c, 0.0), sum_gh(c, 0.0);
        for (std::size_t n = 0; n < xs.n; ++n)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (n * c + ch) * xs.plane();
            for (std::size_t i = 0; i < xs.plane(); ++i) {
              sum_g[ch] += g[base + i];
              sum_gh[ch] += g[base + i] * hd[base + i];
            }
          }
        if (gamma.requires_grad()) {
          auto d = gamma.grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) d[ch] += static_cast<T>(sum_gh[ch]);
        }
        if (beta.requires_grad()) {
          auto d = beta.grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) d[ch] += static_cast<T>(sum_g[ch]);
        }
        if (!x.requires_grad()) return;
        auto dx = x.grad_buffer();
        auto gd = gamma.data();
        const double m = static_cast<double>(count);
        for (std::size_t n = 0; n < xs.n; ++n)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (n * c + ch) * xs.plane();
            const double k = static_cast<double>(gd[ch]) * inv_std[ch];
            if (mode == Mode::infer) {
              for (std::size_t i = 0; i < xs.plane(); ++i)
                dx[base + i] += static_cast<T>(k * g[base + i]);
              continue;
            }
            const double mg = sum_g[ch] / m;
            const double mgh = sum_gh[ch] / m;
            for (std::size_t i = 0; i < xs.plane(); ++i)
              dx[base + i] += static_cast<T>(k * (g[base + i] - mg - hd[base + i] * mgh));
          }
      });
}

template <typename T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::infer || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  for (T& m : mask) m = uniform01(rng) < rate ? T{0} : keep_scale;
  Tensor<T> out(x.shape());
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] * mask[i];
  return tape.record("dropout", {x}, out, [x, mask](std::span<const T> g) mutable {
    if (!x.requires_grad()) return;
    auto dx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
  });
}

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape as = a.shape(), bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w)
    throw ShapeError("concat_channels: batch/spatial mismatch " + as.str() + " vs " + bs.str());
  const Shape os{as.n, as.c + bs.c, as.h, as.w};
  Tensor<T> out(os);
  auto od = out.data();
  const std::size_t la = as.c * as.plane(), lb = bs.c * bs.plane();
  for (std::size_t n = 0; n < as.n; ++n) {
    std::copy_n(a.data().data() + n * la, la, od.data() + n * (la + lb));
    std::copy_n(b.data().data() + n * lb, lb, od.data() + n * (la + lb) + la);
  }
  return tape.record("concat_channels", {a, b}, out, [a, b, la, lb](std::span<const T> g) mutable {
    const std::size_t batch = a.shape().n;
    if (a.requires_grad()) {
      auto d = a.grad_buffer();
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < la; ++i) d[n * la + i] += g[n * (la + lb) + i];
    }
    if (b.requires_grad()) {
      auto d = b.grad_buffer();
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < lb; ++i) d[n * lb + i] += g[n * (la + lb) + la + i];
    }
  });
}

template <typename T>
Tensor<T> slice_channels(Tape<T>& tape, const Tensor<T>& x, std::size_t begin, std::size_t count) {
  const Shape xs = x.shape();
  if (count == 0 || begin + count > xs.c)
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + xs.str());
  const Shape os{xs.n, count, xs.h, xs.w};
  Tensor<T> out(os);
  const std::size_t len = count * xs.plane();
  for (std::size_t n = 0; n < xs.n; ++n)
    std::copy_n(x.data().data() + (n * xs.c + begin) * xs.plane(), len,
                out.data().data() + n * len);
  return tape.record("slice_channels", {x}, out, [x, begin, len](std::span<const T> g) mutable {
    if (!x.requires_grad()) return;
    const Shape xs = x.shape();
    auto dx = x.grad_buffer();
    for (std::size_t n = 0; n < xs.n; ++n)
      for (std::size_t i = 0; i < len; ++i)
        dx[(n * xs.c + begin) * xs.plane() + i] += g[n * len + i];
  });
}

template <typename T>
Tensor<T> mish(Tape<T>& tape, const Tensor<T>& x) {
  return unary(
      tape, "mish", x, [](T v) { return static_cast<T>(mish_value(v)); },
      [](T v, T) { return static_cast<T>(mish_derivative(v)); });
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  return unary(
      tape, "relu", x, [](T v) { return v > T{0} ? v : T{0}; },
      [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  return unary(
      tape, "sigmoid", x, [](T v) { return static_cast<T>(sigmoid_value(v)); },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Tensor<T> softplus(Tape<T>& tape, const Tensor<T>& x) {
  return unary(
      tape, "softplus", x, [](T v) { return static_cast<T>(softplus_value(v)); },
      [](T v, T) { return static_cast<T>(sigmoid_value(v)); });
}

template <typename T>
Tensor<T> activation(Tape<T>& tape, const Tensor<T>& x, ActivationKind kind) {
  switch (kind) {
    case ActivationKind::mish: return mish(tape, x);
    case ActivationKind::relu: return relu(tape, x);
    case ActivationKind::sigmoid: return sigmoid(tape, x);
    case ActivationKind::softplus: return softplus(tape, x);
    case ActivationKind::identity: return x;
  }
  return x;
}

template <typename T>
Tensor<T> fuse(Tape<T>& tape, const Tensor<T>& weights, std::span<const Tensor<T>> inputs,
               double eps) {
  if (inputs.empty()) throw std::invalid_argument("fuse: no inputs");
  if (weights.numel() != inputs.size())
    throw std::invalid_argument("fuse: " + std::to_string(weights.numel()) + " weights for " +
                                std::to_string(inputs.size()) + " inputs");
  for (const auto& in : inputs) require_same_shape("fuse", inputs[0], in);

  const std::size_t k = inputs.size();
  auto wd = weights.data();
  double total = 0;
  std::vector<double> r(k);
  for (std::size_t i = 0; i < k; ++i) {
    r[i] = wd[i] > T{0} ? static_cast<double>(wd[i]) : 0.0;
    total += r[i];
  }
  const double denom = eps + total;
  std::vector<T> coeff(k);
  for (std::size_t i = 0; i < k; ++i) coeff[i] = static_cast<T>(r[i] / denom);

  Tensor<T> out(inputs[0].shape());
  auto od = out.data();
  for (std::size_t i = 0; i < k; ++i) {
    auto id = inputs[i].data();
    for (std::size_t j = 0; j < od.size(); ++j) od[j] += coeff[i] * id[j];
  }

  std::vector<Tensor<T>> recorded{weights};
  recorded.insert(recorded.end(), inputs.begin(), inputs.end());
  std::vector<Tensor<T>> ins(inputs.begin(), inputs.end());
  Tensor<T> w = weights;
  return tape.record(
      "fuse", std::move(recorded), out,
      [w, ins, coeff, r, denom](std::span<const T> g) mutable {
        const std::size_t k = ins.size();
        std::vector<double> dcoeff(k, 0.0);
        for (std::size_t i = 0; i < k; ++i) {
          auto id = ins[i].data();
          if (w.requires_grad())
            for (std::size_t j = 0; j < g.size(); ++j) dcoeff[i] += g[j] * id[j];
          if (ins[i].requires_grad()) {
            auto d = ins[i].grad_buffer();
            for (std::size_t j = 0; j < g.size(); ++j) d[j] += coeff[i] * g[j];
          }
        }
        if (!w.requires_grad()) return;
        // c_i = r_i / denom  =>  dc_i/dr_j = [i==j]/denom - r_i/denom^2
        double cross = 0;
        for (std::size_t i = 0; i < k; ++i) cross += dcoeff[i] * r[i];
        cross /= denom * denom;
        auto dw = w.grad_buffer();
        auto wd = w.data();
        for (std::size_t j = 0; j < k; ++j)
          if (wd[j] > T{0}) dw[j] += static_cast<T>(dcoeff[j] / denom - cross);
      });
}

#define UDET_INSTANTIATE(T)                                                                      \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                       \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                            \
  template Tensor<T> maxpool2d(Tape<T>&, const Tensor<T>&);                                      \
  template Tensor<T> upsample2x_nearest(Tape<T>&, const Tensor<T>&);                             \
  template Tensor<T> batchnorm2d(Tape<T>&, const Tensor<T>&, const BatchNormSpec&,               \
                                 BatchNormState<T>&, Mode);                                      \
  template Tensor<T> dropout(Tape<T>&, const Tensor<T>&, double, Mode, Rng&);                    \
  template Tensor<T> concat_channels(Tape<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> slice_channels(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t);       \
  template Tensor<T> mish(Tape<T>&, const Tensor<T>&);                                           \
  template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                           \
  template Tensor<T> sigmoid(Tape<T>&, const Tensor<T>&);                                        \
  template Tensor<T> softplus(Tape<T>&, const Tensor<T>&);                                       \
  template Tensor<T> activation(Tape<T>&, const Tensor<T>&, ActivationKind);                     \
  template Tensor<T> fuse(Tape<T>&, const Tensor<T>&, std::span<const Tensor<T>>, double);
UDET_INSTANTIATE(float)
UDET_INSTANTIATE(double)
#undef UDET_INSTANTIATE

}  // namespace ops
}  // namespace udet
