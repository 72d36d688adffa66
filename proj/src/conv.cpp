#include <algorithm>
#include <string>
#include <vector>

#include "udet/gemm.hpp"
#include "udet/ops.hpp"

namespace udet {

WindowGeometry window_geometry(std::size_t in, std::size_t kernel, std::size_t stride,
                               Padding padding) {
  if (stride == 0) throw std::invalid_argument("stride must be >= 1");
  if (padding == Padding::valid) {
    if (kernel > in)
      throw ShapeError("kernel " + std::to_string(kernel) + " larger than input " +
                       std::to_string(in));
    return {(in - kernel) / stride + 1, 0};
  }
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + kernel;
  const std::size_t total = needed > in ? needed - in : 0;
  return {out, total / 2};
}

namespace {

/// Geometry of a sliding window over an image of `channels` planes, producing
/// a grid of grid_h x grid_w window positions.
struct Lowering {
  std::size_t channels, img_h, img_w;
  std::size_t kh, kw, stride, pad_y, pad_x;
  std::size_t grid_h, grid_w;

  std::size_t rows() const { return channels * kh * kw; }
};

// Writes windows for grid rows [row0, row0 + nrows) into col[rows x nrows*grid_w].
template <typename T>
void im2col(const Lowering& g, const T* img, std::size_t row0, std::size_t nrows, T* col) {
  const std::size_t p = nrows * g.grid_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = img + c * g.img_h * g.img_w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* dst = col + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t r = 0; r < nrows; ++r) {
          const long iy = static_cast<long>((row0 + r) * g.stride + ki) - static_cast<long>(g.pad_y);
          T* out = dst + r * g.grid_w;
          if (iy < 0 || iy >= static_cast<long>(g.img_h)) {
            std::fill(out, out + g.grid_w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.img_w;
          for (std::size_t ox = 0; ox < g.grid_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad_x);
            out[ox] = (ix < 0 || ix >= static_cast<long>(g.img_w)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds col back into img.
template <typename T>
void col2im_add(const Lowering& g, const T* col, std::size_t row0, std::size_t nrows, T* img) {
  const std::size_t p = nrows * g.grid_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = img + c * g.img_h * g.img_w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* src = col + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t r = 0; r < nrows; ++r) {
          const long iy = static_cast<long>((row0 + r) * g.stride + ki) - static_cast<long>(g.pad_y);
          if (iy < 0 || iy >= static_cast<long>(g.img_h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.img_w;
          const T* in = src + r * g.grid_w;
          for (std::size_t ox = 0; ox < g.grid_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad_x);
            if (ix >= 0 && ix < static_cast<long>(g.img_w)) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

// Grid rows per tile so that one column buffer stays around 16 MiB.
template <typename T>
std::size_t tile_rows(const Lowering& g) {
  constexpr std::size_t budget = (std::size_t{16} << 20) / sizeof(T);
  const std::size_t per_row = std::max<std::size_t>(1, g.rows() * g.grid_w);
  return std::clamp<std::size_t>(budget / per_row, 1, g.grid_h);
}

bool is_pointwise(const Lowering& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad_x == 0 && g.pad_y == 0;
}

template <typename T>
void add_bias(std::span<T> out, const Shape& s, std::span<const T> bias) {
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      T* p = out.data() + (n * s.c + c) * s.plane();
      const T b = bias[c];
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] += b;
    }
}

template <typename T>
void bias_grad(std::span<const T> g, const Shape& s, std::span<T> db) {
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = g.data() + (n * s.c + c) * s.plane();
      T acc{0};
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      db[c] += acc;
    }
}

template <typename T>
void check_bias(const Conv2DSpec& spec, const Tensor<T>& bias, const char* op) {
  if (spec.bias != bias.defined())
    throw std::invalid_argument(std::string(op) + ": bias presence does not match spec");
  if (bias.defined() && bias.numel() != spec.out_channels)
    throw ShapeError(std::string(op) + ": bias has " + std::to_string(bias.numel()) +
                     " values, expected " + std::to_string(spec.out_channels));
}

}  // namespace

namespace ops {

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Conv2DSpec& spec,
                 const Tensor<T>& weight, const Tensor<T>& bias) {
  const Shape xs = x.shape();
  if (xs.c != spec.in_channels)
    throw ShapeError("conv2d: input " + xs.str() + " has " + std::to_string(xs.c) +
                     " channels, spec expects " + std::to_string(spec.in_channels));
  if (!(weight.shape() == spec.weight_shape()))
    throw ShapeError("conv2d: weight " + weight.shape().str() + " vs expected " +
                     spec.weight_shape().str());
  check_bias(spec, bias, "conv2d");

  const auto gy = window_geometry(xs.h, spec.kernel_h, spec.stride, spec.padding);
  const auto gx = window_geometry(xs.w, spec.kernel_w, spec.stride, spec.padding);
  const Lowering g{xs.c, xs.h, xs.w, spec.kernel_h, spec.kernel_w, spec.stride,
                   gy.pad_before, gx.pad_before, gy.out, gx.out};
  const Shape os{xs.n, spec.out_channels, gy.out, gx.out};
  Tensor<T> out(os);

  const std::size_t k = g.rows();
  const std::size_t cout = spec.out_channels;
  const bool pointwise = is_pointwise(g);
  const std::size_t tile = pointwise ? g.grid_h : tile_rows<T>(g);
  std::vector<T> col(pointwise ? 0 : k * tile * g.grid_w);

  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* img = x.data().data() + n * xs.c * xs.plane();
    T* dst = out.data().data() + n * cout * os.plane();
    for (std::size_t r0 = 0; r0 < g.grid_h; r0 += tile) {
      const std::size_t nr = std::min(tile, g.grid_h - r0);
      const std::size_t p = nr * g.grid_w;
      const T* cols = img;
      if (!pointwise) {
        im2col(g, img, r0, nr, col.data());
        cols = col.data();
      }
      gemm<T>(false, false, cout, p, k, T{1}, weight.data().data(), k, cols, p, T{0},
              dst + r0 * g.grid_w, os.plane());
    }
  }
  if (bias.defined()) add_bias<T>(out.data(), os, bias.data());

  return tape.record(
      "conv2d", {x, weight, bias}, out,
      [x = x, weight = weight, bias = bias, g, os, k, cout, pointwise, tile](std::span<const T> gout) mutable {
        const Shape xs = x.shape();
        std::span<T> dx = x.requires_grad() ? x.grad_buffer() : std::span<T>{};
        std::span<T> dw = weight.requires_grad() ? weight.grad_buffer() : std::span<T>{};
        if (bias.defined() && bias.requires_grad()) bias_grad<T>(gout, os, bias.grad_buffer());
        if (dx.empty() && dw.empty()) return;

        std::vector<T> col(pointwise ? 0 : k * tile * g.grid_w);
        std::vector<T> dcol(dx.empty() || pointwise ? 0 : k * tile * g.grid_w);
        for (std::size_t n = 0; n < xs.n; ++n) {
          const T* img = x.data().data() + n * xs.c * xs.plane();
          const T* go = gout.data() + n * cout * os.plane();
          for (std::size_t r0 = 0; r0 < g.grid_h; r0 += tile) {
            const std::size_t nr = std::min(tile, g.grid_h - r0);
            const std::size_t p = nr * g.grid_w;
            const T* gtile = go + r0 * g.grid_w;
            if (!dw.empty()) {
              const T* cols = img;
              if (!pointwise) {
                im2col(g, img, r0, nr, col.data());
                cols = col.data();
              }
              gemm<T>(false, true, cout, k, p, T{1}, gtile, os.plane(), cols, p, T{1}, dw.data(),
                      k);
            }
            if (!dx.empty()) {
              T* dimg = dx.data() + n * xs.c * xs.plane();
              if (pointwise) {
                gemm<T>(true, false, k, p, cout, T{1}, weight.data().data(), k, gtile, os.plane(),
                        T{1}, dimg, xs.plane());
              } else {
                gemm<T>(true, false, k, p, cout, T{1}, weight.data().data(), k, gtile, os.plane(),
                        T{0}, dcol.data(), p);
                col2im_add(g, dcol.data(), r0, nr, dimg);
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> transposed_conv2d(Tape<T>& tape, const Tensor<T>& x, const Conv2DSpec& spec,
                            const Tensor<T>& weight, const Tensor<T>& bias) {
  const Shape xs = x.shape();
  if (xs.c != spec.in_channels)
    throw ShapeError("transposed_conv2d: input " + xs.str() + " has " + std::to_string(xs.c) +
                     " channels, spec expects " + std::to_string(spec.in_channels));
  if (!(weight.shape() == spec.transposed_weight_shape()))
    throw ShapeError("transposed_conv2d: weight " + weight.shape().str() + " vs expected " +
                     spec.transposed_weight_shape().str());
  check_bias(spec, bias, "transposed_conv2d");

  const std::size_t s = spec.stride;
  const Shape os{xs.n, spec.out_channels, (xs.h - 1) * s + spec.kernel_h,
                 (xs.w - 1) * s + spec.kernel_w};
  // The output plays the role of the image being lowered; the input is the grid.
  const Lowering g{spec.out_channels, os.h, os.w, spec.kernel_h, spec.kernel_w, s, 0, 0,
                   xs.h, xs.w};
  const std::size_t rows = g.rows();
  const std::size_t cin = xs.c;
  Tensor<T> out(os);
  std::vector<T> col(rows * xs.plane());

  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* src = x.data().data() + n * cin * xs.plane();
    gemm<T>(true, false, rows, xs.plane(), cin, T{1}, weight.data().data(), rows, src,
            xs.plane(), T{0}, col.data(), xs.plane());
    col2im_add(g, col.data(), 0, xs.h, out.data().data() + n * os.c * os.plane());
  }
  if (bias.defined()) add_bias<T>(out.data(), os, bias.data());

  return tape.record(
      "transposed_conv2d", {x, weight, bias}, out,
      [x = x, weight = weight, bias = bias, g, os, rows, cin](std::span<const T> gout) mutable {
        const Shape xs = x.shape();
        if (bias.defined() && bias.requires_grad()) bias_grad<T>(gout, os, bias.grad_buffer());
        std::span<T> dx = x.requires_grad() ? x.grad_buffer() : std::span<T>{};
        std::span<T> dw = weight.requires_grad() ? weight.grad_buffer() : std::span<T>{};
        if (dx.empty() && dw.empty()) return;
        std::vector<T> col(rows * xs.plane());
        for (std::size_t n = 0; n < xs.n; ++n) {
          im2col(g, gout.data() + n * os.c * os.plane(), 0, xs.h, col.data());
          if (!dx.empty())
            gemm<T>(false, false, cin, xs.plane(), rows, T{1}, weight.data().data(), rows,
                    col.data(), xs.plane(), T{1}, dx.data() + n * cin * xs.plane(), xs.plane());
          if (!dw.empty())
            gemm<T>(false, true, cin, rows, xs.plane(), T{1},
                    x.data().data() + n * cin * xs.plane(), xs.plane(), col.data(), xs.plane(),
                    T{1}, dw.data(), rows);
        }
      });
}

template <typename T>
Tensor<T> depthwise_conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight) {
  const Shape xs = x.shape();
  if (!(weight.shape() == Shape{xs.c, 1, 3, 3}))
    throw ShapeError("depthwise_conv2d: input " + xs.str() + " needs weight (" +
                     std::to_string(xs.c) + ",1,3,3), got " + weight.shape().str());
  const long h = static_cast<long>(xs.h);
  const long w = static_cast<long>(xs.w);
  Tensor<T> out(xs);
  auto od = out.data();
  auto xd = x.data();
  auto wd = weight.data();
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T* k = wd.data() + c * 9;
      const T* src = xd.data() + (n * xs.c + c) * xs.plane();
      T* dst = od.data() + (n * xs.c + c) * xs.plane();
      for (long y = 0; y < h; ++y)
        for (long xx = 0; xx < w; ++xx) {
          T acc{0};
          for (long i = -1; i <= 1; ++i) {
            const long iy = y + i;
            if (iy < 0 || iy >= h) continue;
            for (long j = -1; j <= 1; ++j) {
              const long ix = xx + j;
              if (ix < 0 || ix >= w) continue;
              acc += k[(i + 1) * 3 + (j + 1)] * src[iy * w + ix];
            }
          }
          dst[y * w + xx] = acc;
        }
    }

  return tape.record("depthwise_conv2d", {x, weight}, out,
                     [x = x, weight = weight, h, w](std::span<const T> gout) mutable {
                       const Shape xs = x.shape();
                       std::span<T> dx = x.requires_grad() ? x.grad_buffer() : std::span<T>{};
                       std::span<T> dw =
                           weight.requires_grad() ? weight.grad_buffer() : std::span<T>{};
                       auto xd = x.data();
                       auto wd = weight.data();
                       for (std::size_t n = 0; n < xs.n; ++n)
                         for (std::size_t c = 0; c < xs.c; ++c) {
                           const std::size_t base = (n * xs.c + c) * xs.plane();
                           const T* go = gout.data() + base;
                           const T* src = xd.data() + base;
                           const T* k = wd.data() + c * 9;
                           for (long y = 0; y < h; ++y)
                             for (long xx = 0; xx < w; ++xx) {
                               const T g = go[y * w + xx];
                               for (long i = -1; i <= 1; ++i) {
                                 const long iy = y + i;
                                 if (iy < 0 || iy >= h) continue;
                                 for (long j = -1; j <= 1; ++j) {
                                   const long ix = xx + j;
                                   if (ix < 0 || ix >= w) continue;
                                   const long ki = (i + 1) * 3 + (j + 1);
                                   if (!dw.empty()) dw[c * 9 + ki] += g * src[iy * w + ix];
                                   if (!dx.empty()) dx[base + iy * w + ix] += g * k[ki];
                                 }
                               }
                             }
                         }
                     });
}

#define UDET_INSTANTIATE(T)                                                                  \
  template Tensor<T> conv2d(Tape<T>&, const Tensor<T>&, const Conv2DSpec&, const Tensor<T>&, \
                            const Tensor<T>&);                                               \
  template Tensor<T> transposed_conv2d(Tape<T>&, const Tensor<T>&, const Conv2DSpec&,        \
                                       const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> depthwise_conv2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&);
UDET_INSTANTIATE(float)
UDET_INSTANTIATE(double)
#undef UDET_INSTANTIATE

}  // namespace ops
}  // namespace udet
