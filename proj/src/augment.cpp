#include <algorithm>
#include <cmath>
#include <numbers>

#include "udet/data.hpp"

namespace udet {

AugmentSpec AugmentSpec::all() {
  AugmentSpec s;
  s.flip_h = s.flip_v = s.shift = s.rotate = s.zoom = s.shear = s.elastic = s.salt_pepper = true;
  return s;
}

bool AugmentSpec::any_enabled() const {
  return flip_h || flip_v || shift || rotate || zoom || shear || elastic || salt_pepper;
}

void AugmentSpec::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("augment: ") + what);
  };
  require(probability >= 0 && probability <= 1, "probability must be in [0, 1]");
  require(max_shift >= 0 && max_shift <= 0.10, "shift must be within 10% of the size");
  require(max_rotate_deg >= 0 && max_rotate_deg <= 15, "rotation must be within 15 degrees");
  require(zoom_min >= 0.9 && zoom_max <= 1.1 && zoom_min <= zoom_max, "zoom must be in [0.9, 1.1]");
  require(max_shear_deg >= 0 && max_shear_deg <= 10, "shear must be within 10 degrees");
  require(elastic_alpha >= 0 && elastic_sigma > 0, "elastic needs alpha >= 0 and sigma > 0");
  require(max_salt_pepper >= 0 && max_salt_pepper <= 0.02, "salt-pepper density must be in [0, 0.02]");
}

std::vector<double> gaussian_smooth(const std::vector<double>& field, std::size_t height,
                                    std::size_t width, double sigma) {
  const long radius = std::max(1L, static_cast<long>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0;
  for (long i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (double& k : kernel) k /= total;

  const long h = static_cast<long>(height), w = static_cast<long>(width);
  std::vector<double> tmp(field.size()), out(field.size());
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0;
      for (long i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * field[y * w + std::clamp(x + i, 0L, w - 1)];
      tmp[y * w + x] = acc;
    }
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0;
      for (long i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * tmp[std::clamp(y + i, 0L, h - 1) * w + x];
      out[y * w + x] = acc;
    }
  return out;
}

namespace {

// Zero outside the image.
float bilinear(const std::vector<float>& src, std::size_t height, std::size_t width, double x,
               double y) {
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
  const double fx = x - fx0, fy = y - fy0;
  auto px = [&](long yy, long xx) -> double {
    if (yy < 0 || xx < 0 || yy >= static_cast<long>(height) || xx >= static_cast<long>(width))
      return 0.0;
    return src[static_cast<std::size_t>(yy) * width + static_cast<std::size_t>(xx)];
  };
  const double top = (1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1);
  const double bottom = (1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1);
  return static_cast<float>((1 - fy) * top + fy * bottom);
}

/// Output pixel (x, y) samples the source at warp(x, y).
struct Warp {
  // Inverse affine about the image centre, then an optional displacement field.
  double m00 = 1, m01 = 0, m10 = 0, m11 = 1;
  double tx = 0, ty = 0;
  double cx = 0, cy = 0;
  std::vector<double> dx, dy;
};

struct Resampled {
  Image image;
  BinaryMask mask;
};

Resampled resample(const Image& image, const BinaryMask& mask, const Warp& warp) {
  const std::size_t h = image.height, w = image.width;
  std::vector<float> mask_f(mask.values.begin(), mask.values.end());
  Resampled r{Image(h, w), BinaryMask(h, w)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      const double ox = static_cast<double>(x) - warp.cx - warp.tx;
      const double oy = static_cast<double>(y) - warp.cy - warp.ty;
      double sx = warp.cx + warp.m00 * ox + warp.m01 * oy;
      double sy = warp.cy + warp.m10 * ox + warp.m11 * oy;
      if (!warp.dx.empty()) {
        sx += warp.dx[i];
        sy += warp.dy[i];
      }
      r.image.pixels[i] = bilinear(image.pixels, h, w, sx, sy);
      r.mask.values[i] = bilinear(mask_f, h, w, sx, sy) >= 0.5f ? 1 : 0;
    }
  return r;
}

void displacement(Warp& warp, std::size_t h, std::size_t w, double alpha, double sigma, Rng& rng) {
  std::vector<double> nx(h * w), ny(h * w);
  for (double& v : nx) v = uniform(rng, -1.0, 1.0);
  for (double& v : ny) v = uniform(rng, -1.0, 1.0);
  warp.dx = gaussian_smooth(nx, h, w, sigma);
  warp.dy = gaussian_smooth(ny, h, w, sigma);
  for (double& v : warp.dx) v *= alpha;
  for (double& v : warp.dy) v *= alpha;
}

template <typename V>
void flip_rows(std::vector<V>& v, std::size_t h, std::size_t w) {
  for (std::size_t y = 0; y < h; ++y) std::reverse(v.begin() + y * w, v.begin() + (y + 1) * w);
}

template <typename V>
void flip_cols(std::vector<V>& v, std::size_t h, std::size_t w) {
  for (std::size_t y = 0; y < h / 2; ++y)
    std::swap_ranges(v.begin() + y * w, v.begin() + (y + 1) * w, v.begin() + (h - 1 - y) * w);
}

// Forward map A = R * Sh * Z about the centre plus translation; sampled with A^-1.
Warp affine_warp(std::size_t h, std::size_t w, const AffineParams& p) {
  const double rad = std::numbers::pi / 180.0;
  const double c = std::cos(p.rotate_deg * rad), s = std::sin(p.rotate_deg * rad);
  const double k = std::tan(p.shear_deg * rad);
  const double a00 = c * p.zoom, a01 = (c * k - s) * p.zoom;
  const double a10 = s * p.zoom, a11 = (s * k + c) * p.zoom;
  const double det = a00 * a11 - a01 * a10;
  Warp warp;
  warp.m00 = a11 / det;
  warp.m01 = -a01 / det;
  warp.m10 = -a10 / det;
  warp.m11 = a00 / det;
  warp.tx = p.shift_x;
  warp.ty = p.shift_y;
  warp.cx = 0.5 * static_cast<double>(w - 1);
  warp.cy = 0.5 * static_cast<double>(h - 1);
  return warp;
}

}  // namespace

Sample apply_affine(const Sample& sample, const AffineParams& params) {
  if (!(params.zoom > 0)) throw std::invalid_argument("apply_affine: zoom must be positive");
  if (sample.image.height != sample.mask.height || sample.image.width != sample.mask.width)
    throw std::invalid_argument("apply_affine: image and mask sizes differ");
  Sample out = sample;
  auto r = resample(sample.image, sample.mask, affine_warp(sample.image.height, sample.image.width, params));
  out.image = std::move(r.image);
  out.mask = std::move(r.mask);
  return out;
}

Image salt_pepper(const Image& image, double density, Rng& rng) {
  if (!(density >= 0 && density <= 0.5))
    throw std::invalid_argument("salt_pepper: density must be in [0, 0.5]");
  Image out = image;
  if (density == 0) return out;
  for (float& p : out.pixels) {
    const double u = uniform01(rng);
    if (u < density) p = uniform01(rng) < 0.5 ? 0.f : 1.f;
  }
  return out;
}

ElasticResult elastic_deform(const Image& image, const BinaryMask& mask, double alpha,
                             double sigma, Rng& rng) {
  if (alpha < 0 || sigma <= 0)
    throw std::invalid_argument("elastic_deform: need alpha >= 0 and sigma > 0");
  if (alpha == 0) return {image, mask};
  Warp warp;
  displacement(warp, image.height, image.width, alpha, sigma, rng);
  auto r = resample(image, mask, warp);
  return {std::move(r.image), std::move(r.mask)};
}

Sample augment(const Sample& sample, const AugmentSpec& spec, Rng& rng) {
  spec.validate();
  if (sample.image.height != sample.mask.height || sample.image.width != sample.mask.width)
    throw std::invalid_argument("augment: image and mask sizes differ");
  Sample out = sample;
  const std::size_t h = out.image.height, w = out.image.width;

  // Every op draws its coin and parameters whether or not it is enabled, so
  // toggling one op does not shift the random stream of the others.
  auto pick = [&](bool enabled) { return uniform01(rng) < spec.probability && enabled; };

  if (pick(spec.flip_h)) {
    flip_rows(out.image.pixels, h, w);
    flip_rows(out.mask.values, h, w);
  }
  if (pick(spec.flip_v)) {
    flip_cols(out.image.pixels, h, w);
    flip_cols(out.mask.values, h, w);
  }

  const bool do_shift = pick(spec.shift);
  const double tx = uniform(rng, -spec.max_shift, spec.max_shift) * static_cast<double>(w);
  const double ty = uniform(rng, -spec.max_shift, spec.max_shift) * static_cast<double>(h);
  const bool do_rotate = pick(spec.rotate);
  const double angle = uniform(rng, -spec.max_rotate_deg, spec.max_rotate_deg);
  const bool do_zoom = pick(spec.zoom);
  const double zoom = uniform(rng, spec.zoom_min, spec.zoom_max);
  const bool do_shear = pick(spec.shear);
  const double shear = uniform(rng, -spec.max_shear_deg, spec.max_shear_deg);
  const bool do_elastic = pick(spec.elastic);
  const bool do_noise = pick(spec.salt_pepper);
  const double density = uniform(rng, 0.0, spec.max_salt_pepper);
  Rng elastic_rng(rng());
  Rng noise_rng(rng());

  if (do_shift || do_rotate || do_zoom || do_shear || do_elastic) {
    Warp warp = affine_warp(h, w, AffineParams{do_rotate ? angle : 0.0, do_shear ? shear : 0.0,
                                               do_zoom ? zoom : 1.0, do_shift ? tx : 0.0,
                                               do_shift ? ty : 0.0});
    if (do_elastic) displacement(warp, h, w, spec.elastic_alpha, spec.elastic_sigma, elastic_rng);
    auto r = resample(out.image, out.mask, warp);
    out.image = std::move(r.image);
    out.mask = std::move(r.mask);
  }
  if (do_noise) out.image = salt_pepper(out.image, density, noise_rng);
  return out;
}

}  // namespace udet
