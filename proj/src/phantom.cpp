#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "udet/data.hpp"

namespace udet {

namespace {

struct Ellipse {
  double cx, cy, a, b, theta = 0;

  // <= 1 inside.
  double level(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = dx * c + dy * s;
    const double v = -dx * s + dy * c;
    return (u * u) / (a * a) + (v * v) / (b * b);
  }
};

}  // namespace

Sample generate_phantom(Rng& rng, std::size_t size, const NoduleSpec& spec, std::string id) {
  if (size < 16) throw std::invalid_argument("phantom size must be >= 16");
  if (spec.radius_min <= 0 || spec.radius_max < spec.radius_min)
    throw std::invalid_argument("phantom: invalid radius range");
  if (spec.aspect_min <= 0 || spec.aspect_max > 1 || spec.aspect_max < spec.aspect_min)
    throw std::invalid_argument("phantom: aspect range must lie in (0, 1]");

  const double s = static_cast<double>(size);
  const Ellipse body{0.5 * s, 0.5 * s, 0.46 * s, 0.40 * s};
  const std::array<Ellipse, 2> lungs{Ellipse{0.30 * s, 0.50 * s, 0.15 * s, 0.28 * s},
                                     Ellipse{0.70 * s, 0.50 * s, 0.15 * s, 0.28 * s}};
  const double field_min = std::min(lungs[0].a, lungs[0].b);
  if (spec.count > 0 && spec.radius_max >= field_min)
    throw std::invalid_argument("phantom: nodule radius " + std::to_string(spec.radius_max) +
                                " does not fit a lung field of half-width " +
                                std::to_string(field_min));

  std::vector<double> noise(size * size);
  for (double& v : noise) v = uniform(rng, -1.0, 1.0);
  const auto texture = gaussian_smooth(noise, size, size, 1.5);

  Sample out;
  out.image = Image(size, size);
  out.mask = BinaryMask(size, size);
  out.meta.id = std::move(id);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x), py = static_cast<double>(y);
      double v = 0.02;
      if (body.level(px, py) <= 1) v = 0.55;
      for (const auto& l : lungs)
        if (l.level(px, py) <= 1) v = 0.12;
      out.image.at(y, x) = static_cast<float>(v + 0.25 * texture[y * size + x]);
    }

  double largest = 0;
  for (std::size_t k = 0; k < spec.count; ++k) {
    const double major = uniform(rng, spec.radius_min, spec.radius_max);
    const double minor = major * uniform(rng, spec.aspect_min, spec.aspect_max);
    const double theta = uniform(rng, 0.0, std::numbers::pi);
    const double intensity = uniform(rng, spec.intensity_min, spec.intensity_max);
    const Ellipse& lung = lungs[uniform01(rng) < 0.5 ? 0 : 1];

    double cx = 0, cy = 0;
    if (spec.attach_to_wall) {
      // Boundary point, then inward along the normal so the nodule touches the wall.
      const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double bx = lung.cx + lung.a * std::cos(phi);
      const double by = lung.cy + lung.b * std::sin(phi);
      double nx = std::cos(phi) / lung.a, ny = std::sin(phi) / lung.b;
      const double len = std::hypot(nx, ny);
      nx /= len;
      ny /= len;
      cx = bx - nx * major;
      cy = by - ny * major;
    } else {
      // Rejection-sample a centre whose disc of radius `major` stays in the field.
      const Ellipse inner{lung.cx, lung.cy, lung.a - major, lung.b - major};
      do {
        cx = uniform(rng, inner.cx - inner.a, inner.cx + inner.a);
        cy = uniform(rng, inner.cy - inner.b, inner.cy + inner.b);
      } while (inner.level(cx, cy) > 1);
    }

    const Ellipse nodule{cx, cy, major, minor, theta};
    const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(cy - major)));
    const auto y1 = static_cast<std::size_t>(std::min(s - 1, std::ceil(cy + major)));
    const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(cx - major)));
    const auto x1 = static_cast<std::size_t>(std::min(s - 1, std::ceil(cx + major)));
    for (std::size_t y = y0; y <= y1; ++y)
      for (std::size_t x = x0; x <= x1; ++x) {
        if (nodule.level(static_cast<double>(x), static_cast<double>(y)) > 1) continue;
        out.mask.at(y, x) = 1;
        out.image.at(y, x) = static_cast<float>(intensity + 0.1 * texture[y * size + x]);
      }
    largest = std::max(largest, 2.0 * std::sqrt(major * minor) * kPhantomSpacingMm);
  }

  for (float& p : out.image.pixels) p = std::clamp(p, 0.f, 1.f);
  if (spec.count > 0) out.meta.diameter_mm = largest;
  out.meta.attached = spec.count > 0 && spec.attach_to_wall;
  return out;
}

}  // namespace udet
