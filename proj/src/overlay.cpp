#include "udet/overlay.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace udet {

BinaryMask contour(const BinaryMask& mask) {
  BinaryMask out(mask.height, mask.width);
  const long h = static_cast<long>(mask.height), w = static_cast<long>(mask.width);
  auto inside = [&](long y, long x) {
    return y >= 0 && x >= 0 && y < h && x < w && mask.values[static_cast<std::size_t>(y * w + x)];
  };
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      if (inside(y, x) && !(inside(y - 1, x) && inside(y + 1, x) && inside(y, x - 1) && inside(y, x + 1)))
        out.values[static_cast<std::size_t>(y * w + x)] = 1;
  return out;
}

std::vector<std::uint8_t> render_overlay(const Image& image, const BinaryMask* truth,
                                         const BinaryMask& prediction) {
  if (prediction.height != image.height || prediction.width != image.width ||
      (truth && (truth->height != image.height || truth->width != image.width)))
    throw std::invalid_argument("render_overlay: image and masks differ in size");
  std::vector<std::uint8_t> gray(image.pixels.size());
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const double p = std::clamp(static_cast<double>(image.pixels[i]), 0.0, 1.0);
    gray[i] = static_cast<std::uint8_t>(32 + std::lround(p * 191.0));
  }
  const BinaryMask pc = contour(prediction);
  const BinaryMask gc = truth ? contour(*truth) : BinaryMask(image.height, image.width);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    if (gc.values[i] && pc.values[i]) gray[i] = kSharedContour;
    else if (gc.values[i]) gray[i] = kGtContour;
    else if (pc.values[i]) gray[i] = kPredContour;
  }
  return gray;
}

void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& gray) {
  if (gray.size() != height * width) throw std::invalid_argument("write_ppm: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << width << ' ' << height << "\n255\n";
  for (std::uint8_t g : gray) {
    const char px[3] = {static_cast<char>(g), static_cast<char>(g), static_cast<char>(g)};
    out.write(px, 3);
  }
}

}  // namespace udet
