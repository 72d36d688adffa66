#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "udet/data.hpp"

namespace udet {

/// Foreground pixels with a 4-neighbour outside the mask or the image.
BinaryMask contour(const BinaryMask& mask);

// Gray levels of the overlay. Image pixels are mapped into [32, 223] so the
// contour levels stay distinguishable.
inline constexpr std::uint8_t kGtContour = 255;
inline constexpr std::uint8_t kPredContour = 0;
inline constexpr std::uint8_t kSharedContour = 128;

/// One gray byte per pixel: image, then ground-truth contour (when given),
/// then prediction contour; pixels on both contours get kSharedContour.
std::vector<std::uint8_t> render_overlay(const Image& image, const BinaryMask* truth,
                                         const BinaryMask& prediction);

/// Binary PPM (P6), gray replicated into the three channels.
void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& gray);

}  // namespace udet
