#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "udet/metrics.hpp"
#include "udet/rng.hpp"

namespace udet {

/// Raised for malformed or inconsistent input files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.f) : height(h), width(w), pixels(h * w, fill) {}
  float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  bool operator==(const Image&) const = default;
};

struct SampleMeta {
  std::string id;
  std::optional<double> diameter_mm;
  std::optional<bool> attached;
  bool operator==(const SampleMeta&) const = default;
};

/// One slice with its ground-truth mask; image values in [0, 1].
struct Sample {
  Image image;
  BinaryMask mask;
  SampleMeta meta;
  bool operator==(const Sample&) const = default;
};

// ---------------------------------------------------------------------------
// MetaImage (.mhd + .raw)

enum class ElementType { int16, uint8 };

const char* to_string(ElementType type);
std::size_t element_size(ElementType type);

struct MhdVolume {
  std::vector<std::size_t> dims;  // NDims entries, x fastest
  std::vector<double> spacing;    // mm per axis
  ElementType type = ElementType::uint8;
  std::vector<std::uint8_t> raw;  // little-endian voxel bytes
  std::map<std::string, std::string> header;  // every key read from disk

  std::size_t voxel_count() const;
  std::size_t nx() const { return dims.size() > 0 ? dims[0] : 1; }
  std::size_t ny() const { return dims.size() > 1 ? dims[1] : 1; }
  std::size_t nz() const { return dims.size() > 2 ? dims[2] : 1; }

  static MhdVolume from_int16(std::vector<std::size_t> dims, std::vector<double> spacing,
                              const std::vector<std::int16_t>& values);
  static MhdVolume from_uint8(std::vector<std::size_t> dims, std::vector<double> spacing,
                              std::vector<std::uint8_t> values);
  std::vector<std::int16_t> int16_values() const;
  /// Voxel values of slice z as doubles, whatever the element type.
  std::vector<double> slice(std::size_t z) const;
};

/// Reads the header and its ElementDataFile (resolved relative to the header).
MhdVolume read_mhd(const std::filesystem::path& path);
/// Writes `<stem>.mhd` and `<stem>.raw` next to each other.
void write_mhd(const MhdVolume& volume, const std::filesystem::path& path);

/// Slice z, min-max normalised to [0, 1] (constant slices map to 0).
Image image_from_volume(const MhdVolume& volume, std::size_t z = 0);
/// Nonzero voxels of slice z become 1.
BinaryMask mask_from_volume(const MhdVolume& volume, std::size_t z = 0);
/// Stores an image as a 2-D 16-bit slice, value round(1400 * p - 1000).
MhdVolume volume_from_image(const Image& image, double spacing_mm);
MhdVolume volume_from_mask(const BinaryMask& mask, double spacing_mm);

// ---------------------------------------------------------------------------
// Synthetic phantoms

struct NoduleSpec {
  std::size_t count = 1;
  double radius_min = 4.0;  // pixels
  double radius_max = 10.0;
  double intensity_min = 0.6;
  double intensity_max = 0.9;
  double aspect_min = 0.75;  // minor/major axis ratio
  double aspect_max = 1.0;
  bool attach_to_wall = false;
};

inline constexpr double kPhantomSpacingMm = 0.7;

/// Two dark elliptical lung fields with smooth texture inside a brighter body,
/// plus bright elliptical nodules whose exact support is the mask.
Sample generate_phantom(Rng& rng, std::size_t size, const NoduleSpec& nodules,
                        std::string id = "phantom");

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentSpec {
  bool flip_h = false;
  bool flip_v = false;
  bool shift = false;
  bool rotate = false;
  bool zoom = false;
  bool shear = false;
  bool elastic = false;
  bool salt_pepper = false;
  /// Chance that each enabled op is applied to a given sample.
  double probability = 0.5;

  double max_shift = 0.10;  // fraction of the image size
  double max_rotate_deg = 15.0;
  double zoom_min = 0.9;
  double zoom_max = 1.1;
  double max_shear_deg = 10.0;
  double elastic_alpha = 30.0;
  double elastic_sigma = 4.0;
  double max_salt_pepper = 0.02;

  static AugmentSpec all();
  bool any_enabled() const;
  void validate() const;
};

/// Geometric ops share one sampled transform for image (bilinear) and mask
/// (bilinear then >= 0.5, which keeps it binary); samples outside are 0.
/// Salt-and-pepper noise touches the image only.
Sample augment(const Sample& sample, const AugmentSpec& spec, Rng& rng);

/// A fixed geometric transform about the image centre: rotation, shear and
/// zoom, then a shift in pixels.
struct AffineParams {
  double rotate_deg = 0;
  double shear_deg = 0;
  double zoom = 1;
  double shift_x = 0;
  double shift_y = 0;
};

/// Resamples image and mask with the same rules as augment.
Sample apply_affine(const Sample& sample, const AffineParams& params);

struct ElasticResult {
  Image image;
  BinaryMask mask;
};
ElasticResult elastic_deform(const Image& image, const BinaryMask& mask, double alpha,
                             double sigma, Rng& rng);

Image salt_pepper(const Image& image, double density, Rng& rng);

/// Separable Gaussian blur with edge clamping.
std::vector<double> gaussian_smooth(const std::vector<double>& field, std::size_t height,
                                    std::size_t width, double sigma);

// ---------------------------------------------------------------------------
// Splits and manifests

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::vector<std::size_t>> folds;  // partition of `train`
};

/// Seeded shuffle; test gets round(count * test_fraction) items and the
/// training indices are cut into `folds` contiguous parts whose sizes differ
/// by at most one (larger parts first).
DatasetSplit split_dataset(std::size_t count, double test_fraction, std::size_t folds,
                           std::uint64_t seed);

struct ManifestRow {
  std::string id;
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
  std::optional<double> diameter_mm;
  std::optional<bool> attached;
};

/// CSV with header id,image_path,mask_path,diameter_mm,attached. Relative
/// paths are resolved against the manifest's directory.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path);
Sample load_sample(const ManifestRow& row);
std::vector<Sample> load_dataset(const std::filesystem::path& manifest);

}  // namespace udet
