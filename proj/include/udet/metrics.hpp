#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "udet/tensor.hpp"

namespace udet {

/// Strictly binary 2-D label map, row-major.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), values(h * w, fill) {}

  std::size_t size() const { return values.size(); }
  std::size_t count() const;
  std::uint8_t& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  /// Throws unless nonempty, sized h*w and all values in {0, 1}.
  void validate() const;
  bool operator==(const BinaryMask&) const = default;
};

/// Positive-class weight: negatives / positives pooled over the training set.
struct ClassWeight {
  double positive = 1.0;
};

/// Throws when the pooled set has no positive voxel. A set with no negatives
/// yields 0, which the trainer rejects.
ClassWeight estimate_class_weight(std::span<const BinaryMask> masks);

/// Probability clamp applied before the logarithms.
inline constexpr double kProbClamp = 1e-7;

/// -(1/N) sum[w_p y log p + (1-y) log(1-p)] over all N elements, with p
/// clamped to [1e-7, 1 - 1e-7]. `target` must be binary and never requires grad.
template <typename T>
Tensor<T> weighted_bce(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target,
                       ClassWeight weight);

/// Plain binary cross-entropy, used as a reference.
double binary_cross_entropy(std::span<const double> pred, std::span<const double> target);

// Voxel-count overlap metrics; nullopt when the denominator is empty.
std::optional<double> dsc(const BinaryMask& gt, const BinaryMask& sv);
std::optional<double> sen(const BinaryMask& gt, const BinaryMask& sv);
std::optional<double> ppv(const BinaryMask& gt, const BinaryMask& sv);

/// p >= threshold -> 1.
BinaryMask binarize(std::span<const float> probs, std::size_t height, std::size_t width,
                    double threshold = 0.5);
BinaryMask binarize(const BinaryMask& mask, double threshold = 0.5);

struct MetricsRecord {
  std::string tag;  // sample id or "aggregate"
  double loss = 0;
  std::optional<double> dsc;
  std::optional<double> sen;
  std::optional<double> ppv;
};

MetricsRecord evaluate_masks(std::string tag, const BinaryMask& gt, const BinaryMask& sv);

struct Summary {
  double mean = 0;
  double sd = 0;  // sample standard deviation, 0 for fewer than two values
  std::size_t count = 0;
  std::size_t excluded = 0;  // undefined values left out
};

Summary summarize(std::span<const std::optional<double>> values);
Summary summarize(std::span<const double> values);

struct HistogramBin {
  double lo = 0;
  double hi = 0;
  std::size_t count = 0;
};

struct Histogram {
  std::vector<HistogramBin> bins;
  std::size_t excluded = 0;  // records with undefined DSC
};

/// Uniform bins over [0, 1]; the last bin is closed on the right.
Histogram dsc_histogram(std::span<const MetricsRecord> records, std::size_t bins);

void write_histogram_csv(const Histogram& hist, const std::filesystem::path& path);

/// Append-only CSV: epoch,fold,split,loss,dsc,sen,ppv.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path);
  void append(int epoch, int fold, const std::string& split, const MetricsRecord& r);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

/// Fixed-precision text for CSV output; "nan" for undefined values.
std::string format_value(std::optional<double> v);

}  // namespace udet
