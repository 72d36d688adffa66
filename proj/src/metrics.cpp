#include "udet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace udet {

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

void BinaryMask::validate() const {
  if (height == 0 || width == 0 || values.size() != height * width)
    throw std::invalid_argument("mask must be nonempty with height*width values");
  for (auto v : values)
    if (v > 1) throw std::invalid_argument("mask is not binary");
}

ClassWeight estimate_class_weight(std::span<const BinaryMask> masks) {
  std::size_t pos = 0, total = 0;
  for (const auto& m : masks) {
    pos += m.count();
    total += m.size();
  }
  if (pos == 0) throw std::invalid_argument("class weight: no positive voxels in training masks");
  return {static_cast<double>(total - pos) / static_cast<double>(pos)};
}

template <typename T>
Tensor<T> weighted_bce(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target,
                       ClassWeight weight) {
  if (!(pred.shape() == target.shape()))
    throw ShapeError("weighted_bce: shape mismatch " + pred.shape().str() + " vs " +
                     target.shape().str());
  auto p = pred.data();
  auto y = target.data();
  const double wp = weight.positive;
  const double n = static_cast<double>(p.size());
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y[i] != T{0} && y[i] != T{1}) throw std::invalid_argument("weighted_bce: target not binary");
    const double q = std::clamp(static_cast<double>(p[i]), kProbClamp, 1.0 - kProbClamp);
    acc += y[i] != T{0} ? wp * std::log(q) : std::log(1.0 - q);
  }
  Tensor<T> loss = Tensor<T>::scalar(static_cast<T>(-acc / n));
  return tape.record("weighted_bce", {pred}, loss, [pred = pred, target = target, wp, n](std::span<const T> g) mutable {
    if (!pred.requires_grad()) return;
    auto dp = pred.grad_buffer();
    auto p = pred.data();
    auto y = target.data();
    const double scale = g[0] / n;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double q = static_cast<double>(p[i]);
      if (q < kProbClamp || q > 1.0 - kProbClamp) continue;  // clamped: flat
      const double d = y[i] != T{0} ? -wp / q : 1.0 / (1.0 - q);
      dp[i] += static_cast<T>(scale * d);
    }
  });
}

double binary_cross_entropy(std::span<const double> pred, std::span<const double> target) {
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double q = std::clamp(pred[i], kProbClamp, 1.0 - kProbClamp);
    acc += target[i] * std::log(q) + (1.0 - target[i]) * std::log(1.0 - q);
  }
  return -acc / static_cast<double>(pred.size());
}

namespace {

struct Overlap {
  std::size_t gt = 0, sv = 0, both = 0;
};

Overlap overlap(const BinaryMask& gt, const BinaryMask& sv) {
  if (gt.height != sv.height || gt.width != sv.width)
    throw std::invalid_argument("metrics: mask shapes differ");
  Overlap o;
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    o.gt += gt.values[i];
    o.sv += sv.values[i];
    o.both += gt.values[i] & sv.values[i];
  }
  return o;
}

}  // namespace

std::optional<double> dsc(const BinaryMask& gt, const BinaryMask& sv) {
  const Overlap o = overlap(gt, sv);
  if (o.gt + o.sv == 0) return std::nullopt;
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.gt + o.sv);
}

std::optional<double> sen(const BinaryMask& gt, const BinaryMask& sv) {
  const Overlap o = overlap(gt, sv);
  if (o.gt == 0) return std::nullopt;
  return static_cast<double>(o.both) / static_cast<double>(o.gt);
}

std::optional<double> ppv(const BinaryMask& gt, const BinaryMask& sv) {
  const Overlap o = overlap(gt, sv);
  if (o.sv == 0) return std::nullopt;
  return static_cast<double>(o.both) / static_cast<double>(o.sv);
}

BinaryMask binarize(std::span<const float> probs, std::size_t height, std::size_t width,
                    double threshold) {
  if (probs.size() != height * width) throw std::invalid_argument("binarize: size mismatch");
  BinaryMask m(height, width);
  for (std::size_t i = 0; i < probs.size(); ++i) m.values[i] = probs[i] >= threshold ? 1 : 0;
  return m;
}

BinaryMask binarize(const BinaryMask& mask, double threshold) {
  BinaryMask m(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.values.size(); ++i)
    m.values[i] = static_cast<double>(mask.values[i]) >= threshold ? 1 : 0;
  return m;
}

MetricsRecord evaluate_masks(std::string tag, const BinaryMask& gt, const BinaryMask& sv) {
  MetricsRecord r;
  r.tag = std::move(tag);
  r.dsc = dsc(gt, sv);
  r.sen = sen(gt, sv);
  r.ppv = ppv(gt, sv);
  return r;
}

Summary summarize(std::span<const std::optional<double>> values) {
  std::vector<double> defined;
  for (const auto& v : values)
    if (v) defined.push_back(*v);
  Summary s = summarize(std::span<const double>(defined));
  s.excluded = values.size() - defined.size();
  return s;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.count);
  if (s.count > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.count - 1));
  }
  return s;
}

Histogram dsc_histogram(std::span<const MetricsRecord> records, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("histogram needs at least one bin");
  Histogram h;
  for (std::size_t b = 0; b < bins; ++b)
    h.bins.push_back({static_cast<double>(b) / static_cast<double>(bins),
                      static_cast<double>(b + 1) / static_cast<double>(bins), 0});
  for (const auto& r : records) {
    if (!r.dsc) {
      ++h.excluded;
      continue;
    }
    const double v = std::clamp(*r.dsc, 0.0, 1.0);
    const auto b = std::min(bins - 1, static_cast<std::size_t>(v * static_cast<double>(bins)));
    ++h.bins[b].count;
  }
  return h;
}

void write_histogram_csv(const Histogram& hist, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "bin_lo,bin_hi,count\n";
  for (const auto& b : hist.bins)
    out << format_value(b.lo) << ',' << format_value(b.hi) << ',' << b.count << '\n';
}

std::string format_value(std::optional<double> v) {
  if (!v || !std::isfinite(*v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", *v);
  return buf;
}

MetricsLog::MetricsLog(const std::filesystem::path& path) : path_(path) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw std::runtime_error("cannot open metrics log " + path.string());
  if (fresh) out_ << "epoch,fold,split,loss,dsc,sen,ppv\n";
}

void MetricsLog::append(int epoch, int fold, const std::string& split, const MetricsRecord& r) {
  out_ << epoch << ',' << fold << ',' << split << ',' << format_value(r.loss) << ','
       << format_value(r.dsc) << ',' << format_value(r.sen) << ',' << format_value(r.ppv) << '\n';
  out_.flush();
}

template Tensor<float> weighted_bce(Tape<float>&, const Tensor<float>&, const Tensor<float>&,
                                    ClassWeight);
template Tensor<double> weighted_bce(Tape<double>&, const Tensor<double>&, const Tensor<double>&,
                                     ClassWeight);

}  // namespace udet
