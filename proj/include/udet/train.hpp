#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "udet/data.hpp"
#include "udet/metrics.hpp"
#include "udet/model.hpp"

namespace udet {

/// Raised when optimisation cannot continue (non-finite values, empty sets).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr0 = 1e-4;
  double beta1 = 0.99;
  double beta2 = 0.999;
  double decay = 1e-6;  // lr_t = lr / (1 + decay * t)
  double adam_eps = 1e-8;
  std::size_t batch_size = 2;
  std::size_t early_stop_patience = 10;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 5;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;
  /// Positive-class weight; estimated from the training masks when unset.
  std::optional<double> omega_p;

  std::string variant = "udet";
  std::size_t width_divisor = 1;
  /// 0 takes the size of the data.
  std::size_t input_size = 0;
  std::size_t folds = 4;
  double test_fraction = 0.0;
  AugmentSpec augment;
  /// Workers that augment the next epoch's samples. Output does not depend on it.
  std::size_t loader_threads = 1;

  void validate() const;
  /// Flat `key = value` lines, one per field, in a fixed order.
  std::string to_text() const;
  /// Unknown keys and malformed values throw std::invalid_argument.
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  /// FNV-1a over to_text().
  std::uint64_t hash() const;
};

/// Step size after `t` completed steps.
double decayed_lr(double lr, double decay, std::uint64_t t);

struct OptimizerState {
  std::vector<std::vector<float>> m;  // one per trainable parameter, in registry order
  std::vector<std::vector<float>> v;
  std::uint64_t t = 0;
  double lr = 0;  // base rate before step decay; plateau reductions scale it

  static OptimizerState create(const ParameterSet<float>& params, const TrainConfig& cfg);
};

/// Bias-corrected Adam on every trainable parameter's gradient buffer
/// (missing buffers count as zero). Throws TrainingError naming the first
/// parameter with a non-finite gradient; nothing is updated in that case.
void adam_step(ParameterSet<float>& params, OptimizerState& state, const TrainConfig& cfg);

/// Early stopping and plateau reduction on a monitored loss.
class PlateauMonitor {
 public:
  struct Decision {
    bool improved = false;
    bool reduce_lr = false;
    bool stop = false;
  };

  PlateauMonitor(std::size_t early_stop_patience, std::size_t plateau_patience);
  Decision observe(double loss);
  double best() const { return best_; }
  std::size_t epochs_since_improvement() const { return stale_; }

 private:
  std::size_t stop_patience_;
  std::size_t plateau_patience_;
  double best_;
  std::size_t stale_ = 0;
  std::size_t plateau_wait_ = 0;
};

/// Fan-scaled uniform init: He for convs feeding a ReLU, Glorot otherwise.
/// Each tensor draws from its own stream keyed by (seed, name).
void init_weights(const ModelGraph& graph, ParameterSet<float>& params, std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0;
  MetricsRecord train;
  MetricsRecord val;
};

struct FoldResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  bool stopped_early = false;
  MetricsRecord best_val;  // validation metrics of the returned model
  UDetModel<float> model;  // best-val-loss parameters
};

struct TrainOutputs {
  MetricsLog* log = nullptr;
  int fold = 0;
  /// Writes best.ckpt here when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Called after each epoch; returning false ends training there.
  std::function<bool(const EpochRecord&)> on_epoch;
};

/// Trains from a fresh initialisation seeded by cfg.seed.
FoldResult train_fold(const std::vector<Sample>& train, const std::vector<Sample>& val,
                      const TrainConfig& cfg, const TrainOutputs& outputs = {});

struct CrossValidationResult {
  std::vector<FoldResult> folds;
  Summary dsc;
  Summary sen;
  Summary ppv;
  DatasetSplit split;
};

/// One train_fold per fold of split_dataset(samples, cfg.test_fraction,
/// cfg.folds, cfg.seed); fold f trains with seed derive_seed(cfg.seed, {f}).
/// Each fold writes to checkpoint_root/fold<f> when a root is given.
CrossValidationResult cross_validate(const std::vector<Sample>& samples, const TrainConfig& cfg,
                                     MetricsLog* log = nullptr,
                                     const std::optional<std::filesystem::path>& checkpoint_root = {});

// ---------------------------------------------------------------------------
// Inference helpers

/// Stacks images (and masks) of the given samples into (N, 1, H, W) tensors.
Tensor<float> stack_images(const std::vector<Sample>& samples, std::span<const std::size_t> indices);
Tensor<float> stack_masks(const std::vector<Sample>& samples, std::span<const std::size_t> indices);

/// Probability map of one image.
std::vector<float> predict_image(const UDetModel<float>& model, const Image& image);

struct SampleEvaluation {
  MetricsRecord record;  // loss is the weighted BCE of the probabilities
  BinaryMask prediction;
};

SampleEvaluation evaluate_sample(const UDetModel<float>& model, const Sample& sample,
                                 ClassWeight weight);

/// Per-sample records plus a mean over samples (tag "aggregate"; undefined
/// values are left out of the mean).
std::vector<MetricsRecord> evaluate_samples(const UDetModel<float>& model,
                                            const std::vector<Sample>& samples, ClassWeight weight);
MetricsRecord mean_record(std::string tag, std::span<const MetricsRecord> records);

}  // namespace udet
