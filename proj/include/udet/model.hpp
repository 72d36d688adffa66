#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "udet/bifpn.hpp"
#include "udet/layers.hpp"
#include "udet/rng.hpp"

namespace udet {

/// Ablation toggles. (mish, bifpn, expansion) = (1,1,1) is U-Det; (0,0,1) is
/// the plain U-Net.
struct VariantSpec {
  bool use_mish = true;
  bool use_bifpn = true;
  bool use_expansion_path = true;

  static VariantSpec udet() { return {}; }
  static VariantSpec unet() { return {false, false, true}; }

  /// One of: udet, udet-relu, unet, unet-mish, encoder-bifpn, encoder-bifpn-mish.
  std::string name() const;
  static VariantSpec from_name(const std::string& name);
  static std::vector<std::string> names();

  ActivationKind backbone_activation() const {
    return use_mish ? ActivationKind::mish : ActivationKind::relu;
  }
  bool operator==(const VariantSpec&) const = default;
};

/// Declarative U-Det wiring; no tensors are allocated.
struct ModelGraph {
  VariantSpec variant;
  std::size_t input_size = 512;
  std::size_t width_divisor = 1;
  std::array<std::size_t, 5> encoder_channels{};
  BifpnConfig bifpn;
  LayerList layers;
};

/// Builds the graph. `width_divisor` in {1, 2, 4, 8} divides every channel
/// count; input_size must be divisible by 16.
ModelGraph build(const VariantSpec& variant, std::size_t input_size = 512,
                 std::size_t width_divisor = 1);

/// Encoder feature shapes (channels, height, width) at depths 1..5.
std::array<std::array<std::size_t, 3>, 5> encoder_feature_shapes(const ModelGraph& graph);

struct AuditRow {
  std::string label;         // row label
  std::size_t computed = 0;  // from the built graph
  double reference = 0;      // published count
  double tolerance = 0;      // absolute
  bool ok() const;
};

struct AuditTable {
  std::vector<AuditRow> rows;  // last row is the total
  std::size_t total = 0;
  std::size_t fusion_scalars = 0;  // reported separately, not in the total
  bool ok() const;
};

AuditTable audit_parameters(const ModelGraph& graph);
std::string format_audit(const AuditTable& table);

struct BifpnCensus {
  std::size_t depthwise = 0;
  std::size_t batch_norm = 0;
  std::size_t relu = 0;
  std::size_t maxpool = 0;
  std::size_t lateral_conv = 0;
};
BifpnCensus bifpn_census(const ModelGraph& graph);

/// Parameters plus the fixed wiring of a built graph.
template <typename T>
class UDetModel {
 public:
  explicit UDetModel(ModelGraph graph);
  UDetModel(UDetModel&&) noexcept = default;
  UDetModel& operator=(UDetModel&&) noexcept = default;
  // Parameter tensors are shared handles; copying would alias them.
  UDetModel(const UDetModel&) = delete;
  UDetModel& operator=(const UDetModel&) = delete;

  /// (N, 1, S, S) -> (N, 1, S, S) probabilities. Train mode uses batch
  /// statistics and applies dropout with `rng`.
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, Mode mode, Rng& rng) const;
  /// Infer-mode forward without recording.
  Tensor<T> predict(const Tensor<T>& x) const;

  const ModelGraph& graph() const { return graph_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

 private:
  ModelGraph graph_;
  ParameterSet<T> params_;
};

/// Flat binary checkpoint: text manifest (name, shape, byte offset) followed
/// by raw little-endian values.
template <typename T>
void save_checkpoint(const UDetModel<T>& model, const std::filesystem::path& path);
template <typename T>
UDetModel<T> load_checkpoint(const std::filesystem::path& path);

/// Copies values between parameter sets with identical names and shapes.
template <typename T>
void copy_parameters(const ParameterSet<T>& from, ParameterSet<T>& to);

}  // namespace udet
