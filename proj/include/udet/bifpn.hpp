#pragma once

#include <string>
#include <vector>

#include "udet/layers.hpp"

namespace udet {

/// Weighted bidirectional feature network between encoder and decoder.
///
/// For L levels (L = 5 in U-Det) with projected inputs L1..LL:
///   T_i = Block(fuse(L_i, up(next)))         i = L-1 .. 2, next = L_L or T_{i+1}
///   O_1 = Block(fuse(L_1, up(T_2)))           (up(L_2) when L = 2)
///   O_i = Block(fuse(L_i, T_i, down(O_{i-1})))  i = 2 .. L-1
///   O_L = L_L
/// Block is depthwise 3x3 -> batch norm -> relu, down is maxpool2d. At L = 5
/// this instantiates 7 blocks, 3 maxpools and 12 batch-norm/relu pairs
/// (including the five lateral projections).
struct BifpnConfig {
  std::vector<std::size_t> entry_channels{64, 128, 256, 512, 1024};
  std::size_t width = 64;
  double fuse_eps = 1e-4;

  std::size_t levels() const { return entry_channels.size(); }
};

template <typename T>
struct PyramidFeatures {
  std::vector<Tensor<T>> levels;
};

/// Appends lateral and fusion layers ("bifpn.*") to `layers`.
void append_bifpn_layers(LayerList& layers, const BifpnConfig& config);

/// 1x1 bias-free conv -> batch norm -> relu per level.
template <typename T>
PyramidFeatures<T> lateral_project(Tape<T>& tape, const LayerRunner<T>& run,
                                   const BifpnConfig& config, const PyramidFeatures<T>& features,
                                   Mode mode);

/// Top-down then bottom-up fusion of already projected levels.
template <typename T>
PyramidFeatures<T> bifpn_forward(Tape<T>& tape, const LayerRunner<T>& run,
                                 const BifpnConfig& config, const PyramidFeatures<T>& projected,
                                 Mode mode);

/// Self-contained Bi-FPN with its own parameters, for use outside U-Det.
template <typename T>
class Bifpn {
 public:
  explicit Bifpn(BifpnConfig config);

  PyramidFeatures<T> forward(Tape<T>& tape, const PyramidFeatures<T>& features, Mode mode) const;
  PyramidFeatures<T> lateral(Tape<T>& tape, const PyramidFeatures<T>& features, Mode mode) const;

  const BifpnConfig& config() const { return config_; }
  const LayerList& layers() const { return layers_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

 private:
  BifpnConfig config_;
  LayerList layers_;
  ParameterSet<T> params_;
};

}  // namespace udet
