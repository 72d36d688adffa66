#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "udet/ops.hpp"

namespace udet {

enum class LayerKind {
  conv2d,
  conv2d_transpose,
  depthwise_conv,
  batch_norm,
  activation,
  maxpool,
  upsample,
  dropout,
  concat,
  fuse,
};

enum class Section { contraction, bifpn, expansion };

const char* to_string(LayerKind kind);
const char* to_string(Section section);

/// One entry of a declarative graph description. Only the fields relevant to
/// `kind` are meaningful.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::activation;
  Section section = Section::contraction;
  Conv2DSpec conv;           // conv2d, conv2d_transpose
  std::size_t channels = 0;  // depthwise_conv, batch_norm
  BatchNormSpec bn;
  ActivationKind activation = ActivationKind::identity;  // activation; for convs: what follows (init)
  std::size_t arity = 0;     // fuse
  double rate = 0.0;         // dropout

  std::size_t param_count() const;
};

/// Ordered layer list with name lookup.
class LayerList {
 public:
  const LayerSpec& add(LayerSpec spec);
  const LayerSpec& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::vector<LayerSpec>& layers() const { return layers_; }

  std::size_t count(Section section, LayerKind kind) const;
  std::size_t count(Section section, LayerKind kind, ActivationKind act) const;
  std::size_t params(Section section, LayerKind kind) const;

 private:
  std::vector<LayerSpec> layers_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Spec constructors used by the graph builders.
LayerSpec conv_layer(std::string name, Section section, std::size_t in, std::size_t out,
                     std::size_t kernel, bool bias, ActivationKind next);
LayerSpec transposed_conv_layer(std::string name, Section section, std::size_t in,
                                std::size_t out, ActivationKind next);
LayerSpec depthwise_layer(std::string name, Section section, std::size_t channels);
LayerSpec batchnorm_layer(std::string name, Section section, std::size_t channels);
LayerSpec activation_layer(std::string name, Section section, ActivationKind kind);
LayerSpec simple_layer(std::string name, Section section, LayerKind kind);
LayerSpec fuse_layer(std::string name, Section section, std::size_t arity);
LayerSpec dropout_layer(std::string name, Section section, double rate);

/// Registers the parameters each layer needs, named "<layer>.<role>". Batch
/// norm gets gamma=1, beta=0, running mean 0, running variance 1; fusion
/// weights start at 1; everything else is zero until init_weights.
template <typename T>
void allocate_parameters(const LayerList& layers, ParameterSet<T>& params);

/// Executes individual layers of a LayerList against a ParameterSet.
template <typename T>
class LayerRunner {
 public:
  LayerRunner(const LayerList& layers, const ParameterSet<T>& params)
      : layers_(&layers), params_(&params) {}

  Tensor<T> conv(Tape<T>& tape, std::string_view name, const Tensor<T>& x) const;
  Tensor<T> depthwise(Tape<T>& tape, std::string_view name, const Tensor<T>& x) const;
  Tensor<T> batchnorm(Tape<T>& tape, std::string_view name, const Tensor<T>& x, Mode mode) const;
  Tensor<T> activation(Tape<T>& tape, std::string_view name, const Tensor<T>& x) const;
  Tensor<T> fuse(Tape<T>& tape, std::string_view name, std::span<const Tensor<T>> inputs,
                 double eps) const;

  const LayerSpec& spec(std::string_view name) const { return layers_->at(name); }
  const Tensor<T>& param(const std::string& name) const { return params_->get(name); }

 private:
  const LayerList* layers_;
  const ParameterSet<T>* params_;
};

}  // namespace udet
