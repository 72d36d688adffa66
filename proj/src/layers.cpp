#include "udet/layers.hpp"

#include <algorithm>
#include <stdexcept>

namespace udet {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "Conv2D";
    case LayerKind::conv2d_transpose: return "Conv2DTrans";
    case LayerKind::depthwise_conv: return "DepthwiseConv";
    case LayerKind::batch_norm: return "BatchNormalization";
    case LayerKind::activation: return "Activation";
    case LayerKind::maxpool: return "MaxPool2D";
    case LayerKind::upsample: return "UpSampling2D";
    case LayerKind::dropout: return "Dropout";
    case LayerKind::concat: return "Concatenate";
    case LayerKind::fuse: return "WeightedFusion";
  }
  return "?";
}

const char* to_string(Section section) {
  switch (section) {
    case Section::contraction: return "contraction";
    case Section::bifpn: return "bifpn";
    case Section::expansion: return "expansion";
  }
  return "?";
}

std::size_t LayerSpec::param_count() const {
  switch (kind) {
    case LayerKind::conv2d:
    case LayerKind::conv2d_transpose: return conv.param_count();
    case LayerKind::depthwise_conv: return 9 * channels;
    case LayerKind::batch_norm: return bn.param_count();
    case LayerKind::fuse: return arity;
    default: return 0;
  }
}

const LayerSpec& LayerList::add(LayerSpec spec) {
  if (contains(spec.name)) throw std::invalid_argument("duplicate layer name: " + spec.name);
  index_.emplace(spec.name, layers_.size());
  layers_.push_back(std::move(spec));
  return layers_.back();
}

const LayerSpec& LayerList::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown layer: " + std::string(name));
  return layers_[it->second];
}

bool LayerList::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t LayerList::count(Section section, LayerKind kind) const {
  return static_cast<std::size_t>(std::count_if(layers_.begin(), layers_.end(), [&](const LayerSpec& l) {
    return l.section == section && l.kind == kind;
  }));
}

std::size_t LayerList::count(Section section, LayerKind kind, ActivationKind act) const {
  return static_cast<std::size_t>(std::count_if(layers_.begin(), layers_.end(), [&](const LayerSpec& l) {
    return l.section == section && l.kind == kind && l.activation == act;
  }));
}

std::size_t LayerList::params(Section section, LayerKind kind) const {
  std::size_t total = 0;
  for (const auto& l : layers_)
    if (l.section == section && l.kind == kind) total += l.param_count();
  return total;
}

LayerSpec conv_layer(std::string name, Section section, std::size_t in, std::size_t out,
                     std::size_t kernel, bool bias, ActivationKind next) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::conv2d;
  l.section = section;
  l.conv = Conv2DSpec{in, out, kernel, kernel, 1, Padding::same, bias};
  l.activation = next;
  return l;
}

LayerSpec transposed_conv_layer(std::string name, Section section, std::size_t in,
                                std::size_t out, ActivationKind next) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::conv2d_transpose;
  l.section = section;
  l.conv = Conv2DSpec{in, out, 2, 2, 2, Padding::valid, true};
  l.activation = next;
  return l;
}

LayerSpec depthwise_layer(std::string name, Section section, std::size_t channels) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::depthwise_conv;
  l.section = section;
  l.channels = channels;
  l.activation = ActivationKind::relu;
  return l;
}

LayerSpec batchnorm_layer(std::string name, Section section, std::size_t channels) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::batch_norm;
  l.section = section;
  l.channels = channels;
  l.bn = BatchNormSpec{channels};
  return l;
}

LayerSpec activation_layer(std::string name, Section section, ActivationKind kind) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::activation;
  l.section = section;
  l.activation = kind;
  return l;
}

LayerSpec simple_layer(std::string name, Section section, LayerKind kind) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = kind;
  l.section = section;
  return l;
}

LayerSpec fuse_layer(std::string name, Section section, std::size_t arity) {
  LayerSpec l = simple_layer(std::move(name), section, LayerKind::fuse);
  l.arity = arity;
  return l;
}

LayerSpec dropout_layer(std::string name, Section section, double rate) {
  LayerSpec l = simple_layer(std::move(name), section, LayerKind::dropout);
  l.rate = rate;
  return l;
}

template <typename T>
void allocate_parameters(const LayerList& layers, ParameterSet<T>& params) {
  for (const auto& l : layers.layers()) {
    switch (l.kind) {
      case LayerKind::conv2d:
        params.add(l.name + ".weight", l.conv.weight_shape());
        if (l.conv.bias) params.add(l.name + ".bias", Shape{1, l.conv.out_channels, 1, 1});
        break;
      case LayerKind::conv2d_transpose:
        params.add(l.name + ".weight", l.conv.transposed_weight_shape());
        if (l.conv.bias) params.add(l.name + ".bias", Shape{1, l.conv.out_channels, 1, 1});
        break;
      case LayerKind::depthwise_conv:
        params.add(l.name + ".weight", Shape{l.channels, 1, 3, 3});
        break;
      case LayerKind::batch_norm: {
        const Shape s{1, l.channels, 1, 1};
        for (T& v : params.add(l.name + ".gamma", s).data()) v = T{1};
        params.add(l.name + ".beta", s);
        params.add(l.name + ".running_mean", s, ParamKind::buffer);
        for (T& v : params.add(l.name + ".running_var", s, ParamKind::buffer).data()) v = T{1};
        break;
      }
      case LayerKind::fuse:
        for (T& v : params.add(l.name + ".weight", Shape{l.arity, 1, 1, 1}).data()) v = T{1};
        break;
      default: break;
    }
  }
}

template <typename T>
Tensor<T> LayerRunner<T>::conv(Tape<T>& tape, std::string_view name, const Tensor<T>& x) const {
  const LayerSpec& l = layers_->at(name);
  const std::string base(name);
  const Tensor<T>& w = params_->get(base + ".weight");
  const Tensor<T> b = l.conv.bias ? params_->get(base + ".bias") : Tensor<T>{};
  if (l.kind == LayerKind::conv2d_transpose) return ops::transposed_conv2d(tape, x, l.conv, w, b);
  if (l.kind != LayerKind::conv2d) throw std::logic_error(base + " is not a convolution");
  return ops::conv2d(tape, x, l.conv, w, b);
}

template <typename T>
Tensor<T> LayerRunner<T>::depthwise(Tape<T>& tape, std::string_view name,
                                    const Tensor<T>& x) const {
  return ops::depthwise_conv2d(tape, x, params_->get(std::string(name) + ".weight"));
}

template <typename T>
Tensor<T> LayerRunner<T>::batchnorm(Tape<T>& tape, std::string_view name, const Tensor<T>& x,
                                    Mode mode) const {
  const LayerSpec& l = layers_->at(name);
  const std::string base(name);
  BatchNormState<T> state{params_->get(base + ".gamma"), params_->get(base + ".beta"),
                          params_->get(base + ".running_mean"),
                          params_->get(base + ".running_var")};
  return ops::batchnorm2d(tape, x, l.bn, state, mode);
}

template <typename T>
Tensor<T> LayerRunner<T>::activation(Tape<T>& tape, std::string_view name,
                                     const Tensor<T>& x) const {
  return ops::activation(tape, x, layers_->at(name).activation);
}

template <typename T>
Tensor<T> LayerRunner<T>::fuse(Tape<T>& tape, std::string_view name,
                               std::span<const Tensor<T>> inputs, double eps) const {
  const LayerSpec& l = layers_->at(name);
  if (inputs.size() != l.arity)
    throw std::invalid_argument(std::string(name) + ": arity " + std::to_string(l.arity) +
                                ", got " + std::to_string(inputs.size()) + " inputs");
  return ops::fuse(tape, params_->get(std::string(name) + ".weight"), inputs, eps);
}

template void allocate_parameters(const LayerList&, ParameterSet<float>&);
template void allocate_parameters(const LayerList&, ParameterSet<double>&);
template class LayerRunner<float>;
template class LayerRunner<double>;

}  // namespace udet
