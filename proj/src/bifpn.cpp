#include "udet/bifpn.hpp"

#include <array>
#include <stdexcept>

namespace udet {

namespace {

std::string lateral_name(std::size_t level) { return "bifpn.lateral" + std::to_string(level); }
std::string td_name(std::size_t level) { return "bifpn.td" + std::to_string(level); }
std::string out_name(std::size_t level) { return "bifpn.out" + std::to_string(level); }

void append_block(LayerList& layers, const std::string& node, std::size_t width) {
  layers.add(depthwise_layer(node + ".dw", Section::bifpn, width));
  layers.add(batchnorm_layer(node + ".bn", Section::bifpn, width));
  layers.add(activation_layer(node + ".relu", Section::bifpn, ActivationKind::relu));
}

template <typename T>
Tensor<T> block(Tape<T>& tape, const LayerRunner<T>& run, const std::string& node,
                const Tensor<T>& x, Mode mode) {
  Tensor<T> y = run.depthwise(tape, node + ".dw", x);
  y = run.batchnorm(tape, node + ".bn", y, mode);
  return run.activation(tape, node + ".relu", y);
}

template <typename T>
void check_chain(const BifpnConfig& config, const PyramidFeatures<T>& p, bool projected) {
  if (p.levels.size() != config.levels())
    throw ShapeError("bifpn: expected " + std::to_string(config.levels()) + " levels, got " +
                     std::to_string(p.levels.size()));
  for (std::size_t i = 0; i < p.levels.size(); ++i) {
    const Shape s = p.levels[i].shape();
    const std::size_t want = projected ? config.width : config.entry_channels[i];
    if (s.c != want)
      throw ShapeError("bifpn: level " + std::to_string(i + 1) + " has " + std::to_string(s.c) +
                       " channels, expected " + std::to_string(want));
    if (i > 0) {
      const Shape prev = p.levels[i - 1].shape();
      if (prev.n != s.n || prev.h != 2 * s.h || prev.w != 2 * s.w)
        throw ShapeError("bifpn: level " + std::to_string(i + 1) + " " + s.str() +
                         " is not half of level " + std::to_string(i) + " " + prev.str());
    }
  }
}

}  // namespace

void append_bifpn_layers(LayerList& layers, const BifpnConfig& config) {
  const std::size_t levels = config.levels();
  if (levels < 2) throw std::invalid_argument("bifpn needs at least two levels");
  const std::size_t w = config.width;
  for (std::size_t i = 1; i <= levels; ++i) {
    layers.add(conv_layer(lateral_name(i), Section::bifpn, config.entry_channels[i - 1], w, 1,
                          false, ActivationKind::relu));
    layers.add(batchnorm_layer(lateral_name(i) + ".bn", Section::bifpn, w));
    layers.add(activation_layer(lateral_name(i) + ".relu", Section::bifpn, ActivationKind::relu));
  }
  for (std::size_t i = levels - 1; i >= 2; --i) {
    layers.add(simple_layer(td_name(i) + ".up", Section::bifpn, LayerKind::upsample));
    layers.add(fuse_layer(td_name(i) + ".fuse", Section::bifpn, 2));
    append_block(layers, td_name(i), w);
  }
  layers.add(simple_layer(out_name(1) + ".up", Section::bifpn, LayerKind::upsample));
  layers.add(fuse_layer(out_name(1) + ".fuse", Section::bifpn, 2));
  append_block(layers, out_name(1), w);
  for (std::size_t i = 2; i <= levels - 1; ++i) {
    layers.add(simple_layer(out_name(i) + ".down", Section::bifpn, LayerKind::maxpool));
    layers.add(fuse_layer(out_name(i) + ".fuse", Section::bifpn, 3));
    append_block(layers, out_name(i), w);
  }
}

template <typename T>
PyramidFeatures<T> lateral_project(Tape<T>& tape, const LayerRunner<T>& run,
                                   const BifpnConfig& config, const PyramidFeatures<T>& features,
                                   Mode mode) {
  check_chain(config, features, false);
  PyramidFeatures<T> out;
  for (std::size_t i = 1; i <= config.levels(); ++i) {
    const std::string name = lateral_name(i);
    Tensor<T> y = run.conv(tape, name, features.levels[i - 1]);
    y = run.batchnorm(tape, name + ".bn", y, mode);
    out.levels.push_back(run.activation(tape, name + ".relu", y));
  }
  return out;
}

template <typename T>
PyramidFeatures<T> bifpn_forward(Tape<T>& tape, const LayerRunner<T>& run,
                                 const BifpnConfig& config, const PyramidFeatures<T>& projected,
                                 Mode mode) {
  check_chain(config, projected, true);
  const std::size_t levels = config.levels();
  const auto& lat = projected.levels;
  const double eps = config.fuse_eps;

  // td[i] for i in [2, levels-1]; index by level number.
  std::vector<Tensor<T>> td(levels + 1);
  Tensor<T> next = lat[levels - 1];
  for (std::size_t i = levels - 1; i >= 2; --i) {
    const std::string node = td_name(i);
    const std::array<Tensor<T>, 2> in{lat[i - 1], ops::upsample2x_nearest(tape, next)};
    td[i] = block(tape, run, node, run.fuse(tape, node + ".fuse", in, eps), mode);
    next = td[i];
  }

  PyramidFeatures<T> out;
  out.levels.resize(levels);
  {
    const std::string node = out_name(1);
    const std::array<Tensor<T>, 2> in{lat[0], ops::upsample2x_nearest(tape, next)};
    out.levels[0] = block(tape, run, node, run.fuse(tape, node + ".fuse", in, eps), mode);
  }
  for (std::size_t i = 2; i <= levels - 1; ++i) {
    const std::string node = out_name(i);
    const std::array<Tensor<T>, 3> in{lat[i - 1], td[i],
                                      ops::maxpool2d(tape, out.levels[i - 2])};
    out.levels[i - 1] = block(tape, run, node, run.fuse(tape, node + ".fuse", in, eps), mode);
  }
  out.levels[levels - 1] = lat[levels - 1];
  return out;
}

template <typename T>
Bifpn<T>::Bifpn(BifpnConfig config) : config_(std::move(config)) {
  append_bifpn_layers(layers_, config_);
  allocate_parameters(layers_, params_);
}

template <typename T>
PyramidFeatures<T> Bifpn<T>::lateral(Tape<T>& tape, const PyramidFeatures<T>& features,
                                     Mode mode) const {
  return lateral_project(tape, LayerRunner<T>(layers_, params_), config_, features, mode);
}

template <typename T>
PyramidFeatures<T> Bifpn<T>::forward(Tape<T>& tape, const PyramidFeatures<T>& features,
                                     Mode mode) const {
  const LayerRunner<T> run(layers_, params_);
  return bifpn_forward(tape, run, config_, lateral_project(tape, run, config_, features, mode),
                       mode);
}

#define UDET_INSTANTIATE(T)                                                                    \
  template PyramidFeatures<T> lateral_project(Tape<T>&, const LayerRunner<T>&,                 \
                                              const BifpnConfig&, const PyramidFeatures<T>&,   \
                                              Mode);                                           \
  template PyramidFeatures<T> bifpn_forward(Tape<T>&, const LayerRunner<T>&, const BifpnConfig&, \
                                            const PyramidFeatures<T>&, Mode);                  \
  template class Bifpn<T>;
UDET_INSTANTIATE(float)
UDET_INSTANTIATE(double)
#undef UDET_INSTANTIATE

}  // namespace udet
