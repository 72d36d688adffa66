#include "udet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <utility>

namespace udet {

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<TensorImpl<T>>()) {
  if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0)
    throw ShapeError("tensor dimensions must be >= 1, got " + shape.str());
  impl_->shape = shape;
  impl_->data.assign(shape.numel(), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : Tensor(shape) {
  if (values.size() != shape.numel())
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape.str());
  impl_->data = std::move(values);
}

template <typename T>
std::span<T> Tensor<T>::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T{0});
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T{0});
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
  return impl_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(shape());
  out.impl_->data = impl_->data;
  return out;
}

template <typename T>
Tensor<T> Tape<T>::record(std::string_view op, std::vector<Tensor<T>> inputs,
                          Tensor<T> output, BackwardFn backward) {
  if (!enabled_) return output;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
  if (!any) return output;
  output.set_requires_grad(true);
  output.impl().tape = this;
  output.impl().node = nodes_.size();
  nodes_.push_back(Node{std::string(op), std::move(inputs), output, std::move(backward)});
  return output;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1 || !(loss.shape() == Shape{}))
    throw std::invalid_argument("backward: loss must be a (1,1,1,1) scalar, got " +
                                (loss.defined() ? loss.shape().str() : std::string("undefined")));
  const auto& li = loss.impl();
  if (li.tape != this || li.node >= nodes_.size() || !nodes_[li.node].output.same_storage(loss))
    throw std::invalid_argument("backward: loss was not produced on this tape");

  for (auto& n : nodes_) n.output.drop_grad();
  Tensor<T> seed = loss;
  seed.grad_buffer()[0] = T{1};

  for (std::size_t i = li.node + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.output.has_grad()) continue;
    n.backward(std::as_const(n.output).grad());
  }
}

template <typename T>
void Tape<T>::clear() {
  nodes_.clear();
}

template <typename T>
Tensor<T> ParameterSet<T>::add(std::string name, Shape shape, ParamKind kind) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor<T> t(shape);
  t.set_requires_grad(kind == ParamKind::trainable);
  entries_.push_back(Entry{std::move(name), t, kind});
  return t;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.value;
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

template <typename T>
Tensor<T>& ParameterSet<T>::get(std::string_view name) {
  for (auto& e : entries_)
    if (e.name == name) return e.value;
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

template <typename T>
bool ParameterSet<T>::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.name == name; });
}

template <typename T>
std::size_t ParameterSet<T>::total_elements() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.value.numel();
  return total;
}

template <typename T>
void ParameterSet<T>::zero_grads() {
  for (auto& e : entries_) e.value.zero_grad();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace udet
