#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace udet {

/// Raised when operand shapes are incompatible with an op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// (batch, channels, height, width); every dimension is at least 1.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr bool operator==(const Shape&) const = default;
  std::string str() const;
};

template <typename T>
class Tape;

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const Tape<T>* tape = nullptr;  // producing tape, null for leaves
  std::size_t node = 0;
};

/// Dense NCHW array with an optional gradient buffer.
///
/// Copies are shallow handles onto the same storage, which is what the tape
/// needs to route gradients back to leaves; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  /// Grad buffer, zero-allocated on first use.
  std::span<T> grad_buffer() const;
  void zero_grad();
  void drop_grad() { impl_->grad.clear(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return impl_->data[index(n, c, h, w)];
  }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return impl_->data[index(n, c, h, w)];
  }
  std::size_t index(std::size_t n, std::size_t c, std::size_t h,
                    std::size_t w) const {
    const Shape& s = impl_->shape;
    return ((n * s.c + c) * s.h + h) * s.w + w;
  }
  T item() const;

  /// Deep copy of the values, detached from any tape.
  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  TensorImpl<T>& impl() { return *impl_; }
  const TensorImpl<T>& impl() const { return *impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Define-by-run record of differentiable ops.
///
/// Each node owns handles to its inputs and output plus a closure that reads
/// the output gradient and accumulates into the inputs that require grad.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const T> out_grad)>;

  struct Node {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Appends a node when recording is enabled and any input requires grad;
  /// otherwise returns `output` untouched.
  Tensor<T> record(std::string_view op, std::vector<Tensor<T>> inputs,
                   Tensor<T> output, BackwardFn backward);

  /// Reverse sweep from a scalar loss produced on this tape. Leaf grads
  /// accumulate across calls; intermediate grads are reset per call.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }
  void clear();

  bool enabled() const { return enabled_; }
  void set_enabled(bool on) { enabled_ = on; }

 private:
  std::vector<Node> nodes_;
  bool enabled_ = true;
};

/// Disables recording on a tape for the guard's lifetime.
template <typename T>
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape<T>& tape) : tape_(tape), prev_(tape.enabled()) {
    tape_.set_enabled(false);
  }
  ~NoGradGuard() { tape_.set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<T>& tape_;
  bool prev_;
};

enum class ParamKind { trainable, buffer };

/// Named parameter registry. Buffers (batch-norm running statistics) are
/// stored and counted but never optimized.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    ParamKind kind;
  };

  Tensor<T> add(std::string name, Shape shape, ParamKind kind = ParamKind::trainable);
  const Tensor<T>& get(std::string_view name) const;
  Tensor<T>& get(std::string_view name);
  bool contains(std::string_view name) const;

  std::span<Entry> entries() { return entries_; }
  std::span<const Entry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;

  void zero_grads();

 private:
  std::vector<Entry> entries_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

/// Converts values between precisions; the result is a fresh leaf.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  Tensor<To> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

}  // namespace udet
