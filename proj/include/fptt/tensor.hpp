#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fptt/errors.hpp"

namespace fptt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
};

// Dense row-major tensor. Copies of a Tensor share storage (handle semantics),
// so a parameter captured by a model and by an optimizer is the same object.
// Use clone() for an independent value.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return storage_->shape.at(axis); }
  std::size_t numel() const { return storage_->data.size(); }

  std::span<T> data() { return storage_->data; }
  std::span<const T> data() const { return storage_->data; }
  T& operator[](std::size_t i) { return storage_->data[i]; }
  const T& operator[](std::size_t i) const { return storage_->data[i]; }
  T& at(std::size_t row, std::size_t col);
  const T& at(std::size_t row, std::size_t col) const;
  T item() const;

  bool requires_grad() const { return storage_->requires_grad; }
  Tensor& set_requires_grad(bool flag = true);

  bool has_grad() const { return !storage_->grad.empty(); }
  // Gradient buffer; zeros when nothing has been accumulated.
  std::vector<T> grad() const;
  std::span<const T> grad_view() const { return storage_->grad; }
  void zero_grad() { storage_->grad.clear(); }

  // Same values, no gradient tracking, independent storage.
  Tensor clone() const;
  Tensor detach() const { return clone(); }

  TensorStorage<T>* storage() const { return storage_.get(); }
  const std::shared_ptr<TensorStorage<T>>& storage_ptr() const { return storage_; }
  static Tensor wrap(std::shared_ptr<TensorStorage<T>> s);

 private:
  std::shared_ptr<TensorStorage<T>> storage_;
};

// Ordered record of differentiable operations executed while the tape is
// active on the current thread. Entries are appended in execution order,
// which is a topological order of the graph.
template <typename T>
class Tape {
 public:
  using Node = std::shared_ptr<TensorStorage<T>>;
  using BackwardFn = std::function<void()>;

  void record(std::vector<Node> inputs, Node output, BackwardFn fn);

  // Accumulates d(loss)/d(x) into the grad of every requires_grad tensor
  // reachable from `loss`. Clear grads between optimizer steps.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return entries_.size(); }
  // Entries whose backward closure ran during the last backward().
  std::size_t last_visit_count() const { return last_visits_; }
  void clear();

  static Tape* active() { return active_slot(); }
  static Tape*& active_slot();

 private:
  struct Entry {
    std::vector<Node> inputs;
    Node output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  std::size_t last_visits_ = 0;
};

// Installs a tape as the active one for the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Suspends recording on the current thread (evaluation passes).
template <typename T>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <typename T>
void backward(const Tensor<T>& loss);

// Allocates (zero-filled) and returns the gradient buffer of a storage.
template <typename T>
T* grad_buffer(TensorStorage<T>* s);

bool debug_checks_enabled();

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;
extern template class TapeScope<float>;
extern template class TapeScope<double>;
extern template class NoGradScope<float>;
extern template class NoGradScope<double>;

}  // namespace fptt
