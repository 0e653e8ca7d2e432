#include "fptt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace fptt {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

bool debug_checks_enabled() {
#ifdef NDEBUG
  return false;
#else
  return true;
#endif
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : storage_(std::make_shared<TensorStorage<T>>()) {
  validate_shape(shape);
  storage_->data.assign(shape_numel(shape), fill);
  storage_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : storage_(std::make_shared<TensorStorage<T>>()) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size())
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
  storage_->shape = std::move(shape);
  storage_->data = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::wrap(std::shared_ptr<TensorStorage<T>> s) {
  Tensor t;
  t.storage_ = std::move(s);
  return t;
}

template <typename T>
T& Tensor<T>::at(std::size_t row, std::size_t col) {
  return storage_->data[row * storage_->shape.back() + col];
}

template <typename T>
const T& Tensor<T>::at(std::size_t row, std::size_t col) const {
  return storage_->data[row * storage_->shape.back() + col];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return storage_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  storage_->requires_grad = flag;
  return *this;
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  if (storage_->grad.empty()) return std::vector<T>(storage_->data.size(), T(0));
  return storage_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(storage_->shape, storage_->data);
}

template <typename T>
T* grad_buffer(TensorStorage<T>* s) {
  if (s->grad.empty()) s->grad.assign(s->data.size(), T(0));
  return s->grad.data();
}

template <typename T>
Tape<T>*& Tape<T>::active_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

template <typename T>
void Tape<T>::record(std::vector<Node> inputs, Node output, BackwardFn fn) {
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(fn)});
}

template <typename T>
void Tape<T>::clear() {
  entries_.clear();
  last_visits_ = 0;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() requires a scalar loss");
  last_visits_ = 0;
  auto* target = loss.storage();
  std::size_t end = entries_.size();
  while (end > 0 && entries_[end - 1].output.get() != target) --end;
  if (end == 0) {
    if (!loss.requires_grad()) throw ContractError("loss was not produced on the active tape");
    grad_buffer(target)[0] += T(1);
    return;
  }
  // Leaves off the path still expose a zero gradient of the right shape.
  std::unordered_set<const TensorStorage<T>*> produced;
  for (std::size_t i = 0; i < end; ++i) produced.insert(entries_[i].output.get());
  for (std::size_t i = 0; i < end; ++i)
    for (auto& in : entries_[i].inputs)
      if (in->requires_grad && !produced.count(in.get())) grad_buffer(in.get());
  grad_buffer(target)[0] += T(1);

  for (std::size_t i = end; i-- > 0;) {
    auto& e = entries_[i];
    if (e.output->grad.empty()) continue;
    e.fn();
    ++last_visits_;
#ifndef NDEBUG
    for (auto& in : e.inputs)
      for (T g : in->grad)
        if (!std::isfinite(g)) throw ContractError("non-finite gradient during backward");
#endif
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  auto* tape = Tape<T>::active();
  if (!tape) throw ContractError("backward() called without an active tape");
  tape->backward(loss);
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(Tape<T>::active_slot()) {
  Tape<T>::active_slot() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  Tape<T>::active_slot() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(Tape<T>::active_slot()) {
  Tape<T>::active_slot() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
  Tape<T>::active_slot() = previous_;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;
template float* grad_buffer(TensorStorage<float>*);
template double* grad_buffer(TensorStorage<double>*);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace fptt
