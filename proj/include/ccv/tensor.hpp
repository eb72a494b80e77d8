#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccv {

// Dense row-major tensor, channels-first for images ([C,H,W]).
// Copying a Tensor copies the handle; the underlying storage is shared.
// Use clone() for a deep copy. Gradients live next to the data so that a
// leaf inserted into a Graph still holds its gradient after backward().
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    s_->shape = std::move(shape);
    s_->data.assign(checked_numel(s_->shape), T(0));
    s_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t(std::move(shape));
    for (T& v : t.data()) v = value;
    return t;
  }

  static Tensor scalar(T value) { return full({1}, value); }

  static Tensor from_data(std::vector<int> shape, std::vector<T> data) {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    if (checked_numel(shape) != static_cast<int64_t>(data.size()))
      throw std::invalid_argument("tensor data length does not match shape");
    t.s_->shape = std::move(shape);
    t.s_->data = std::move(data);
    return t;
  }

  bool defined() const { return s_ != nullptr; }
  const std::vector<int>& shape() const { return s_->shape; }
  int dim(int i) const { return s_->shape.at(i); }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(s_->data.size()); }

  // Handle semantics: a const Tensor still exposes mutable storage, like a
  // shared_ptr. Deep immutability is by convention (requires_grad=false
  // leaves are never written by the graph).
  std::vector<T>& data() const { return s_->data; }
  T* ptr() const { return s_->data.data(); }

  T value() const {
    if (numel() != 1) throw std::invalid_argument("value() requires a single-element tensor");
    return s_->data[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool b) const { s_->requires_grad = b; }

  bool has_grad() const { return !s_->grad.empty(); }
  std::vector<T>& grad() const { return s_->grad; }

  // Allocates a zero gradient buffer if absent.
  void ensure_grad() const {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
  }
  void zero_grad() const {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }

  Tensor clone() const {
    Tensor t;
    t.s_ = std::make_shared<Storage>(*s_);
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t(shape());
    for (int64_t i = 0; i < numel(); ++i) t.data()[i] = static_cast<U>(s_->data[i]);
    t.set_requires_grad(s_->requires_grad);
    return t;
  }

  bool same_storage(const Tensor& o) const { return s_ == o.s_; }
  const void* storage_id() const { return s_.get(); }

  bool same_shape(const Tensor& o) const { return s_->shape == o.s_->shape; }

  static std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
  }
  std::string shape_str() const { return shape_str(s_->shape); }

 private:
  struct Storage {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first needed; zeroed on allocation
    bool requires_grad = false;
  };

  static int64_t checked_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] <= 0)
        throw std::invalid_argument("tensor dimension " + std::to_string(i) +
                                    " must be positive, got " + std::to_string(shape[i]));
      n *= shape[i];
    }
    return n;
  }

  std::shared_ptr<Storage> s_;

  template <typename U>
  friend class Tensor;
};

// Value-identical copy that participates in no graph: anything computed from
// the result contributes zero gradient to the original tensor.
template <typename T>
Tensor<T> detach(const Tensor<T>& t) {
  Tensor<T> out = Tensor<T>::from_data(t.shape(), t.data());
  return out;
}

}  // namespace ccv
