#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssn {

// Error taxonomy. The CLI maps these onto its exit codes:
// ConfigError -> 1, FormatError/DataError/SurgeryError -> 2,
// everything numeric -> 3.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SurgeryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

enum class DType { f32, f64 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "ssn tensors are 32- or 64-bit float");
  if constexpr (std::is_same_v<T, float>) return DType::f32;
  return DType::f64;
}

inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until first touched
  bool requires_grad = false;

  std::size_t numel() const { return values.size(); }

  std::span<T> ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major n-dimensional array with an optional gradient buffer.
/// Copies are shallow: a Tensor is a shared handle, so layers can hand the
/// same parameter to an optimizer and a tape without aliasing surprises.
template <typename T>
class Tensor {
 public:
  using Impl = detail::TensorImpl<T>;

  Tensor() : impl_(std::make_shared<Impl>()) {}

  explicit Tensor(Shape shape, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    impl_->shape = std::move(shape);
    impl_->values.assign(shape_numel(impl_->shape), T(0));
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
  }

  static Tensor scalar(T value) { return full({1}, value); }

  static Tensor from(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != values.size())
      throw ShapeError("tensor data size " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->values = std::move(values);
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->values.size(); }
  constexpr DType dtype() const { return dtype_of<T>(); }

  std::span<T> values() { return impl_->values; }
  std::span<const T> values() const { return impl_->values; }
  T* data() { return impl_->values.data(); }
  const T* data() const { return impl_->values.data(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer, allocated (zero-filled) on first use.
  std::span<T> grad() { return impl_->ensure_grad(); }
  std::span<const T> grad() const {
    if (!has_grad()) throw NumericError("gradient not populated");
    return impl_->grad;
  }
  void zero_grad() {
    if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  /// Same data, new shape; element count must be preserved.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw ShapeError("reshape " + shape_str(this->shape()) + " -> " +
                       shape_str(shape) + " changes element count");
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->values = impl_->values;
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.impl()->shape = impl_->shape;
    out.impl()->values.assign(impl_->values.begin(), impl_->values.end());
    out.impl()->requires_grad = impl_->requires_grad;
    return out;
  }

  bool same_shape(const Tensor& other) const { return impl_->shape == other.impl_->shape; }

  // Internal handle used by the tape and op backward closures.
  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

template <typename T>
void fill_normal(Tensor<T>& t, std::mt19937_64& rng, T mean, T stddev) {
  std::normal_distribution<double> dist(static_cast<double>(mean),
                                        static_cast<double>(stddev));
  for (T& v : t.values()) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_uniform(Tensor<T>& t, std::mt19937_64& rng, T lo, T hi) {
  std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                              static_cast<double>(hi));
  for (T& v : t.values()) v = static_cast<T>(dist(rng));
}

}  // namespace ssn
