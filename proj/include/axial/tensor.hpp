#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "axial/errors.hpp"

namespace axial {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

// Leaves elements default-initialised (indeterminate for double) on resize.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;

  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

/// Dense row-major array of doubles.
///
/// A rank-0 tensor (empty shape) holds a single scalar. All axis lengths are
/// positive; the number of elements always equals the product of the shape.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, const std::vector<double>& data);

  /// Tensor whose elements are unspecified until written; every element
  /// must be assigned before it is read.
  static Tensor uninitialized(Shape shape);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor({}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  std::vector<double> values() const { return {data_.begin(), data_.end()}; }

  double operator[](std::size_t flat) const { return data_[flat]; }
  double& operator[](std::size_t flat) { return data_[flat]; }

  std::size_t offset(std::span<const std::size_t> index) const;
  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);

  /// Same data viewed under another shape with identical element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  using Storage = std::vector<double, detail::DefaultInitAllocator<double>>;
  struct NoInit {};

  Tensor(Shape shape, NoInit);
  Tensor(Shape shape, Storage data, NoInit);

  Shape shape_;
  Storage data_;
};

/// A bijection over axis indices: output axis i takes input axis perm[i].
class AxisPermutation {
 public:
  explicit AxisPermutation(std::vector<std::size_t> perm);

  static AxisPermutation identity(std::size_t rank);
  /// Moves `axis` to the last position, keeping the order of the others.
  static AxisPermutation move_to_back(std::size_t rank, std::size_t axis);

  std::size_t rank() const { return perm_.size(); }
  std::size_t operator[](std::size_t i) const { return perm_[i]; }
  const std::vector<std::size_t>& indices() const { return perm_; }
  AxisPermutation inverse() const;

 private:
  std::vector<std::size_t> perm_;
};

/// out.shape[i] == t.shape[p[i]], and out at index j equals t at the index k
/// with k[p[i]] == j[i].
Tensor permute(const Tensor& t, const AxisPermutation& p);

/// Rank-2 matrix product. Reports rows*inner*cols MACs to the active counter.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Rank-2 transpose.
Tensor transpose(const Tensor& t);

/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& t, std::size_t axis);

enum class ElementwiseKind { kAdd, kSub, kMul };

/// Pointwise op; either operand may be rank-0 and is then broadcast.
Tensor elementwise(const Tensor& t, const Tensor& u, ElementwiseKind kind);
Tensor elementwise(const Tensor& t, double s, ElementwiseKind kind);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return elementwise(a, b, ElementwiseKind::kAdd); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return elementwise(a, b, ElementwiseKind::kSub); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise(a, b, ElementwiseKind::kMul); }

double max_abs_diff(const Tensor& a, const Tensor& b);

/// Scoped multiply-accumulate counter.
///
/// While an instance is alive it is the active counter of the constructing
/// thread; kernels report into it through `MacCounter::add`. Instances nest:
/// destruction restores the previously active counter. Counts never cross
/// threads.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t count() const { return count_; }

  static void add(std::uint64_t macs);

 private:
  std::uint64_t count_ = 0;
  MacCounter* previous_;
};

}  // namespace axial
