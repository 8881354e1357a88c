#include "axial/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

namespace axial {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

thread_local MacCounter* active_counter = nullptr;

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite input");
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, NoInit) : shape_(std::move(shape)) {
  for (auto n : shape_) {
    if (n == 0) throw ShapeError("tensor axis length must be positive: " + shape_to_string(shape_));
  }
  data_.resize(shape_size(shape_));
}

Tensor::Tensor(Shape shape) : Tensor(std::move(shape), NoInit{}) { std::fill(data_.begin(), data_.end(), 0.0); }

Tensor Tensor::uninitialized(Shape shape) { return Tensor(std::move(shape), NoInit{}); }

Tensor::Tensor(Shape shape, Storage data, NoInit) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto n : shape_) {
    if (n == 0) throw ShapeError("tensor axis length must be positive: " + shape_to_string(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_to_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " elements");
  }
}

Tensor::Tensor(Shape shape, const std::vector<double>& data)
    : Tensor(std::move(shape), Storage(data.begin(), data.end()), NoInit{}) {}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index rank mismatch");
  std::size_t off = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= shape_[i]) throw ShapeError("index out of range");
    off = off * shape_[i] + index[i];
  }
  return off;
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
  return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
}

Tensor Tensor::reshaped(Shape shape) const& { return Tensor(std::move(shape), data_, NoInit{}); }

Tensor Tensor::reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_), NoInit{}); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

AxisPermutation::AxisPermutation(std::vector<std::size_t> perm) : perm_(std::move(perm)) {
  std::vector<bool> seen(perm_.size(), false);
  for (auto p : perm_) {
    if (p >= perm_.size() || seen[p]) throw InvalidPermutation("axis permutation is not a bijection");
    seen[p] = true;
  }
}

AxisPermutation AxisPermutation::identity(std::size_t rank) {
  std::vector<std::size_t> p(rank);
  std::iota(p.begin(), p.end(), 0);
  return AxisPermutation(std::move(p));
}

AxisPermutation AxisPermutation::move_to_back(std::size_t rank, std::size_t axis) {
  if (axis >= rank) throw InvalidPermutation("axis out of range");
  std::vector<std::size_t> p;
  for (std::size_t i = 0; i < rank; ++i) {
    if (i != axis) p.push_back(i);
  }
  p.push_back(axis);
  return AxisPermutation(std::move(p));
}

AxisPermutation AxisPermutation::inverse() const {
  std::vector<std::size_t> inv(perm_.size());
  for (std::size_t i = 0; i < perm_.size(); ++i) inv[perm_[i]] = i;
  return AxisPermutation(std::move(inv));
}

Tensor permute(const Tensor& t, const AxisPermutation& p) {
  const std::size_t rank = t.rank();
  if (p.rank() != rank) {
    throw InvalidPermutation("permutation of rank " + std::to_string(p.rank()) + " applied to tensor " +
                             shape_to_string(t.shape()));
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = t.shape()[p[i]];

  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * t.shape()[i];
  // Input stride seen when stepping along each output axis.
  std::vector<std::size_t> step(rank);
  for (std::size_t i = 0; i < rank; ++i) step[i] = in_strides[p[i]];

  Tensor out = Tensor::uninitialized(out_shape);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  auto dst = out.data();
  for (std::size_t flat = 0; flat < dst.size(); ++flat) {
    dst[flat] = t[src];
    for (std::size_t ax = rank; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        src += step[ax];
        break;
      }
      src -= step[ax] * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 operands");
  const std::size_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
  if (b.dim(0) != inner) {
    throw ShapeError("matmul inner dimension mismatch: " + shape_to_string(a.shape()) + " * " +
                     shape_to_string(b.shape()));
  }
  Tensor out = Tensor::uninitialized({rows, cols});
  const auto r = static_cast<Eigen::Index>(rows), k = static_cast<Eigen::Index>(inner),
             c = static_cast<Eigen::Index>(cols);
  RowMap(out.data().data(), r, c).noalias() = ConstRowMap(a.data().data(), r, k) * ConstRowMap(b.data().data(), k, c);
  MacCounter::add(static_cast<std::uint64_t>(rows) * inner * cols);
  return out;
}

Tensor transpose(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("transpose expects a rank-2 tensor");
  return permute(t, AxisPermutation({1, 0}));
}

Tensor softmax(const Tensor& t, std::size_t axis) {
  if (axis >= t.rank()) throw ShapeError("softmax axis out of range");
  require_finite(t, "softmax");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= t.dim(i);
  for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.dim(i);
  const std::size_t len = t.dim(axis);

  Tensor out = Tensor::uninitialized(t.shape());
  auto src = t.data();
  auto dst = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = src[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, src[base + k * inner]);
      double sum = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(src[base + k * inner] - mx);
        dst[base + k * inner] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (std::size_t k = 0; k < len; ++k) dst[base + k * inner] *= inv;
    }
  }
  return out;
}

namespace {

double apply(double x, double y, ElementwiseKind kind) {
  switch (kind) {
    case ElementwiseKind::kAdd:
      return x + y;
    case ElementwiseKind::kSub:
      return x - y;
    case ElementwiseKind::kMul:
      return x * y;
  }
  return 0.0;
}

}  // namespace

Tensor elementwise(const Tensor& t, const Tensor& u, ElementwiseKind kind) {
  if (u.rank() == 0) return elementwise(t, u[0], kind);
  if (t.rank() == 0) {
    Tensor out = Tensor::uninitialized(u.shape());
    for (std::size_t i = 0; i < u.size(); ++i) out[i] = apply(t[0], u[i], kind);
    return out;
  }
  if (t.shape() != u.shape()) {
    throw ShapeError("elementwise shape mismatch: " + shape_to_string(t.shape()) + " vs " +
                     shape_to_string(u.shape()));
  }
  Tensor out = Tensor::uninitialized(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = apply(t[i], u[i], kind);
  return out;
}

Tensor elementwise(const Tensor& t, double s, ElementwiseKind kind) {
  Tensor out = Tensor::uninitialized(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = apply(t[i], s, kind);
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

MacCounter::MacCounter() : previous_(active_counter) { active_counter = this; }

MacCounter::~MacCounter() { active_counter = previous_; }

void MacCounter::add(std::uint64_t macs) {
  if (active_counter != nullptr) active_counter->count_ += macs;
}

}  // namespace axial
