#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cosmae/error.hpp"
#include "cosmae/rng.hpp"

namespace cosmae {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor. The scalar type doubles as the dtype: float for
// training, double for the finite-difference test paths.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0))
      : shape(std::move(s)),
        data(static_cast<std::size_t>(shape_numel(shape)), fill) {
    for (auto d : shape) {
      if (d <= 0) throw UsageError("Tensor: nonpositive dimension " + shape_str(shape));
    }
  }
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
      throw UsageError("Tensor: data length does not match shape " + shape_str(shape));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  bool empty() const { return data.empty(); }

  // rank-2 accessors
  std::int64_t rows() const { return shape.at(0); }
  std::int64_t cols() const { return shape.at(1); }
  T& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
  T at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols() + c)]; }

  T item() const {
    if (numel() != 1) throw UsageError("Tensor::item: numel != 1");
    return data[0];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  void fill_normal(Rng& rng, double stddev) {
    for (auto& v : data) v = static_cast<T>(rng.normal() * stddev);
  }
};

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
  if (!a.same_shape(b)) {
    throw UsageError(std::string(who) + ": shape mismatch " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
  }
}

// ---------------------------------------------------------------------------
// Kernels. Plain value-in value-out functions; the autodiff layer wraps these.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = a;
  for (auto& v : out.data) v *= s;
  return out;
}

// C[m x n] = A[m x k] * B[k x n], ikj order for locality.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw UsageError("matmul: incompatible shapes " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
  const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> out(Shape{m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    T* out_row = &out.data[static_cast<std::size_t>(i * n)];
    const T* a_row = &a.data[static_cast<std::size_t>(i * k)];
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const T aik = a_row[kk];
      if (aik == T(0)) continue;
      const T* b_row = &b.data[static_cast<std::size_t>(kk * n)];
      for (std::int64_t j = 0; j < n; ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw UsageError("transpose: rank-2 only");
  Tensor<T> out(Shape{a.cols(), a.rows()});
  for (std::int64_t i = 0; i < a.rows(); ++i) {
    for (std::int64_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  }
  return out;
}

// out[i] = a[idx[i]] for rank-2 a; indices may repeat.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<std::int64_t>& idx) {
  if (a.rank() != 2) throw UsageError("gather_rows: rank-2 only");
  Tensor<T> out(Shape{static_cast<std::int64_t>(idx.size()), a.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw UsageError("gather_rows: index out of range");
    std::copy_n(&a.data[static_cast<std::size_t>(idx[i] * a.cols())],
                static_cast<std::size_t>(a.cols()),
                &out.data[i * static_cast<std::size_t>(a.cols())]);
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw UsageError("concat_rows: empty input");
  const std::int64_t c = parts[0]->cols();
  std::int64_t r = 0;
  for (auto* p : parts) {
    if (p->rank() != 2 || p->cols() != c) throw UsageError("concat_rows: column mismatch");
    r += p->rows();
  }
  Tensor<T> out(Shape{r, c});
  std::size_t off = 0;
  for (auto* p : parts) {
    std::copy(p->data.begin(), p->data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += p->data.size();
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::int64_t from, std::int64_t to) {
  if (a.rank() != 2 || from < 0 || to > a.cols() || from >= to) {
    throw UsageError("slice_cols: bad range");
  }
  Tensor<T> out(Shape{a.rows(), to - from});
  for (std::int64_t i = 0; i < a.rows(); ++i) {
    for (std::int64_t j = from; j < to; ++j) out.at(i, j - from) = a.at(i, j);
  }
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  if (a.rank() != 2) throw UsageError("softmax_rows: rank-2 only");
  Tensor<T> out(a.shape);
  for (std::int64_t i = 0; i < a.rows(); ++i) {
    T mx = a.at(i, 0);
    for (std::int64_t j = 1; j < a.cols(); ++j) mx = std::max(mx, a.at(i, j));
    T sum = T(0);
    for (std::int64_t j = 0; j < a.cols(); ++j) {
      const T e = std::exp(a.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (std::int64_t j = 0; j < a.cols(); ++j) out.at(i, j) /= sum;
  }
  return out;
}

template <typename T>
T frobenius_dot(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "frobenius_dot");
  T s = T(0);
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

}  // namespace cosmae
