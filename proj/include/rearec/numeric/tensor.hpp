#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "rearec/errors.hpp"
#include "rearec/rng.hpp"

namespace rearec::numeric {

// Dense row-major 2-D tensor. Vectors are 1xd rows, scalars 1x1.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw ArgumentError("tensor shape must be non-negative");
    data_.assign(static_cast<size_t>(rows) * static_cast<size_t>(cols), T{});
  }

  static Tensor from_rows(int rows, int cols, std::initializer_list<T> values) {
    Tensor t(rows, cols);
    if (values.size() != t.size()) throw ArgumentError("tensor literal size mismatch");
    size_t i = 0;
    for (T v : values) t.data_[i++] = v;
    return t;
  }

  static Tensor row(std::initializer_list<T> values) {
    return from_rows(1, static_cast<int>(values.size()), values);
  }

  static Tensor scalar(T v) {
    Tensor t(1, 1);
    t.data_[0] = v;
    return t;
  }

  static Tensor randn(int rows, int cols, double stddev, Rng& rng) {
    Tensor t(rows, cols);
    for (auto& v : t.data_) v = static_cast<T>(rng.normal(0.0, stddev));
    return t;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& at(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  T at(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  T& operator[](size_t i) { return data_[i]; }
  T operator[](size_t i) const { return data_[i]; }

  T* row_ptr(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
  const T* row_ptr(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  void fill(T v) {
    for (auto& x : data_) x = v;
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(rows_, cols_);
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

// dst += a * b
template <typename T>
void add_matmul_nn(Tensor<T>& dst, const Tensor<T>& a, const Tensor<T>& b) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  for (int i = 0; i < m; ++i) {
    T* drow = dst.row_ptr(i);
    for (int p = 0; p < k; ++p) {
      const T aip = a.at(i, p);
      if (aip == T{}) continue;
      const T* brow = b.row_ptr(p);
      for (int j = 0; j < n; ++j) drow[j] += aip * brow[j];
    }
  }
}

// dst += a * b^T, with b given untransposed (n x k)
template <typename T>
void add_matmul_nt(Tensor<T>& dst, const Tensor<T>& a, const Tensor<T>& b) {
  const int m = a.rows(), k = a.cols(), n = b.rows();
  for (int i = 0; i < m; ++i) {
    const T* arow = a.row_ptr(i);
    T* drow = dst.row_ptr(i);
    for (int j = 0; j < n; ++j) {
      const T* brow = b.row_ptr(j);
      T acc{};
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      drow[j] += acc;
    }
  }
}

// dst += a^T * b, with a given untransposed (m x k); dst is k x n
template <typename T>
void add_matmul_tn(Tensor<T>& dst, const Tensor<T>& a, const Tensor<T>& b) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  for (int i = 0; i < m; ++i) {
    const T* arow = a.row_ptr(i);
    const T* brow = b.row_ptr(i);
    for (int p = 0; p < k; ++p) {
      const T aip = arow[p];
      if (aip == T{}) continue;
      T* drow = dst.row_ptr(p);
      for (int j = 0; j < n; ++j) drow[j] += aip * brow[j];
    }
  }
}

template <typename T>
Tensor<T> matmul_plain(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) throw ArgumentError("matmul: inner dimensions differ");
  Tensor<T> c(a.rows(), b.cols());
  add_matmul_nn(c, a, b);
  return c;
}

}  // namespace rearec::numeric
