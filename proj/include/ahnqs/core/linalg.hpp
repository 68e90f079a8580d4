// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices and vectors of 64-bit reals.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ahnqs {

/// Raised whenever operand shapes do not line up.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class Vector {
public:
  Vector() = default;
  explicit Vector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  Vector(std::initializer_list<double> values) : data_(values) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t dim() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double &operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Vector &, const Vector &) = default;

private:
  std::vector<double> data_;
};

class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double &operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  friend bool operator==(const Matrix &, const Matrix &) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {
inline void require(bool ok, const std::string &what) {
  if (!ok)
    throw DimensionError(what);
}
inline std::string vec_shape(const Vector &v) { return "vector(" + std::to_string(v.dim()) + ")"; }
} // namespace detail

/// m * v
inline Vector matvec(const Matrix &m, const Vector &v) {
  detail::require(m.cols() == v.dim(),
                  "matvec: matrix " + m.shape_string() + " vs " + detail::vec_shape(v));
  Vector out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c)
      acc += row[c] * v[c];
    out[r] = acc;
  }
  return out;
}

/// m^T * v
inline Vector matvec_transposed(const Matrix &m, const Vector &v) {
  detail::require(m.rows() == v.dim(),
                  "matvec_transposed: matrix " + m.shape_string() + " vs " + detail::vec_shape(v));
  Vector out(m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double vr = v[r];
    if (vr == 0.0)
      continue;
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c)
      out[c] += row[c] * vr;
  }
  return out;
}

/// out += m^T * v, without allocating.
inline void add_matvec_transposed(Vector &out, const Matrix &m, const Vector &v) {
  detail::require(m.rows() == v.dim() && m.cols() == out.dim(),
                  "add_matvec_transposed: matrix " + m.shape_string() + " vs " +
                      detail::vec_shape(v) + " into " + detail::vec_shape(out));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double vr = v[r];
    if (vr == 0.0)
      continue;
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c)
      out[c] += row[c] * vr;
  }
}

/// Column `c` of `m`, i.e. m times the one-hot vector e_c.
inline Vector column(const Matrix &m, std::size_t c) {
  detail::require(c < m.cols(), "column " + std::to_string(c) + " out of range for " +
                                    m.shape_string());
  Vector out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    out[r] = m(r, c);
  return out;
}

/// acc += scale * a b^T
inline void add_outer(Matrix &acc, const Vector &a, const Vector &b, double scale = 1.0) {
  detail::require(acc.rows() == a.dim() && acc.cols() == b.dim(),
                  "add_outer: accumulator " + acc.shape_string() + " vs " + detail::vec_shape(a) +
                      " and " + detail::vec_shape(b));
  for (std::size_t r = 0; r < acc.rows(); ++r) {
    const double ar = scale * a[r];
    if (ar == 0.0)
      continue;
    auto row = acc.row(r);
    for (std::size_t c = 0; c < row.size(); ++c)
      row[c] += ar * b[c];
  }
}

/// acc[:, c] += v
inline void add_to_column(Matrix &acc, std::size_t c, const Vector &v) {
  detail::require(acc.rows() == v.dim() && c < acc.cols(),
                  "add_to_column: accumulator " + acc.shape_string() + " vs " +
                      detail::vec_shape(v) + " at column " + std::to_string(c));
  for (std::size_t r = 0; r < acc.rows(); ++r)
    acc(r, c) += v[r];
}

inline double dot(const Vector &a, const Vector &b) {
  detail::require(a.dim() == b.dim(), "dot: " + detail::vec_shape(a) + " vs " + detail::vec_shape(b));
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i)
    acc += a[i] * b[i];
  return acc;
}

inline Vector add(const Vector &a, const Vector &b) {
  detail::require(a.dim() == b.dim(), "add: " + detail::vec_shape(a) + " vs " + detail::vec_shape(b));
  Vector out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i)
    out[i] = a[i] + b[i];
  return out;
}

inline void add_in_place(Vector &a, const Vector &b, double scale = 1.0) {
  detail::require(a.dim() == b.dim(),
                  "add_in_place: " + detail::vec_shape(a) + " vs " + detail::vec_shape(b));
  for (std::size_t i = 0; i < a.dim(); ++i)
    a[i] += scale * b[i];
}

/// Elementwise product.
inline Vector hadamard(const Vector &a, const Vector &b) {
  detail::require(a.dim() == b.dim(),
                  "hadamard: " + detail::vec_shape(a) + " vs " + detail::vec_shape(b));
  Vector out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i)
    out[i] = a[i] * b[i];
  return out;
}

inline Vector scaled(const Vector &a, double s) {
  Vector out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i)
    out[i] = a[i] * s;
  return out;
}

inline Vector tanh(const Vector &a) {
  Vector out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i)
    out[i] = std::tanh(a[i]);
  return out;
}

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

inline double squared_norm(std::span<const double> xs) {
  double acc = 0.0;
  for (double x : xs)
    acc += x * x;
  return acc;
}

} // namespace ahnqs
