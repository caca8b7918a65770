#pragma once

// Dense row-major tensor of doubles (last axis fastest). All numeric state in
// the models lives in these; shapes are small enough that value semantics are
// the right call.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "octlat/common.hpp"

namespace octlat {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(size_t(checked_numel(shape_)), fill) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (int64_t(data_.size()) != checked_numel(shape_))
      fail("tensor: data length ", data_.size(), " does not match shape ",
           shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor from(std::initializer_list<double> v, Shape shape) {
    return Tensor(std::move(shape), std::vector<double>(v));
  }

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return int64_t(data_.size()); }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& at(int64_t i) { return data_[size_t(i)]; }
  double at(int64_t i) const { return data_[size_t(i)]; }

  // 2-D access helpers; most model math is [rows, cols].
  int64_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? shape_[0] : -1); }
  int64_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? 1 : -1); }
  double& at(int64_t r, int64_t c) { return data_[size_t(r * shape_[1] + c)]; }
  double at(int64_t r, int64_t c) const { return data_[size_t(r * shape_[1] + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      fail("reshape: cannot view ", shape_str(shape_), " as ", shape_str(s));
    Tensor out;
    out.shape_ = std::move(s);
    out.data_ = data_;
    return out;
  }

  double max_abs() const {
    double m = 0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

 private:
  static int64_t checked_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) {
      if (e <= 0) fail("tensor: non-positive extent in shape ", shape_str(s));
      n *= e;
    }
    return n;
  }

  Shape shape_;
  std::vector<double> data_;
};

// C = A * B for [n,k] x [k,m]; ikj loop order keeps the inner stride unit.
inline void matmul_into(const Tensor& a, const Tensor& b, Tensor& c,
                        bool accumulate = false) {
  int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (!accumulate) std::fill(c.data(), c.data() + n * m, 0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t l = 0; l < k; ++l) {
      double av = pa[i * k + l];
      if (av == 0.0) continue;
      const double* brow = pb + l * m;
      double* crow = pc + i * m;
      for (int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// A^T * B for [n,k]^T x [n,m] -> [k,m]; used by matmul adjoints.
inline void matmul_at_b_into(const Tensor& a, const Tensor& b, Tensor& c,
                             bool accumulate = false) {
  int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (!accumulate) std::fill(c.data(), c.data() + k * m, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const double* arow = a.data() + i * k;
    const double* brow = b.data() + i * m;
    for (int64_t l = 0; l < k; ++l) {
      double av = arow[l];
      if (av == 0.0) continue;
      double* crow = c.data() + l * m;
      for (int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// A * B^T for [n,k] x [m,k]^T -> [n,m].
inline void matmul_a_bt_into(const Tensor& a, const Tensor& b, Tensor& c,
                             bool accumulate = false) {
  int64_t n = a.dim(0), k = a.dim(1), m = b.dim(0);
  if (!accumulate) std::fill(c.data(), c.data() + n * m, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const double* arow = a.data() + i * k;
    for (int64_t j = 0; j < m; ++j) {
      const double* brow = b.data() + j * k;
      double acc = 0;
      for (int64_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      c.data()[i * m + j] += acc;
    }
  }
}

}  // namespace octlat
