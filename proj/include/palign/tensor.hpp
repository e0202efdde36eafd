#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "palign/error.hpp"
#include "palign/rng.hpp"

namespace palign {

// Dense row-major tensor. Training runs with R = float; R = double exists
// for finite-difference gradient checks.
template <typename R>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_numel(shape_), R(0));
  }

  Tensor(std::vector<int> shape, std::vector<R> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != static_cast<int64_t>(data_.size()))
      throw DimensionError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                           shape_string(shape_));
  }

  static Tensor scalar(R v) { return Tensor({1}, {v}); }

  static Tensor full(std::vector<int> shape, R v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  int rows() const {
    require_ndim(2, "rows()");
    return shape_[0];
  }
  int cols() const {
    require_ndim(2, "cols()");
    return shape_[1];
  }

  R* data() { return data_.data(); }
  const R* data() const { return data_.data(); }
  std::vector<R>& vec() { return data_; }
  const std::vector<R>& vec() const { return data_; }

  R& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  R operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  R& at(int i, int j) {
    require_ndim(2, "at(i,j)");
    return data_[static_cast<size_t>(i) * shape_[1] + j];
  }
  R at(int i, int j) const {
    require_ndim(2, "at(i,j)");
    return data_[static_cast<size_t>(i) * shape_[1] + j];
  }

  bool shape_equals(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<int> shape) const {
    if (checked_numel(shape) != numel())
      throw DimensionError("reshape " + shape_string(shape_) + " to " + shape_string(shape) + ": element count differs");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  void fill(R v) {
    for (auto& x : data_) x = v;
  }

  void fill_normal(Rng& rng, double stddev, double mean = 0.0) {
    for (auto& x : data_) x = static_cast<R>(mean + stddev * rng.normal());
  }

  static std::string shape_string(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
  }

 private:
  static int64_t checked_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw DimensionError("negative dimension in shape " + shape_string(shape));
      n *= d;
    }
    return n;
  }

  void require_ndim(int n, const char* what) const {
    if (ndim() != n)
      throw DimensionError(std::string(what) + " requires rank " + std::to_string(n) + ", tensor is " +
                           shape_string(shape_));
  }

  std::vector<int> shape_;
  std::vector<R> data_;
};

// C += A * B with optional transposes; plain loops, kept cache-friendly.
template <typename R>
void gemm_acc(Tensor<R>& c, const Tensor<R>& a, const Tensor<R>& b, bool trans_a, bool trans_b) {
  int am = trans_a ? a.cols() : a.rows();
  int ak = trans_a ? a.rows() : a.cols();
  int bk = trans_b ? b.cols() : b.rows();
  int bn = trans_b ? b.rows() : b.cols();
  if (ak != bk)
    throw DimensionError("matmul inner dimensions differ: " + Tensor<R>::shape_string(a.shape()) +
                         (trans_a ? "^T" : "") + " x " + Tensor<R>::shape_string(b.shape()) + (trans_b ? "^T" : ""));
  if (c.rows() != am || c.cols() != bn) throw DimensionError("matmul output shape mismatch");

  R* cd = c.data();
  const R* ad = a.data();
  const R* bd = b.data();
  int lda = a.cols(), ldb = b.cols(), ldc = c.cols();
  if (!trans_a && !trans_b) {
    for (int i = 0; i < am; ++i)
      for (int k = 0; k < ak; ++k) {
        R av = ad[i * lda + k];
        if (av == R(0)) continue;
        const R* brow = bd + k * ldb;
        R* crow = cd + i * ldc;
        for (int j = 0; j < bn; ++j) crow[j] += av * brow[j];
      }
  } else if (!trans_a && trans_b) {
    for (int i = 0; i < am; ++i)
      for (int j = 0; j < bn; ++j) {
        const R* arow = ad + i * lda;
        const R* brow = bd + j * ldb;
        R acc = R(0);
        for (int k = 0; k < ak; ++k) acc += arow[k] * brow[k];
        cd[i * ldc + j] += acc;
      }
  } else if (trans_a && !trans_b) {
    for (int k = 0; k < ak; ++k)
      for (int i = 0; i < am; ++i) {
        R av = ad[k * lda + i];
        if (av == R(0)) continue;
        const R* brow = bd + k * ldb;
        R* crow = cd + i * ldc;
        for (int j = 0; j < bn; ++j) crow[j] += av * brow[j];
      }
  } else {
    for (int i = 0; i < am; ++i)
      for (int j = 0; j < bn; ++j) {
        R acc = R(0);
        for (int k = 0; k < ak; ++k) acc += ad[k * lda + i] * bd[j * ldb + k];
        cd[i * ldc + j] += acc;
      }
  }
}

template <typename R>
Tensor<R> matmul_val(const Tensor<R>& a, const Tensor<R>& b, bool trans_a = false, bool trans_b = false) {
  int m = trans_a ? a.cols() : a.rows();
  int n = trans_b ? b.rows() : b.cols();
  Tensor<R> c({m, n});
  gemm_acc(c, a, b, trans_a, trans_b);
  return c;
}

template <typename R>
Tensor<R> transpose_val(const Tensor<R>& a) {
  Tensor<R> t({a.cols(), a.rows()});
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

template <typename R>
uint64_t tensor_checksum(const Tensor<R>& t) {
  // FNV-1a over raw bytes; used for freeze contracts, not security.
  const unsigned char* p = reinterpret_cast<const unsigned char*>(t.data());
  size_t n = static_cast<size_t>(t.numel()) * sizeof(R);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace palign
