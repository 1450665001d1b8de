#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mmsc/errors.hpp"

namespace mmsc {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major array of doubles, rank 1 or 2. Values are validated finite
// at construction; instances are treated as immutable once built.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate();
  }

  static Tensor zeros(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return Tensor(shape, std::vector<double>(n, 0.0));
  }

  static Tensor full(const Shape& shape, double v) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return Tensor(shape, std::vector<double>(n, v));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor vector(std::vector<double> data) {
    Shape s{data.size()};
    return Tensor(std::move(s), std::move(data));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }
  bool is_scalar() const { return rank() == 1 && shape_[0] == 1; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data_mut() { return data_; }

  double operator()(std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i) { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  double item() const {
    if (!is_scalar()) throw UsageError("item(): tensor is not a scalar, shape " + shape_str(shape_));
    return data_[0];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void check_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite value in tensor of shape " + shape_str(shape_));
      }
    }
  }

 private:
  void validate() const {
    if (shape_.empty() || shape_.size() > 2) {
      throw DimensionError("tensor rank must be 1 or 2, got shape " + shape_str(shape_));
    }
    std::size_t n = 1;
    for (auto d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
      n *= d;
    }
    if (n != data_.size()) {
      throw DimensionError("shape " + shape_str(shape_) + " does not match data length " +
                           std::to_string(data_.size()));
    }
    check_finite();
  }

  Shape shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace mmsc
