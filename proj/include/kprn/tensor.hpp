#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "kprn/common.hpp"

namespace kprn::diff {

// Dense row-major tensor of 64-bit reals. Rank 0 (scalar), 1 (vector) and
// 2 (matrix) are the shapes the model needs.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> v;
  bool requires_grad = false;

  Tensor() = default;

  static Tensor scalar(double x) {
    Tensor t;
    t.v = {x};
    return t;
  }

  static Tensor zeros(std::vector<std::int64_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.v.assign(static_cast<std::size_t>(num_elements(t.shape)), 0.0);
    return t;
  }

  static Tensor vec(std::vector<double> values) {
    Tensor t;
    t.shape = {static_cast<std::int64_t>(values.size())};
    t.v = std::move(values);
    return t;
  }

  static Tensor matrix(std::int64_t rows, std::int64_t cols, std::vector<double> values) {
    KPRN_REQUIRE(rows * cols == static_cast<std::int64_t>(values.size()),
                 "matrix: ", rows, "x", cols, " != ", values.size(), " values");
    Tensor t;
    t.shape = {rows, cols};
    t.v = std::move(values);
    return t;
  }

  static std::int64_t num_elements(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
      KPRN_REQUIRE(d > 0, "tensor extents must be positive");
      n *= d;
    }
    return n;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return shape.empty(); }

  std::int64_t rows() const {
    KPRN_REQUIRE(rank() == 2, "rows() needs rank-2 tensor");
    return shape[0];
  }
  std::int64_t cols() const {
    KPRN_REQUIRE(rank() == 2, "cols() needs rank-2 tensor");
    return shape[1];
  }

  double& at(std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
  double at(std::int64_t i) const { return v[static_cast<std::size_t>(i)]; }
  double& at(std::int64_t r, std::int64_t c) { return v[static_cast<std::size_t>(r * shape[1] + c)]; }
  double at(std::int64_t r, std::int64_t c) const { return v[static_cast<std::size_t>(r * shape[1] + c)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  KPRN_REQUIRE(a.size() == b.size(), "dot: dimension mismatch ", a.size(), " vs ", b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace kprn::diff
