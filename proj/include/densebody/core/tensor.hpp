#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace densebody::core {

using Scalar = double;

// Dense row-major tensor. Rank is implied by shape; most of the library works
// with rank-2 (rows x cols) and treats vectors as 1 x n or n x 1 as needed.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<Scalar> v;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    v.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }
  Tensor(int64_t r, int64_t c) : Tensor(std::vector<int64_t>{r, c}) {}

  static Tensor zeros(int64_t r, int64_t c) { return Tensor(r, c); }
  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
  static Tensor full(int64_t r, int64_t c, Scalar x) {
    Tensor t(r, c);
    std::fill(t.v.begin(), t.v.end(), x);
    return t;
  }
  static Tensor row(std::vector<Scalar> vals) {
    Tensor t;
    t.shape = {1, static_cast<int64_t>(vals.size())};
    t.v = std::move(vals);
    return t;
  }
  static Tensor scalar(Scalar x) {
    Tensor t;
    t.shape = {1, 1};
    t.v = {x};
    return t;
  }

  int64_t numel() const { return numel_of(shape); }
  int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  Scalar& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols() + c)]; }
  Scalar at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols() + c)]; }

  Scalar* data() { return v.data(); }
  const Scalar* data() const { return v.data(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }
};

}  // namespace densebody::core
