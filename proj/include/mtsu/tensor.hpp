#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtsu {

/// Dense N-dimensional array of reals, row-major. The universal value type of
/// the library. Shape extents must be positive.
template <typename T>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(checked_numel(shape)), T(0));
  }

  Tensor(std::vector<int64_t> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (checked_numel(shape) != static_cast<int64_t>(data.size()))
      throw std::invalid_argument("tensor: data length does not match shape");
  }

  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int64_t> s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static int64_t checked_numel(const std::vector<int64_t>& s) {
    if (s.empty()) throw std::invalid_argument("tensor: empty shape");
    int64_t n = 1;
    for (int64_t e : s) {
      if (e <= 0) throw std::invalid_argument("tensor: nonpositive extent");
      if (n > (int64_t(1) << 40) / e)
        throw std::invalid_argument("tensor: extent overflow");
      n *= e;
    }
    return n;
  }
};

template <typename U, typename T>
Tensor<U> cast(const Tensor<T>& t) {
  Tensor<U> out;
  out.shape = t.shape;
  out.data.resize(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i)
    out.data[i] = static_cast<U>(t.data[i]);
  return out;
}

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::string r = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

}  // namespace mtsu
