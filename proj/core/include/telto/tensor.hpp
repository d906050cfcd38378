#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace telto {

/// Dense row-major tensor of small rank (vectors, matrices, [entities, channels, steps]).
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, T fill = T{})
      : shape(std::move(dims)), data(element_count(shape), fill) {}

  static std::size_t element_count(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  T& operator[](std::size_t flat) { return data[flat]; }
  const T& operator[](std::size_t flat) const { return data[flat]; }

  T& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  T& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  void fill(T value) { std::fill(data.begin(), data.end(), value); }

  Tensor reshaped(std::vector<std::size_t> dims) const {
    if (element_count(dims) != size())
      throw std::invalid_argument("tensor reshape: element count mismatch");
    Tensor out;
    out.shape = std::move(dims);
    out.data = data;
    return out;
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& in) {
  Tensor<To> out;
  out.shape = in.shape;
  out.data.reserve(in.data.size());
  for (From v : in.data) out.data.push_back(static_cast<To>(v));
  return out;
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
std::string shape_string(const Tensor<T>& t) {
  return shape_string(t.shape);
}

}  // namespace telto
