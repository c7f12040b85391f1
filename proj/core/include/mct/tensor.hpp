#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mct {

// Dense row-major tensor. Storage is float32 in the model path; tests
// instantiate the double variant for finite-difference oracles.
template <typename T>
struct TensorT {
  std::vector<long> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<long> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
  }

  static long numel_of(const std::vector<long>& s) {
    long n = 1;
    for (long d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  static TensorT zeros(std::vector<long> s) { return TensorT(std::move(s)); }

  static TensorT full(std::vector<long> s, T value) {
    TensorT t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }

  long numel() const { return static_cast<long>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  long dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator()(long i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator()(long i) const { return data[static_cast<std::size_t>(i)]; }
  T& operator()(long i, long j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
  const T& operator()(long i, long j) const {
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }
  T& operator()(long i, long j, long k) {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  const T& operator()(long i, long j, long k) const {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

using Tensor = TensorT<float>;

// Binary array file with a shape header ("MCTT" tag, version, dtype, dims).
// Used for exporting capture tensors and other large arrays.
void save_tensor(const std::string& path, const TensorT<float>& t);
void save_tensor(const std::string& path, const TensorT<double>& t);
TensorT<float> load_tensor_f32(const std::string& path);
TensorT<double> load_tensor_f64(const std::string& path);

}  // namespace mct
