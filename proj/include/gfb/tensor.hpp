#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "gfb/error.hpp"

namespace gfb {

// Dense row-major float tensor. Images are stored H x W x C (channel-last),
// token sequences T x D.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape_in) : shape(std::move(shape_in)) {
    v.assign(static_cast<size_t>(count(shape)), 0.0f);
  }
  Tensor(std::vector<int> shape_in, std::vector<float> data)
      : shape(std::move(shape_in)), v(std::move(data)) {
    if (static_cast<int64_t>(v.size()) != count(shape))
      fail(Err::Shape, "tensor data does not match shape");
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  float* data() { return v.data(); }
  const float* data() const { return v.data(); }
  float& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

  void fill(float x) { std::fill(v.begin(), v.end(), x); }
  void zero() { fill(0.0f); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::vector<int> shape;
  std::vector<float> v;
};

// Trainable parameter: value plus accumulated gradient.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, std::vector<int> shape)
      : name(std::move(n)), value(shape), grad(std::move(shape)) {}

  void zero_grad() { grad.zero(); }
  int64_t size() const { return value.size(); }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

}  // namespace gfb
