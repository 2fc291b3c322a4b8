#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vplane {

// Dense NCHW tensor. The scalar type is templated so the same graph can run
// in float for speed and double for finite-difference checks.
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0) {
      throw std::invalid_argument("tensor: negative dimension");
    }
  }

  std::size_t size() const { return v.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_stride() const { return static_cast<std::size_t>(c) * h * w; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T* sample(int i) { return v.data() + static_cast<std::size_t>(i) * sample_stride(); }
  const T* sample(int i) const { return v.data() + static_cast<std::size_t>(i) * sample_stride(); }

  T& at(int in, int ic, int iy, int ix) {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  const T& at(int in, int ic, int iy, int ix) const {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
  void zero() { std::fill(v.begin(), v.end(), T(0)); }
};

template <typename T>
inline void require_shape(const Tensor4<T>& t, int n, int c, int h, int w, const char* who) {
  if (t.n != n || t.c != c || t.h != h || t.w != w) {
    throw std::invalid_argument(std::string(who) + ": expected shape (" + std::to_string(n) + "," +
                                std::to_string(c) + "," + std::to_string(h) + "," +
                                std::to_string(w) + "), got " + t.shape_str());
  }
}

}  // namespace vplane
