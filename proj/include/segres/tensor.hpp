#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <string>

#include "segres/errors.hpp"

namespace segres {

// Dense NCHW tensor on a flat Eigen array. The batch/channel/row/column
// layout is fixed so that a (n, c) plane is contiguous, which is what the
// im2col convolution path and the per-plane normalization want.
template <typename S>
struct Tensor {
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;

  int n = 0, c = 0, h = 0, w = 0;
  Array data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(Array::Zero(std::int64_t(n_) * c_ * h_ * w_)) {}

  static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.n, other.c, other.h, other.w); }

  static Tensor scalar(S value) {
    Tensor t(1, 1, 1, 1);
    t.data[0] = value;
    return t;
  }

  std::int64_t size() const { return std::int64_t(n) * c * h * w; }
  std::int64_t plane_size() const { return std::int64_t(h) * w; }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  std::string shape_str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }

  S* plane(int in, int ic) { return data.data() + (std::int64_t(in) * c + ic) * plane_size(); }
  const S* plane(int in, int ic) const { return data.data() + (std::int64_t(in) * c + ic) * plane_size(); }

  S& at(int in, int ic, int ih, int iw) { return data[((std::int64_t(in) * c + ic) * h + ih) * w + iw]; }
  S at(int in, int ic, int ih, int iw) const { return data[((std::int64_t(in) * c + ic) * h + ih) * w + iw]; }

  S item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str());
    return data[0];
  }

  bool all_finite() const { return data.isFinite().all(); }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.n = n;
    out.c = c;
    out.h = h;
    out.w = w;
    out.data = data.template cast<T>();
    return out;
  }
};

// Fills with N(0, stddev^2) draws from the given engine, in flat index order.
template <typename S>
void fill_gaussian(Tensor<S>& t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (std::int64_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<S>(dist(rng));
}

template <typename S>
void fill_uniform(Tensor<S>& t, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::int64_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<S>(dist(rng));
}

// splitmix64; used to derive independent named seed streams from one seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace segres
