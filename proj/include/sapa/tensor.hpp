#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include "sapa/common.hpp"

namespace sapa {

// Dense NCHW tensor, contiguous row-major. T is float or double.
template <typename T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "Tensor supports f32 and f64 only");

 public:
  using value_type = T;

  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : n_(n), c_(c), h_(h), w_(w),
        data_(static_cast<std::size_t>(n) * c * h * w, fill) {
    detail::require(n >= 1 && c >= 1 && h >= 1 && w >= 1,
                    "Tensor dims must be positive");
  }

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * c_ + c) * h_ + h) * w_ + w;
  }

  T& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  T at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }
  T& operator()(int n, int c, int h, int w) { return at(n, c, h, w); }
  T operator()(int n, int c, int h, int w) const { return at(n, c, h, w); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  // Contiguous (h*w) plane of one channel of one sample.
  std::span<T> plane(int n, int c) {
    return {data_.data() + index(n, c, 0, 0),
            static_cast<std::size_t>(h_) * w_};
  }
  std::span<const T> plane(int n, int c) const {
    return {data_.data() + index(n, c, 0, 0),
            static_cast<std::size_t>(h_) * w_};
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n_, c_, h_, w_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

// Bias-free linear map: rows x cols matrix applied to channel vectors.
// Houses the projection matrices of the embedded similarity and the
// offset-generating layer.
template <typename T>
class LinearMap {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);

 public:
  LinearMap() = default;
  LinearMap(int rows, int cols, T fill = T(0))
      : rows_(rows), cols_(cols),
        weights_(static_cast<std::size_t>(rows) * cols, fill) {
    detail::require_cfg(rows >= 1 && cols >= 1,
                        "LinearMap dims must be positive");
  }

  static LinearMap identity(int dim) {
    LinearMap m(dim, dim);
    for (int i = 0; i < dim; ++i) m.at(i, i) = T(1);
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return weights_.size(); }

  T& at(int r, int c) { return weights_[static_cast<std::size_t>(r) * cols_ + c]; }
  T at(int r, int c) const { return weights_[static_cast<std::size_t>(r) * cols_ + c]; }

  std::span<T> weights() { return weights_; }
  std::span<const T> weights() const { return weights_; }
  std::span<const T> row(int r) const {
    return {weights_.data() + static_cast<std::size_t>(r) * cols_,
            static_cast<std::size_t>(cols_)};
  }

  // y = W x
  void apply(std::span<const T> x, std::span<T> y) const {
    detail::require(static_cast<int>(x.size()) == cols_ &&
                        static_cast<int>(y.size()) == rows_,
                    "LinearMap::apply: vector length mismatch");
    for (int r = 0; r < rows_; ++r) {
      T acc = T(0);
      const T* wr = weights_.data() + static_cast<std::size_t>(r) * cols_;
      for (int c = 0; c < cols_; ++c) acc += wr[c] * x[c];
      y[r] = acc;
    }
  }

  std::vector<T> apply(std::span<const T> x) const {
    std::vector<T> y(rows_);
    apply(x, y);
    return y;
  }

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<T> weights_;
};

// Seeded initialization spec. Same seed + scheme + shape gives bit-identical
// buffers on any platform (the uniform draw below avoids
// std::uniform_real_distribution, whose sequence is implementation-defined).
struct RngSpec {
  enum class Scheme { uniform_xavier };
  std::uint64_t seed = 0;
  Scheme scheme = Scheme::uniform_xavier;
};

namespace detail {

// splitmix64; tiny, portable, good enough for test/init data.
class Splitmix64 {
 public:
  explicit Splitmix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  // standard normal via Box-Muller
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  std::uint64_t state_;
};

inline double xavier_bound(std::int64_t fan_in, std::int64_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace detail

// Uniform-Xavier init of a feature tensor; fan_in = fan_out = c*h*w.
template <typename T>
Tensor<T> seeded_init_tensor(int n, int c, int h, int w, RngSpec rng) {
  Tensor<T> t(n, c, h, w);
  std::int64_t fan = static_cast<std::int64_t>(c) * h * w;
  double b = detail::xavier_bound(fan, fan);
  detail::Splitmix64 g(rng.seed);
  for (T& v : t.data()) v = static_cast<T>((2.0 * g.uniform() - 1.0) * b);
  return t;
}

// Uniform-Xavier init of a linear map; fan_in = cols, fan_out = rows.
template <typename T>
LinearMap<T> seeded_init_linear(int rows, int cols, RngSpec rng) {
  LinearMap<T> m(rows, cols);
  double b = detail::xavier_bound(cols, rows);
  detail::Splitmix64 g(rng.seed);
  for (T& v : m.weights()) v = static_cast<T>((2.0 * g.uniform() - 1.0) * b);
  return m;
}

// N(0,1) tensor; used by gradient checks ("unit-scale inputs") and bench.
template <typename T>
Tensor<T> random_normal_tensor(int n, int c, int h, int w, std::uint64_t seed) {
  Tensor<T> t(n, c, h, w);
  detail::Splitmix64 g(seed);
  for (T& v : t.data()) v = static_cast<T>(g.normal());
  return t;
}

template <typename T>
LinearMap<T> random_normal_linear(int rows, int cols, std::uint64_t seed,
                                  double scale = 1.0) {
  LinearMap<T> m(rows, cols);
  detail::Splitmix64 g(seed);
  for (T& v : m.weights()) v = static_cast<T>(g.normal() * scale);
  return m;
}

}  // namespace sapa
