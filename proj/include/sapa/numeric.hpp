#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "sapa/tensor.hpp"

namespace sapa {

// Group normalization without learned affine. Per (sample, group) the output
// has zero mean and unit variance up to the eps regularizer.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, T eps = T(1e-5)) {
  detail::require_cfg(groups >= 1, "group_norm: groups must be positive");
  detail::require_cfg(x.c() % groups == 0,
                      "group_norm: channel count not divisible by groups");
  detail::require_cfg(eps > T(0), "group_norm: eps must be positive");

  const int cg = x.c() / groups;
  const std::size_t m = static_cast<std::size_t>(cg) * x.h() * x.w();
  Tensor<T> out(x.n(), x.c(), x.h(), x.w());
  for (int i = 0; i < x.n(); ++i) {
    for (int g = 0; g < groups; ++g) {
      const T* src = x.raw() + x.index(i, g * cg, 0, 0);
      T* dst = out.raw() + out.index(i, g * cg, 0, 0);
      double mean = 0;
      for (std::size_t k = 0; k < m; ++k) mean += src[k];
      mean /= static_cast<double>(m);
      double var = 0;
      for (std::size_t k = 0; k < m; ++k) {
        double d = src[k] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
      for (std::size_t k = 0; k < m; ++k)
        dst[k] = static_cast<T>((src[k] - mean) * inv);
    }
  }
  return out;
}

// Backward of group_norm given its output (= normalized values, since there
// is no affine) and upstream. Recomputes inv_std from the raw input.
template <typename T>
Tensor<T> group_norm_backward(const Tensor<T>& x, const Tensor<T>& xhat,
                              const Tensor<T>& upstream, int groups,
                              T eps = T(1e-5)) {
  detail::require(x.same_shape(xhat) && x.same_shape(upstream),
                  "group_norm_backward: shape mismatch");
  const int cg = x.c() / groups;
  const std::size_t m = static_cast<std::size_t>(cg) * x.h() * x.w();
  Tensor<T> dx(x.n(), x.c(), x.h(), x.w());
  for (int i = 0; i < x.n(); ++i) {
    for (int g = 0; g < groups; ++g) {
      const T* src = x.raw() + x.index(i, g * cg, 0, 0);
      const T* nh = xhat.raw() + xhat.index(i, g * cg, 0, 0);
      const T* up = upstream.raw() + upstream.index(i, g * cg, 0, 0);
      T* dst = dx.raw() + dx.index(i, g * cg, 0, 0);
      double mean = 0;
      for (std::size_t k = 0; k < m; ++k) mean += src[k];
      mean /= static_cast<double>(m);
      double var = 0;
      for (std::size_t k = 0; k < m; ++k) {
        double d = src[k] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));

      double up_mean = 0, dot_mean = 0;
      for (std::size_t k = 0; k < m; ++k) {
        up_mean += up[k];
        dot_mean += static_cast<double>(up[k]) * nh[k];
      }
      up_mean /= static_cast<double>(m);
      dot_mean /= static_cast<double>(m);
      for (std::size_t k = 0; k < m; ++k)
        dst[k] = static_cast<T>(inv * (up[k] - up_mean - nh[k] * dot_mean));
    }
  }
  return dx;
}

// Per-position channel projection: out[n,r,i,j] = sum_c m(r,c) x[n,c,i,j].
template <typename T>
Tensor<T> linear_embed(const Tensor<T>& x, const LinearMap<T>& m) {
  detail::require(x.c() == m.cols(),
                  "linear_embed: channel count does not match map columns");
  Tensor<T> out(x.n(), m.rows(), x.h(), x.w());
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n) {
    for (int r = 0; r < m.rows(); ++r) {
      T* dst = out.raw() + out.index(n, r, 0, 0);
      for (int c = 0; c < x.c(); ++c) {
        const T wrc = m.at(r, c);
        const T* src = x.raw() + x.index(n, c, 0, 0);
        for (std::size_t k = 0; k < hw; ++k) dst[k] += wrc * src[k];
      }
    }
  }
  return out;
}

// Backward of linear_embed: d_x = m^T upstream (per position),
// d_m(r,c) = sum over positions of upstream[r] * x[c].
template <typename T>
void linear_embed_backward(const Tensor<T>& x, const LinearMap<T>& m,
                           const Tensor<T>& upstream, Tensor<T>& dx,
                           LinearMap<T>& dm) {
  detail::require(upstream.c() == m.rows() && upstream.h() == x.h() &&
                      upstream.w() == x.w() && upstream.n() == x.n(),
                  "linear_embed_backward: upstream shape mismatch");
  if (!dx.same_shape(x)) dx = Tensor<T>(x.n(), x.c(), x.h(), x.w());
  if (dm.rows() != m.rows() || dm.cols() != m.cols())
    dm = LinearMap<T>(m.rows(), m.cols());
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n) {
    for (int r = 0; r < m.rows(); ++r) {
      const T* up = upstream.raw() + upstream.index(n, r, 0, 0);
      for (int c = 0; c < x.c(); ++c) {
        const T wrc = m.at(r, c);
        const T* src = x.raw() + x.index(n, c, 0, 0);
        T* dst = dx.raw() + dx.index(n, c, 0, 0);
        T acc = T(0);
        for (std::size_t k = 0; k < hw; ++k) {
          dst[k] += wrc * up[k];
          acc += up[k] * src[k];
        }
        dm.at(r, c) += acc;
      }
    }
  }
}

// Overflow-safe softmax (max subtraction).
template <typename T>
void softmax_inplace(std::span<T> v) {
  T m = v[0];
  for (T x : v) m = std::max(m, x);
  T sum = T(0);
  for (T& x : v) {
    x = std::exp(x - m);
    sum += x;
  }
  for (T& x : v) x /= sum;
}

template <typename T>
std::vector<T> softmax_vec(std::span<const T> v) {
  detail::require(!v.empty(), "softmax_vec: empty input");
  std::vector<T> out(v.begin(), v.end());
  softmax_inplace<T>(out);
  return out;
}

template <typename T>
std::vector<T> softmax_vec(const std::vector<T>& v) {
  return softmax_vec(std::span<const T>(v));
}

}  // namespace sapa
