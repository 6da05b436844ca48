#pragma once

#include <atomic>
#include <cmath>
#include <span>
#include <vector>

#include "sapa/config.hpp"
#include "sapa/numeric.hpp"
#include "sapa/sampling.hpp"

namespace sapa {

// Upsampling kernel weights: one S-vector per output position per group.
template <typename T>
class KernelMap {
 public:
  KernelMap() = default;
  KernelMap(int h, int w, int groups, int points)
      : h_(h), w_(w), groups_(groups), points_(points),
        weights_(static_cast<std::size_t>(h) * w * groups * points) {}

  int h() const { return h_; }
  int w() const { return w_; }
  int groups() const { return groups_; }
  int points() const { return points_; }

  std::span<T> at(int i, int j, int g) {
    return {weights_.data() + offset(i, j, g),
            static_cast<std::size_t>(points_)};
  }
  std::span<const T> at(int i, int j, int g) const {
    return {weights_.data() + offset(i, j, g),
            static_cast<std::size_t>(points_)};
  }
  std::span<const T> all() const { return weights_; }

 private:
  std::size_t offset(int i, int j, int g) const {
    return ((static_cast<std::size_t>(i) * w_ + j) * groups_ + g) * points_;
  }
  int h_ = 0, w_ = 0, groups_ = 1, points_ = 0;
  std::vector<T> weights_;
};

// Counts relu-normalization zero-denominator events resolved by the uniform
// fallback. Diagnostic only.
inline std::atomic<std::uint64_t>& uniform_fallback_count() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

namespace detail {

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T softplus(T x) {
  if (x > T(0)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace detail

// w_i = h(s_i) / sum_j h(s_j). h=exp is overflow-safe softmax; h=none passes
// raw scores through. A zero denominator (possible with relu when every
// score is <= 0) falls back to uniform 1/S and bumps the diagnostic counter.
template <typename T>
void normalize_weights_inplace(std::span<T> scores, NormFn h) {
  switch (h) {
    case NormFn::none:
      return;
    case NormFn::exp:
      softmax_inplace(scores);
      return;
    case NormFn::relu:
      for (T& v : scores) v = v > T(0) ? v : T(0);
      break;
    case NormFn::sigmoid:
      for (T& v : scores) v = detail::sigmoid(v);
      break;
    case NormFn::softplus:
      for (T& v : scores) v = detail::softplus(v);
      break;
  }
  T sum = T(0);
  for (T v : scores) sum += v;
  if (sum == T(0)) {
    uniform_fallback_count().fetch_add(1, std::memory_order_relaxed);
    const T u = T(1) / static_cast<T>(scores.size());
    for (T& v : scores) v = u;
    return;
  }
  for (T& v : scores) v /= sum;
}

template <typename T>
std::vector<T> normalize_weights(std::span<const T> scores, NormFn h) {
  detail::require(!scores.empty(), "normalize_weights: empty input");
  std::vector<T> out(scores.begin(), scores.end());
  normalize_weights_inplace<T>(out, h);
  return out;
}

template <typename T>
std::vector<T> normalize_weights(const std::vector<T>& scores, NormFn h) {
  return normalize_weights(std::span<const T>(scores), h);
}

// Mutual similarity between an encoder point y and each decoder point x_i:
// <x_i, y> directly, or <Mx x_i, My y> in the embedded d-dim space.
template <typename T>
std::vector<T> mutual_similarity(std::span<const T> y,
                                 const PointSet<T>& points, int n, int i,
                                 int j, SimilarityFn f,
                                 const LinearMap<T>* mx = nullptr,
                                 const LinearMap<T>* my = nullptr) {
  std::vector<T> scores(points.points());
  if (f == SimilarityFn::inner) {
    detail::require(static_cast<int>(y.size()) == points.channels(),
                    "mutual_similarity: inner product requires matching "
                    "channel counts");
    for (int m = 0; m < points.points(); ++m) {
      auto x = points.point(n, i, j, m);
      T acc = T(0);
      for (std::size_t k = 0; k < y.size(); ++k) acc += x[k] * y[k];
      scores[m] = acc;
    }
    return scores;
  }
  detail::require(mx != nullptr && my != nullptr,
                  "mutual_similarity: embedded form needs both maps");
  detail::require(mx->rows() == my->rows(),
                  "mutual_similarity: embedding dims differ");
  detail::require(mx->cols() == points.channels() &&
                      my->cols() == static_cast<int>(y.size()),
                  "mutual_similarity: map columns do not match inputs");
  std::vector<T> ey = my->apply(y);
  std::vector<T> ex(mx->rows());
  for (int m = 0; m < points.points(); ++m) {
    mx->apply(points.point(n, i, j, m), ex);
    T acc = T(0);
    for (int k = 0; k < mx->rows(); ++k) acc += ex[k] * ey[k];
    scores[m] = acc;
  }
  return scores;
}

// Kernel map over a full coordinate set (Eq. 1 engine): for every output
// position and group, weights = normalize(similarity(y_l', P_l)). Direct
// implementation; the variant forwards use a fused path that must agree
// with this one.
//
// Expects single-sample tensors. Group k scores against the encoder slice
// (inner) or through the group's projections (embedded); if coords carries
// one set per group, group k samples its own coordinates.
template <typename T>
KernelMap<T> generate_kernel_map(const Tensor<T>& decoder,
                                 const Tensor<T>& encoder,
                                 const CoordSet& coords,
                                 const SapaConfig& cfg,
                                 const SapaParams<T>* params = nullptr) {
  cfg.validate();
  detail::require(decoder.n() == 1 && encoder.n() == 1,
                  "generate_kernel_map: expects single-sample tensors");
  detail::require(encoder.h() == decoder.h() * cfg.ratio &&
                      encoder.w() == decoder.w() * cfg.ratio,
                  "generate_kernel_map: encoder spatial dims must be "
                  "ratio x decoder dims");
  detail::require(coords.h() == encoder.h() && coords.w() == encoder.w(),
                  "generate_kernel_map: coord grid must match encoder grid");
  detail::require(coords.groups() == 1 || coords.groups() == cfg.groups,
                  "generate_kernel_map: coord groups mismatch");
  const int g = cfg.groups;
  detail::require(decoder.c() % g == 0,
                  "generate_kernel_map: decoder channels not divisible by "
                  "groups");
  const bool embedded = cfg.similarity() == SimilarityFn::embedded_inner;
  if (embedded) {
    detail::require(params != nullptr &&
                        static_cast<int>(params->mx.size()) >= g &&
                        static_cast<int>(params->my.size()) >= g,
                    "generate_kernel_map: embedded similarity needs per-group "
                    "projections");
  } else {
    detail::require(decoder.c() == encoder.c(),
                    "generate_kernel_map: inner similarity requires matching "
                    "channel counts");
  }

  Tensor<T> xs = cfg.pre_groupnorm ? group_norm(decoder, cfg.gn_groups)
                                   : decoder;
  Tensor<T> ys = cfg.pre_groupnorm ? group_norm(encoder, cfg.gn_groups)
                                   : encoder;

  const int s = coords.points();
  const int cg = decoder.c() / g;
  const int ecg = encoder.c() / g;
  KernelMap<T> km(coords.h(), coords.w(), g, s);
  std::vector<T> xfull(xs.c()), ex, ey, yslice(ecg);
  for (int i = 0; i < coords.h(); ++i) {
    for (int j = 0; j < coords.w(); ++j) {
      for (int k = 0; k < g; ++k) {
        const int ck = coords.groups() == 1 ? 0 : k;
        auto w = km.at(i, j, k);
        if (embedded) {
          std::vector<T> yf(ys.c());
          for (int c = 0; c < ys.c(); ++c) yf[c] = ys.at(0, c, i, j);
          ey = params->my[k].apply(yf);
          for (int m = 0; m < s; ++m) {
            const Coord& p = coords.at(0, i, j, ck, m);
            detail::bilinear_gather(xs, 0, 0, xs.c(), p.row, p.col,
                                    xfull.data());
            ex = params->mx[k].apply(xfull);
            T acc = T(0);
            for (std::size_t q = 0; q < ex.size(); ++q) acc += ex[q] * ey[q];
            w[m] = acc;
          }
        } else {
          for (int c = 0; c < ecg; ++c)
            yslice[c] = ys.at(0, k * ecg + c, i, j);
          for (int m = 0; m < s; ++m) {
            const Coord& p = coords.at(0, i, j, ck, m);
            detail::bilinear_gather(xs, 0, k * cg, (k + 1) * cg, p.row, p.col,
                                    xfull.data());
            T acc = T(0);
            for (int c = 0; c < cg; ++c) acc += xfull[c] * yslice[c];
            w[m] = acc;
          }
        }
        normalize_weights_inplace(w, cfg.norm_fn);
      }
    }
  }
  return km;
}

}  // namespace sapa
