#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "sapa/tensor.hpp"

namespace sapa {

// Fractional coordinate in low-res index space (row, col).
struct Coord {
  double row = 0;
  double col = 0;
  bool operator==(const Coord&) const = default;
};

// Per output position: `points` fractional coordinates, optionally per group.
// Window selection uses groups=1; SAPA-D stores one set per upsampling group.
class CoordSet {
 public:
  CoordSet() = default;
  CoordSet(int n, int h, int w, int groups, int points)
      : n_(n), h_(h), w_(w), groups_(groups), points_(points),
        data_(static_cast<std::size_t>(n) * h * w * groups * points) {}

  int n() const { return n_; }
  int h() const { return h_; }
  int w() const { return w_; }
  int groups() const { return groups_; }
  int points() const { return points_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(int n, int i, int j, int g, int m) const {
    return (((static_cast<std::size_t>(n) * h_ + i) * w_ + j) * groups_ + g) *
               points_ + m;
  }
  Coord& at(int n, int i, int j, int g, int m) {
    return data_[index(n, i, j, g, m)];
  }
  const Coord& at(int n, int i, int j, int g, int m) const {
    return data_[index(n, i, j, g, m)];
  }
  std::span<Coord> entry(int n, int i, int j, int g) {
    return {data_.data() + index(n, i, j, g, 0),
            static_cast<std::size_t>(points_)};
  }
  std::span<const Coord> entry(int n, int i, int j, int g) const {
    return {data_.data() + index(n, i, j, g, 0),
            static_cast<std::size_t>(points_)};
  }

 private:
  int n_ = 0, h_ = 0, w_ = 0, groups_ = 1, points_ = 0;
  std::vector<Coord> data_;
};

// Per output position: `points` channel vectors gathered from a feature map.
template <typename T>
class PointSet {
 public:
  PointSet() = default;
  PointSet(int n, int h, int w, int points, int channels)
      : n_(n), h_(h), w_(w), points_(points), channels_(channels),
        data_(static_cast<std::size_t>(n) * h * w * points * channels) {}

  int n() const { return n_; }
  int h() const { return h_; }
  int w() const { return w_; }
  int points() const { return points_; }
  int channels() const { return channels_; }

  std::span<T> point(int n, int i, int j, int m) {
    return {data_.data() + offset(n, i, j, m),
            static_cast<std::size_t>(channels_)};
  }
  std::span<const T> point(int n, int i, int j, int m) const {
    return {data_.data() + offset(n, i, j, m),
            static_cast<std::size_t>(channels_)};
  }

 private:
  std::size_t offset(int n, int i, int j, int m) const {
    return (((static_cast<std::size_t>(n) * h_ + i) * w_ + j) * points_ + m) *
           channels_;
  }
  int n_ = 0, h_ = 0, w_ = 0, points_ = 0, channels_ = 0;
  std::vector<T> data_;
};

// K*K integer coordinates centered at l, raster order. Clamping is deferred
// to the sampling step.
inline std::vector<Coord> window_coords(int row, int col, int kernel_size) {
  detail::require_cfg(kernel_size >= 1 && kernel_size % 2 == 1,
                      "window_coords: kernel size must be odd");
  const int r = kernel_size / 2;
  std::vector<Coord> out;
  out.reserve(static_cast<std::size_t>(kernel_size) * kernel_size);
  for (int du = -r; du <= r; ++du)
    for (int dv = -r; dv <= r; ++dv)
      out.push_back({static_cast<double>(row + du),
                     static_cast<double>(col + dv)});
  return out;
}

// Full window coordinate grid for x`ratio` upsampling: every output position
// l' maps to the K*K window around l = floor(l'/ratio).
inline CoordSet window_coord_set(int dec_h, int dec_w, int ratio,
                                 int kernel_size) {
  detail::require_cfg(ratio >= 1, "window_coord_set: ratio must be positive");
  detail::require_cfg(kernel_size >= 1 && kernel_size % 2 == 1,
                      "window_coord_set: kernel size must be odd");
  const int r = kernel_size / 2;
  CoordSet cs(1, dec_h * ratio, dec_w * ratio, 1,
              kernel_size * kernel_size);
  for (int i = 0; i < dec_h * ratio; ++i) {
    for (int j = 0; j < dec_w * ratio; ++j) {
      int m = 0;
      for (int du = -r; du <= r; ++du)
        for (int dv = -r; dv <= r; ++dv)
          cs.at(0, i, j, 0, m++) = {static_cast<double>(i / ratio + du),
                                    static_cast<double>(j / ratio + dv)};
    }
  }
  return cs;
}

namespace detail {

// Corner cell of a bilinear lookup after clamp-to-edge.
struct BilinearCell {
  int r0, r1, c0, c1;
  double tr, tc;  // fractional parts
};

inline BilinearCell bilinear_cell(double row, double col, int h, int w) {
  double r = std::min(std::max(row, 0.0), static_cast<double>(h - 1));
  double c = std::min(std::max(col, 0.0), static_cast<double>(w - 1));
  int r0 = static_cast<int>(std::floor(r));
  int c0 = static_cast<int>(std::floor(c));
  if (r0 > h - 1) r0 = h - 1;
  if (c0 > w - 1) c0 = w - 1;
  int r1 = std::min(r0 + 1, h - 1);
  int c1 = std::min(c0 + 1, w - 1);
  return {r0, r1, c0, c1, r - r0, c - c0};
}

// Sample channels [c_begin, c_end) of sample n at a fractional coordinate.
template <typename T>
void bilinear_gather(const Tensor<T>& x, int n, int c_begin, int c_end,
                     double row, double col, T* out) {
  const BilinearCell cell = bilinear_cell(row, col, x.h(), x.w());
  const T w00 = static_cast<T>((1 - cell.tr) * (1 - cell.tc));
  const T w01 = static_cast<T>((1 - cell.tr) * cell.tc);
  const T w10 = static_cast<T>(cell.tr * (1 - cell.tc));
  const T w11 = static_cast<T>(cell.tr * cell.tc);
  for (int c = c_begin; c < c_end; ++c) {
    *out++ = w00 * x.at(n, c, cell.r0, cell.c0) +
             w01 * x.at(n, c, cell.r0, cell.c1) +
             w10 * x.at(n, c, cell.r1, cell.c0) +
             w11 * x.at(n, c, cell.r1, cell.c1);
  }
}

}  // namespace detail

// Bilinear sampling of all channels at every coordinate of a CoordSet.
// Coordinates are clamped to the valid range first (clamp-to-edge); integer
// coordinates reproduce stored values exactly.
template <typename T>
PointSet<T> bilinear_sample(const Tensor<T>& x, const CoordSet& coords) {
  detail::require(coords.groups() == 1,
                  "bilinear_sample: grouped coord sets are handled by the "
                  "SAPA-D forward; pass groups=1 here");
  detail::require(coords.n() == 1 || coords.n() == x.n(),
                  "bilinear_sample: coord batch mismatch");
  PointSet<T> out(x.n(), coords.h(), coords.w(), coords.points(), x.c());
  std::vector<T> buf(x.c());
  for (int n = 0; n < x.n(); ++n) {
    const int cn = coords.n() == 1 ? 0 : n;
    for (int i = 0; i < coords.h(); ++i)
      for (int j = 0; j < coords.w(); ++j)
        for (int m = 0; m < coords.points(); ++m) {
          const Coord& p = coords.at(cn, i, j, 0, m);
          detail::bilinear_gather(x, n, 0, x.c(), p.row, p.col, buf.data());
          std::copy(buf.begin(), buf.end(), out.point(n, i, j, m).begin());
        }
  }
  return out;
}

// Nearest-neighbor upsampling: out[i',j'] = x[floor(i'/s), floor(j'/s)].
template <typename T>
Tensor<T> nn_upsample(const Tensor<T>& x, int ratio) {
  detail::require_cfg(ratio >= 1, "nn_upsample: ratio must be positive");
  Tensor<T> out(x.n(), x.c(), x.h() * ratio, x.w() * ratio);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int i = 0; i < out.h(); ++i)
        for (int j = 0; j < out.w(); ++j)
          out.at(n, c, i, j) = x.at(n, c, i / ratio, j / ratio);
  return out;
}

// Standard bilinear resize by an integer factor. With align_corners=false the
// source coordinate is (dst + 0.5)/s - 0.5, clamped.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int ratio,
                            bool align_corners = false) {
  detail::require_cfg(ratio >= 1, "bilinear_upsample: ratio must be positive");
  const int oh = x.h() * ratio, ow = x.w() * ratio;
  Tensor<T> out(x.n(), x.c(), oh, ow);
  std::vector<T> buf(x.c());
  for (int i = 0; i < oh; ++i) {
    for (int j = 0; j < ow; ++j) {
      double sr, sc;
      if (align_corners) {
        sr = oh > 1 ? static_cast<double>(i) * (x.h() - 1) / (oh - 1) : 0.0;
        sc = ow > 1 ? static_cast<double>(j) * (x.w() - 1) / (ow - 1) : 0.0;
      } else {
        sr = (i + 0.5) / ratio - 0.5;
        sc = (j + 0.5) / ratio - 0.5;
      }
      for (int n = 0; n < x.n(); ++n) {
        detail::bilinear_gather(x, n, 0, x.c(), sr, sc, buf.data());
        for (int c = 0; c < x.c(); ++c) out.at(n, c, i, j) = buf[c];
      }
    }
  }
  return out;
}

// Sub-pixel rearrangement: (n, c, h, w) -> (n, c/s^2, sh, sw) with
// out[k, si+u, sj+v] = in[k*s^2 + u*s + v, i, j].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int ratio) {
  detail::require_cfg(ratio >= 1, "pixel_shuffle: ratio must be positive");
  const int s2 = ratio * ratio;
  detail::require(x.c() % s2 == 0,
                  "pixel_shuffle: channels not divisible by ratio^2");
  Tensor<T> out(x.n(), x.c() / s2, x.h() * ratio, x.w() * ratio);
  for (int n = 0; n < x.n(); ++n)
    for (int k = 0; k < out.c(); ++k)
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j)
          for (int u = 0; u < ratio; ++u)
            for (int v = 0; v < ratio; ++v)
              out.at(n, k, ratio * i + u, ratio * j + v) =
                  x.at(n, k * s2 + u * ratio + v, i, j);
  return out;
}

// Exact inverse of pixel_shuffle.
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int ratio) {
  detail::require_cfg(ratio >= 1, "pixel_unshuffle: ratio must be positive");
  detail::require(x.h() % ratio == 0 && x.w() % ratio == 0,
                  "pixel_unshuffle: spatial dims not divisible by ratio");
  const int s2 = ratio * ratio;
  Tensor<T> out(x.n(), x.c() * s2, x.h() / ratio, x.w() / ratio);
  for (int n = 0; n < x.n(); ++n)
    for (int k = 0; k < x.c(); ++k)
      for (int i = 0; i < out.h(); ++i)
        for (int j = 0; j < out.w(); ++j)
          for (int u = 0; u < ratio; ++u)
            for (int v = 0; v < ratio; ++v)
              out.at(n, k * s2 + u * ratio + v, i, j) =
                  x.at(n, k, ratio * i + u, ratio * j + v);
  return out;
}

}  // namespace sapa
