#pragma once

#include <span>
#include <vector>

#include "sapa/config.hpp"
#include "sapa/kernel.hpp"
#include "sapa/numeric.hpp"
#include "sapa/sampling.hpp"

namespace sapa {

// Sampling offsets in low-res pixel units. Stored at the generation
// resolution: low-res when DOF=1 (the s^2 siblings of a cell share one set,
// nearest-neighbor style), high-res when DOF=s^2 (independent sets laid out
// by the pixel-shuffle arrangement).
template <typename T>
class OffsetField {
 public:
  OffsetField() = default;
  OffsetField(int n, int h, int w, int groups, int points, int dof, int ratio)
      : n_(n), h_(h), w_(w), groups_(groups), points_(points), dof_(dof),
        ratio_(ratio),
        data_(static_cast<std::size_t>(n) * h * w * groups * points * 2) {}

  int n() const { return n_; }
  int h() const { return h_; }
  int w() const { return w_; }
  int groups() const { return groups_; }
  int points() const { return points_; }
  int dof() const { return dof_; }
  int ratio() const { return ratio_; }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  std::size_t index(int n, int i, int j, int g, int m, int axis) const {
    return ((((static_cast<std::size_t>(n) * h_ + i) * w_ + j) * groups_ + g) *
                points_ + m) * 2 + axis;
  }
  T& at(int n, int i, int j, int g, int m, int axis) {
    return data_[index(n, i, j, g, m, axis)];
  }
  T at(int n, int i, int j, int g, int m, int axis) const {
    return data_[index(n, i, j, g, m, axis)];
  }

  // Offset seen by high-res output position (i_hi, j_hi).
  T at_output(int n, int i_hi, int j_hi, int g, int m, int axis) const {
    if (dof_ == 1) return at(n, i_hi / ratio_, j_hi / ratio_, g, m, axis);
    return at(n, i_hi, j_hi, g, m, axis);
  }
  T& at_output(int n, int i_hi, int j_hi, int g, int m, int axis) {
    if (dof_ == 1) return at(n, i_hi / ratio_, j_hi / ratio_, g, m, axis);
    return at(n, i_hi, j_hi, g, m, axis);
  }

 private:
  int n_ = 0, h_ = 0, w_ = 0, groups_ = 0, points_ = 0, dof_ = 1, ratio_ = 1;
  std::vector<T> data_;
};

namespace detail {

// Offset layer channel layout: logical channel ((g*S + m)*2 + axis), expanded
// by the DOF sibling index q = u*ratio + v in the fastest position (the
// pixel-shuffle block convention). Mirrored by the params file format.
inline int phi_row(int g, int m, int axis, int q, int points, int dof) {
  return (((g * points) + m) * 2 + axis) * dof + q;
}

}  // namespace detail

// Generates the per-position sampling offsets from the decoder feature via
// the linear layer phi, distributes them across the s^2 high-res siblings
// according to the offset DOF, and folds in the constant grid displacements
// when grid initialization is selected. Zero phi under origin initialization
// yields an all-zero field.
template <typename T>
OffsetField<T> offset_generate(const Tensor<T>& decoder,
                               const LinearMap<T>& phi,
                               const SapaConfig& cfg) {
  cfg.validate();
  detail::require_cfg(cfg.variant == Variant::D,
                      "offset_generate: only the dynamic variant has offsets");
  detail::require_cfg(phi.rows() == phi_rows(cfg),
                      "offset_generate: phi must have 2*S*g*dof output rows");
  detail::require(phi.cols() == decoder.c(),
                  "offset_generate: phi columns must match decoder channels");

  const int S = cfg.num_points, g = cfg.groups, dof = cfg.offset_dof;
  const int s = cfg.ratio;
  const bool hi = dof != 1;
  OffsetField<T> field(decoder.n(), hi ? decoder.h() * s : decoder.h(),
                       hi ? decoder.w() * s : decoder.w(), g, S, dof, s);

  Tensor<T> raw = linear_embed(decoder, phi);  // (n, 2*S*g*dof, H, W)
  for (int n = 0; n < decoder.n(); ++n) {
    for (int i = 0; i < decoder.h(); ++i) {
      for (int j = 0; j < decoder.w(); ++j) {
        for (int k = 0; k < g; ++k)
          for (int m = 0; m < S; ++m)
            for (int a = 0; a < 2; ++a)
              for (int q = 0; q < dof; ++q) {
                T v = raw.at(n, detail::phi_row(k, m, a, q, S, dof), i, j);
                if (hi)
                  field.at(n, s * i + q / s, s * j + q % s, k, m, a) = v;
                else
                  field.at(n, i, j, k, m, a) = v;
              }
      }
    }
  }

  if (cfg.offset_init == OffsetInit::grid) {
    const int K = static_cast<int>(std::lround(std::sqrt(
        static_cast<double>(S))));
    const int r = K / 2;
    for (int n = 0; n < field.n(); ++n)
      for (int i = 0; i < field.h(); ++i)
        for (int j = 0; j < field.w(); ++j)
          for (int k = 0; k < g; ++k)
            for (int m = 0; m < S; ++m) {
              field.at(n, i, j, k, m, 0) += static_cast<T>(m / K - r);
              field.at(n, i, j, k, m, 1) += static_cast<T>(m % K - r);
            }
  }
  return field;
}

// Final sampling coordinates: base cell l = floor(l'/s) plus the offsets.
template <typename T>
CoordSet offset_coord_set(const OffsetField<T>& field) {
  const int s = field.ratio();
  const int oh = field.dof() == 1 ? field.h() * s : field.h();
  const int ow = field.dof() == 1 ? field.w() * s : field.w();
  CoordSet cs(field.n(), oh, ow, field.groups(), field.points());
  for (int n = 0; n < field.n(); ++n)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        for (int k = 0; k < field.groups(); ++k)
          for (int m = 0; m < field.points(); ++m)
            cs.at(n, i, j, k, m) = {
                i / s + static_cast<double>(field.at_output(n, i, j, k, m, 0)),
                j / s + static_cast<double>(field.at_output(n, i, j, k, m, 1))};
  return cs;
}

// Weighted sum of selected points (Eq. 2 of the kernel framework).
template <typename T>
void assemble(std::span<const T> points, int count, int channels,
              std::span<const T> weights, std::span<T> out) {
  detail::require(static_cast<int>(weights.size()) == count &&
                      static_cast<int>(out.size()) == channels &&
                      static_cast<int>(points.size()) == count * channels,
                  "assemble: length mismatch");
  for (int c = 0; c < channels; ++c) out[c] = T(0);
  for (int m = 0; m < count; ++m) {
    const T w = weights[m];
    const T* p = points.data() + static_cast<std::size_t>(m) * channels;
    for (int c = 0; c < channels; ++c) out[c] += w * p[c];
  }
}

template <typename T>
std::vector<T> assemble(const PointSet<T>& points, int n, int i, int j,
                        std::span<const T> weights) {
  std::vector<T> out(points.channels());
  std::size_t sz = static_cast<std::size_t>(points.points()) *
                   points.channels();
  assemble(std::span<const T>(points.point(n, i, j, 0).data(), sz),
           points.points(), points.channels(), weights, out);
  return out;
}

// Channel-contiguous split into g groups and its inverse.
template <typename T>
std::vector<Tensor<T>> grouped_split(const Tensor<T>& x, int g) {
  detail::require(g >= 1 && x.c() % g == 0,
                  "grouped_split: channels not divisible by groups");
  const int cg = x.c() / g;
  std::vector<Tensor<T>> parts;
  parts.reserve(g);
  for (int k = 0; k < g; ++k) {
    Tensor<T> t(x.n(), cg, x.h(), x.w());
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < cg; ++c) {
        auto src = x.plane(n, k * cg + c);
        auto dst = t.plane(n, c);
        std::copy(src.begin(), src.end(), dst.begin());
      }
    parts.push_back(std::move(t));
  }
  return parts;
}

template <typename T>
Tensor<T> grouped_merge(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "grouped_merge: no parts");
  const auto& p0 = parts.front();
  int c_total = 0;
  for (const auto& p : parts) {
    detail::require(p.n() == p0.n() && p.h() == p0.h() && p.w() == p0.w(),
                    "grouped_merge: part shapes differ");
    c_total += p.c();
  }
  Tensor<T> out(p0.n(), c_total, p0.h(), p0.w());
  int base = 0;
  for (const auto& p : parts) {
    for (int n = 0; n < p.n(); ++n)
      for (int c = 0; c < p.c(); ++c) {
        auto src = p.plane(n, c);
        auto dst = out.plane(n, base + c);
        std::copy(src.begin(), src.end(), dst.begin());
      }
    base += p.c();
  }
  return out;
}

// Everything the backward pass needs, retained by the *_forward_state calls.
template <typename T>
struct SapaState {
  SapaConfig cfg;
  Tensor<T> decoder, encoder;  // raw inputs
  Tensor<T> xn, yn;            // similarity sources (group-normed, or raw)
  Tensor<T> ex, ey;            // embedded maps; group k is channel block k*d
  bool embedded = false;
  OffsetField<T> offsets;      // D only
  CoordSet coords;             // D only; unclamped coordinates
  std::vector<T> sampled_emb;  // D only: (n, oh, ow, g, S, d)
  std::vector<T> sampled_raw;  // D only: (n, oh, ow, g, S, C/g)
  std::vector<T> weights;      // (n, oh, ow, g, S)
  Tensor<T> output;

  std::size_t weight_index(int n, int i, int j, int g, int m) const {
    return (((static_cast<std::size_t>(n) * output.h() + i) * output.w() + j) *
                cfg.groups + g) * cfg.points() + m;
  }
  std::span<const T> weight_entry(int n, int i, int j, int g) const {
    return {weights.data() + weight_index(n, i, j, g, 0),
            static_cast<std::size_t>(cfg.points())};
  }

  // Kernel map of one sample.
  KernelMap<T> kernel_map(int n = 0) const {
    KernelMap<T> km(output.h(), output.w(), cfg.groups, cfg.points());
    for (int i = 0; i < output.h(); ++i)
      for (int j = 0; j < output.w(); ++j)
        for (int g = 0; g < cfg.groups; ++g) {
          auto src = weight_entry(n, i, j, g);
          std::copy(src.begin(), src.end(), km.at(i, j, g).begin());
        }
    return km;
  }
};

namespace detail {

template <typename T>
void validate_common(const Tensor<T>& decoder, const Tensor<T>& encoder,
                     const SapaConfig& cfg) {
  cfg.validate();
  require(decoder.n() == encoder.n(),
          "sapa: decoder/encoder batch sizes differ");
  require(encoder.h() == decoder.h() * cfg.ratio &&
              encoder.w() == decoder.w() * cfg.ratio,
          "sapa: encoder spatial dims must be ratio x decoder dims");
  require(decoder.c() % cfg.groups == 0,
          "sapa: decoder channels not divisible by groups");
  if (cfg.pre_groupnorm) {
    require_cfg(decoder.c() % cfg.gn_groups == 0 &&
                    encoder.c() % cfg.gn_groups == 0,
                "sapa: channel counts not divisible by gn_groups");
  }
}

// Embeds per-group projections into one map with channel blocks of size d.
template <typename T>
Tensor<T> embed_grouped(const Tensor<T>& x,
                        const std::vector<LinearMap<T>>& maps, int d) {
  Tensor<T> out(x.n(), d * static_cast<int>(maps.size()), x.h(), x.w());
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  for (std::size_t k = 0; k < maps.size(); ++k) {
    const auto& m = maps[k];
    for (int n = 0; n < x.n(); ++n)
      for (int r = 0; r < d; ++r) {
        T* dst = out.raw() + out.index(n, static_cast<int>(k) * d + r, 0, 0);
        for (int c = 0; c < x.c(); ++c) {
          const T w = m.at(r, c);
          const T* src = x.raw() + x.index(n, c, 0, 0);
          for (std::size_t t = 0; t < hw; ++t) dst[t] += w * src[t];
        }
      }
  }
  return out;
}

inline int clamp_index(int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); }

// Shared window-kernel forward for SAPA-I and SAPA-B.
template <typename T>
SapaState<T> window_forward(const Tensor<T>& decoder, const Tensor<T>& encoder,
                            const SapaParams<T>* params, const SapaConfig& cfg,
                            bool keep_state) {
  validate_common(decoder, encoder, cfg);
  const bool embedded = cfg.variant == Variant::B;
  if (embedded) {
    require(params != nullptr &&
                static_cast<int>(params->mx.size()) == cfg.groups &&
                static_cast<int>(params->my.size()) == cfg.groups,
            "sapa-b: needs one mx/my projection per group");
    for (const auto& m : params->mx) {
      require(m.cols() == decoder.c() && m.rows() == cfg.embed_dim,
              "sapa-b: mx shape mismatch");
    }
    for (const auto& m : params->my) {
      require(m.cols() == encoder.c() && m.rows() == cfg.embed_dim,
              "sapa-b: my shape mismatch");
    }
  } else {
    if (decoder.c() != encoder.c())
      throw ShapeError("SAPA-I inapplicable: decoder/encoder channel counts "
                       "differ (" + std::to_string(decoder.c()) + " vs " +
                       std::to_string(encoder.c()) + ")");
  }

  const int s = cfg.ratio, K = cfg.kernel_size, S = K * K, g = cfg.groups;
  const int cg = decoder.c() / g;
  const int r = K / 2;
  const int oh = decoder.h() * s, ow = decoder.w() * s;

  SapaState<T> st;
  st.cfg = cfg;
  st.embedded = embedded;
  st.decoder = decoder;
  st.encoder = encoder;
  st.xn = cfg.pre_groupnorm ? group_norm(decoder, cfg.gn_groups) : decoder;
  st.yn = cfg.pre_groupnorm ? group_norm(encoder, cfg.gn_groups) : encoder;
  if (embedded) {
    st.ex = embed_grouped(st.xn, params->mx, cfg.embed_dim);
    st.ey = embed_grouped(st.yn, params->my, cfg.embed_dim);
  }
  st.weights.resize(static_cast<std::size_t>(decoder.n()) * oh * ow * g * S);
  st.output = Tensor<T>(decoder.n(), decoder.c(), oh, ow);

  const int sim_dim = embedded ? cfg.embed_dim : cg;
  const Tensor<T>& simx = embedded ? st.ex : st.xn;
  const Tensor<T>& simy = embedded ? st.ey : st.yn;

  std::vector<T> scores(S);
  for (int n = 0; n < decoder.n(); ++n) {
    for (int i = 0; i < oh; ++i) {
      const int li = i / s;
      for (int j = 0; j < ow; ++j) {
        const int lj = j / s;
        for (int k = 0; k < g; ++k) {
          const int simc = k * sim_dim;
          int m = 0;
          for (int du = -r; du <= r; ++du) {
            const int ci = clamp_index(li + du, decoder.h() - 1);
            for (int dv = -r; dv <= r; ++dv, ++m) {
              const int cj = clamp_index(lj + dv, decoder.w() - 1);
              T acc = T(0);
              for (int q = 0; q < sim_dim; ++q)
                acc += simx.at(n, simc + q, ci, cj) * simy.at(n, simc + q, i, j);
              scores[m] = acc;
            }
          }
          normalize_weights_inplace<T>(scores, cfg.norm_fn);
          std::copy(scores.begin(), scores.end(),
                    st.weights.begin() + st.weight_index(n, i, j, k, 0));
          // assembly from the raw decoder slice
          m = 0;
          T* out0 = st.output.raw() + st.output.index(n, k * cg, i, j);
          const std::size_t ostride =
              static_cast<std::size_t>(oh) * ow;
          for (int c = 0; c < cg; ++c) out0[c * ostride] = T(0);
          for (int du = -r; du <= r; ++du) {
            const int ci = clamp_index(li + du, decoder.h() - 1);
            for (int dv = -r; dv <= r; ++dv, ++m) {
              const int cj = clamp_index(lj + dv, decoder.w() - 1);
              const T w = scores[m];
              for (int c = 0; c < cg; ++c)
                out0[c * ostride] += w * decoder.at(n, k * cg + c, ci, cj);
            }
          }
        }
      }
    }
  }
  if (!keep_state) {
    st.xn = Tensor<T>();
    st.yn = Tensor<T>();
    st.ex = Tensor<T>();
    st.ey = Tensor<T>();
    st.decoder = Tensor<T>();
    st.encoder = Tensor<T>();
  }
  return st;
}

}  // namespace detail

// Parameter-free SAPA: direct inner-product similarity over a K*K window.
// Requires matching channel counts.
template <typename T>
SapaState<T> sapa_i_forward_state(const Tensor<T>& decoder,
                                  const Tensor<T>& encoder, SapaConfig cfg) {
  cfg.variant = Variant::I;
  return detail::window_forward(decoder, encoder,
                                static_cast<const SapaParams<T>*>(nullptr),
                                cfg, true);
}

template <typename T>
Tensor<T> sapa_i_forward(const Tensor<T>& decoder, const Tensor<T>& encoder,
                         SapaConfig cfg) {
  cfg.variant = Variant::I;
  return detail::window_forward(decoder, encoder,
                                static_cast<const SapaParams<T>*>(nullptr),
                                cfg, false)
      .output;
}

// Embedded inner-product SAPA over a K*K window.
template <typename T>
SapaState<T> sapa_b_forward_state(const Tensor<T>& decoder,
                                  const Tensor<T>& encoder,
                                  const SapaParams<T>& params, SapaConfig cfg) {
  cfg.variant = Variant::B;
  return detail::window_forward(decoder, encoder, &params, cfg, true);
}

template <typename T>
Tensor<T> sapa_b_forward(const Tensor<T>& decoder, const Tensor<T>& encoder,
                         const SapaParams<T>& params, SapaConfig cfg) {
  cfg.variant = Variant::B;
  return detail::window_forward(decoder, encoder, &params, cfg, false).output;
}

// Single-projection convenience form (single group).
template <typename T>
Tensor<T> sapa_b_forward(const Tensor<T>& decoder, const Tensor<T>& encoder,
                         const LinearMap<T>& mx, const LinearMap<T>& my,
                         SapaConfig cfg) {
  detail::require_cfg(cfg.groups == 1,
                      "sapa_b_forward: single-map form requires groups == 1");
  SapaParams<T> p;
  p.mx.push_back(mx);
  p.my.push_back(my);
  return sapa_b_forward(decoder, encoder, p, cfg);
}

namespace detail {

template <typename T>
SapaState<T> dynamic_forward(const Tensor<T>& decoder, const Tensor<T>& encoder,
                             const SapaParams<T>& params, const SapaConfig& cfg,
                             bool keep_state) {
  validate_common(decoder, encoder, cfg);
  require(static_cast<int>(params.mx.size()) == cfg.groups &&
              static_cast<int>(params.my.size()) == cfg.groups,
          "sapa-d: needs one mx/my projection per group");
  for (const auto& m : params.mx)
    require(m.cols() == decoder.c() && m.rows() == cfg.embed_dim,
            "sapa-d: mx shape mismatch");
  for (const auto& m : params.my)
    require(m.cols() == encoder.c() && m.rows() == cfg.embed_dim,
            "sapa-d: my shape mismatch");

  const int s = cfg.ratio, S = cfg.num_points, g = cfg.groups;
  const int d = cfg.embed_dim;
  const int cg = decoder.c() / g;
  const int oh = decoder.h() * s, ow = decoder.w() * s;

  SapaState<T> st;
  st.cfg = cfg;
  st.embedded = true;
  st.decoder = decoder;
  st.encoder = encoder;
  st.xn = cfg.pre_groupnorm ? group_norm(decoder, cfg.gn_groups) : decoder;
  st.yn = cfg.pre_groupnorm ? group_norm(encoder, cfg.gn_groups) : encoder;
  st.ex = embed_grouped(st.xn, params.mx, d);
  st.ey = embed_grouped(st.yn, params.my, d);
  st.offsets = offset_generate(decoder, params.phi, cfg);
  st.coords = offset_coord_set(st.offsets);
  st.weights.resize(static_cast<std::size_t>(decoder.n()) * oh * ow * g * S);
  st.sampled_emb.resize(st.weights.size() * d);
  st.sampled_raw.resize(st.weights.size() * cg);
  st.output = Tensor<T>(decoder.n(), decoder.c(), oh, ow);

  std::vector<T> scores(S);
  for (int n = 0; n < decoder.n(); ++n) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        for (int k = 0; k < g; ++k) {
          const std::size_t widx = st.weight_index(n, i, j, k, 0);
          T* emb = st.sampled_emb.data() + widx * d;
          T* rawp = st.sampled_raw.data() + widx * cg;
          for (int m = 0; m < S; ++m) {
            const Coord& p = st.coords.at(n, i, j, k, m);
            bilinear_gather(st.ex, n, k * d, (k + 1) * d, p.row, p.col,
                            emb + static_cast<std::size_t>(m) * d);
            bilinear_gather(decoder, n, k * cg, (k + 1) * cg, p.row, p.col,
                            rawp + static_cast<std::size_t>(m) * cg);
            T acc = T(0);
            const T* e = emb + static_cast<std::size_t>(m) * d;
            for (int q = 0; q < d; ++q) acc += e[q] * st.ey.at(n, k * d + q, i, j);
            scores[m] = acc;
          }
          normalize_weights_inplace<T>(scores, cfg.norm_fn);
          std::copy(scores.begin(), scores.end(), st.weights.begin() + widx);
          T* out0 = st.output.raw() + st.output.index(n, k * cg, i, j);
          const std::size_t ostride = static_cast<std::size_t>(oh) * ow;
          for (int c = 0; c < cg; ++c) out0[c * ostride] = T(0);
          for (int m = 0; m < S; ++m) {
            const T w = scores[m];
            const T* p = rawp + static_cast<std::size_t>(m) * cg;
            for (int c = 0; c < cg; ++c) out0[c * ostride] += w * p[c];
          }
        }
      }
    }
  }
  if (!keep_state) {
    st.xn = Tensor<T>();
    st.yn = Tensor<T>();
    st.ex = Tensor<T>();
    st.ey = Tensor<T>();
    st.decoder = Tensor<T>();
    st.encoder = Tensor<T>();
    st.sampled_emb.clear();
    st.sampled_raw.clear();
  }
  return st;
}

}  // namespace detail

// Dynamic-kernel-shape SAPA: content-dependent point selection (offsets from
// phi), bilinear point sampling, embedded similarity, grouped assembly.
template <typename T>
SapaState<T> sapa_d_forward_state(const Tensor<T>& decoder,
                                  const Tensor<T>& encoder,
                                  const SapaParams<T>& params, SapaConfig cfg) {
  cfg.variant = Variant::D;
  return detail::dynamic_forward(decoder, encoder, params, cfg, true);
}

template <typename T>
Tensor<T> sapa_d_forward(const Tensor<T>& decoder, const Tensor<T>& encoder,
                         const SapaParams<T>& params, SapaConfig cfg) {
  cfg.variant = Variant::D;
  return detail::dynamic_forward(decoder, encoder, params, cfg, false).output;
}

// Floor-cell signature of every sampling coordinate (row cell, col cell per
// point). Two evaluations whose signatures differ crossed a bilinear cell
// boundary, which invalidates finite differences across them.
template <typename T>
std::vector<std::int64_t> sampling_cell_signature(const Tensor<T>& decoder,
                                                  const SapaParams<T>& params,
                                                  SapaConfig cfg) {
  cfg.variant = Variant::D;
  cfg.validate();
  OffsetField<T> field = offset_generate(decoder, params.phi, cfg);
  CoordSet cs = offset_coord_set(field);
  std::vector<std::int64_t> sig;
  sig.reserve(cs.size() * 2);
  for (int n = 0; n < cs.n(); ++n)
    for (int i = 0; i < cs.h(); ++i)
      for (int j = 0; j < cs.w(); ++j)
        for (int k = 0; k < cs.groups(); ++k)
          for (int m = 0; m < cs.points(); ++m) {
            const Coord& p = cs.at(n, i, j, k, m);
            auto cell = detail::bilinear_cell(p.row, p.col, decoder.h(),
                                              decoder.w());
            sig.push_back(cell.r0);
            sig.push_back(cell.c0);
          }
  return sig;
}

}  // namespace sapa
