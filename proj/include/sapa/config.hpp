#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sapa/tensor.hpp"

namespace sapa {

enum class Variant { I, B, D };

// Kernel weight normalization h(x); weights are h(score)/sum h(score).
// `none` passes raw scores through un-normalized. exp is the default.
enum class NormFn { none, exp, relu, sigmoid, softplus };

enum class SimilarityFn { inner, embedded_inner };

// origin: offsets start at zero (untrained SAPA-D == nearest neighbor);
// grid: constant offsets reproducing the K*K window pattern.
enum class OffsetInit { origin, grid };

struct SapaConfig {
  Variant variant = Variant::B;
  int ratio = 2;          // upsampling factor s
  int kernel_size = 5;    // K, window variants (I/B)
  int num_points = 9;     // S, dynamic variant (D)
  int embed_dim = 32;     // d
  int groups = 1;         // g, upsampling groups
  int offset_dof = 1;     // 1 or ratio^2
  OffsetInit offset_init = OffsetInit::origin;
  bool pre_groupnorm = false;   // groupnorm both features before similarity
  int gn_groups = 4;            // groups inside that groupnorm
  NormFn norm_fn = NormFn::exp;

  // Number of selected points per kernel.
  int points() const {
    return variant == Variant::D ? num_points : kernel_size * kernel_size;
  }

  SimilarityFn similarity() const {
    return variant == Variant::I ? SimilarityFn::inner
                                 : SimilarityFn::embedded_inner;
  }

  // Default hyper-parameters: d=32, S=9; window variants K=5 single-group;
  // the dynamic variant uses 4 groups.
  static SapaConfig for_variant(Variant v) {
    SapaConfig cfg;
    cfg.variant = v;
    cfg.groups = (v == Variant::D) ? 4 : 1;
    return cfg;
  }

  void validate() const {
    detail::require_cfg(ratio >= 1, "config: ratio must be >= 1");
    detail::require_cfg(embed_dim >= 1, "config: embed_dim must be >= 1");
    detail::require_cfg(groups >= 1, "config: groups must be >= 1");
    detail::require_cfg(gn_groups >= 1, "config: gn_groups must be >= 1");
    if (variant == Variant::D) {
      detail::require_cfg(num_points >= 1, "config: num_points must be >= 1");
      detail::require_cfg(offset_dof == 1 || offset_dof == ratio * ratio,
                          "config: offset_dof must be 1 or ratio^2");
      if (offset_init == OffsetInit::grid) {
        int k = static_cast<int>(std::lround(std::sqrt(
            static_cast<double>(num_points))));
        detail::require_cfg(k * k == num_points && k % 2 == 1,
                            "config: grid init needs num_points = K^2, K odd");
      }
    } else {
      detail::require_cfg(kernel_size >= 1 && kernel_size % 2 == 1,
                          "config: kernel_size must be odd");
    }
  }
};

// Learned state of one SAPA operator. mx/my hold one d x C (d x C') map per
// group; phi is the offset-generating layer (D only). Variant I has none.
template <typename T>
struct SapaParams {
  std::vector<LinearMap<T>> mx;
  std::vector<LinearMap<T>> my;
  LinearMap<T> phi;

  std::int64_t count() const {
    std::int64_t total = 0;
    for (const auto& m : mx) total += static_cast<std::int64_t>(m.size());
    for (const auto& m : my) total += static_cast<std::int64_t>(m.size());
    total += static_cast<std::int64_t>(phi.size());
    return total;
  }
};

// Number of output rows of the offset layer: 2 coordinates per point, per
// group, per DOF sibling.
inline int phi_rows(const SapaConfig& cfg) {
  return 2 * cfg.num_points * cfg.groups * cfg.offset_dof;
}

// Fresh untrained parameters: Xavier embeddings; zero phi, so that origin
// initialization reduces SAPA-D to nearest-neighbor before any training.
template <typename T>
SapaParams<T> make_sapa_params(const SapaConfig& cfg, int dec_channels,
                               int enc_channels, RngSpec rng) {
  cfg.validate();
  SapaParams<T> p;
  if (cfg.variant == Variant::I) return p;
  for (int g = 0; g < cfg.groups; ++g) {
    p.mx.push_back(seeded_init_linear<T>(cfg.embed_dim, dec_channels,
                                         {rng.seed + 2 * g, rng.scheme}));
    p.my.push_back(seeded_init_linear<T>(cfg.embed_dim, enc_channels,
                                         {rng.seed + 2 * g + 1, rng.scheme}));
  }
  if (cfg.variant == Variant::D)
    p.phi = LinearMap<T>(phi_rows(cfg), dec_channels);  // zeros
  return p;
}

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::I: return "sapa-i";
    case Variant::B: return "sapa-b";
    case Variant::D: return "sapa-d";
  }
  return "?";
}

inline std::string to_string(NormFn h) {
  switch (h) {
    case NormFn::none: return "none";
    case NormFn::exp: return "exp";
    case NormFn::relu: return "relu";
    case NormFn::sigmoid: return "sigmoid";
    case NormFn::softplus: return "softplus";
  }
  return "?";
}

}  // namespace sapa
