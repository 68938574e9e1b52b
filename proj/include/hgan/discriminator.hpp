#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hgan/common.hpp"
#include "hgan/graph.hpp"
#include "hgan/ops.hpp"
#include "hgan/random.hpp"
#include "hgan/tensor.hpp"

namespace hgan {

enum class DiscVariant { sngan, dcgan };

inline DiscVariant parse_disc_variant(const std::string& s) {
  if (s == "sngan" || s == "sngan_no_sn") return DiscVariant::sngan;
  if (s == "dcgan") return DiscVariant::dcgan;
  throw ConfigError("discriminator: unknown variant '" + s + "'");
}

struct DiscriminatorSpec {
  std::size_t in_channels = 3;
  std::size_t base_width = 384;
  std::size_t n_blocks = 4;
  std::vector<bool> downsample = {true, true, false, false};
  bool use_sn = true;
  DiscVariant variant = DiscVariant::sngan;
  std::size_t resolution = 32;
  int sn_power_iters = 1;

  void validate() const {
    if (in_channels == 0 || base_width == 0 || resolution == 0) {
      throw ConfigError("discriminator: all extents must be positive");
    }
    if (variant == DiscVariant::sngan) {
      if (n_blocks == 0) throw ConfigError("discriminator: n_blocks must be positive");
      if (downsample.size() != n_blocks) {
        throw ConfigError("discriminator: downsample flags must match n_blocks");
      }
      std::size_t res = resolution;
      for (bool flag : downsample) {
        if (flag) {
          if (res < 2 || res % 2 != 0) {
            throw ConfigError("discriminator: resolution not evenly divisible through all "
                              "downsample stages");
          }
          res /= 2;
        }
      }
      if (res < 1) throw ConfigError("discriminator: resolution collapses below 1");
    } else {
      std::size_t res = resolution;
      while (res > 4) {
        if (res % 2 != 0) throw ConfigError("discriminator: dcgan needs halvable resolution");
        res /= 2;
      }
      if (res < 1) throw ConfigError("discriminator: resolution collapses below 1");
    }
    if (sn_power_iters < 0) throw ConfigError("discriminator: negative power iterations");
  }
};

// Named presets used by the benchmark harness. "sngan_no_sn" is the same
// topology as "sngan" with normalization switched off.
inline DiscriminatorSpec discriminator_preset(const std::string& name, std::size_t resolution,
                                              std::size_t base_width) {
  DiscriminatorSpec spec;
  spec.resolution = resolution;
  spec.base_width = base_width;
  if (name == "sngan" || name == "sngan_no_sn") {
    spec.variant = DiscVariant::sngan;
    spec.use_sn = (name == "sngan");
    spec.n_blocks = 4;
    spec.downsample = {true, true, false, false};
    if (resolution <= 8) {
      spec.n_blocks = 2;
      spec.downsample = {true, true};
    } else if (resolution <= 16) {
      spec.n_blocks = 3;
      spec.downsample = {true, true, false};
    }
  } else if (name == "dcgan") {
    spec.variant = DiscVariant::dcgan;
    spec.use_sn = false;
  } else {
    throw ConfigError("discriminator: unknown preset '" + name + "'");
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------
// Spectral normalization
// ---------------------------------------------------------------------

// Power-iteration auxiliary vector, persisted across steps. The weight is
// viewed as m x n with m = dim(0) (conv kernels collapse to
// out_channels x in*kh*kw).
template <class Real>
struct SpectralNormState {
  Tensor<Real> u;  // [m], unit norm
  int n_power_iters = 1;
  bool degenerate = false;
};

namespace detail {

template <class Real>
Real l2_normalize(std::vector<Real>& x) {
  Real norm = 0;
  for (Real v : x) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > Real(0)) {
    for (Real& v : x) v /= norm;
  }
  return norm;
}

// Runs `iters` (v,u) update pairs, then evaluates sigma = u^T W v with a
// fresh v so that iters == 0 is a read-only estimate from the stored u.
// Returns 0 for a degenerate (numerically zero) weight.
template <class Real>
Real sn_power_iterate(const Real* w, std::size_t m, std::size_t n, std::vector<Real>& u,
                      int iters) {
  std::vector<Real> v(n);
  auto mat_tu = [&]() {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t i = 0; i < m; ++i) acc += w[i * n + j] * u[i];
      v[j] = acc;
    }
  };
  for (int it = 0; it < iters; ++it) {
    mat_tu();
    if (l2_normalize(v) == Real(0)) return Real(0);
    for (std::size_t i = 0; i < m; ++i) {
      Real acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += w[i * n + j] * v[j];
      u[i] = acc;
    }
    if (l2_normalize(u) == Real(0)) return Real(0);
  }
  mat_tu();
  if (l2_normalize(v) == Real(0)) return Real(0);
  Real sigma = 0;
  for (std::size_t i = 0; i < m; ++i) {
    Real acc = 0;
    for (std::size_t j = 0; j < n; ++j) acc += w[i * n + j] * v[j];
    sigma += u[i] * acc;
  }
  return sigma;
}

template <class Real>
void ensure_sn_u(SpectralNormState<Real>& state, std::size_t m) {
  if (state.u.numel() == m) return;
  std::vector<Real> u(m, Real(1) / std::sqrt(static_cast<Real>(m)));
  state.u = Tensor<Real>::from({m}, std::move(u));
}

}  // namespace detail

// Standalone (out-of-graph) normalization: runs state.n_power_iters
// iterations, persists u, and returns (W / sigma, sigma). A zero matrix is
// returned unchanged with the degenerate flag set.
template <class Real>
std::pair<Tensor<Real>, Real> spectral_normalize(const Tensor<Real>& w,
                                                 SpectralNormState<Real>& state) {
  if (w.rank() < 2) throw_shape("spectral_normalize: need rank >= 2, got ", shape_str(w.shape()));
  const std::size_t m = w.dim(0);
  const std::size_t n = w.numel() / m;
  detail::ensure_sn_u(state, m);
  std::vector<Real>& u = state.u.values();
  const Real sigma = detail::sn_power_iterate(w.data(), m, n, u, state.n_power_iters);
  if (!(sigma > Real(0))) {
    state.degenerate = true;
    return {w.detach(), Real(0)};
  }
  state.degenerate = false;
  Tensor<Real> out = w.detach();
  for (Real& v : out.values()) v /= sigma;
  return {out, sigma};
}

// In-graph normalization: the returned tensor is W * (1 / (u^T W v)) with
// u, v held constant, so gradients flow to W through both the numerator and
// the sigma estimate. update_state advances the power iteration once per
// state.n_power_iters; evaluation passes leave u untouched.
template <class Real>
Tensor<Real> sn_apply(Graph<Real>& g, const Tensor<Real>& w, SpectralNormState<Real>& state,
                      bool update_state) {
  const std::size_t m = w.dim(0);
  const std::size_t n = w.numel() / m;
  detail::ensure_sn_u(state, m);
  std::vector<Real>& u = state.u.values();
  const int iters = update_state ? state.n_power_iters : 0;
  const Real sigma = detail::sn_power_iterate(w.data(), m, n, u, iters);
  if (!(sigma > Real(0))) {
    state.degenerate = true;
    return w;
  }
  state.degenerate = false;
  // rebuild v from the (possibly updated) u to form the rank-one u v^T probe
  std::vector<Real> v(n);
  for (std::size_t j = 0; j < n; ++j) {
    Real acc = 0;
    for (std::size_t i = 0; i < m; ++i) acc += w.data()[i * n + j] * u[i];
    v[j] = acc;
  }
  detail::l2_normalize(v);
  Tensor<Real> probe = Tensor<Real>::zeros(w.shape());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) probe.data()[i * n + j] = u[i] * v[j];
  }
  auto sigma_t = sum_all(g, mul_const(g, w, probe));
  return mul_scalar(g, w, reciprocal_scalar(g, sigma_t));
}

// ---------------------------------------------------------------------
// Blocks and full model
// ---------------------------------------------------------------------

template <class Real>
struct ResBlockParams {
  Tensor<Real> k1, b1;  // 3x3
  Tensor<Real> k2, b2;  // 3x3
  bool has_shortcut = false;
  Tensor<Real> ks, bs;  // 1x1, present when channels change
  bool downsample = false;
  SpectralNormState<Real> sn1, sn2, sns;
};

template <class Real>
struct DiscriminatorParams {
  DiscriminatorSpec spec;
  std::vector<ResBlockParams<Real>> blocks;  // sngan
  std::vector<Tensor<Real>> conv_k, conv_b;  // dcgan stack
  Tensor<Real> head_w, head_b;               // [1, C] and [1]
  SpectralNormState<Real> sn_head;

  void for_each(const std::function<void(const std::string&, Tensor<Real>&)>& fn,
                bool include_sn_states = false) {
    if (spec.variant == DiscVariant::sngan) {
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string bp = "d.b" + std::to_string(i);
        auto& blk = blocks[i];
        fn(bp + ".k1", blk.k1);
        fn(bp + ".b1", blk.b1);
        fn(bp + ".k2", blk.k2);
        fn(bp + ".b2", blk.b2);
        if (blk.has_shortcut) {
          fn(bp + ".ks", blk.ks);
          fn(bp + ".bs", blk.bs);
        }
        if (include_sn_states && spec.use_sn) {
          fn(bp + ".sn1.u", blk.sn1.u);
          fn(bp + ".sn2.u", blk.sn2.u);
          if (blk.has_shortcut) fn(bp + ".sns.u", blk.sns.u);
        }
      }
      fn("d.head.w", head_w);
      fn("d.head.b", head_b);
      if (include_sn_states && spec.use_sn) fn("d.head.sn.u", sn_head.u);
    } else {
      for (std::size_t i = 0; i < conv_k.size(); ++i) {
        const std::string cp = "d.c" + std::to_string(i);
        fn(cp + ".k", conv_k[i]);
        fn(cp + ".b", conv_b[i]);
      }
    }
  }

  // Learnable tensors only (what the optimizer touches).
  std::vector<Tensor<Real>> tensors() {
    std::vector<Tensor<Real>> out;
    for_each([&](const std::string&, Tensor<Real>& t) { out.push_back(t); });
    return out;
  }
};

namespace detail {

// Width plan for the dcgan stack: stride-2 4x4 convs double the width until
// the map is 4x4 (or smaller), then one valid conv maps to the score.
inline std::vector<std::size_t> dcgan_widths(const DiscriminatorSpec& spec) {
  std::vector<std::size_t> widths;
  std::size_t res = spec.resolution;
  std::size_t w = spec.base_width;
  while (res > 4) {
    widths.push_back(w);
    w *= 2;
    res /= 2;
  }
  return widths;
}

}  // namespace detail

inline std::size_t discriminator_param_count(const DiscriminatorSpec& spec) {
  spec.validate();
  std::size_t total = 0;
  if (spec.variant == DiscVariant::sngan) {
    std::size_t cin = spec.in_channels;
    const std::size_t w = spec.base_width;
    for (std::size_t i = 0; i < spec.n_blocks; ++i) {
      total += 9 * cin * w + w;  // conv1
      total += 9 * w * w + w;    // conv2
      if (cin != w) total += cin * w + w;
      cin = w;
    }
    total += w + 1;  // head
  } else {
    std::size_t cin = spec.in_channels;
    std::size_t res = spec.resolution;
    for (std::size_t wdt : detail::dcgan_widths(spec)) {
      total += 16 * cin * wdt + wdt;
      cin = wdt;
      res /= 2;
    }
    total += res * res * cin + 1;  // final valid conv to the score
  }
  return total;
}

template <class Real>
DiscriminatorParams<Real> init_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Real w_std = Real(0.02);
  Rng rng(seed);
  DiscriminatorParams<Real> p;
  p.spec = spec;
  auto unit_u = [&](std::size_t m) {
    std::vector<Real> u(m);
    for (Real& x : u) x = static_cast<Real>(rng.normal());
    detail::l2_normalize(u);
    return Tensor<Real>::from({m}, std::move(u));
  };
  if (spec.variant == DiscVariant::sngan) {
    std::size_t cin = spec.in_channels;
    const std::size_t w = spec.base_width;
    for (std::size_t i = 0; i < spec.n_blocks; ++i) {
      ResBlockParams<Real> blk;
      blk.downsample = spec.downsample[i];
      blk.k1 = Tensor<Real>::truncated_normal({w, cin, 3, 3}, rng, w_std, true);
      blk.b1 = Tensor<Real>::zeros({w}, true);
      blk.k2 = Tensor<Real>::truncated_normal({w, w, 3, 3}, rng, w_std, true);
      blk.b2 = Tensor<Real>::zeros({w}, true);
      blk.has_shortcut = (cin != w);
      if (blk.has_shortcut) {
        blk.ks = Tensor<Real>::truncated_normal({w, cin, 1, 1}, rng, w_std, true);
        blk.bs = Tensor<Real>::zeros({w}, true);
      }
      blk.sn1.n_power_iters = blk.sn2.n_power_iters = blk.sns.n_power_iters = spec.sn_power_iters;
      if (spec.use_sn) {
        blk.sn1.u = unit_u(w);
        blk.sn2.u = unit_u(w);
        if (blk.has_shortcut) blk.sns.u = unit_u(w);
      }
      p.blocks.push_back(std::move(blk));
      cin = w;
    }
    p.head_w = Tensor<Real>::truncated_normal({1, w}, rng, w_std, true);
    p.head_b = Tensor<Real>::zeros({1}, true);
    p.sn_head.n_power_iters = spec.sn_power_iters;
    if (spec.use_sn) p.sn_head.u = unit_u(1);
  } else {
    std::size_t cin = spec.in_channels;
    std::size_t res = spec.resolution;
    for (std::size_t wdt : detail::dcgan_widths(spec)) {
      p.conv_k.push_back(Tensor<Real>::truncated_normal({wdt, cin, 4, 4}, rng, w_std, true));
      p.conv_b.push_back(Tensor<Real>::zeros({wdt}, true));
      cin = wdt;
      res /= 2;
    }
    p.conv_k.push_back(Tensor<Real>::truncated_normal({1, cin, res, res}, rng, w_std, true));
    p.conv_b.push_back(Tensor<Real>::zeros({1}, true));
  }
  return p;
}

// Learned path ReLU -> conv3x3 -> ReLU -> conv3x3, raw-input shortcut
// (1x1 conv when channels change), average pooling on both paths when
// downsampling. Convs are SN-wrapped when use_sn.
template <class Real>
Tensor<Real> resblock(Graph<Real>& g, const Tensor<Real>& x, ResBlockParams<Real>& blk,
                      bool use_sn, bool train_mode) {
  auto eff = [&](const Tensor<Real>& k, SpectralNormState<Real>& st) {
    return use_sn ? sn_apply(g, k, st, train_mode) : k;
  };
  auto h = relu(g, x);
  h = bias_channels(g, conv2d(g, h, eff(blk.k1, blk.sn1), 1, 1), blk.b1);
  h = relu(g, h);
  h = bias_channels(g, conv2d(g, h, eff(blk.k2, blk.sn2), 1, 1), blk.b2);
  Tensor<Real> sc = x;
  if (blk.has_shortcut) {
    sc = bias_channels(g, conv2d(g, x, eff(blk.ks, blk.sns), 1, 0), blk.bs);
  }
  if (blk.downsample) {
    h = avg_pool2d(g, h, 2);
    sc = avg_pool2d(g, sc, 2);
  }
  return add(g, h, sc);
}

// Raw realness scores, one per image (hinge loss consumes unbounded scores).
// train_mode advances each spectral-norm power iteration exactly once; in
// evaluation mode the stored u vectors are read but never written.
template <class Real>
Tensor<Real> discriminate(Graph<Real>& g, DiscriminatorParams<Real>& params,
                          const Tensor<Real>& images, bool train_mode) {
  const DiscriminatorSpec& spec = params.spec;
  if (images.rank() != 4 || images.dim(1) != spec.in_channels ||
      images.dim(2) != spec.resolution || images.dim(3) != spec.resolution) {
    throw_shape("discriminate: expected [N,", spec.in_channels, ",", spec.resolution, ",",
                spec.resolution, "], got ", shape_str(images.shape()));
  }
  const std::size_t N = images.dim(0);
  if (spec.variant == DiscVariant::sngan) {
    Tensor<Real> h = images;
    for (auto& blk : params.blocks) {
      h = resblock(g, h, blk, spec.use_sn, train_mode);
    }
    h = relu(g, h);
    auto feat = global_sum_pool(g, h);  // [N, C]
    auto w_eff = spec.use_sn ? sn_apply(g, params.head_w, params.sn_head, train_mode)
                             : params.head_w;
    auto scores = add_bcast(g, matmul(g, feat, permute(g, w_eff, {1, 0})), params.head_b);
    return reshape(g, scores, {N});
  }
  Tensor<Real> h = images;
  const std::size_t n_strided = params.conv_k.size() - 1;
  for (std::size_t i = 0; i < n_strided; ++i) {
    h = bias_channels(g, conv2d(g, h, params.conv_k[i], 2, 1), params.conv_b[i]);
    h = relu(g, h);
  }
  h = bias_channels(g, conv2d(g, h, params.conv_k.back(), 1, 0), params.conv_b.back());
  return reshape(g, h, {N});
}

}  // namespace hgan
