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

// Transformer generator: latent -> base_grid^2 tokens -> stages of encoder
// blocks, each stage followed by a pixelshuffle up-sampling that doubles the
// grid and quarters the token width -> linear RGB head -> tanh.
struct GeneratorSpec {
  std::size_t latent_dim = 64;
  std::size_t base_grid = 8;
  std::size_t embed_dim = 256;
  std::vector<std::size_t> depths = {2, 2, 2};  // encoder blocks per stage
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  std::size_t out_channels = 3;

  std::size_t stages() const { return depths.size(); }

  // Token width at stage s: each up-sampling divides the width by 4.
  std::size_t stage_dim(std::size_t s) const {
    std::size_t d = embed_dim;
    for (std::size_t i = 0; i < s; ++i) d /= 4;
    return d;
  }

  std::size_t stage_grid(std::size_t s) const { return base_grid << s; }

  std::size_t output_resolution() const { return stage_grid(stages() - 1); }

  std::size_t mlp_hidden(std::size_t s) const {
    return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(stage_dim(s))));
  }

  void validate() const {
    if (depths.empty()) throw ConfigError("generator: depths must be non-empty");
    if (latent_dim == 0 || base_grid == 0 || embed_dim == 0 || heads == 0 || out_channels == 0) {
      throw ConfigError("generator: all extents must be positive");
    }
    if (!(mlp_ratio > 0.0)) throw ConfigError("generator: mlp_ratio must be positive");
    std::size_t quarter = 1;
    for (std::size_t s = 0; s + 1 < stages(); ++s) quarter *= 4;
    if (embed_dim % quarter != 0) {
      throw ConfigError("generator: embed_dim must be divisible by 4^(stages-1)");
    }
    for (std::size_t s = 0; s < stages(); ++s) {
      if (stage_dim(s) % heads != 0) {
        throw ConfigError("generator: stage " + std::to_string(s) + " width " +
                          std::to_string(stage_dim(s)) + " not divisible by heads");
      }
      if (mlp_hidden(s) == 0) throw ConfigError("generator: mlp hidden width underflows");
    }
  }
};

// Size presets. tiny is the test-scale configuration; s/m/l/xl are tuned so
// their parameter counts land on the published 18.6M / 33.1M / 74.3M /
// 133.6M generator sizes.
inline GeneratorSpec generator_preset(const std::string& name) {
  GeneratorSpec spec;
  if (name == "tiny") {
    spec.latent_dim = 16;
    spec.base_grid = 4;
    spec.embed_dim = 16;
    spec.depths = {1, 1};
    spec.heads = 2;
  } else if (name == "s") {
    spec.latent_dim = 384;
    spec.base_grid = 8;
    spec.embed_dim = 384;
    spec.depths = {5, 2, 2};
    spec.heads = 6;
  } else if (name == "m") {
    spec.latent_dim = 512;
    spec.base_grid = 8;
    spec.embed_dim = 512;
    spec.depths = {5, 2, 2};
    spec.heads = 8;
  } else if (name == "l") {
    spec.latent_dim = 768;
    spec.base_grid = 8;
    spec.embed_dim = 768;
    spec.depths = {5, 2, 2};
    spec.heads = 8;
  } else if (name == "xl") {
    spec.latent_dim = 1024;
    spec.base_grid = 8;
    spec.embed_dim = 1024;
    spec.depths = {5, 4, 2};
    spec.heads = 8;
  } else {
    throw ConfigError("generator: unknown preset '" + name + "'");
  }
  spec.validate();
  return spec;
}

template <class Real>
struct EncoderBlockParams {
  Tensor<Real> ln1_gamma, ln1_beta;
  Tensor<Real> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<Real> ln2_gamma, ln2_beta;
  Tensor<Real> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <class Real>
struct GeneratorParams {
  GeneratorSpec spec;
  Tensor<Real> input_w, input_b;  // latent -> base_grid^2 * embed_dim
  std::vector<Tensor<Real>> pos;  // per stage, [T_s, d_s]
  std::vector<std::vector<EncoderBlockParams<Real>>> blocks;
  Tensor<Real> head_w, head_b;  // d_last -> out_channels

  void for_each(const std::function<void(const std::string&, Tensor<Real>&)>& fn) {
    fn("g.input.w", input_w);
    fn("g.input.b", input_b);
    for (std::size_t s = 0; s < blocks.size(); ++s) {
      const std::string sp = "g.s" + std::to_string(s);
      fn(sp + ".pos", pos[s]);
      for (std::size_t bI = 0; bI < blocks[s].size(); ++bI) {
        const std::string bp = sp + ".b" + std::to_string(bI);
        auto& blk = blocks[s][bI];
        fn(bp + ".ln1.gamma", blk.ln1_gamma);
        fn(bp + ".ln1.beta", blk.ln1_beta);
        fn(bp + ".attn.wq", blk.wq);
        fn(bp + ".attn.bq", blk.bq);
        fn(bp + ".attn.wk", blk.wk);
        fn(bp + ".attn.bk", blk.bk);
        fn(bp + ".attn.wv", blk.wv);
        fn(bp + ".attn.bv", blk.bv);
        fn(bp + ".attn.wo", blk.wo);
        fn(bp + ".attn.bo", blk.bo);
        fn(bp + ".ln2.gamma", blk.ln2_gamma);
        fn(bp + ".ln2.beta", blk.ln2_beta);
        fn(bp + ".mlp.w1", blk.mlp_w1);
        fn(bp + ".mlp.b1", blk.mlp_b1);
        fn(bp + ".mlp.w2", blk.mlp_w2);
        fn(bp + ".mlp.b2", blk.mlp_b2);
      }
    }
    fn("g.head.w", head_w);
    fn("g.head.b", head_b);
  }

  std::vector<Tensor<Real>> tensors() {
    std::vector<Tensor<Real>> out;
    for_each([&](const std::string&, Tensor<Real>& t) { out.push_back(t); });
    return out;
  }
};

// Exact scalar parameter count for a spec, by construction arithmetic.
inline std::size_t generator_param_count(const GeneratorSpec& spec) {
  spec.validate();
  const std::size_t g2 = spec.base_grid * spec.base_grid;
  std::size_t total = spec.latent_dim * (g2 * spec.embed_dim) + g2 * spec.embed_dim;
  for (std::size_t s = 0; s < spec.stages(); ++s) {
    const std::size_t d = spec.stage_dim(s);
    const std::size_t T = spec.stage_grid(s) * spec.stage_grid(s);
    const std::size_t h = spec.mlp_hidden(s);
    total += T * d;                                         // positional table
    total += spec.depths[s] * (2 * d + 4 * (d * d + d) +    // ln1 + qkv/out proj
                               2 * d +                      // ln2
                               d * h + h + h * d + d);      // mlp
  }
  total += spec.stage_dim(spec.stages() - 1) * spec.out_channels + spec.out_channels;
  return total;
}

namespace detail {

template <class Real>
EncoderBlockParams<Real> init_block(std::size_t d, std::size_t h, Rng& rng, Real w_std) {
  EncoderBlockParams<Real> b;
  b.ln1_gamma = Tensor<Real>::filled({d}, Real(1), true);
  b.ln1_beta = Tensor<Real>::zeros({d}, true);
  b.wq = Tensor<Real>::truncated_normal({d, d}, rng, w_std, true);
  b.bq = Tensor<Real>::zeros({d}, true);
  b.wk = Tensor<Real>::truncated_normal({d, d}, rng, w_std, true);
  b.bk = Tensor<Real>::zeros({d}, true);
  b.wv = Tensor<Real>::truncated_normal({d, d}, rng, w_std, true);
  b.bv = Tensor<Real>::zeros({d}, true);
  b.wo = Tensor<Real>::truncated_normal({d, d}, rng, w_std, true);
  b.bo = Tensor<Real>::zeros({d}, true);
  b.ln2_gamma = Tensor<Real>::filled({d}, Real(1), true);
  b.ln2_beta = Tensor<Real>::zeros({d}, true);
  b.mlp_w1 = Tensor<Real>::truncated_normal({d, h}, rng, w_std, true);
  b.mlp_b1 = Tensor<Real>::zeros({h}, true);
  b.mlp_w2 = Tensor<Real>::truncated_normal({h, d}, rng, w_std, true);
  b.mlp_b2 = Tensor<Real>::zeros({d}, true);
  return b;
}

}  // namespace detail

// Deterministic initialization: truncated-normal weights (std 0.02), zero
// biases, zero positional tables, unit layer-norm gains.
template <class Real>
GeneratorParams<Real> init_generator(const GeneratorSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Real w_std = Real(0.02);
  Rng rng(seed);
  GeneratorParams<Real> p;
  p.spec = spec;
  const std::size_t g2 = spec.base_grid * spec.base_grid;
  p.input_w = Tensor<Real>::truncated_normal({spec.latent_dim, g2 * spec.embed_dim}, rng, w_std,
                                             true);
  p.input_b = Tensor<Real>::zeros({g2 * spec.embed_dim}, true);
  for (std::size_t s = 0; s < spec.stages(); ++s) {
    const std::size_t d = spec.stage_dim(s);
    const std::size_t T = spec.stage_grid(s) * spec.stage_grid(s);
    p.pos.push_back(Tensor<Real>::zeros({T, d}, true));
    std::vector<EncoderBlockParams<Real>> stage;
    for (std::size_t bI = 0; bI < spec.depths[s]; ++bI) {
      stage.push_back(detail::init_block<Real>(d, spec.mlp_hidden(s), rng, w_std));
    }
    p.blocks.push_back(std::move(stage));
  }
  const std::size_t d_last = spec.stage_dim(spec.stages() - 1);
  p.head_w = Tensor<Real>::truncated_normal({d_last, spec.out_channels}, rng, w_std, true);
  p.head_b = Tensor<Real>::zeros({spec.out_channels}, true);
  return p;
}

// Pre-norm encoder block: x + MHSA(LN(x)), then + MLP(LN(.)).
template <class Real>
Tensor<Real> encoder_block(Graph<Real>& g, const Tensor<Real>& tokens,
                           const EncoderBlockParams<Real>& blk, std::size_t heads,
                           Real ln_eps = Real(1e-5)) {
  if (tokens.rank() != 3) {
    throw_shape("encoder_block: expected [N,T,d] tokens, got ", shape_str(tokens.shape()));
  }
  const std::size_t N = tokens.dim(0), T = tokens.dim(1), d = tokens.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("encoder_block: token width " + std::to_string(d) +
                      " not divisible by heads");
  }
  const std::size_t dh = d / heads;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));

  auto split_heads = [&](const Tensor<Real>& x) {
    auto t = reshape(g, x, {N, T, heads, dh});
    t = permute(g, t, {0, 2, 1, 3});
    return reshape(g, t, {N * heads, T, dh});
  };

  auto h1 = layer_norm(g, tokens, blk.ln1_gamma, blk.ln1_beta, ln_eps);
  auto flat = reshape(g, h1, {N * T, d});
  auto q = split_heads(linear(g, flat, blk.wq, blk.bq));
  auto k = split_heads(linear(g, flat, blk.wk, blk.bk));
  auto v = split_heads(linear(g, flat, blk.wv, blk.bv));

  auto scores = affine(g, bmm(g, q, permute(g, k, {0, 2, 1})), scale, Real(0));
  auto attn = softmax(g, scores);
  auto ctx = bmm(g, attn, v);  // [N*heads, T, dh]
  ctx = reshape(g, ctx, {N, heads, T, dh});
  ctx = permute(g, ctx, {0, 2, 1, 3});
  ctx = reshape(g, ctx, {N * T, d});
  auto proj = reshape(g, linear(g, ctx, blk.wo, blk.bo), {N, T, d});
  auto x = add(g, tokens, proj);

  auto h2 = layer_norm(g, x, blk.ln2_gamma, blk.ln2_beta, ln_eps);
  auto m = linear(g, reshape(g, h2, {N * T, d}), blk.mlp_w1, blk.mlp_b1);
  m = gelu(g, m);
  m = linear(g, m, blk.mlp_w2, blk.mlp_b2);
  return add(g, x, reshape(g, m, {N, T, d}));
}

// Reshape tokens onto their grid, pixelshuffle with r=2, flatten back:
// token count x4, token width /4.
template <class Real>
Tensor<Real> upsample_stage(Graph<Real>& g, const Tensor<Real>& tokens, std::size_t grid_h,
                            std::size_t grid_w) {
  if (tokens.rank() != 3) {
    throw_shape("upsample_stage: expected [N,T,d] tokens, got ", shape_str(tokens.shape()));
  }
  const std::size_t N = tokens.dim(0), T = tokens.dim(1), d = tokens.dim(2);
  if (T != grid_h * grid_w) {
    throw ConfigError("upsample_stage: token count " + std::to_string(T) +
                      " does not match grid " + std::to_string(grid_h) + "x" +
                      std::to_string(grid_w));
  }
  if (d % 4 != 0) {
    throw ConfigError("upsample_stage: token width " + std::to_string(d) +
                      " not divisible by 4");
  }
  auto img = reshape(g, permute(g, tokens, {0, 2, 1}), {N, d, grid_h, grid_w});
  auto up = pixel_shuffle(g, img, 2);
  auto flat = reshape(g, up, {N, d / 4, 4 * grid_h * grid_w});
  return permute(g, flat, {0, 2, 1});
}

// Inverse of upsample_stage, for round-trip checks.
template <class Real>
Tensor<Real> downsample_stage(Graph<Real>& g, const Tensor<Real>& tokens, std::size_t grid_h,
                              std::size_t grid_w) {
  const std::size_t N = tokens.dim(0), T = tokens.dim(1), d = tokens.dim(2);
  if (T != grid_h * grid_w) throw ConfigError("downsample_stage: grid mismatch");
  auto img = reshape(g, permute(g, tokens, {0, 2, 1}), {N, d, grid_h, grid_w});
  auto down = pixel_unshuffle(g, img, 2);
  auto flat = reshape(g, down, {N, d * 4, grid_h * grid_w / 4});
  return permute(g, flat, {0, 2, 1});
}

// Full forward pass: latents [N, latent_dim] -> images [N, C, R, R] in [-1,1].
template <class Real>
Tensor<Real> generate(Graph<Real>& g, GeneratorParams<Real>& params,
                      const Tensor<Real>& latents) {
  const GeneratorSpec& spec = params.spec;
  if (latents.rank() != 2 || latents.dim(1) != spec.latent_dim) {
    throw_shape("generate: latents must be [N,", spec.latent_dim, "], got ",
                shape_str(latents.shape()));
  }
  const std::size_t N = latents.dim(0);
  const std::size_t g2 = spec.base_grid * spec.base_grid;

  auto x = linear(g, latents, params.input_w, params.input_b);
  auto tokens = reshape(g, x, {N, g2, spec.embed_dim});
  for (std::size_t s = 0; s < spec.stages(); ++s) {
    tokens = add_bcast(g, tokens, params.pos[s]);
    for (auto& blk : params.blocks[s]) {
      tokens = encoder_block(g, tokens, blk, spec.heads);
    }
    if (s + 1 < spec.stages()) {
      tokens = upsample_stage(g, tokens, spec.stage_grid(s), spec.stage_grid(s));
    }
  }
  const std::size_t R = spec.output_resolution();
  const std::size_t d_last = spec.stage_dim(spec.stages() - 1);
  auto rgb = linear(g, reshape(g, tokens, {N * R * R, d_last}), params.head_w, params.head_b);
  auto img = permute(g, reshape(g, rgb, {N, R * R, spec.out_channels}), {0, 2, 1});
  return tanh_act(g, reshape(g, img, {N, spec.out_channels, R, R}));
}

}  // namespace hgan
