#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hgan/common.hpp"
#include "hgan/graph.hpp"
#include "hgan/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hgan {

enum class Activation { relu, gelu, tanh };

namespace detail {

template <class Real>
inline void guard_finite(const Tensor<Real>& t, const char* op) {
  for (Real x : t.values()) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw NumericError(std::string(op) + ": non-finite value in output");
    }
  }
}

template <class Real>
inline bool any_requires_grad(std::initializer_list<const Tensor<Real>*> ts) {
  for (const auto* t : ts) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Work threshold below which parallel loops are not worth spawning.
constexpr std::size_t kParallelGrain = 1 << 15;

}  // namespace detail

// ---------------------------------------------------------------------
// Elementwise and broadcast arithmetic
// ---------------------------------------------------------------------

template <class Real>
Tensor<Real> add(Graph<Real>& g, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw_shape("add: shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
  }
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  detail::guard_finite(out, "add");
  if (g.recording() && detail::any_requires_grad<Real>({&a, &b})) {
    out.set_requires_grad(true);
    g.record("add", {a, b}, out, [a, b, out, n]() mutable {
      auto& ga = a.grad();
      auto& gb = b.grad();
      const auto& go = out.grad();
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] += go[i];
        gb[i] += go[i];
      }
    });
  }
  return out;
}

// b broadcasts over the leading axes of x; b.shape must equal a trailing
// suffix of x.shape (a [d] bias against [N,T,d], a [T,d] table against
// [N,T,d], ...).
template <class Real>
Tensor<Real> add_bcast(Graph<Real>& g, const Tensor<Real>& x, const Tensor<Real>& b) {
  const Shape& xs = x.shape();
  const Shape& bs = b.shape();
  if (bs.size() > xs.size() ||
      !std::equal(bs.rbegin(), bs.rend(), xs.rbegin())) {
    throw_shape("add_bcast: ", shape_str(bs), " is not a trailing suffix of ", shape_str(xs));
  }
  const std::size_t n = x.numel();
  const std::size_t m = b.numel();
  Tensor<Real> out = Tensor<Real>::zeros(xs);
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] + b.data()[i % m];
  detail::guard_finite(out, "add_bcast");
  if (g.recording() && detail::any_requires_grad<Real>({&x, &b})) {
    out.set_requires_grad(true);
    g.record("add_bcast", {x, b}, out, [x, b, out, n, m]() mutable {
      auto& gx = x.grad();
      auto& gb = b.grad();
      const auto& go = out.grad();
      for (std::size_t i = 0; i < n; ++i) {
        gx[i] += go[i];
        gb[i % m] += go[i];
      }
    });
  }
  return out;
}

// Per-channel bias for NCHW feature maps.
template <class Real>
Tensor<Real> bias_channels(Graph<Real>& g, const Tensor<Real>& x, const Tensor<Real>& b) {
  if (x.rank() != 4 || b.rank() != 1 || b.dim(0) != x.dim(1)) {
    throw_shape("bias_channels: expected NCHW and [C] bias, got ", shape_str(x.shape()),
                " and ", shape_str(b.shape()));
  }
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const Real bias = b.data()[c];
      const std::size_t base = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) out.data()[base + i] = x.data()[base + i] + bias;
    }
  }
  detail::guard_finite(out, "bias_channels");
  if (g.recording() && detail::any_requires_grad<Real>({&x, &b})) {
    out.set_requires_grad(true);
    g.record("bias_channels", {x, b}, out, [x, b, out, N, C, HW]() mutable {
      auto& gx = x.grad();
      auto& gb = b.grad();
      const auto& go = out.grad();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t base = (n * C + c) * HW;
          Real acc = 0;
          for (std::size_t i = 0; i < HW; ++i) {
            gx[base + i] += go[base + i];
            acc += go[base + i];
          }
          gb[c] += acc;
        }
      }
    });
  }
  return out;
}

// out = alpha * x + beta with scalar constants.
template <class Real>
Tensor<Real> affine(Graph<Real>& g, const Tensor<Real>& x, Real alpha, Real beta) {
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = alpha * x.data()[i] + beta;
  detail::guard_finite(out, "affine");
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    g.record("affine", {x}, out, [x, out, alpha, n]() mutable {
      auto& gx = x.grad();
      const auto& go = out.grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += alpha * go[i];
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mul(Graph<Real>& g, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw_shape("mul: shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
  }
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  detail::guard_finite(out, "mul");
  if (g.recording() && detail::any_requires_grad<Real>({&a, &b})) {
    out.set_requires_grad(true);
    g.record("mul", {a, b}, out, [a, b, out, n]() mutable {
      auto& ga = a.grad();
      auto& gb = b.grad();
      const auto& go = out.grad();
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] += go[i] * b.data()[i];
        gb[i] += go[i] * a.data()[i];
      }
    });
  }
  return out;
}

// Elementwise product with a constant tensor; no gradient flows to c.
template <class Real>
Tensor<Real> mul_const(Graph<Real>& g, const Tensor<Real>& x, const Tensor<Real>& c) {
  if (x.numel() != c.numel()) {
    throw_shape("mul_const: size mismatch ", shape_str(x.shape()), " vs ",
                shape_str(c.shape()));
  }
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * c.data()[i];
  detail::guard_finite(out, "mul_const");
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    g.record("mul_const", {x}, out, [x, c, out, n]() mutable {
      auto& gx = x.grad();
      const auto& go = out.grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += go[i] * c.data()[i];
    });
  }
  return out;
}

// Scale every element of x by a one-element tensor; both sides get grads.
template <class Real>
Tensor<Real> mul_scalar(Graph<Real>& g, const Tensor<Real>& x, const Tensor<Real>& s) {
  if (s.numel() != 1) {
    throw_shape("mul_scalar: scale must be one element, got ", shape_str(s.shape()));
  }
  const Real sv = s.data()[0];
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * sv;
  detail::guard_finite(out, "mul_scalar");
  if (g.recording() && detail::any_requires_grad<Real>({&x, &s})) {
    out.set_requires_grad(true);
    g.record("mul_scalar", {x, s}, out, [x, s, out, sv, n]() mutable {
      auto& gx = x.grad();
      auto& gs = s.grad();
      const auto& go = out.grad();
      Real acc = 0;
      for (std::size_t i = 0; i < n; ++i) {
        gx[i] += go[i] * sv;
        acc += go[i] * x.data()[i];
      }
      gs[0] += acc;
    });
  }
  return out;
}

template <class Real>
Tensor<Real> reciprocal_scalar(Graph<Real>& g, const Tensor<Real>& s) {
  if (s.numel() != 1) {
    throw_shape("reciprocal_scalar: expected one element, got ", shape_str(s.shape()));
  }
  const Real sv = s.data()[0];
  Tensor<Real> out = Tensor<Real>::scalar(Real(1) / sv);
  detail::guard_finite(out, "reciprocal_scalar");
  if (g.recording() && s.requires_grad()) {
    out.set_requires_grad(true);
    g.record("reciprocal_scalar", {s}, out, [s, out, sv]() mutable {
      s.grad()[0] -= out.grad()[0] / (sv * sv);
    });
  }
  return out;
}

// ---------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------

namespace detail {

// c[m x n] += or = a[m x k] * b[k x n]; plain row-major kernels, each
// output element owned by exactly one iteration so the parallel form is
// bit-identical to the serial one.
template <class Real>
void gemm(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  const std::size_t work = m * n * k;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (work > kParallelGrain)
#endif
  for (std::ptrdiff_t is = 0; is < static_cast<std::ptrdiff_t>(m); ++is) {
    const std::size_t i = static_cast<std::size_t>(is);
    Real* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, Real(0));
    for (std::size_t l = 0; l < k; ++l) {
      const Real av = a[i * k + l];
      const Real* brow = b + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  (void)work;
}

// c[m x k] += a[m x n] * b^T where b is [k x n].
template <class Real>
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t n, std::size_t k) {
  const std::size_t work = m * n * k;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (work > kParallelGrain)
#endif
  for (std::ptrdiff_t is = 0; is < static_cast<std::ptrdiff_t>(m); ++is) {
    const std::size_t i = static_cast<std::size_t>(is);
    for (std::size_t j = 0; j < k; ++j) {
      Real acc = 0;
      const Real* arow = a + i * n;
      const Real* brow = b + j * n;
      for (std::size_t l = 0; l < n; ++l) acc += arow[l] * brow[l];
      c[i * k + j] += acc;
    }
  }
  (void)work;
}

// c[k x n] += a^T * b where a is [m x k], b is [m x n].
template <class Real>
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t work = m * n * k;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (work > kParallelGrain)
#endif
  for (std::ptrdiff_t ls = 0; ls < static_cast<std::ptrdiff_t>(k); ++ls) {
    const std::size_t l = static_cast<std::size_t>(ls);
    Real* crow = c + l * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real av = a[i * k + l];
      const Real* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  (void)work;
}

}  // namespace detail

template <class Real>
Tensor<Real> matmul(Graph<Real>& g, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw_shape("matmul: expected rank-2 inputs, got ", shape_str(a.shape()), " and ",
                shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw_shape("matmul: inner extents disagree, ", shape_str(a.shape()), " vs ",
                shape_str(b.shape()));
  }
  Tensor<Real> out = Tensor<Real>::zeros({m, n});
  detail::gemm(a.data(), b.data(), out.data(), m, k, n, false);
  detail::guard_finite(out, "matmul");
  if (g.recording() && detail::any_requires_grad<Real>({&a, &b})) {
    out.set_requires_grad(true);
    g.record("matmul", {a, b}, out, [a, b, out, m, k, n]() mutable {
      detail::gemm_nt(out.grad().data(), b.data(), a.grad().data(), m, n, k);
      detail::gemm_tn(a.data(), out.grad().data(), b.grad().data(), m, k, n);
    });
  }
  return out;
}

// Batched matmul over matching leading batch extents: [B,m,k] x [B,k,n].
template <class Real>
Tensor<Real> bmm(Graph<Real>& g, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw_shape("bmm: expected matching [B,m,k] and [B,k,n], got ", shape_str(a.shape()),
                " and ", shape_str(b.shape()));
  }
  const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(1) != k) {
    throw_shape("bmm: inner extents disagree, ", shape_str(a.shape()), " vs ",
                shape_str(b.shape()));
  }
  Tensor<Real> out = Tensor<Real>::zeros({B, m, n});
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (B * m * k * n > detail::kParallelGrain)
#endif
  for (std::ptrdiff_t pb = 0; pb < static_cast<std::ptrdiff_t>(B); ++pb) {
    const std::size_t i = static_cast<std::size_t>(pb);
    detail::gemm(a.data() + i * m * k, b.data() + i * k * n, out.data() + i * m * n, m, k, n,
                 false);
  }
  detail::guard_finite(out, "bmm");
  if (g.recording() && detail::any_requires_grad<Real>({&a, &b})) {
    out.set_requires_grad(true);
    g.record("bmm", {a, b}, out, [a, b, out, B, m, k, n]() mutable {
      auto& ga = a.grad();
      auto& gb = b.grad();
      const auto& go = out.grad();
      for (std::size_t i = 0; i < B; ++i) {
        detail::gemm_nt(go.data() + i * m * n, b.data() + i * k * n, ga.data() + i * m * k, m,
                        n, k);
        detail::gemm_tn(a.data() + i * m * k, go.data() + i * m * n, gb.data() + i * k * n, m,
                        k, n);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------
// Shape movement
// ---------------------------------------------------------------------

template <class Real>
Tensor<Real> reshape(Graph<Real>& g, const Tensor<Real>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw_shape("reshape: cannot view ", shape_str(x.shape()), " as ", shape_str(shape));
  }
  Tensor<Real> out = Tensor<Real>::from(std::move(shape), x.values());
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    const std::size_t n = x.numel();
    g.record("reshape", {x}, out, [x, out, n]() mutable {
      auto& gx = x.grad();
      const auto& go = out.grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += go[i];
    });
  }
  return out;
}

// General axis permutation; axes[i] names the input axis that becomes
// output axis i. Gradient is the inverse permutation.
template <class Real>
Tensor<Real> permute(Graph<Real>& g, const Tensor<Real>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) {
    throw_shape("permute: axes count ", axes.size(), " vs rank ", r);
  }
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || seen[axes[i]]) throw_shape("permute: invalid axes");
    seen[axes[i]] = true;
    out_shape[i] = x.dim(axes[i]);
  }
  const auto in_strides = detail::row_major_strides(x.shape());
  const auto out_strides = detail::row_major_strides(out_shape);
  const std::size_t n = x.numel();

  // map[i]: flat output index -> flat input index
  std::vector<std::size_t> perm_stride(r);
  for (std::size_t i = 0; i < r; ++i) perm_stride[i] = in_strides[axes[i]];

  Tensor<Real> out = Tensor<Real>::zeros(out_shape);
  std::vector<std::size_t> map(n);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t rem = o, src = 0;
    for (std::size_t i = 0; i < r; ++i) {
      const std::size_t coord = rem / out_strides[i];
      rem -= coord * out_strides[i];
      src += coord * perm_stride[i];
    }
    map[o] = src;
    out.data()[o] = x.data()[src];
  }
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    g.record("permute", {x}, out, [x, out, map = std::move(map), n]() mutable {
      auto& gx = x.grad();
      const auto& go = out.grad();
      for (std::size_t o = 0; o < n; ++o) gx[map[o]] += go[o];
    });
  }
  return out;
}

// ---------------------------------------------------------------------
// Convolution and pooling
// ---------------------------------------------------------------------

// Cross-correlation (no kernel flip), zero padding. Output extents must be
// integral: (H + 2p - kh) and (W + 2p - kw) divisible by the stride.
template <class Real>
Tensor<Real> conv2d(Graph<Real>& g, const Tensor<Real>& x, const Tensor<Real>& kernel,
                    std::size_t stride, std::size_t padding) {
  if (x.rank() != 4 || kernel.rank() != 4) {
    throw_shape("conv2d: expected NCHW input and OCHW kernel, got ", shape_str(x.shape()),
                " and ", shape_str(kernel.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = kernel.dim(0), KC = kernel.dim(1), KH = kernel.dim(2), KW = kernel.dim(3);
  if (KC != C) {
    throw_shape("conv2d: kernel channels ", KC, " vs input channels ", C);
  }
  if (KH > H + 2 * padding || KW > W + 2 * padding) {
    throw_shape("conv2d: kernel ", KH, "x", KW, " exceeds padded input ", H + 2 * padding, "x",
                W + 2 * padding);
  }
  if ((H + 2 * padding - KH) % stride != 0 || (W + 2 * padding - KW) % stride != 0) {
    throw_shape("conv2d: non-integral output extent for input ", shape_str(x.shape()),
                ", kernel ", shape_str(kernel.shape()), ", stride ", stride, ", padding ",
                padding);
  }
  const std::size_t HO = (H + 2 * padding - KH) / stride + 1;
  const std::size_t WO = (W + 2 * padding - KW) / stride + 1;
  const std::ptrdiff_t P = static_cast<std::ptrdiff_t>(padding);

  Tensor<Real> out = Tensor<Real>::zeros({N, O, HO, WO});
  const Real* xd = x.data();
  const Real* kd = kernel.data();
  Real* od = out.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (N * O * HO * WO * C * KH * KW > detail::kParallelGrain)
#endif
  for (std::ptrdiff_t nos = 0; nos < static_cast<std::ptrdiff_t>(N * O); ++nos) {
    const std::size_t n = static_cast<std::size_t>(nos) / O;
    const std::size_t o = static_cast<std::size_t>(nos) % O;
    for (std::size_t ho = 0; ho < HO; ++ho) {
      for (std::size_t wo = 0; wo < WO; ++wo) {
        Real acc = 0;
        for (std::size_t c = 0; c < C; ++c) {
          const Real* xplane = xd + (n * C + c) * H * W;
          const Real* kplane = kd + (o * C + c) * KH * KW;
          for (std::size_t ki = 0; ki < KH; ++ki) {
            const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(ho * stride + ki) - P;
            if (h < 0 || h >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kj = 0; kj < KW; ++kj) {
              const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(wo * stride + kj) - P;
              if (w < 0 || w >= static_cast<std::ptrdiff_t>(W)) continue;
              acc += xplane[h * static_cast<std::ptrdiff_t>(W) + w] * kplane[ki * KW + kj];
            }
          }
        }
        od[((n * O + o) * HO + ho) * WO + wo] = acc;
      }
    }
  }
  detail::guard_finite(out, "conv2d");
  if (g.recording() && detail::any_requires_grad<Real>({&x, &kernel})) {
    out.set_requires_grad(true);
    g.record("conv2d", {x, kernel}, out,
             [x, kernel, out, N, C, H, W, O, KH, KW, HO, WO, stride, P]() mutable {
               auto& gx = x.grad();
               auto& gk = kernel.grad();
               const auto& go = out.grad();
               const Real* kd = kernel.data();
               const Real* xd = x.data();
               // d/dinput: every input element collects from the outputs
               // whose window covered it.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (N * C * H * W * O > detail::kParallelGrain)
#endif
               for (std::ptrdiff_t ncs = 0; ncs < static_cast<std::ptrdiff_t>(N * C); ++ncs) {
                 const std::size_t n = static_cast<std::size_t>(ncs) / C;
                 const std::size_t c = static_cast<std::size_t>(ncs) % C;
                 for (std::size_t h = 0; h < H; ++h) {
                   for (std::size_t w = 0; w < W; ++w) {
                     Real acc = 0;
                     for (std::size_t ki = 0; ki < KH; ++ki) {
                       const std::ptrdiff_t num_h = static_cast<std::ptrdiff_t>(h) + P -
                                                    static_cast<std::ptrdiff_t>(ki);
                       if (num_h < 0 || num_h % static_cast<std::ptrdiff_t>(stride) != 0)
                         continue;
                       const std::size_t ho = static_cast<std::size_t>(num_h) / stride;
                       if (ho >= HO) continue;
                       for (std::size_t kj = 0; kj < KW; ++kj) {
                         const std::ptrdiff_t num_w = static_cast<std::ptrdiff_t>(w) + P -
                                                      static_cast<std::ptrdiff_t>(kj);
                         if (num_w < 0 || num_w % static_cast<std::ptrdiff_t>(stride) != 0)
                           continue;
                         const std::size_t wo = static_cast<std::size_t>(num_w) / stride;
                         if (wo >= WO) continue;
                         for (std::size_t o = 0; o < O; ++o) {
                           acc += go[((n * O + o) * HO + ho) * WO + wo] *
                                  kd[((o * C + c) * KH + ki) * KW + kj];
                         }
                       }
                     }
                     gx[((n * C + c) * H + h) * W + w] += acc;
                   }
                 }
               }
               // d/dkernel
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (O * C * KH * KW * N * HO * WO > detail::kParallelGrain)
#endif
               for (std::ptrdiff_t ocs = 0; ocs < static_cast<std::ptrdiff_t>(O * C); ++ocs) {
                 const std::size_t o = static_cast<std::size_t>(ocs) / C;
                 const std::size_t c = static_cast<std::size_t>(ocs) % C;
                 for (std::size_t ki = 0; ki < KH; ++ki) {
                   for (std::size_t kj = 0; kj < KW; ++kj) {
                     Real acc = 0;
                     for (std::size_t n = 0; n < N; ++n) {
                       const Real* xplane = xd + (n * C + c) * H * W;
                       for (std::size_t ho = 0; ho < HO; ++ho) {
                         const std::ptrdiff_t h =
                             static_cast<std::ptrdiff_t>(ho * stride + ki) - P;
                         if (h < 0 || h >= static_cast<std::ptrdiff_t>(H)) continue;
                         for (std::size_t wo = 0; wo < WO; ++wo) {
                           const std::ptrdiff_t w =
                               static_cast<std::ptrdiff_t>(wo * stride + kj) - P;
                           if (w < 0 || w >= static_cast<std::ptrdiff_t>(W)) continue;
                           acc += go[((n * O + o) * HO + ho) * WO + wo] *
                                  xplane[h * static_cast<std::ptrdiff_t>(W) + w];
                         }
                       }
                     }
                     gk[((o * C + c) * KH + ki) * KW + kj] += acc;
                   }
                 }
               }
             });
  }
  return out;
}

// Mean over non-overlapping k x k windows; k must divide both extents.
template <class Real>
Tensor<Real> avg_pool2d(Graph<Real>& g, const Tensor<Real>& x, std::size_t k) {
  if (x.rank() != 4) throw_shape("avg_pool2d: expected NCHW, got ", shape_str(x.shape()));
  if (k == 0) throw ShapeError("avg_pool2d: window must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % k != 0 || W % k != 0) {
    throw_shape("avg_pool2d: window ", k, " does not divide extents ", H, "x", W);
  }
  const std::size_t HO = H / k, WO = W / k;
  const Real inv = Real(1) / static_cast<Real>(k * k);
  Tensor<Real> out = Tensor<Real>::zeros({N, C, HO, WO});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const Real* xp = x.data() + nc * H * W;
    Real* op = out.data() + nc * HO * WO;
    for (std::size_t ho = 0; ho < HO; ++ho) {
      for (std::size_t wo = 0; wo < WO; ++wo) {
        Real acc = 0;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) acc += xp[(ho * k + i) * W + wo * k + j];
        }
        op[ho * WO + wo] = acc * inv;
      }
    }
  }
  detail::guard_finite(out, "avg_pool2d");
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    g.record("avg_pool2d", {x}, out, [x, out, N, C, H, W, HO, WO, k, inv]() mutable {
      auto& gx = x.grad();
      const auto& go = out.grad();
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        for (std::size_t ho = 0; ho < HO; ++ho) {
          for (std::size_t wo = 0; wo < WO; ++wo) {
            const Real spread = go[nc * HO * WO + ho * WO + wo] * inv;
            for (std::size_t i = 0; i < k; ++i) {
              for (std::size_t j = 0; j < k; ++j) {
                gx[nc * H * W + (ho * k + i) * W + wo * k + j] += spread;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// Channel-to-space permutation: out(n,c,rh+i,rw+j) = in(n, c*r^2 + i*r + j, h, w).
template <class Real>
Tensor<Real> pixel_shuffle(Graph<Real>& g, const Tensor<Real>& x, std::size_t r) {
  if (x.rank() != 4) throw_shape("pixel_shuffle: expected NCHW, got ", shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (r == 0 || C % (r * r) != 0) {
    throw_shape("pixel_shuffle: channels ", C, " not divisible by r^2 = ", r * r);
  }
  const std::size_t CO = C / (r * r);
  Tensor<Real> out = Tensor<Real>::zeros({N, CO, H * r, W * r});
  const std::size_t n_total = x.numel();
  std::vector<std::size_t> map(n_total);  // output flat -> input flat
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < CO; ++co) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < r; ++j) {
          const std::size_t ci = co * r * r + i * r + j;
          for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t w = 0; w < W; ++w) {
              const std::size_t src = ((n * C + ci) * H + h) * W + w;
              const std::size_t dst =
                  ((n * CO + co) * (H * r) + (h * r + i)) * (W * r) + (w * r + j);
              out.data()[dst] = x.data()[src];
              map[dst] = src;
            }
          }
        }
      }
    }
  }
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    g.record("pixel_shuffle", {x}, out, [x, out, map = std::move(map), n_total]() mutable {
      auto& gx = x.grad();
      const auto& go = out.grad();
      for (std::size_t d = 0; d < n_total; ++d) gx[map[d]] += go[d];
    });
  }
  return out;
}

// Inverse of pixel_shuffle: out(n, c*r^2 + i*r + j, h, w) = in(n, c, rh+i, rw+j).
template <class Real>
Tensor<Real> pixel_unshuffle(Graph<Real>& g, const Tensor<Real>& x, std::size_t r) {
  if (x.rank() != 4) throw_shape("pixel_unshuffle: expected NCHW, got ", shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (r == 0 || H % r != 0 || W % r != 0) {
    throw_shape("pixel_unshuffle: spatial extents ", H, "x", W, " not divisible by r = ", r);
  }
  const std::size_t HO = H / r, WO = W / r, CO = C * r * r;
  Tensor<Real> out = Tensor<Real>::zeros({N, CO, HO, WO});
  const std::size_t n_total = x.numel();
  std::vector<std::size_t> map(n_total);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < r; ++j) {
          const std::size_t co = c * r * r + i * r + j;
          for (std::size_t ho = 0; ho < HO; ++ho) {
            for (std::size_t wo = 0; wo < WO; ++wo) {
              const std::size_t src = ((n * C + c) * H + (ho * r + i)) * W + (wo * r + j);
              const std::size_t dst = ((n * CO + co) * HO + ho) * WO + wo;
              out.data()[dst] = x.data()[src];
              map[dst] = src;
            }
          }
        }
      }
    }
  }
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    g.record("pixel_unshuffle", {x}, out, [x, out, map = std::move(map), n_total]() mutable {
      auto& gx = x.grad();
      const auto& go = out.grad();
      for (std::size_t d = 0; d < n_total; ++d) gx[map[d]] += go[d];
    });
  }
  return out;
}

// ---------------------------------------------------------------------
// Normalization and attention pieces
// ---------------------------------------------------------------------

// Standardize along the last axis, then apply the [d] affine pair.
template <class Real>
Tensor<Real> layer_norm(Graph<Real>& g, const Tensor<Real>& x, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, Real eps) {
  if (x.rank() < 1) throw_shape("layer_norm: rank-0 input");
  const std::size_t d = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw_shape("layer_norm: affine pair must be [", d, "], got ", shape_str(gamma.shape()),
                " and ", shape_str(beta.shape()));
  }
  if (!(eps > Real(0))) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  std::vector<Real> mean(rows), rstd(rows);
  for (std::size_t rI = 0; rI < rows; ++rI) {
    const Real* xr = x.data() + rI * d;
    Real mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<Real>(d);
    const Real rs = Real(1) / std::sqrt(var + eps);
    mean[rI] = mu;
    rstd[rI] = rs;
    Real* orow = out.data() + rI * d;
    for (std::size_t i = 0; i < d; ++i) {
      orow[i] = gamma.data()[i] * ((xr[i] - mu) * rs) + beta.data()[i];
    }
  }
  detail::guard_finite(out, "layer_norm");
  if (g.recording() && detail::any_requires_grad<Real>({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    g.record("layer_norm", {x, gamma, beta}, out,
             [x, gamma, beta, out, mean = std::move(mean), rstd = std::move(rstd), rows,
              d]() mutable {
               auto& gx = x.grad();
               auto& gg = gamma.grad();
               auto& gb = beta.grad();
               const auto& go = out.grad();
               for (std::size_t rI = 0; rI < rows; ++rI) {
                 const Real* xr = x.data() + rI * d;
                 const Real* gor = go.data() + rI * d;
                 const Real mu = mean[rI], rs = rstd[rI];
                 Real sum_dg = 0, sum_dgx = 0;
                 for (std::size_t i = 0; i < d; ++i) {
                   const Real xhat = (xr[i] - mu) * rs;
                   const Real dg = gor[i] * gamma.data()[i];
                   sum_dg += dg;
                   sum_dgx += dg * xhat;
                   gg[i] += gor[i] * xhat;
                   gb[i] += gor[i];
                 }
                 const Real inv_d = Real(1) / static_cast<Real>(d);
                 for (std::size_t i = 0; i < d; ++i) {
                   const Real xhat = (xr[i] - mu) * rs;
                   const Real dg = gor[i] * gamma.data()[i];
                   gx[rI * d + i] += rs * (dg - sum_dg * inv_d - xhat * sum_dgx * inv_d);
                 }
               }
             });
  }
  return out;
}

// Row softmax along the last axis with max subtraction.
template <class Real>
Tensor<Real> softmax(Graph<Real>& g, const Tensor<Real>& x) {
  if (x.rank() < 1) throw_shape("softmax: rank-0 input");
  const std::size_t d = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / d;
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  for (std::size_t rI = 0; rI < rows; ++rI) {
    const Real* xr = x.data() + rI * d;
    Real* orow = out.data() + rI * d;
    Real mx = xr[0];
    for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, xr[i]);
    Real denom = 0;
    for (std::size_t i = 0; i < d; ++i) {
      orow[i] = std::exp(xr[i] - mx);
      denom += orow[i];
    }
    for (std::size_t i = 0; i < d; ++i) orow[i] /= denom;
  }
  detail::guard_finite(out, "softmax");
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    const std::size_t dd = d, rr = rows;
    g.record("softmax", {x}, out, [x, out, dd, rr]() mutable {
      auto& gx = x.grad();
      const auto& go = out.grad();
      for (std::size_t rI = 0; rI < rr; ++rI) {
        const Real* y = out.data() + rI * dd;
        const Real* gor = go.data() + rI * dd;
        Real dot = 0;
        for (std::size_t i = 0; i < dd; ++i) dot += gor[i] * y[i];
        for (std::size_t i = 0; i < dd; ++i) gx[rI * dd + i] += y[i] * (gor[i] - dot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------

template <class Real>
Tensor<Real> relu(Graph<Real>& g, const Tensor<Real>& x) {
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > Real(0) ? x.data()[i] : Real(0);
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    g.record("relu", {x}, out, [x, out, n]() mutable {
      auto& gx = x.grad();
      const auto& go = out.grad();
      for (std::size_t i = 0; i < n; ++i) {
        if (x.data()[i] > Real(0)) gx[i] += go[i];
      }
    });
  }
  return out;
}

namespace detail {
constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;
}  // namespace detail

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <class Real>
Tensor<Real> gelu(Graph<Real>& g, const Tensor<Real>& x) {
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  const std::size_t n = x.numel();
  const Real c0 = static_cast<Real>(detail::kGeluC0);
  const Real c1 = static_cast<Real>(detail::kGeluC1);
  for (std::size_t i = 0; i < n; ++i) {
    const Real v = x.data()[i];
    const Real t = std::tanh(c0 * (v + c1 * v * v * v));
    out.data()[i] = Real(0.5) * v * (Real(1) + t);
  }
  detail::guard_finite(out, "gelu");
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    g.record("gelu", {x}, out, [x, out, n, c0, c1]() mutable {
      auto& gx = x.grad();
      const auto& go = out.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const Real v = x.data()[i];
        const Real t = std::tanh(c0 * (v + c1 * v * v * v));
        const Real du = c0 * (Real(1) + Real(3) * c1 * v * v);
        const Real deriv = Real(0.5) * (Real(1) + t) + Real(0.5) * v * (Real(1) - t * t) * du;
        gx[i] += go[i] * deriv;
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> tanh_act(Graph<Real>& g, const Tensor<Real>& x) {
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::tanh(x.data()[i]);
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    g.record("tanh", {x}, out, [x, out, n]() mutable {
      auto& gx = x.grad();
      const auto& go = out.grad();
      for (std::size_t i = 0; i < n; ++i) {
        gx[i] += go[i] * (Real(1) - out.data()[i] * out.data()[i]);
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> activation(Graph<Real>& g, const Tensor<Real>& x, Activation kind) {
  switch (kind) {
    case Activation::relu: return relu(g, x);
    case Activation::gelu: return gelu(g, x);
    case Activation::tanh: return tanh_act(g, x);
  }
  throw ContractError("activation: unknown kind");
}

// ---------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------

template <class Real>
Tensor<Real> sum_all(Graph<Real>& g, const Tensor<Real>& x) {
  Real acc = 0;
  for (Real v : x.values()) acc += v;
  Tensor<Real> out = Tensor<Real>::scalar(acc);
  detail::guard_finite(out, "sum_all");
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    const std::size_t n = x.numel();
    g.record("sum_all", {x}, out, [x, out, n]() mutable {
      auto& gx = x.grad();
      const Real go = out.grad()[0];
      for (std::size_t i = 0; i < n; ++i) gx[i] += go;
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mean_all(Graph<Real>& g, const Tensor<Real>& x) {
  if (x.numel() == 0) throw ContractError("mean_all: empty tensor");
  Real acc = 0;
  for (Real v : x.values()) acc += v;
  const Real inv = Real(1) / static_cast<Real>(x.numel());
  Tensor<Real> out = Tensor<Real>::scalar(acc * inv);
  detail::guard_finite(out, "mean_all");
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    const std::size_t n = x.numel();
    g.record("mean_all", {x}, out, [x, out, n, inv]() mutable {
      auto& gx = x.grad();
      const Real go = out.grad()[0] * inv;
      for (std::size_t i = 0; i < n; ++i) gx[i] += go;
    });
  }
  return out;
}

// NCHW -> NC, summing each feature plane.
template <class Real>
Tensor<Real> global_sum_pool(Graph<Real>& g, const Tensor<Real>& x) {
  if (x.rank() != 4) throw_shape("global_sum_pool: expected NCHW, got ", shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<Real> out = Tensor<Real>::zeros({N, C});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    Real acc = 0;
    const Real* xp = x.data() + nc * HW;
    for (std::size_t i = 0; i < HW; ++i) acc += xp[i];
    out.data()[nc] = acc;
  }
  detail::guard_finite(out, "global_sum_pool");
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    g.record("global_sum_pool", {x}, out, [x, out, N, C, HW]() mutable {
      auto& gx = x.grad();
      const auto& go = out.grad();
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        for (std::size_t i = 0; i < HW; ++i) gx[nc * HW + i] += go[nc];
      }
    });
  }
  return out;
}

// Contiguous slice [begin, end) along axis 0.
template <class Real>
Tensor<Real> slice0(Graph<Real>& g, const Tensor<Real>& x, std::size_t begin, std::size_t end) {
  if (x.rank() < 1 || begin >= end || end > x.dim(0)) {
    throw_shape("slice0: invalid range [", begin, ",", end, ") for ", shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[0] = end - begin;
  const std::size_t inner = x.numel() / x.dim(0);
  Tensor<Real> out = Tensor<Real>::zeros(out_shape);
  std::copy(x.data() + begin * inner, x.data() + end * inner, out.data());
  if (g.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    g.record("slice0", {x}, out, [x, out, begin, inner]() mutable {
      auto& gx = x.grad();
      const auto& go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[begin * inner + i] += go[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------
// Compositions
// ---------------------------------------------------------------------

// x[R x in] * w[in x out] + b[out]
template <class Real>
Tensor<Real> linear(Graph<Real>& g, const Tensor<Real>& x, const Tensor<Real>& w,
                    const Tensor<Real>& b) {
  return add_bcast(g, matmul(g, x, w), b);
}

// Stack two batches along axis 0 as plain data (no gradient path).
template <class Real>
Tensor<Real> concat0_data(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != b.rank() || a.rank() < 1 ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw_shape("concat0: trailing extents differ, ", shape_str(a.shape()), " vs ",
                shape_str(b.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[0] += b.dim(0);
  Tensor<Real> out = Tensor<Real>::zeros(out_shape);
  std::copy(a.data(), a.data() + a.numel(), out.data());
  std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
  return out;
}

}  // namespace hgan
