#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "hgan/common.hpp"

namespace hgan {

struct SymmetricEigen {
  std::vector<double> values;   // ascending
  std::vector<double> vectors;  // column j is the eigenvector of values[j], row-major d x d
};

// Cyclic Jacobi eigendecomposition for dense symmetric matrices. Plenty for
// the covariance sizes this project sees (d <= a few hundred); robustness
// matters more than speed here.
inline SymmetricEigen jacobi_eigen(const std::vector<double>& a_in, std::size_t d,
                                   int max_sweeps = 100) {
  if (a_in.size() != d * d) {
    throw ContractError("jacobi_eigen: matrix size does not match dimension");
  }
  std::vector<double> a = a_in;
  std::vector<double> v(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;

  auto off_diag = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i + 1; j < d; ++j) s += a[i * d + j] * a[i * d + j];
    }
    return s;
  };
  double norm = 0.0;
  for (double x : a) norm += x * x;
  const double stop = 1e-28 * (norm + 1e-300);

  for (int sweep = 0; sweep < max_sweeps && off_diag() > stop; ++sweep) {
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a[p * d + q];
        if (apq == 0.0) continue;
        const double app = a[p * d + p];
        const double aqq = a[q * d + q];
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a[k * d + p];
          const double akq = a[k * d + q];
          a[k * d + p] = c * akp - s * akq;
          a[k * d + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a[p * d + k];
          const double aqk = a[q * d + k];
          a[p * d + k] = c * apk - s * aqk;
          a[q * d + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double vkp = v[k * d + p];
          const double vkq = v[k * d + q];
          v[k * d + p] = c * vkp - s * vkq;
          v[k * d + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  SymmetricEigen out;
  out.values.resize(d);
  for (std::size_t i = 0; i < d; ++i) out.values[i] = a[i * d + i];
  out.vectors = std::move(v);

  // sort ascending, permuting columns alongside
  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return out.values[x] < out.values[y]; });
  SymmetricEigen sorted;
  sorted.values.resize(d);
  sorted.vectors.resize(d * d);
  for (std::size_t j = 0; j < d; ++j) {
    sorted.values[j] = out.values[order[j]];
    for (std::size_t i = 0; i < d; ++i) sorted.vectors[i * d + j] = out.vectors[i * d + order[j]];
  }
  return sorted;
}

// Largest singular value via eigendecomposition of the Gram matrix.
inline double top_singular_value(const std::vector<double>& w, std::size_t m, std::size_t n) {
  if (w.size() != m * n) throw ContractError("top_singular_value: bad matrix size");
  const std::size_t d = std::min(m, n);
  std::vector<double> gram(d * d, 0.0);
  if (n <= m) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < m; ++k) acc += w[k * n + i] * w[k * n + j];
        gram[i * n + j] = gram[j * n + i] = acc;
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += w[i * n + k] * w[j * n + k];
        gram[i * m + j] = gram[j * m + i] = acc;
      }
    }
  }
  const SymmetricEigen eig = jacobi_eigen(gram, d);
  const double lam = eig.values.back();
  return lam > 0.0 ? std::sqrt(lam) : 0.0;
}

}  // namespace hgan
