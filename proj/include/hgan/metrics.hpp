#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hgan/common.hpp"
#include "hgan/dataio.hpp"
#include "hgan/graph.hpp"
#include "hgan/linalg.hpp"
#include "hgan/ops.hpp"
#include "hgan/random.hpp"
#include "hgan/tensor.hpp"

namespace hgan {

struct FeatureMatrix {
  std::size_t n = 0, d = 0;
  std::vector<double> data;  // row-major n x d
};

// Pluggable stand-in for the usual pretrained feature network. Absolute
// FID values from these extractors are only comparable within a run setup,
// never to published numbers.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual FeatureMatrix extract(const TensorF& images) const = 0;
};

// Flattened pixels.
class IdentityExtractor : public FeatureExtractor {
 public:
  std::string name() const override { return "identity"; }
  FeatureMatrix extract(const TensorF& images) const override {
    if (images.rank() != 4) {
      throw_shape("identity extractor: expected NCHW, got ", shape_str(images.shape()));
    }
    FeatureMatrix f;
    f.n = images.dim(0);
    f.d = images.numel() / f.n;
    f.data.resize(f.n * f.d);
    for (std::size_t i = 0; i < f.data.size(); ++i) {
      f.data[i] = static_cast<double>(images.data()[i]);
    }
    return f;
  }
};

// Three fixed-seed random-weight conv layers with stride 2 and a global
// average pool; d = 64 regardless of input resolution (>= 8).
class SmallCnnExtractor : public FeatureExtractor {
 public:
  explicit SmallCnnExtractor(std::uint64_t seed = 0xFEA7) {
    Rng rng(seed);
    k1_ = TensorF::truncated_normal({16, 3, 3, 3}, rng, 0.25f, false);
    k2_ = TensorF::truncated_normal({32, 16, 3, 3}, rng, 0.12f, false);
    k3_ = TensorF::truncated_normal({64, 32, 3, 3}, rng, 0.08f, false);
  }

  std::string name() const override { return "smallcnn"; }

  FeatureMatrix extract(const TensorF& images) const override {
    if (images.rank() != 4 || images.dim(1) != 3) {
      throw_shape("smallcnn extractor: expected Nx3xHxW, got ", shape_str(images.shape()));
    }
    if (images.dim(2) < 8 || images.dim(2) % 8 != 0 || images.dim(2) != images.dim(3)) {
      throw ContractError("smallcnn extractor: resolution must be square and divisible by 8");
    }
    Graph<float> g(false);
    TensorF h = relu(g, conv2d(g, images, k1_, 2, 1));
    h = relu(g, conv2d(g, h, k2_, 2, 1));
    h = relu(g, conv2d(g, h, k3_, 2, 1));
    TensorF pooled = global_sum_pool(g, h);
    const std::size_t n = pooled.dim(0), d = pooled.dim(1);
    const double spatial = static_cast<double>(h.dim(2) * h.dim(3));
    FeatureMatrix f;
    f.n = n;
    f.d = d;
    f.data.resize(n * d);
    for (std::size_t i = 0; i < n * d; ++i) {
      f.data[i] = static_cast<double>(pooled.data()[i]) / spatial;
    }
    return f;
  }

 private:
  TensorF k1_, k2_, k3_;
};

inline std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name) {
  if (name == "identity") return std::make_unique<IdentityExtractor>();
  if (name == "smallcnn") return std::make_unique<SmallCnnExtractor>();
  throw ConfigError("metrics: unknown extractor '" + name + "'");
}

// ---------------------------------------------------------------------
// Gaussian statistics and the Frechet distance
// ---------------------------------------------------------------------

struct GaussianStats {
  std::vector<double> mu;     // [d]
  std::vector<double> sigma;  // [d x d]
  std::size_t d = 0;
};

// Sample mean and unbiased covariance (divisor n-1).
inline GaussianStats fit_gaussian(const FeatureMatrix& features) {
  const std::size_t n = features.n, d = features.d;
  if (n < 2) throw ContractError("fit_gaussian: need at least 2 rows, got " + std::to_string(n));
  GaussianStats st;
  st.d = d;
  st.mu.assign(d, 0.0);
  st.sigma.assign(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) st.mu[j] += features.data[i * d + j];
  }
  for (double& v : st.mu) v /= static_cast<double>(n);
  std::vector<double> centered(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      centered[i * d + j] = features.data[i * d + j] - st.mu[j];
    }
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += centered[i * d + a] * centered[i * d + b];
      acc /= static_cast<double>(n - 1);
      st.sigma[a * d + b] = st.sigma[b * d + a] = acc;
    }
  }
  return st;
}

// Symmetric square root of a PSD matrix via eigendecomposition; negative
// eigenvalues within round-off are clamped to zero.
inline std::vector<double> matrix_sqrt_psd(const std::vector<double>& a, std::size_t d) {
  if (a.size() != d * d) throw ContractError("matrix_sqrt_psd: bad size");
  double max_abs = 0.0, max_asym = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      max_abs = std::max(max_abs, std::abs(a[i * d + j]));
      max_asym = std::max(max_asym, std::abs(a[i * d + j] - a[j * d + i]));
    }
  }
  if (max_asym > 1e-8 * (1.0 + max_abs)) {
    throw ContractError("matrix_sqrt_psd: input asymmetry beyond tolerance");
  }
  const SymmetricEigen eig = jacobi_eigen(a, d);
  std::vector<double> root(d);
  for (std::size_t i = 0; i < d; ++i) root[i] = eig.values[i] > 0.0 ? std::sqrt(eig.values[i]) : 0.0;
  // S = V diag(sqrt(lambda)) V^T
  std::vector<double> out(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        acc += eig.vectors[i * d + k] * root[k] * eig.vectors[j * d + k];
      }
      out[i * d + j] = out[j * d + i] = acc;
    }
  }
  return out;
}

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2). The cross term
// is symmetrized so the square-root argument stays PSD.
inline double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.d != b.d) {
    throw ContractError("frechet_distance: dimension mismatch " + std::to_string(a.d) + " vs " +
                        std::to_string(b.d));
  }
  const std::size_t d = a.d;
  double mean_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a.mu[i] - b.mu[i];
    mean_term += diff * diff;
  }
  const std::vector<double> sa_root = matrix_sqrt_psd(a.sigma, d);
  // inner = Sa^1/2 Sb Sa^1/2, forced exactly symmetric before the final root
  std::vector<double> tmp(d * d, 0.0), inner(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += sa_root[i * d + k] * b.sigma[k * d + j];
      tmp[i * d + j] = acc;
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += tmp[i * d + k] * sa_root[k * d + j];
      inner[i * d + j] = acc;
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      const double s = 0.5 * (inner[i * d + j] + inner[j * d + i]);
      inner[i * d + j] = inner[j * d + i] = s;
    }
  }
  const std::vector<double> cross = matrix_sqrt_psd(inner, d);
  double trace_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    trace_term += a.sigma[i * d + i] + b.sigma[i * d + i] - 2.0 * cross[i * d + i];
  }
  return mean_term + trace_term;
}

inline double fid(const TensorF& real_images, const TensorF& fake_images,
                  const FeatureExtractor& extractor) {
  const GaussianStats ga = fit_gaussian(extractor.extract(real_images));
  const GaussianStats gb = fit_gaussian(extractor.extract(fake_images));
  return frechet_distance(ga, gb);
}

// ---------------------------------------------------------------------
// Inception score over a pluggable classifier
// ---------------------------------------------------------------------

struct ProbMatrix {
  std::size_t n = 0, c = 0;
  std::vector<double> data;  // rows sum to 1
};

using Classifier = std::function<ProbMatrix(const TensorF&)>;

struct InceptionScore {
  double mean = 0.0;
  double stddev = 0.0;
};

// Per split: exp(mean_i KL(p(y|x_i) || p(y))); reported mean +/- std across
// splits (population std).
inline InceptionScore inception_score_from_probs(const ProbMatrix& probs, std::size_t n_splits) {
  const std::size_t n = probs.n, c = probs.c;
  if (n == 0 || c == 0) throw ContractError("inception_score: empty probability matrix");
  if (n_splits == 0 || n_splits > n) {
    throw ContractError("inception_score: invalid split count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) row += probs.data[i * c + j];
    if (std::abs(row - 1.0) > 1e-6) {
      throw ContractError("inception_score: probability row " + std::to_string(i) +
                          " sums to " + std::to_string(row));
    }
  }
  std::vector<double> scores;
  for (std::size_t s = 0; s < n_splits; ++s) {
    const std::size_t lo = s * n / n_splits;
    const std::size_t hi = (s + 1) * n / n_splits;
    const std::size_t cnt = hi - lo;
    std::vector<double> marginal(c, 0.0);
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t j = 0; j < c; ++j) marginal[j] += probs.data[i * c + j];
    }
    for (double& v : marginal) v /= static_cast<double>(cnt);
    double mean_kl = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      double kl = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double p = probs.data[i * c + j];
        if (p > 0.0) kl += p * (std::log(p) - std::log(marginal[j]));
      }
      mean_kl += kl;
    }
    mean_kl /= static_cast<double>(cnt);
    scores.push_back(std::exp(mean_kl));
  }
  InceptionScore out;
  for (double v : scores) out.mean += v;
  out.mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double v : scores) var += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(var / static_cast<double>(scores.size()));
  return out;
}

inline InceptionScore inception_score(const TensorF& images, const Classifier& classifier,
                                      std::size_t n_splits) {
  return inception_score_from_probs(classifier(images), n_splits);
}

// Fixed-seed random-feature classifier (softmax over a small conv net).
// Only a desk-scale proxy for run-to-run comparisons.
inline Classifier make_proxy_classifier(std::size_t classes = 10, std::uint64_t seed = 0xC1A5) {
  auto extractor = std::make_shared<SmallCnnExtractor>(seed);
  Rng rng(seed ^ 0x5eed);
  auto w = std::make_shared<std::vector<double>>(64 * classes);
  for (double& v : *w) v = rng.normal() * 0.5;
  return [extractor, w, classes](const TensorF& images) {
    const FeatureMatrix f = extractor->extract(images);
    ProbMatrix p;
    p.n = f.n;
    p.c = classes;
    p.data.resize(p.n * classes);
    for (std::size_t i = 0; i < f.n; ++i) {
      std::vector<double> logits(classes, 0.0);
      for (std::size_t j = 0; j < classes; ++j) {
        for (std::size_t k = 0; k < f.d; ++k) logits[j] += f.data[i * f.d + k] * (*w)[k * classes + j];
      }
      double mx = logits[0];
      for (double v : logits) mx = std::max(mx, v);
      double denom = 0.0;
      for (std::size_t j = 0; j < classes; ++j) {
        logits[j] = std::exp(logits[j] - mx);
        denom += logits[j];
      }
      for (std::size_t j = 0; j < classes; ++j) p.data[i * classes + j] = logits[j] / denom;
    }
    return p;
  };
}

}  // namespace hgan
