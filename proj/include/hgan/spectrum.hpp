#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "hgan/common.hpp"
#include "hgan/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hgan {

inline constexpr double kSpectrumPi = 3.14159265358979323846;

// Radial bin count contract: bins 0..K with K = floor(sqrt(2) * R/2); the
// few even-R corner entries whose rounded radius lands on K+1 clamp into
// bin K so the bins partition the whole spectrum.
inline std::size_t spectrum_bin_count(std::size_t R) {
  return static_cast<std::size_t>(std::floor(std::sqrt(2.0) * static_cast<double>(R) / 2.0)) + 1;
}

// |DFT2(image)|^2 under the forward-sum convention, zero frequency shifted
// to index (R/2, R/2). Deliberately the plain definitional transform: at
// these resolutions it is fast enough, and its arithmetic is reproducible
// term by term.
inline std::vector<double> power_spectrum2d(const std::vector<double>& image, std::size_t R) {
  if (R < 2) throw ShapeError("power_spectrum2d: resolution must be >= 2");
  if (image.size() != R * R) {
    throw ShapeError("power_spectrum2d: non-square input (got " + std::to_string(image.size()) +
                     " values for R=" + std::to_string(R) + ")");
  }
  std::vector<double> raw(R * R);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (R >= 16)
#endif
  for (std::ptrdiff_t us = 0; us < static_cast<std::ptrdiff_t>(R); ++us) {
    const std::size_t u = static_cast<std::size_t>(us);
    for (std::size_t v = 0; v < R; ++v) {
      double re = 0.0, im = 0.0;
      for (std::size_t y = 0; y < R; ++y) {
        for (std::size_t x = 0; x < R; ++x) {
          const double ang = -2.0 * kSpectrumPi *
                             (static_cast<double>(u * y) / static_cast<double>(R) +
                              static_cast<double>(v * x) / static_cast<double>(R));
          re += image[y * R + x] * std::cos(ang);
          im += image[y * R + x] * std::sin(ang);
        }
      }
      raw[u * R + v] = re * re + im * im;
    }
  }
  const std::size_t c = R / 2;
  std::vector<double> shifted(R * R);
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t j = 0; j < R; ++j) {
      shifted[i * R + j] = raw[((i + R - c) % R) * R + ((j + R - c) % R)];
    }
  }
  return shifted;
}

// Sum of spectrum entries per rounded-radius annulus around the centered DC
// bin; optional normalization by bin 0.
inline std::vector<double> azimuthal_profile(const std::vector<double>& ps, std::size_t R,
                                             bool normalize) {
  if (ps.size() != R * R) throw ShapeError("azimuthal_profile: size mismatch");
  const std::size_t K = spectrum_bin_count(R) - 1;
  std::vector<double> bins(K + 1, 0.0);
  const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(R / 2);
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t j = 0; j < R; ++j) {
      const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(i) - c;
      const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(j) - c;
      const double dist = std::sqrt(static_cast<double>(dy * dy + dx * dx));
      std::size_t k = static_cast<std::size_t>(std::lround(dist));
      if (k > K) k = K;
      bins[k] += ps[i * R + j];
    }
  }
  if (normalize) {
    if (bins[0] == 0.0) {
      throw ContractError("azimuthal_profile: cannot normalize, zero DC power");
    }
    for (double& b : bins) b /= bins[0];
    bins[0] = 1.0;
  }
  return bins;
}

struct SpectrumProfile {
  std::size_t resolution = 0;
  std::vector<double> mean;      // per radial bin
  std::vector<double> variance;  // population variance across images
  std::size_t n_images = 0;
  bool normalized = false;
};

// Pixels in [-1,1] map to [0,1] before the standard luminance weights.
inline std::vector<double> to_grayscale(const TensorF& images, std::size_t index) {
  const std::size_t C = images.dim(1), H = images.dim(2), W = images.dim(3);
  if (H != W) throw ShapeError("to_grayscale: non-square image");
  std::vector<double> gray(H * W);
  const float* base = images.data() + index * C * H * W;
  for (std::size_t i = 0; i < H * W; ++i) {
    auto unit = [&](std::size_t ch) {
      return (static_cast<double>(base[ch * H * W + i]) + 1.0) / 2.0;
    };
    gray[i] = (C >= 3) ? 0.299 * unit(0) + 0.587 * unit(1) + 0.114 * unit(2) : unit(0);
  }
  return gray;
}

// Per-bin mean and population variance of individual image profiles.
inline SpectrumProfile profile_stats(const TensorF& images, bool normalize) {
  if (images.rank() != 4 || images.dim(0) == 0) {
    throw ContractError("profile_stats: need a non-empty NCHW batch");
  }
  if (images.dim(2) != images.dim(3)) {
    throw ShapeError("profile_stats: non-square images");
  }
  const std::size_t n = images.dim(0);
  const std::size_t R = images.dim(2);
  const std::size_t bins = spectrum_bin_count(R);

  std::vector<std::vector<double>> profiles(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > 1)
#endif
  for (std::ptrdiff_t is = 0; is < static_cast<std::ptrdiff_t>(n); ++is) {
    const std::size_t i = static_cast<std::size_t>(is);
    profiles[i] = azimuthal_profile(power_spectrum2d(to_grayscale(images, i), R), R, normalize);
  }

  SpectrumProfile out;
  out.resolution = R;
  out.n_images = n;
  out.normalized = normalize;
  out.mean.assign(bins, 0.0);
  out.variance.assign(bins, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < bins; ++k) out.mean[k] += profiles[i][k];
  }
  for (double& m : out.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < bins; ++k) {
      const double dv = profiles[i][k] - out.mean[k];
      out.variance[k] += dv * dv;
    }
  }
  for (double& v : out.variance) v /= static_cast<double>(n);
  return out;
}

// CSV: header then one row per radial bin. With a second profile the
// columns extend to mean_b/var_b for side-by-side comparison plots.
inline void write_profile_csv(const std::string& path, const SpectrumProfile& a,
                              const SpectrumProfile* b = nullptr) {
  if (b != nullptr && b->mean.size() != a.mean.size()) {
    throw ContractError("write_profile_csv: profiles have different bin counts");
  }
  std::ofstream out(path);
  if (!out) throw IoError("spectrum: cannot open '" + path + "' for writing");
  out << (b ? "bin,mean_a,var_a,mean_b,var_b\n" : "bin,mean_a,var_a\n");
  char line[256];
  for (std::size_t k = 0; k < a.mean.size(); ++k) {
    if (b) {
      std::snprintf(line, sizeof(line), "%zu,%.12g,%.12g,%.12g,%.12g\n", k, a.mean[k],
                    a.variance[k], b->mean[k], b->variance[k]);
    } else {
      std::snprintf(line, sizeof(line), "%zu,%.12g,%.12g\n", k, a.mean[k], a.variance[k]);
    }
    out << line;
  }
  if (!out) throw IoError("spectrum: write failed on '" + path + "'");
}

}  // namespace hgan
