#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hgan/common.hpp"
#include "hgan/random.hpp"
#include "hgan/tensor.hpp"

namespace hgan {

// Images live in [-1, 1] throughout (the generator head is a tanh).
struct ImageBatch {
  TensorF images;           // [N, C, H, W]
  std::vector<int> labels;  // empty or length N

  std::size_t size() const { return images.rank() == 4 ? images.dim(0) : 0; }
  std::size_t channels() const { return images.dim(1); }
  std::size_t resolution() const { return images.dim(2); }

  ImageBatch subset(const std::vector<std::size_t>& idx) const {
    const std::size_t stride = images.numel() / size();
    TensorF out = TensorF::zeros({idx.size(), images.dim(1), images.dim(2), images.dim(3)});
    std::vector<int> lab;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy(images.data() + idx[i] * stride, images.data() + (idx[i] + 1) * stride,
                out.data() + i * stride);
      if (!labels.empty()) lab.push_back(labels[idx[i]]);
    }
    return ImageBatch{std::move(out), std::move(lab)};
  }

  ImageBatch head(std::size_t n) const {
    std::vector<std::size_t> idx(std::min(n, size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return subset(idx);
  }
};

// ---------------------------------------------------------------------
// CIFAR-10 binary format
// ---------------------------------------------------------------------

// One record = 1 label byte (0-9) + 3072 pixel bytes (full R plane, then G,
// then B, each 32x32 row-major). Pixels map bytewise b -> b/127.5 - 1.
inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarPixelBytes = 3072;

inline ImageBatch load_cifar10_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cifar10: cannot open '" + path + "'");
  in.seekg(0, std::ios::end);
  const std::uint64_t len = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  if (len % kCifarRecordBytes != 0) {
    throw FormatError("cifar10: '" + path + "' has " + std::to_string(len) +
                      " bytes; trailing partial record at offset " +
                      std::to_string(len - len % kCifarRecordBytes));
  }
  const std::size_t n = static_cast<std::size_t>(len / kCifarRecordBytes);
  std::vector<unsigned char> raw(len);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(len));
  if (!in) throw IoError("cifar10: short read on '" + path + "'");

  ImageBatch batch;
  batch.images = TensorF::zeros({n, 3, 32, 32});
  batch.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = raw.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw FormatError("cifar10: label byte " + std::to_string(int(rec[0])) +
                        " out of range in record " + std::to_string(r) + " of '" + path + "'");
    }
    batch.labels[r] = rec[0];
    float* dst = batch.images.data() + r * kCifarPixelBytes;
    for (std::size_t i = 0; i < kCifarPixelBytes; ++i) {
      dst[i] = static_cast<float>(static_cast<double>(rec[1 + i]) / 127.5 - 1.0);
    }
  }
  return batch;
}

// A path may be a single .bin file or a directory of them (sorted by name).
inline ImageBatch load_cifar10(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.path().extension() == ".bin") files.push_back(e.path().string());
    }
    if (files.empty()) throw IoError("cifar10: no .bin files under '" + path + "'");
    std::sort(files.begin(), files.end());
    ImageBatch all = load_cifar10_file(files[0]);
    for (std::size_t i = 1; i < files.size(); ++i) {
      ImageBatch next = load_cifar10_file(files[i]);
      TensorF merged = TensorF::zeros(
          {all.size() + next.size(), all.images.dim(1), all.images.dim(2), all.images.dim(3)});
      std::copy(all.images.data(), all.images.data() + all.images.numel(), merged.data());
      std::copy(next.images.data(), next.images.data() + next.images.numel(),
                merged.data() + all.images.numel());
      all.images = merged;
      all.labels.insert(all.labels.end(), next.labels.begin(), next.labels.end());
    }
    return all;
  }
  return load_cifar10_file(path);
}

// ---------------------------------------------------------------------
// Synthetic desk-scale datasets
// ---------------------------------------------------------------------

enum class SyntheticKind { two_mode, checkerboard, gaussian_blobs };

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
  if (s == "two_mode") return SyntheticKind::two_mode;
  if (s == "checkerboard") return SyntheticKind::checkerboard;
  if (s == "gaussian_blobs") return SyntheticKind::gaussian_blobs;
  throw ConfigError("synthetic: unknown kind '" + s + "'");
}

// Deterministic per (kind, n, R, seed). two_mode draws each image around a
// mean pixel of +0.5 or -0.5, the bimodal toy target for GAN training.
inline ImageBatch make_synthetic(SyntheticKind kind, std::size_t n, std::size_t R,
                                 std::uint64_t seed) {
  if (n < 1) throw ConfigError("synthetic: need at least one image");
  if (R != 8 && R != 16 && R != 32) {
    throw ConfigError("synthetic: unsupported resolution " + std::to_string(R));
  }
  Rng rng(seed);
  ImageBatch batch;
  batch.images = TensorF::zeros({n, 3, R, R});
  auto clamp1 = [](double v) { return std::min(1.0, std::max(-1.0, v)); };
  for (std::size_t img = 0; img < n; ++img) {
    float* px = batch.images.data() + img * 3 * R * R;
    switch (kind) {
      case SyntheticKind::two_mode: {
        const double mode = rng.bernoulli() ? 0.5 : -0.5;
        for (std::size_t i = 0; i < 3 * R * R; ++i) {
          px[i] = static_cast<float>(clamp1(mode + 0.15 * rng.normal()));
        }
        break;
      }
      case SyntheticKind::checkerboard: {
        const std::size_t phase = rng.bernoulli() ? 1 : 0;
        const double amp = rng.uniform(0.3, 0.9);
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t y = 0; y < R; ++y) {
            for (std::size_t x = 0; x < R; ++x) {
              const double v = ((x + y + phase) % 2 == 0) ? amp : -amp;
              px[(c * R + y) * R + x] =
                  static_cast<float>(clamp1(v + 0.02 * rng.normal()));
            }
          }
        }
        break;
      }
      case SyntheticKind::gaussian_blobs: {
        const std::size_t blobs = 1 + rng.index(3);
        std::vector<double> cx(blobs), cy(blobs), sg(blobs), am(blobs);
        for (std::size_t b = 0; b < blobs; ++b) {
          cx[b] = rng.uniform(0.0, static_cast<double>(R));
          cy[b] = rng.uniform(0.0, static_cast<double>(R));
          sg[b] = rng.uniform(R / 10.0, R / 5.0);
          am[b] = (rng.bernoulli() ? 1.0 : -1.0) * rng.uniform(0.5, 1.0);
        }
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t y = 0; y < R; ++y) {
            for (std::size_t x = 0; x < R; ++x) {
              double v = -0.2;
              for (std::size_t b = 0; b < blobs; ++b) {
                const double dx = x - cx[b], dy = y - cy[b];
                v += am[b] * std::exp(-(dx * dx + dy * dy) / (2.0 * sg[b] * sg[b]));
              }
              px[(c * R + y) * R + x] = static_cast<float>(clamp1(v));
            }
          }
        }
        break;
      }
    }
  }
  return batch;
}

// ---------------------------------------------------------------------
// PPM (P6) image output and input
// ---------------------------------------------------------------------

// [-1,1] -> byte with clamping and round-half-up; 0.0 lands on 128.
inline unsigned char pixel_to_byte(double v) {
  v = std::min(1.0, std::max(-1.0, v));
  const double scaled = (v + 1.0) * 127.5 + 0.5;
  const double b = std::floor(scaled);
  return static_cast<unsigned char>(std::min(255.0, std::max(0.0, b)));
}

inline float byte_to_pixel(unsigned char b) {
  return static_cast<float>(static_cast<double>(b) / 127.5 - 1.0);
}

// Tiles the batch into a cols-wide grid and writes one binary P6 file.
inline void save_image_grid(const ImageBatch& batch, const std::string& path,
                            std::size_t cols) {
  const std::size_t n = batch.size();
  if (n == 0) throw ContractError("save_image_grid: empty batch");
  if (cols == 0) throw ContractError("save_image_grid: cols must be positive");
  cols = std::min(cols, n);
  const std::size_t rows = (n + cols - 1) / cols;
  const std::size_t C = batch.images.dim(1);
  const std::size_t H = batch.images.dim(2);
  const std::size_t W = batch.images.dim(3);
  const std::size_t gw = cols * W, gh = rows * H;

  std::vector<unsigned char> rgb(gw * gh * 3, 0);
  for (std::size_t img = 0; img < n; ++img) {
    const std::size_t gy = (img / cols) * H;
    const std::size_t gx = (img % cols) * W;
    const float* base = batch.images.data() + img * C * H * W;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          const std::size_t src_c = (C == 3) ? c : 0;
          rgb[((gy + y) * gw + gx + x) * 3 + c] =
              pixel_to_byte(base[(src_c * H + y) * W + x]);
        }
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("ppm: cannot open '" + path + "' for writing");
  out << "P6\n" << gw << " " << gh << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw IoError("ppm: write failed on '" + path + "'");
}

// Reads one P6 file as a single RGB image.
inline ImageBatch load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("ppm: cannot open '" + path + "'");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw FormatError("ppm: '" + path + "' is not P6");
  std::size_t w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w == 0 || h == 0 || maxval != 255) {
    throw FormatError("ppm: bad header in '" + path + "'");
  }
  in.get();  // single whitespace after header
  std::vector<unsigned char> rgb(w * h * 3);
  in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!in) throw FormatError("ppm: truncated pixel data in '" + path + "'");
  ImageBatch batch;
  batch.images = TensorF::zeros({1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        batch.images.data()[(c * h + y) * w + x] = byte_to_pixel(rgb[(y * w + x) * 3 + c]);
      }
    }
  }
  return batch;
}

// ---------------------------------------------------------------------
// Image sources (CLI-facing)
// ---------------------------------------------------------------------

// Accepted source forms:
//   path/to/file.bin                      CIFAR-10 binary file
//   path/to/dir                           directory of .bin or .ppm files
//   synthetic:<kind>:<n>[:<R>[:<seed>]]   generated set (defaults R=32 seed=0)
inline ImageBatch load_image_source(const std::string& source) {
  namespace fs = std::filesystem;
  if (source.rfind("synthetic:", 0) == 0) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : source) {
      if (ch == ':') {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    parts.push_back(cur);
    if (parts.size() < 3) {
      throw ConfigError("image source: expected synthetic:<kind>:<n>[:<R>[:<seed>]]");
    }
    const SyntheticKind kind = parse_synthetic_kind(parts[1]);
    const std::size_t n = static_cast<std::size_t>(std::stoull(parts[2]));
    const std::size_t R = parts.size() > 3 ? static_cast<std::size_t>(std::stoull(parts[3])) : 32;
    const std::uint64_t seed = parts.size() > 4 ? std::stoull(parts[4]) : 0;
    return make_synthetic(kind, n, R, seed);
  }
  if (fs::is_directory(source)) {
    std::vector<std::string> ppms, bins;
    for (const auto& e : fs::directory_iterator(source)) {
      if (e.path().extension() == ".ppm") ppms.push_back(e.path().string());
      if (e.path().extension() == ".bin") bins.push_back(e.path().string());
    }
    if (!bins.empty()) return load_cifar10(source);
    if (ppms.empty()) throw IoError("image source: no .ppm or .bin files under '" + source + "'");
    std::sort(ppms.begin(), ppms.end());
    ImageBatch first = load_ppm(ppms[0]);
    const std::size_t C = first.images.dim(1), H = first.images.dim(2), W = first.images.dim(3);
    TensorF all = TensorF::zeros({ppms.size(), C, H, W});
    std::copy(first.images.data(), first.images.data() + first.images.numel(), all.data());
    for (std::size_t i = 1; i < ppms.size(); ++i) {
      ImageBatch next = load_ppm(ppms[i]);
      if (next.images.shape() != first.images.shape()) {
        throw FormatError("image source: mixed resolutions under '" + source + "'");
      }
      std::copy(next.images.data(), next.images.data() + next.images.numel(),
                all.data() + i * C * H * W);
    }
    return ImageBatch{std::move(all), {}};
  }
  if (source.size() > 4 && source.substr(source.size() - 4) == ".ppm") return load_ppm(source);
  return load_cifar10(source);
}

}  // namespace hgan
