#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "hgan/common.hpp"
#include "hgan/tensor.hpp"

namespace hgan {

// Container layout (all integers little-endian):
//   magic "HGAN" | u32 version | u64 step
//   u32 config_len  | config bytes (key=value echo)
//   u32 rng_len     | rng bytes (mt19937_64 text state)
//   u32 tensor_count
//     per tensor: u32 name_len | name | u32 ndim | u64 dims[ndim]
//                 u64 offset | u64 nbytes
//   u64 payload_len | payload (f32 little-endian) | u32 crc32(payload)
struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t step = 0;
  std::string config_echo;
  std::string rng_state;
  std::vector<std::pair<std::string, TensorF>> tensors;  // manifest order

  const TensorF* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

inline std::uint32_t crc32(const unsigned char* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

struct ByteWriter {
  std::vector<unsigned char> bytes;
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
};

struct ByteReader {
  const unsigned char* p;
  std::size_t len;
  std::size_t pos = 0;
  void need(std::size_t n) {
    if (pos + n > len) throw FormatError("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(p + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  detail::ByteWriter payload;
  struct Entry {
    std::uint64_t offset, nbytes;
  };
  std::vector<Entry> entries;
  for (const auto& [name, t] : ck.tensors) {
    (void)name;
    const std::uint64_t offset = payload.bytes.size();
    for (float v : t.values()) payload.f32(v);
    entries.push_back({offset, payload.bytes.size() - offset});
  }

  detail::ByteWriter w;
  w.bytes.insert(w.bytes.end(), {'H', 'G', 'A', 'N'});
  w.u32(ck.version);
  w.u64(ck.step);
  w.str(ck.config_echo);
  w.str(ck.rng_state);
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    const auto& [name, t] = ck.tensors[i];
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    w.u64(entries[i].offset);
    w.u64(entries[i].nbytes);
  }
  w.u64(payload.bytes.size());
  w.bytes.insert(w.bytes.end(), payload.bytes.begin(), payload.bytes.end());
  w.u32(detail::crc32(payload.bytes.data(), payload.bytes.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(w.bytes.data()),
            static_cast<std::streamsize>(w.bytes.size()));
  if (!out) throw IoError("checkpoint: write failed on '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  detail::ByteReader r{bytes.data(), bytes.size()};

  r.need(4);
  if (std::memcmp(bytes.data(), "HGAN", 4) != 0) {
    throw FormatError("checkpoint: bad magic in '" + path + "'");
  }
  r.pos = 4;
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != 1) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(ck.version));
  }
  ck.step = r.u64();
  ck.config_echo = r.str();
  ck.rng_state = r.str();
  const std::uint32_t count = r.u32();

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset, nbytes;
  };
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    e.name = r.str();
    const std::uint32_t ndim = r.u32();
    e.shape.resize(ndim);
    for (std::uint32_t i = 0; i < ndim; ++i) e.shape[i] = static_cast<std::size_t>(r.u64());
    e.offset = r.u64();
    e.nbytes = r.u64();
  }
  const std::uint64_t payload_len = r.u64();
  r.need(payload_len);
  const std::size_t payload_pos = r.pos;
  r.pos += payload_len;
  const std::uint32_t stored_crc = r.u32();
  if (detail::crc32(bytes.data() + payload_pos, payload_len) != stored_crc) {
    throw FormatError("checkpoint: payload checksum mismatch in '" + path + "'");
  }

  // Manifest hygiene: entries must sit inside the payload, not overlap, and
  // match their declared shapes.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (const auto& e : entries) {
    if (e.offset + e.nbytes > payload_len) {
      throw FormatError("checkpoint: manifest entry '" + e.name + "' exceeds payload");
    }
    if (e.nbytes != 4 * shape_numel(e.shape)) {
      throw FormatError("checkpoint: manifest entry '" + e.name + "' length/shape mismatch");
    }
    spans.push_back({e.offset, e.offset + e.nbytes});
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].first < spans[i - 1].second) {
      throw FormatError("checkpoint: overlapping manifest entries");
    }
  }

  for (const auto& e : entries) {
    detail::ByteReader tr{bytes.data() + payload_pos + e.offset, e.nbytes};
    TensorF t = TensorF::zeros(e.shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = tr.f32();
    ck.tensors.emplace_back(e.name, std::move(t));
  }
  return ck;
}

}  // namespace hgan
