#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <vector>

#include "memopt/graph.hpp"

namespace memopt {

// Sparse-friendly codec: store the most frequent element once, a bitmap
// flagging the elements that differ, and those exception values in index
// order. Elements are compared as raw fixed-width words; ties between
// equally frequent candidates go to the numerically smallest value.
struct CompressedTensor {
  DType dtype = DType::I8;
  uint32_t total = 0;                // element count
  uint32_t n_other = 0;              // exceptions (popcount of bitmap)
  std::vector<uint8_t> rep;          // byte_width(dtype) bytes, little-endian
  std::vector<uint8_t> bitmap;       // ceil(total/8), LSB-first within a byte
  std::vector<uint8_t> others;       // n_other * byte_width(dtype)
};

namespace detail {
// signed value for ordering; F32 ordered by numeric value
inline double word_order_key(const uint8_t* p, DType t) {
  switch (t) {
    case DType::I8: return double(*reinterpret_cast<const int8_t*>(p));
    case DType::I16: {
      int16_t v;
      std::memcpy(&v, p, 2);
      return double(v);
    }
    case DType::I32: {
      int32_t v;
      std::memcpy(&v, p, 4);
      return double(v);
    }
    case DType::F32: {
      float v;
      std::memcpy(&v, p, 4);
      return double(v);
    }
  }
  return 0;
}
}  // namespace detail

inline size_t compressed_size(uint32_t total, uint32_t n_other, DType dtype) {
  size_t w = size_t(byte_width(dtype));
  return 8 + w + 4 + (size_t(total) + 7) / 8 + size_t(n_other) * w;
}

inline CompressedTensor compress(const uint8_t* data, uint32_t total, DType dtype) {
  const size_t w = size_t(byte_width(dtype));
  CompressedTensor ct;
  ct.dtype = dtype;
  ct.total = total;
  ct.bitmap.assign((size_t(total) + 7) / 8, 0);
  if (total == 0) {
    ct.rep.assign(w, 0);
    return ct;
  }

  std::map<std::vector<uint8_t>, uint32_t> freq;
  for (uint32_t i = 0; i < total; ++i) {
    std::vector<uint8_t> word(data + size_t(i) * w, data + size_t(i) * w + w);
    ++freq[word];
  }
  const std::vector<uint8_t>* best = nullptr;
  uint32_t best_count = 0;
  double best_key = 0;
  for (const auto& [word, count] : freq) {
    double key = detail::word_order_key(word.data(), dtype);
    if (!best || count > best_count || (count == best_count && key < best_key)) {
      best = &word;
      best_count = count;
      best_key = key;
    }
  }
  ct.rep = *best;

  for (uint32_t i = 0; i < total; ++i) {
    const uint8_t* p = data + size_t(i) * w;
    if (std::memcmp(p, ct.rep.data(), w) != 0) {
      ct.bitmap[i / 8] |= uint8_t(1u << (i % 8));
      ct.others.insert(ct.others.end(), p, p + w);
      ++ct.n_other;
    }
  }
  return ct;
}

inline CompressedTensor compress(const std::vector<uint8_t>& raw, DType dtype) {
  const size_t w = size_t(byte_width(dtype));
  if (raw.size() % w != 0) throw FormatError("raw byte length not a multiple of element width");
  return compress(raw.data(), uint32_t(raw.size() / w), dtype);
}

inline std::vector<uint8_t> decompress(const CompressedTensor& ct) {
  const size_t w = size_t(byte_width(ct.dtype));
  if (ct.rep.size() != w) throw FormatError("rep value width mismatch");
  if (ct.bitmap.size() != (size_t(ct.total) + 7) / 8) throw FormatError("bitmap length mismatch");
  if (ct.others.size() != size_t(ct.n_other) * w) throw FormatError("exception payload mismatch");
  uint32_t set = 0;
  for (size_t i = 0; i < ct.bitmap.size(); ++i) {
    uint8_t b = ct.bitmap[i];
    for (int k = 0; k < 8; ++k) {
      if (!(b & (1u << k))) continue;
      if (i * 8 + size_t(k) >= ct.total) throw FormatError("bitmap bit set past total");
      ++set;
    }
  }
  if (set != ct.n_other) throw FormatError("bitmap popcount does not equal n_other");

  std::vector<uint8_t> out(size_t(ct.total) * w);
  size_t next_other = 0;
  for (uint32_t i = 0; i < ct.total; ++i) {
    const uint8_t* src = (ct.bitmap[i / 8] & (1u << (i % 8)))
                             ? ct.others.data() + (next_other++) * w
                             : ct.rep.data();
    std::memcpy(out.data() + size_t(i) * w, src, w);
  }
  return out;
}

// layout: magic "CT" (2) | dtype (1) | reserved (1) | total (4 LE)
//         | rep (width) | n_other (4 LE) | bitmap | others
inline std::vector<uint8_t> serialize(const CompressedTensor& ct) {
  const size_t w = size_t(byte_width(ct.dtype));
  std::vector<uint8_t> out;
  out.reserve(compressed_size(ct.total, ct.n_other, ct.dtype));
  out.push_back('C');
  out.push_back('T');
  out.push_back(uint8_t(ct.dtype));
  out.push_back(0);
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t((ct.total >> (8 * i)) & 0xff));
  out.insert(out.end(), ct.rep.begin(), ct.rep.end());
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t((ct.n_other >> (8 * i)) & 0xff));
  out.insert(out.end(), ct.bitmap.begin(), ct.bitmap.end());
  out.insert(out.end(), ct.others.begin(), ct.others.end());
  if (out.size() != compressed_size(ct.total, ct.n_other, ct.dtype))
    throw FormatError("serialized size does not match layout formula");
  (void)w;
  return out;
}

inline CompressedTensor parse_compressed(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || bytes[0] != 'C' || bytes[1] != 'T')
    throw FormatError("not a compressed-tensor payload");
  if (bytes[2] > 3) throw FormatError("bad dtype code");
  CompressedTensor ct;
  ct.dtype = DType(bytes[2]);
  const size_t w = size_t(byte_width(ct.dtype));
  ct.total = uint32_t(bytes[4]) | uint32_t(bytes[5]) << 8 | uint32_t(bytes[6]) << 16 |
             uint32_t(bytes[7]) << 24;
  size_t pos = 8;
  auto need = [&](size_t n) {
    if (bytes.size() < pos + n) throw FormatError("compressed payload truncated");
  };
  need(w);
  ct.rep.assign(bytes.begin() + pos, bytes.begin() + pos + w);
  pos += w;
  need(4);
  ct.n_other = uint32_t(bytes[pos]) | uint32_t(bytes[pos + 1]) << 8 |
               uint32_t(bytes[pos + 2]) << 16 | uint32_t(bytes[pos + 3]) << 24;
  pos += 4;
  size_t bl = (size_t(ct.total) + 7) / 8;
  need(bl);
  ct.bitmap.assign(bytes.begin() + pos, bytes.begin() + pos + bl);
  pos += bl;
  need(size_t(ct.n_other) * w);
  ct.others.assign(bytes.begin() + pos, bytes.begin() + pos + size_t(ct.n_other) * w);
  pos += size_t(ct.n_other) * w;
  if (pos != bytes.size()) throw FormatError("trailing bytes after compressed payload");
  // decompress() re-checks popcount; do it here so parsing alone rejects
  uint32_t set = 0;
  for (size_t i = 0; i < ct.bitmap.size(); ++i)
    for (int k = 0; k < 8; ++k)
      if (ct.bitmap[i] & (1u << k)) {
        if (i * 8 + size_t(k) >= ct.total) throw FormatError("bitmap bit set past total");
        ++set;
      }
  if (set != ct.n_other) throw FormatError("bitmap popcount does not equal n_other");
  return ct;
}

}  // namespace memopt
