#pragma once

#include <cstdint>
#include <vector>

#include "dblp/tensor.hpp"

namespace dblp {

/// Per-round received/missing state, one bit per chunk (1 = received).
/// Bits are monotone: once set they stay set for the lifetime of the bitmap.
class ChunkBitmap {
 public:
  ChunkBitmap() = default;
  explicit ChunkBitmap(std::uint32_t total);

  /// Parses the MSB-first wire form. Throws ProtocolError when `bytes` is not
  /// exactly ceil(total / 8) long or has padding bits set.
  static ChunkBitmap from_bytes(std::uint32_t total, ByteView bytes);

  /// Returns true if the bit was newly set.
  bool set(std::uint32_t seq);
  bool test(std::uint32_t seq) const;

  /// Sets every bit that is set in `other` (same total required).
  void merge(const ChunkBitmap& other);

  std::uint32_t total() const { return total_; }
  std::uint32_t count() const { return count_; }
  std::uint32_t missing() const { return total_ - count_; }
  bool complete() const { return count_ == total_; }

  Bytes to_bytes() const;

  bool operator==(const ChunkBitmap&) const = default;

 private:
  std::uint32_t total_ = 0;
  std::uint32_t count_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// (total - popcount) / total. Requires total > 0.
double bitmap_missing_ratio(const ChunkBitmap& bitmap);

std::size_t bitmap_bytes(std::uint32_t total);

}  // namespace dblp
