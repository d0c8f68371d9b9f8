#include "dblp/bitmap.hpp"

#include <bit>

#include <fmt/format.h>

#include "dblp/error.hpp"

namespace dblp {

std::size_t bitmap_bytes(std::uint32_t total) { return (static_cast<std::size_t>(total) + 7) / 8; }

ChunkBitmap::ChunkBitmap(std::uint32_t total) : total_(total), bits_(bitmap_bytes(total), 0) {}

ChunkBitmap ChunkBitmap::from_bytes(std::uint32_t total, ByteView bytes) {
  if (bytes.size() != bitmap_bytes(total)) {
    throw ProtocolError(fmt::format("bitmap of {} bytes for {} chunks, expected {}", bytes.size(), total,
                                    bitmap_bytes(total)));
  }
  ChunkBitmap b(total);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    b.bits_[i] = std::to_integer<std::uint8_t>(bytes[i]);
    b.count_ += static_cast<std::uint32_t>(std::popcount(b.bits_[i]));
  }
  if (const auto tail = total % 8; tail != 0) {
    const auto padding = static_cast<std::uint8_t>(0xFFu >> tail);
    if ((b.bits_.back() & padding) != 0) throw ProtocolError("bitmap has padding bits set");
  }
  return b;
}

bool ChunkBitmap::set(std::uint32_t seq) {
  if (seq >= total_) throw std::out_of_range(fmt::format("chunk {} outside bitmap of {}", seq, total_));
  auto& byte = bits_[seq / 8];
  const auto mask = static_cast<std::uint8_t>(0x80u >> (seq % 8));
  if ((byte & mask) != 0) return false;
  byte |= mask;
  ++count_;
  return true;
}

bool ChunkBitmap::test(std::uint32_t seq) const {
  if (seq >= total_) return false;
  return (bits_[seq / 8] & (0x80u >> (seq % 8))) != 0;
}

void ChunkBitmap::merge(const ChunkBitmap& other) {
  if (other.total_ != total_) throw std::invalid_argument("bitmap totals differ");
  count_ = 0;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    bits_[i] |= other.bits_[i];
    count_ += static_cast<std::uint32_t>(std::popcount(bits_[i]));
  }
}

Bytes ChunkBitmap::to_bytes() const {
  Bytes out(bits_.size());
  for (std::size_t i = 0; i < bits_.size(); ++i) out[i] = static_cast<std::byte>(bits_[i]);
  return out;
}

double bitmap_missing_ratio(const ChunkBitmap& bitmap) {
  if (bitmap.total() == 0) throw std::invalid_argument("missing ratio of an empty bitmap");
  return static_cast<double>(bitmap.missing()) / static_cast<double>(bitmap.total());
}

}  // namespace dblp
