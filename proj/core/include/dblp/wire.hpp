#pragma once

// Byte formats shared by both ends of a connection.
//
// Data channel, one datagram per chunk (all integers big-endian):
//
//   +--------+----------+--------+------------------+
//   | seq:4  | round:8  | len:2  | payload (len B)  |
//   +--------+----------+--------+------------------+
//
// Control channel, each message inside a 4-byte big-endian length frame:
//
//   +--------+----------+---------------+--------------------+
//   | kind:1 | round:8  | bitmap_len:4  | bitmap bytes       |
//   +--------+----------+---------------+--------------------+
//
// Bitmaps are MSB-first: chunk i is bit (0x80 >> (i % 8)) of byte i / 8.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dblp/tensor.hpp"

namespace dblp {

inline constexpr std::size_t kChunkHeaderBytes = 14;
inline constexpr std::size_t kDatagramBudgetBytes = 1400;
inline constexpr std::size_t kDefaultMaxPayloadBytes = kDatagramBudgetBytes - kChunkHeaderBytes;
inline constexpr std::size_t kMaxPayloadLimit = 0xFFFF;
inline constexpr std::size_t kControlHeaderBytes = 13;
inline constexpr std::size_t kFramePrefixBytes = 4;

struct ChunkHeader {
  std::uint32_t seq = 0;
  std::uint64_t round = 0;
  std::uint16_t length = 0;

  bool operator==(const ChunkHeader&) const = default;
};

struct GradientChunk {
  ChunkHeader header;
  Bytes payload;

  bool operator==(const GradientChunk&) const = default;
};

/// Non-owning decoded chunk; `payload` aliases the datagram it came from.
struct ChunkView {
  ChunkHeader header;
  ByteView payload;
};

Bytes encode_chunk(const GradientChunk& chunk);

/// Encodes header + payload into `out`, replacing its contents. The
/// header's length field is taken from payload.size().
void encode_chunk_into(std::uint32_t seq, std::uint64_t round, ByteView payload, Bytes& out);

/// Throws TruncatedPacket when the datagram is shorter than the header or
/// does not carry exactly the declared payload length.
GradientChunk decode_chunk(ByteView datagram);
ChunkView decode_chunk_view(ByteView datagram);

/// Number of chunks needed for a buffer of `buffer_bytes`.
std::uint32_t chunk_count(std::uint64_t buffer_bytes, std::size_t max_payload_bytes);

/// Payload length of chunk `seq`: max_payload_bytes for every chunk but the last.
std::size_t chunk_payload_length(std::uint32_t seq, std::uint64_t buffer_bytes,
                                 std::size_t max_payload_bytes);

/// Splits a serialized gradient buffer into chunks tagged with `round`.
std::vector<GradientChunk> split_into_chunks(ByteView buffer, std::uint64_t round,
                                             std::size_t max_payload_bytes);

enum class ControlKind : std::uint8_t { Probe = 0x01, Bitmap = 0x02, Stop = 0x03 };

std::string_view to_string(ControlKind kind);

struct ControlMessage {
  ControlKind kind = ControlKind::Probe;
  std::uint64_t round = 0;
  Bytes bitmap;  // non-empty only for Bitmap

  static ControlMessage probe(std::uint64_t round) { return {ControlKind::Probe, round, {}}; }
  static ControlMessage stop(std::uint64_t round) { return {ControlKind::Stop, round, {}}; }
  static ControlMessage with_bitmap(std::uint64_t round, Bytes bits) {
    return {ControlKind::Bitmap, round, std::move(bits)};
  }

  bool operator==(const ControlMessage&) const = default;
};

/// Message body without the stream frame prefix.
Bytes encode_control(const ControlMessage& msg);

/// Throws UnknownKind for an unrecognised kind byte and ProtocolError for
/// bodies whose length disagrees with bitmap_len (or Probe/Stop carrying a
/// bitmap).
ControlMessage decode_control(ByteView body);

/// Prepends the 4-byte big-endian length prefix.
Bytes frame(ByteView body);

/// Reassembles length-prefixed frames from an arbitrary byte stream.
class FrameDecoder {
 public:
  explicit FrameDecoder(std::size_t max_frame_bytes = 64u << 20) : max_frame_bytes_(max_frame_bytes) {}

  /// Throws ProtocolError when a frame prefix exceeds max_frame_bytes.
  void feed(ByteView bytes);
  std::optional<Bytes> next();
  std::size_t buffered() const { return pending_.size(); }

 private:
  std::size_t max_frame_bytes_;
  std::deque<std::byte> pending_;
  std::deque<Bytes> ready_;
};

struct MetadataAnnouncement {
  std::uint32_t total_chunks = 0;
  TensorLayout layout;

  bool operator==(const MetadataAnnouncement&) const = default;
};

/// Builds an announcement for `layout`. Throws ConfigError for an empty
/// layout, zero-sized tensors, names containing whitespace, or a payload
/// size outside (0, 65535].
MetadataAnnouncement make_announcement(const TensorLayout& layout, std::size_t max_payload_bytes);

/// `total_chunks=N\n` followed by one `tensor <name> <count>\n` per layer.
std::string encode_metadata(const MetadataAnnouncement& meta);
MetadataAnnouncement decode_metadata(std::string_view text);

Bytes to_bytes(std::string_view text);
std::string to_string(ByteView bytes);

}  // namespace dblp
