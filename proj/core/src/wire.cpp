#include "dblp/wire.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>

#include <fmt/format.h>

#include "dblp/error.hpp"

namespace dblp {
namespace {

template <typename T>
void put_be(T value, std::byte* out) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out[sizeof(T) - 1 - i] = static_cast<std::byte>(value & 0xFFu);
    value = static_cast<T>(value >> 8);
  }
}

template <typename T>
T get_be(const std::byte* in) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value = static_cast<T>((value << 8) | std::to_integer<T>(in[i]));
  }
  return value;
}

ChunkHeader read_header(ByteView datagram) {
  if (datagram.size() < kChunkHeaderBytes) {
    throw TruncatedPacket(
        fmt::format("datagram of {} bytes is shorter than the chunk header", datagram.size()));
  }
  ChunkHeader h;
  h.seq = get_be<std::uint32_t>(datagram.data());
  h.round = get_be<std::uint64_t>(datagram.data() + 4);
  h.length = get_be<std::uint16_t>(datagram.data() + 12);
  if (datagram.size() != kChunkHeaderBytes + h.length) {
    throw TruncatedPacket(fmt::format("chunk declares {} payload bytes but carries {}", h.length,
                                      datagram.size() - kChunkHeaderBytes));
  }
  return h;
}

bool is_name_char(char c) { return c > ' ' && c != 0x7F; }

std::uint64_t parse_u64(std::string_view field, std::string_view what) {
  std::uint64_t v = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc{} || ptr != end || field.empty()) {
    throw ProtocolError(fmt::format("bad {} '{}' in metadata", what, field));
  }
  return v;
}

}  // namespace

Bytes encode_chunk(const GradientChunk& chunk) {
  Bytes out;
  encode_chunk_into(chunk.header.seq, chunk.header.round, chunk.payload, out);
  return out;
}

void encode_chunk_into(std::uint32_t seq, std::uint64_t round, ByteView payload, Bytes& out) {
  if (payload.size() > kMaxPayloadLimit) {
    throw ProtocolError(fmt::format("chunk payload of {} bytes exceeds the length field", payload.size()));
  }
  out.resize(kChunkHeaderBytes + payload.size());
  put_be<std::uint32_t>(seq, out.data());
  put_be<std::uint64_t>(round, out.data() + 4);
  put_be<std::uint16_t>(static_cast<std::uint16_t>(payload.size()), out.data() + 12);
  if (!payload.empty()) std::memcpy(out.data() + kChunkHeaderBytes, payload.data(), payload.size());
}

GradientChunk decode_chunk(ByteView datagram) {
  auto view = decode_chunk_view(datagram);
  return {view.header, Bytes(view.payload.begin(), view.payload.end())};
}

ChunkView decode_chunk_view(ByteView datagram) {
  auto header = read_header(datagram);
  return {header, datagram.subspan(kChunkHeaderBytes)};
}

std::uint32_t chunk_count(std::uint64_t buffer_bytes, std::size_t max_payload_bytes) {
  if (max_payload_bytes == 0) throw ConfigError("max_payload_bytes must be positive");
  const auto n = (buffer_bytes + max_payload_bytes - 1) / max_payload_bytes;
  if (n > 0xFFFFFFFFull) throw ConfigError("gradient buffer needs more than 2^32 chunks");
  return static_cast<std::uint32_t>(n);
}

std::size_t chunk_payload_length(std::uint32_t seq, std::uint64_t buffer_bytes,
                                 std::size_t max_payload_bytes) {
  const auto offset = static_cast<std::uint64_t>(seq) * max_payload_bytes;
  if (offset >= buffer_bytes) return 0;
  return static_cast<std::size_t>(std::min<std::uint64_t>(max_payload_bytes, buffer_bytes - offset));
}

std::vector<GradientChunk> split_into_chunks(ByteView buffer, std::uint64_t round,
                                             std::size_t max_payload_bytes) {
  const auto n = chunk_count(buffer.size(), max_payload_bytes);
  std::vector<GradientChunk> chunks;
  chunks.reserve(n);
  for (std::uint32_t seq = 0; seq < n; ++seq) {
    const auto offset = static_cast<std::size_t>(seq) * max_payload_bytes;
    const auto len = chunk_payload_length(seq, buffer.size(), max_payload_bytes);
    auto slice = buffer.subspan(offset, len);
    chunks.push_back({{seq, round, static_cast<std::uint16_t>(len)}, Bytes(slice.begin(), slice.end())});
  }
  return chunks;
}

std::string_view to_string(ControlKind kind) {
  switch (kind) {
    case ControlKind::Probe: return "probe";
    case ControlKind::Bitmap: return "bitmap";
    case ControlKind::Stop: return "stop";
  }
  return "unknown";
}

Bytes encode_control(const ControlMessage& msg) {
  const std::size_t bitmap_len = msg.kind == ControlKind::Bitmap ? msg.bitmap.size() : 0;
  Bytes out(kControlHeaderBytes + bitmap_len);
  out[0] = static_cast<std::byte>(msg.kind);
  put_be<std::uint64_t>(msg.round, out.data() + 1);
  put_be<std::uint32_t>(static_cast<std::uint32_t>(bitmap_len), out.data() + 9);
  if (bitmap_len > 0) std::memcpy(out.data() + kControlHeaderBytes, msg.bitmap.data(), bitmap_len);
  return out;
}

ControlMessage decode_control(ByteView body) {
  if (body.empty()) throw TruncatedPacket("empty control message");
  const auto kind_byte = std::to_integer<std::uint8_t>(body[0]);
  if (kind_byte < 0x01 || kind_byte > 0x03) {
    throw UnknownKind(fmt::format("unknown control kind 0x{:02X}", kind_byte));
  }
  if (body.size() < kControlHeaderBytes) {
    throw TruncatedPacket(fmt::format("control message of {} bytes is shorter than its header", body.size()));
  }
  ControlMessage msg;
  msg.kind = static_cast<ControlKind>(kind_byte);
  msg.round = get_be<std::uint64_t>(body.data() + 1);
  const auto bitmap_len = get_be<std::uint32_t>(body.data() + 9);
  if (body.size() != kControlHeaderBytes + bitmap_len) {
    throw TruncatedPacket(fmt::format("control message declares {} bitmap bytes but carries {}",
                                      bitmap_len, body.size() - kControlHeaderBytes));
  }
  if (msg.kind != ControlKind::Bitmap && bitmap_len != 0) {
    throw ProtocolError(fmt::format("{} message must not carry a bitmap", to_string(msg.kind)));
  }
  msg.bitmap.assign(body.begin() + kControlHeaderBytes, body.end());
  return msg;
}

Bytes frame(ByteView body) {
  if (body.size() > 0xFFFFFFFFull) throw ProtocolError("frame too large");
  Bytes out(kFramePrefixBytes + body.size());
  put_be<std::uint32_t>(static_cast<std::uint32_t>(body.size()), out.data());
  if (!body.empty()) std::memcpy(out.data() + kFramePrefixBytes, body.data(), body.size());
  return out;
}

void FrameDecoder::feed(ByteView bytes) {
  pending_.insert(pending_.end(), bytes.begin(), bytes.end());
  while (pending_.size() >= kFramePrefixBytes) {
    std::byte prefix[kFramePrefixBytes];
    std::copy_n(pending_.begin(), kFramePrefixBytes, prefix);
    const auto len = get_be<std::uint32_t>(prefix);
    if (len > max_frame_bytes_) {
      throw ProtocolError(fmt::format("frame of {} bytes exceeds limit {}", len, max_frame_bytes_));
    }
    if (pending_.size() < kFramePrefixBytes + len) break;
    auto body_begin = pending_.begin() + kFramePrefixBytes;
    ready_.emplace_back(body_begin, body_begin + len);
    pending_.erase(pending_.begin(), body_begin + len);
  }
}

std::optional<Bytes> FrameDecoder::next() {
  if (ready_.empty()) return std::nullopt;
  Bytes out = std::move(ready_.front());
  ready_.pop_front();
  return out;
}

MetadataAnnouncement make_announcement(const TensorLayout& layout, std::size_t max_payload_bytes) {
  if (layout.empty()) throw ConfigError("model layout is empty");
  if (max_payload_bytes == 0 || max_payload_bytes > kMaxPayloadLimit) {
    throw ConfigError(fmt::format("max_payload_bytes {} outside (0, {}]", max_payload_bytes, kMaxPayloadLimit));
  }
  for (const auto& spec : layout) {
    if (spec.element_count == 0) throw ConfigError(fmt::format("tensor '{}' is empty", spec.name));
    if (spec.name.empty() || !std::all_of(spec.name.begin(), spec.name.end(), is_name_char)) {
      throw ConfigError(fmt::format("tensor name '{}' must be non-empty without whitespace", spec.name));
    }
  }
  return {chunk_count(total_elements(layout) * 4, max_payload_bytes), layout};
}

std::string encode_metadata(const MetadataAnnouncement& meta) {
  std::string out = fmt::format("total_chunks={}\n", meta.total_chunks);
  for (const auto& spec : meta.layout) out += fmt::format("tensor {} {}\n", spec.name, spec.element_count);
  return out;
}

MetadataAnnouncement decode_metadata(std::string_view text) {
  MetadataAnnouncement meta;
  bool have_total = false;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    if (eol == std::string_view::npos) throw ProtocolError("metadata line is not newline-terminated");
    const auto line = text.substr(0, eol);
    text.remove_prefix(eol + 1);
    if (!have_total) {
      constexpr std::string_view key = "total_chunks=";
      if (!line.starts_with(key)) throw ProtocolError("metadata must start with total_chunks=");
      const auto total = parse_u64(line.substr(key.size()), "total_chunks");
      if (total > 0xFFFFFFFFull) throw ProtocolError("total_chunks out of range");
      meta.total_chunks = static_cast<std::uint32_t>(total);
      have_total = true;
      continue;
    }
    constexpr std::string_view tag = "tensor ";
    if (!line.starts_with(tag)) throw ProtocolError(fmt::format("unexpected metadata line '{}'", line));
    const auto rest = line.substr(tag.size());
    const auto space = rest.rfind(' ');
    if (space == std::string_view::npos || space == 0) {
      throw ProtocolError(fmt::format("malformed tensor line '{}'", line));
    }
    meta.layout.push_back({std::string(rest.substr(0, space)), parse_u64(rest.substr(space + 1), "element count")});
  }
  if (!have_total) throw ProtocolError("metadata is empty");
  return meta;
}

Bytes to_bytes(std::string_view text) {
  Bytes out(text.size());
  std::memcpy(out.data(), text.data(), text.size());
  return out;
}

std::string to_string(ByteView bytes) {
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

}  // namespace dblp
