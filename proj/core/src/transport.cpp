#include "dblp/transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dblp/error.hpp"

namespace dblp {

std::uint32_t required_received(std::uint32_t total, double tolerance) {
  if (!(tolerance >= 0.0 && tolerance < 1.0)) {
    throw std::invalid_argument(fmt::format("tolerance {} outside [0, 1)", tolerance));
  }
  const double allowed = static_cast<double>(total) * tolerance;
  const auto missing_allowed =
      static_cast<std::uint32_t>(std::floor(allowed + 1e-9 * std::max(1.0, allowed)));
  return total - std::min(missing_allowed, total);
}

// ---------------------------------------------------------------------------
// Sender

Sender::Sender(ByteView data, std::uint64_t round, std::size_t max_payload_bytes)
    : data_(data.begin(), data.end()),
      round_(round),
      max_payload_(max_payload_bytes),
      total_(chunk_count(data.size(), max_payload_bytes)),
      acked_(total_) {
  if (total_ == 0) throw ConfigError("cannot send an empty gradient buffer");
  if (max_payload_bytes > kMaxPayloadLimit) throw ConfigError("max_payload_bytes exceeds 65535");
  plan_.reserve(total_);
}

std::optional<Bytes> Sender::next_datagram() {
  if (phase_ == SenderPhase::Stopped || phase_ == SenderPhase::Probing) return std::nullopt;
  if (phase_ == SenderPhase::Ready) {
    plan_.clear();
    for (std::uint32_t seq = 0; seq < total_; ++seq) {
      if (!acked_.test(seq)) plan_.push_back(seq);
    }
    cursor_ = 0;
    ++passes_;
    phase_ = SenderPhase::Sending;
  }
  // A late Bitmap can land mid-pass; the plan keeps its order but skips
  // anything it marks received.
  while (cursor_ < plan_.size() && acked_.test(plan_[cursor_])) ++cursor_;
  if (cursor_ >= plan_.size()) return std::nullopt;
  const auto seq = plan_[cursor_++];
  const auto offset = static_cast<std::size_t>(seq) * max_payload_;
  const auto len = chunk_payload_length(seq, data_.size(), max_payload_);
  Bytes out;
  encode_chunk_into(seq, round_, ByteView(data_).subspan(offset, len), out);
  ++datagrams_sent_;
  return out;
}

ControlMessage Sender::probe() {
  if (phase_ == SenderPhase::Stopped) throw std::logic_error("probe after stop");
  phase_ = SenderPhase::Probing;
  return ControlMessage::probe(round_);
}

bool Sender::on_control(const ControlMessage& msg) {
  if (msg.round != round_ || phase_ == SenderPhase::Stopped) return false;
  switch (msg.kind) {
    case ControlKind::Stop:
      early_stop_ = phase_ == SenderPhase::Sending && cursor_ < plan_.size();
      phase_ = SenderPhase::Stopped;
      return true;
    case ControlKind::Bitmap:
      acked_.merge(ChunkBitmap::from_bytes(total_, msg.bitmap));
      if (phase_ == SenderPhase::Probing) phase_ = SenderPhase::Ready;
      return true;
    case ControlKind::Probe:
      return false;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Receiver

Receiver::Receiver(std::uint64_t round, double tolerance, std::uint64_t buffer_bytes,
                   std::size_t max_payload_bytes)
    : round_(round),
      tolerance_(tolerance),
      max_payload_(max_payload_bytes),
      buffer_(buffer_bytes, std::byte{0}),
      bitmap_(chunk_count(buffer_bytes, max_payload_bytes)),
      required_(required_received(bitmap_.total(), tolerance)) {
  if (bitmap_.total() == 0) throw ConfigError("cannot receive an empty gradient buffer");
}

ChunkVerdict Receiver::on_datagram(ByteView datagram) {
  ChunkView chunk;
  try {
    chunk = decode_chunk_view(datagram);
  } catch (const TruncatedPacket&) {
    ++malformed_;
    return ChunkVerdict::Malformed;
  }
  if (stop_sent_) return ChunkVerdict::AfterStop;
  if (chunk.header.round != round_) {
    ++stale_;
    return ChunkVerdict::Stale;
  }
  const auto seq = chunk.header.seq;
  if (seq >= bitmap_.total() ||
      chunk.payload.size() != chunk_payload_length(seq, buffer_.size(), max_payload_)) {
    ++malformed_;
    return ChunkVerdict::Malformed;
  }
  if (!bitmap_.set(seq)) {
    ++duplicates_;
    return ChunkVerdict::Duplicate;
  }
  std::memcpy(buffer_.data() + static_cast<std::size_t>(seq) * max_payload_, chunk.payload.data(),
              chunk.payload.size());
  return ChunkVerdict::Accepted;
}

std::optional<ControlMessage> Receiver::on_control(const ControlMessage& msg) {
  if (stop_sent_ || msg.kind != ControlKind::Probe || msg.round != round_) return std::nullopt;
  if (threshold_satisfied()) {
    stop_sent_ = true;
    return ControlMessage::stop(round_);
  }
  ++bitmaps_sent_;
  return ControlMessage::with_bitmap(round_, bitmap_.to_bytes());
}

std::optional<ControlMessage> Receiver::take_stop() {
  if (stop_sent_ || !threshold_satisfied()) return std::nullopt;
  stop_sent_ = true;
  return ControlMessage::stop(round_);
}

double Receiver::received_ratio() const {
  return static_cast<double>(bitmap_.count()) / static_cast<double>(bitmap_.total());
}

// ---------------------------------------------------------------------------
// Blocking drivers

SendOutcome dblp_send(ByteView data, std::uint64_t round, DatagramChannel& data_channel,
                      ControlChannel& control_channel, const TransportConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  Sender sender(data, round, config.max_payload_bytes);
  auto drain_control = [&] {
    // Stop reading at Stop: later frames on the stream belong to the caller.
    while (!sender.stopped()) {
      auto msg = control_channel.recv(Micros{0});
      if (!msg) break;
      sender.on_control(*msg);
    }
  };

  while (!sender.stopped()) {
    while (true) {
      drain_control();
      if (sender.stopped()) break;
      auto datagram = sender.next_datagram();
      if (!datagram) break;
      data_channel.send(*datagram, round);
    }
    if (sender.stopped()) break;

    const auto probe = sender.probe();
    control_channel.send(probe);
    int unanswered = 0;
    while (sender.phase() == SenderPhase::Probing) {
      auto reply = control_channel.recv(std::chrono::duration_cast<Micros>(config.probe_timeout));
      if (!reply) {
        if (++unanswered > config.max_probe_retries) {
          throw ControlTimeout(fmt::format("round {}: no reply to {} probes", round, unanswered));
        }
        spdlog::debug("round {}: probe unanswered, retry {}", round, unanswered);
        control_channel.send(probe);
        continue;
      }
      sender.on_control(*reply);
    }
  }

  SendOutcome out;
  out.passes = sender.passes();
  out.early_stop = sender.early_stop();
  out.datagrams = sender.datagrams_sent();
  out.latency = std::chrono::steady_clock::now() - start;
  return out;
}

RecvOutcome dblp_recv(std::uint64_t round, double tolerance, std::uint64_t buffer_bytes,
                      DatagramChannel& data_channel, ControlChannel& control_channel,
                      const TransportConfig& config) {
  constexpr Micros kPollSlice{500};
  Receiver receiver(round, tolerance, buffer_bytes, config.max_payload_bytes);
  auto last_activity = std::chrono::steady_clock::now();
  std::optional<std::chrono::steady_clock::time_point> first_chunk;

  auto accept = [&](const Bytes& datagram) {
    if (receiver.on_datagram(datagram) == ChunkVerdict::Accepted && !first_chunk) {
      first_chunk = std::chrono::steady_clock::now();
    }
    if (auto stop = receiver.take_stop()) control_channel.send(*stop);
  };
  auto drain_data = [&] {
    bool any = false;
    while (!receiver.stopped()) {
      auto datagram = data_channel.recv(Micros{0});
      if (!datagram) break;
      accept(*datagram);
      any = true;
    }
    return any;
  };

  while (!receiver.stopped()) {
    bool active = drain_data();
    if (receiver.stopped()) break;
    if (auto msg = control_channel.recv(Micros{0})) {
      // Everything already delivered must be reflected in the reply.
      drain_data();
      if (!receiver.stopped()) {
        if (auto reply = receiver.on_control(*msg)) control_channel.send(*reply);
      }
      active = true;
    }
    if (receiver.stopped()) break;
    if (!active) {
      if (auto datagram = data_channel.recv(kPollSlice)) {
        accept(*datagram);
        active = true;
      }
    }
    const auto now = std::chrono::steady_clock::now();
    if (active) {
      last_activity = now;
    } else if (now - last_activity > config.recv_timeout) {
      throw ControlTimeout(fmt::format("round {}: receiver idle for {} ms", round,
                                       config.recv_timeout.count()));
    }
  }

  RecvOutcome out;
  out.passes = receiver.bitmaps_sent() + 1;
  if (first_chunk) out.latency = std::chrono::steady_clock::now() - *first_chunk;
  out.received_ratio = receiver.received_ratio();
  out.chunks_received = receiver.bitmap().count();
  out.chunks_total = receiver.bitmap().total();
  out.stale_drops = receiver.stale_drops();
  out.buffer = receiver.take_buffer();
  return out;
}

TensorList reconstruct(ByteView buffer, const TensorLayout& layout) {
  return deserialize_tensors(buffer, layout);
}

}  // namespace dblp
