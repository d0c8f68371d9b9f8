#pragma once

// Bounded-loss sender and receiver.
//
// Sender and Receiver are pure state machines: they never touch a socket or
// a clock. dblp_send / dblp_recv drive them over blocking channels; the
// virtual-time simulator in transfer_sim.hpp drives the same objects.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "dblp/bitmap.hpp"
#include "dblp/channel.hpp"
#include "dblp/tensor.hpp"
#include "dblp/wire.hpp"

namespace dblp {

struct TransportConfig {
  std::size_t max_payload_bytes = kDefaultMaxPayloadBytes;
  std::chrono::milliseconds probe_timeout{200};
  int max_probe_retries = 25;
  std::chrono::milliseconds recv_timeout{10'000};
};

/// Received chunks needed before a round may stop: ceil((1 - p) * total),
/// computed as total - floor(p * total) so that decimal tolerances such as
/// 0.408 are not pushed across an integer boundary by binary rounding.
std::uint32_t required_received(std::uint32_t total, double tolerance);

enum class SenderPhase {
  Ready,     // about to start a pass
  Sending,   // inside a pass
  Probing,   // probe sent, waiting for Bitmap or Stop
  Stopped,
};

class Sender {
 public:
  Sender(ByteView data, std::uint64_t round, std::size_t max_payload_bytes);

  /// Next datagram of the current pass, starting a pass if none is running.
  /// Returns nullopt when the pass plan is exhausted (call probe()) or the
  /// round is stopped.
  std::optional<Bytes> next_datagram();

  /// Ends the current pass. Moves to Probing and returns the probe to send.
  ControlMessage probe();

  /// Consumes a Bitmap or Stop for this round. Messages for other rounds and
  /// Probe messages are ignored; returns whether the message was consumed.
  /// A Bitmap only affects the plan of the next pass.
  bool on_control(const ControlMessage& msg);

  SenderPhase phase() const { return phase_; }
  bool stopped() const { return phase_ == SenderPhase::Stopped; }
  std::uint64_t round() const { return round_; }
  std::uint32_t total_chunks() const { return total_; }
  std::size_t passes() const { return passes_; }
  bool early_stop() const { return early_stop_; }
  std::uint64_t datagrams_sent() const { return datagrams_sent_; }
  std::uint32_t pass_remaining() const { return static_cast<std::uint32_t>(plan_.size() - cursor_); }

  /// Latest receiver bitmap seen (all zero before the first reply).
  const ChunkBitmap& acknowledged() const { return acked_; }

 private:
  Bytes data_;
  std::uint64_t round_;
  std::size_t max_payload_;
  std::uint32_t total_;
  ChunkBitmap acked_;
  std::vector<std::uint32_t> plan_;
  std::size_t cursor_ = 0;
  SenderPhase phase_ = SenderPhase::Ready;
  std::size_t passes_ = 0;
  bool early_stop_ = false;
  std::uint64_t datagrams_sent_ = 0;
};

enum class ChunkVerdict {
  Accepted,
  Duplicate,
  Stale,      // header round differs from the receiver's round
  Malformed,  // truncated, seq out of range, or wrong payload length
  AfterStop,  // round already stopped
};

class Receiver {
 public:
  /// `tolerance` is the fraction of chunks the round may lose, in [0, 1).
  Receiver(std::uint64_t round, double tolerance, std::uint64_t buffer_bytes,
           std::size_t max_payload_bytes);

  ChunkVerdict on_datagram(ByteView datagram);

  /// Reply to a control message: Stop or Bitmap for a Probe of this round,
  /// nothing for anything else or once Stop was already sent.
  std::optional<ControlMessage> on_control(const ControlMessage& msg);

  /// The proactive Stop, returned exactly once after the threshold is met.
  std::optional<ControlMessage> take_stop();

  bool threshold_satisfied() const { return bitmap_.count() >= required_; }
  bool stopped() const { return stop_sent_; }
  std::uint64_t round() const { return round_; }
  double tolerance() const { return tolerance_; }
  std::uint32_t required() const { return required_; }
  const ChunkBitmap& bitmap() const { return bitmap_; }
  double received_ratio() const;

  std::uint64_t stale_drops() const { return stale_; }
  std::uint64_t duplicates() const { return duplicates_; }
  std::uint64_t malformed() const { return malformed_; }
  /// Probes answered with a Bitmap; the sender ran at least this many + 1 passes.
  std::size_t bitmaps_sent() const { return bitmaps_sent_; }

  const Bytes& buffer() const { return buffer_; }
  Bytes take_buffer() { return std::move(buffer_); }

 private:
  std::uint64_t round_;
  double tolerance_;
  std::size_t max_payload_;
  Bytes buffer_;
  ChunkBitmap bitmap_;
  std::uint32_t required_;
  bool stop_sent_ = false;
  std::uint64_t stale_ = 0;
  std::uint64_t duplicates_ = 0;
  std::uint64_t malformed_ = 0;
  std::size_t bitmaps_sent_ = 0;
};

struct SendOutcome {
  std::size_t passes = 0;
  bool early_stop = false;
  std::uint64_t datagrams = 0;
  std::chrono::nanoseconds latency{0};
};

struct RecvOutcome {
  Bytes buffer;
  double received_ratio = 0.0;
  std::uint32_t chunks_received = 0;
  std::uint32_t chunks_total = 0;
  std::uint64_t stale_drops = 0;
  std::size_t passes = 0;              // as observed from probes
  std::chrono::nanoseconds latency{0};  // first accepted chunk to Stop
};

/// Sends one round over blocking channels. Between every datagram the
/// control channel is polled so a Stop ends the round within one send.
/// Throws ControlTimeout after max_probe_retries unanswered probes.
SendOutcome dblp_send(ByteView data, std::uint64_t round, DatagramChannel& data_channel,
                      ControlChannel& control_channel, const TransportConfig& config);

/// Receives one round. Pending datagrams are drained before a probe is
/// answered. Throws ControlTimeout when neither a chunk nor a probe arrives
/// within recv_timeout.
RecvOutcome dblp_recv(std::uint64_t round, double tolerance, std::uint64_t buffer_bytes,
                      DatagramChannel& data_channel, ControlChannel& control_channel,
                      const TransportConfig& config);

/// Splits a received buffer into named tensors. Missing chunks read as 0.0.
TensorList reconstruct(ByteView buffer, const TensorLayout& layout);

}  // namespace dblp
