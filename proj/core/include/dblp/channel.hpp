#pragma once

#include <chrono>
#include <cstdint>
#include <optional>

#include "dblp/wire.hpp"

namespace dblp {

using Micros = std::chrono::microseconds;

/// Unreliable, unordered datagram path (UDP or the in-process simulator).
class DatagramChannel {
 public:
  virtual ~DatagramChannel() = default;

  /// `current_round` selects the loss rate on simulated backends. Returns
  /// false when the datagram was dropped by injected loss.
  virtual bool send(ByteView datagram, std::uint64_t current_round) = 0;

  /// Waits up to `timeout` (zero polls). Throws ChannelClosed once the peer
  /// is gone and nothing is left to read.
  virtual std::optional<Bytes> recv(Micros timeout) = 0;
};

/// Reliable, ordered stream of length-prefixed frames.
class FrameStream {
 public:
  virtual ~FrameStream() = default;
  virtual void send_frame(ByteView body) = 0;
  virtual std::optional<Bytes> recv_frame(Micros timeout) = 0;
};

/// Reliable control path carrying probe / bitmap / stop.
class ControlChannel {
 public:
  virtual ~ControlChannel() = default;
  virtual void send(const ControlMessage& msg) = 0;
  virtual std::optional<ControlMessage> recv(Micros timeout) = 0;
};

/// Control messages encoded onto any frame stream.
class FramedControlChannel final : public ControlChannel {
 public:
  explicit FramedControlChannel(FrameStream& stream) : stream_(stream) {}

  void send(const ControlMessage& msg) override { stream_.send_frame(encode_control(msg)); }

  std::optional<ControlMessage> recv(Micros timeout) override {
    auto body = stream_.recv_frame(timeout);
    if (!body) return std::nullopt;
    return decode_control(*body);
  }

 private:
  FrameStream& stream_;
};

}  // namespace dblp
