#pragma once

// Centralized gather-mean-broadcast: the pieces shared by the simulated
// cluster and the socket roles.
//
// Round numbering on the wire: step s uses round 2s for worker -> server and
// 2s + 1 for server -> worker, so a late datagram can never be mistaken for
// the opposite direction's traffic. Loss schedules are indexed by step.

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "dblp/channel.hpp"
#include "dblp/lossnet.hpp"
#include "dblp/metrics.hpp"
#include "dblp/tensor.hpp"
#include "dblp/wire.hpp"
#include "dblp/workload.hpp"

namespace dblp {

constexpr std::uint64_t wire_round(std::uint64_t step, Direction d) {
  return 2 * step + (d == Direction::ServerToWorker ? 1 : 0);
}

/// The loss schedule of one (worker, direction) path: same rates, its own seed.
LossSchedule path_schedule(const LossSchedule& base, std::size_t worker, Direction d);

/// Element-wise mean: summed in worker order in float, then divided by N.
/// Zero-filled positions count like any other value. Throws LayoutMismatch.
TensorList reduce_mean(std::span<const TensorList> gradients);

struct StepResult {
  std::uint64_t round = 0;
  TensorList mean_gradient;
  double active_tolerance = 0.0;  // used for the broadcast
};

class Worker {
 public:
  Worker(std::uint32_t id, std::unique_ptr<GradientSource> source, float learning_rate);

  TensorList compute_gradient(std::uint64_t step);
  /// w <- w - lr * g, element-wise in float.
  void apply_update(const TensorList& mean);

  std::uint32_t id() const { return id_; }
  TensorLayout layout() const { return source_->layout(); }
  const TensorList& parameters() const { return params_; }
  float learning_rate() const { return lr_; }
  GradientSource& source() { return *source_; }
  const GradientSource& source() const { return *source_; }

 private:
  std::uint32_t id_;
  std::unique_ptr<GradientSource> source_;
  float lr_;
  TensorList params_;
};

// ---------------------------------------------------------------------------
// Handshake over the control stream:
//
//   server -> worker   metadata announcement (text, see wire.hpp)
//   server -> worker   "worker_id=<id>\ndata_port=<port>\nmax_payload_bytes=<n>\nsteps=<n>\n"
//   worker -> server   "ack total_chunks=<n> data_port=<port>\n"
//
// data_port is the server's UDP port for this worker in the session frame and
// the worker's own UDP port in the ack.

struct SessionInfo {
  std::uint32_t worker_id = 0;
  std::uint16_t data_port = 0;
  std::size_t max_payload_bytes = kDefaultMaxPayloadBytes;
  std::uint64_t steps = 0;

  bool operator==(const SessionInfo&) const = default;
};

std::string encode_session(const SessionInfo& s);
SessionInfo decode_session(std::string_view text);  // throws ProtocolError

struct HandshakeAck {
  std::uint32_t total_chunks = 0;
  std::uint16_t data_port = 0;

  bool operator==(const HandshakeAck&) const = default;
};

std::string encode_ack(const HandshakeAck& a);
HandshakeAck decode_ack(std::string_view text);  // throws ProtocolError

/// Server side. Throws LayoutMismatch when the worker disagrees on the chunk
/// count, WorkerLost when it goes away.
HandshakeAck server_handshake(FrameStream& stream, const MetadataAnnouncement& announcement,
                              const SessionInfo& session, std::chrono::milliseconds timeout);

struct WorkerHandshake {
  MetadataAnnouncement announcement;
  SessionInfo session;
};

/// Worker side. Rejects an announcement whose layout differs from
/// `expected` with LayoutMismatch (no ack is sent). Throws ServerLost.
WorkerHandshake worker_handshake(FrameStream& stream, const TensorLayout& expected, std::uint16_t local_data_port,
                                 std::chrono::milliseconds timeout);

/// Sent by the server on the control stream after the gather of `step` and
/// before the broadcast, so the worker can stop the broadcast at the right
/// tolerance. Text, one line: "step=.. gather_tolerance=.. gather_clr=0|1
/// chunks_received=.. tolerance=.. clr=0|1". It never starts with a control
/// kind byte.
struct StepNotice {
  std::uint64_t step = 0;
  double gather_tolerance = 0.0;
  bool gather_clr = false;
  std::uint32_t chunks_received = 0;  // this worker's gradient, at the server
  double tolerance = 0.0;             // for the broadcast
  bool clr = false;

  bool operator==(const StepNotice&) const = default;
};

std::string encode_step_notice(const StepNotice& n);
StepNotice decode_step_notice(std::string_view text);  // throws ProtocolError

}  // namespace dblp
