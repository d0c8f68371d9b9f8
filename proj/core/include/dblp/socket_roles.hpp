#pragma once

// Server and worker roles over real sockets: one TCP control stream per
// worker, one UDP port per worker on the server. Optional loss injection on
// send emulates a lossy network on loopback.
//
// Metrics: the server records each gather as seen by its receiver; a worker
// records its own send latency for the gather and its receiver's view of
// the broadcast.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "dblp/allreduce.hpp"
#include "dblp/clr.hpp"
#include "dblp/lossnet.hpp"
#include "dblp/metrics.hpp"
#include "dblp/socket_channel.hpp"
#include "dblp/transport.hpp"

namespace dblp {

struct ServerOptions {
  Endpoint listen{"127.0.0.1", 0};
  std::size_t workers = 3;
  std::uint64_t steps = 0;
  TransportConfig transport;
  TensorLayout layout;
  LossSchedule loss;  // injected on server -> worker datagrams
  LossModel loss_model = LossModel::Bernoulli;
  std::chrono::milliseconds handshake_timeout{30'000};
  /// Called with the bound control port before the first accept.
  std::function<void(std::uint16_t)> on_listening;
};

struct ServerReport {
  std::vector<RoundMetrics> records;
  std::vector<StepResult> steps;  // mean gradient omitted to save memory
};

/// Accepts options.workers workers, then runs options.steps synchronous
/// steps. Throws WorkerLost when any session fails.
ServerReport run_server(const ServerOptions& options, TolerancePolicy policy);

struct WorkerOptions {
  Endpoint server;
  std::string bind_host = "0.0.0.0";
  TransportConfig transport;
  TensorLayout layout;
  LossSchedule loss;  // injected on worker -> server datagrams
  LossModel loss_model = LossModel::Bernoulli;
  float learning_rate = 0.1f;
  std::chrono::milliseconds handshake_timeout{30'000};
};

struct WorkerReport {
  std::uint32_t worker_id = 0;
  TensorList parameters;
  std::vector<RoundMetrics> records;
};

using SourceFactory = std::function<std::unique_ptr<GradientSource>(std::uint32_t worker_id)>;

/// Connects, handshakes, and trains for the number of steps the server
/// announces. Throws ServerLost when the server goes away.
WorkerReport run_worker(const WorkerOptions& options, const SourceFactory& make_source);

}  // namespace dblp
