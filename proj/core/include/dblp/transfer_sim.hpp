#pragma once

#include <cstdint>

#include "dblp/lossnet.hpp"
#include "dblp/transport.hpp"

namespace dblp {

struct SimTransferResult {
  SimTime start{0};
  SimTime sender_done{0};    // Stop observed by the sender
  SimTime receiver_done{0};  // Stop emitted by the receiver
  SimTime latency{0};        // sender_done - start
  std::size_t passes = 0;
  bool early_stop = false;
  std::uint64_t datagrams = 0;
  std::uint32_t chunks_received = 0;
  std::uint32_t chunks_total = 0;
  std::uint64_t stale_drops = 0;
};

/// Runs one round to completion in virtual time: data over `path`, control
/// messages delivered losslessly after link().control_latency. Events that
/// fall on the same instant are ordered data arrival, control to receiver,
/// control to sender, sender transmission, so a probe sent after a pass is
/// answered with every datagram of that pass already counted.
///
/// Throws ControlTimeout when the sender exhausts its probe retries.
SimTransferResult simulate_transfer(Sender& sender, Receiver& receiver, SimulatedPath& path,
                                    SimTime start, std::uint64_t loss_round,
                                    const TransportConfig& config);

}  // namespace dblp
