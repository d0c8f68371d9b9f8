#pragma once

// Single-threaded, virtual-time all-reduce: N workers and one server joined
// by per-worker simulated paths in each direction. Deterministic for a given
// configuration and seed.

#include <cstdint>
#include <memory>
#include <vector>

#include "dblp/allreduce.hpp"
#include "dblp/bitmap.hpp"
#include "dblp/clr.hpp"
#include "dblp/lossnet.hpp"
#include "dblp/metrics.hpp"
#include "dblp/transport.hpp"

namespace dblp {

struct ClusterConfig {
  TransportConfig transport;
  LinkProfile link;
  LossSchedule loss;
  LossModel loss_model = LossModel::Exact;
  DelayModel delay;
  float learning_rate = 0.1f;
  SimTime compute_time{0};  // per-step local compute before the gather
};

struct StepReport {
  StepResult result;
  double gather_tolerance = 0.0;
  bool gather_clr = false;
  bool broadcast_clr = false;
  bool burst = false;
  SimTime start{0};
  SimTime barrier{0};  // last worker gradient in at the server
  SimTime end{0};
  std::vector<RoundMetrics> records;  // N gather records then N broadcast records
  std::vector<ChunkBitmap> gather_masks;     // chunks the server received, per worker
  std::vector<ChunkBitmap> broadcast_masks;  // chunks each worker received
};

class SimulatedCluster {
 public:
  /// One GradientSource per worker; all must share a layout.
  SimulatedCluster(ClusterConfig config, TolerancePolicy policy,
                   std::vector<std::unique_ptr<GradientSource>> sources);

  /// Runs the next training step end to end.
  StepReport step();

  std::uint64_t steps_done() const { return next_step_; }
  SimTime now() const { return clock_; }
  const MetadataAnnouncement& announcement() const { return announcement_; }
  const std::vector<Worker>& workers() const { return workers_; }
  const TolerancePolicy& policy() const { return policy_; }

 private:
  struct Link {
    SimulatedPath up;    // worker -> server
    SimulatedPath down;  // server -> worker
  };

  ClusterConfig config_;
  TolerancePolicy policy_;
  std::vector<Worker> workers_;
  std::vector<Link> links_;
  MetadataAnnouncement announcement_;
  std::uint64_t buffer_bytes_ = 0;
  std::uint64_t next_step_ = 0;
  SimTime clock_{0};
};

}  // namespace dblp
