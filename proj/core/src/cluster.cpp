#include "dblp/cluster.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "dblp/error.hpp"
#include "dblp/transfer_sim.hpp"

namespace dblp {

SimulatedCluster::SimulatedCluster(ClusterConfig config, TolerancePolicy policy,
                                   std::vector<std::unique_ptr<GradientSource>> sources)
    : config_(std::move(config)), policy_(std::move(policy)) {
  if (sources.empty()) throw ConfigError("cluster needs at least one worker");
  config_.loss.validate();
  config_.delay.validate();
  const auto layout = sources.front()->layout();
  announcement_ = make_announcement(layout, config_.transport.max_payload_bytes);
  buffer_bytes_ = total_elements(layout) * sizeof(float);

  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (sources[i]->layout() != layout) throw LayoutMismatch(fmt::format("worker {} has a different layout", i));
    workers_.emplace_back(static_cast<std::uint32_t>(i), std::move(sources[i]), config_.learning_rate);
    auto make_path = [&](Direction d) {
      return SimulatedPath(config_.link,
                           LossInjector(path_schedule(config_.loss, i, d), config_.loss_model,
                                        announcement_.total_chunks),
                           config_.delay);
    };
    links_.push_back({make_path(Direction::WorkerToServer), make_path(Direction::ServerToWorker)});
  }
}

StepReport SimulatedCluster::step() {
  const std::uint64_t step = next_step_;
  const std::size_t n = workers_.size();
  const std::size_t mp = config_.transport.max_payload_bytes;

  StepReport report;
  report.start = clock_;
  report.burst = config_.loss.is_burst(step);
  report.gather_tolerance = policy_.current();
  report.gather_clr = policy_.clr_active();

  auto record = [&](std::uint32_t worker, Direction d, const SimTransferResult& r, double tol, bool clr) {
    RoundMetrics m;
    m.round = step;
    m.worker_id = worker;
    m.direction = d;
    m.latency = r.latency;
    m.passes = r.passes;
    m.tolerance = tol;
    m.clr_active = clr;
    m.burst_round = report.burst;
    m.chunks_total = r.chunks_total;
    m.chunks_received = r.chunks_received;
    report.records.push_back(m);
  };

  // Gather.
  const SimTime compute_done = clock_ + config_.compute_time;
  std::vector<TensorList> received;
  received.reserve(n);
  report.barrier = compute_done;
  for (std::size_t i = 0; i < n; ++i) {
    const auto payload = serialize_tensors(workers_[i].compute_gradient(step));
    const auto round = wire_round(step, Direction::WorkerToServer);
    Sender sender(payload, round, mp);
    Receiver receiver(round, report.gather_tolerance, buffer_bytes_, mp);
    const auto r = simulate_transfer(sender, receiver, links_[i].up, compute_done, step, config_.transport);
    record(workers_[i].id(), Direction::WorkerToServer, r, report.gather_tolerance, report.gather_clr);
    report.gather_masks.push_back(receiver.bitmap());
    received.push_back(reconstruct(receiver.buffer(), announcement_.layout));
    report.barrier = std::max(report.barrier, r.receiver_done);
  }

  // Reduce and update the schedule with the mean's norm.
  report.result.round = step;
  report.result.mean_gradient = reduce_mean(received);
  report.result.active_tolerance = policy_.update(step, l2_norm(report.result.mean_gradient));
  report.broadcast_clr = policy_.clr_active();

  // Broadcast.
  const auto payload = serialize_tensors(report.result.mean_gradient);
  SimTime end = report.barrier;
  for (std::size_t i = 0; i < n; ++i) {
    const auto round = wire_round(step, Direction::ServerToWorker);
    Sender sender(payload, round, mp);
    Receiver receiver(round, report.result.active_tolerance, buffer_bytes_, mp);
    const auto r = simulate_transfer(sender, receiver, links_[i].down, report.barrier, step, config_.transport);
    record(workers_[i].id(), Direction::ServerToWorker, r, report.result.active_tolerance, report.broadcast_clr);
    report.broadcast_masks.push_back(receiver.bitmap());
    workers_[i].apply_update(reconstruct(receiver.buffer(), announcement_.layout));
    end = std::max({end, r.sender_done, r.receiver_done});
  }

  report.end = end;
  clock_ = end;
  ++next_step_;
  return report;
}

}  // namespace dblp
