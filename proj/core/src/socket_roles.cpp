#include "dblp/socket_roles.hpp"

#include <condition_variable>
#include <exception>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dblp/error.hpp"

namespace dblp {
namespace {

// std::barrier cannot be abandoned once a participant fails; this one can.
class StepBarrier {
 public:
  explicit StepBarrier(std::size_t n) : n_(n) {}

  /// The last thread to arrive runs `completion` before anyone is released.
  /// Returns false once the barrier was aborted.
  template <typename F>
  bool arrive_and_wait(F&& completion) {
    std::unique_lock lock(mu_);
    if (aborted_) return false;
    const auto gen = generation_;
    if (++arrived_ == n_) {
      try {
        completion();
      } catch (...) {
        aborted_ = true;
        cv_.notify_all();
        throw;
      }
      arrived_ = 0;
      ++generation_;
      cv_.notify_all();
      return true;
    }
    cv_.wait(lock, [&] { return aborted_ || generation_ != gen; });
    return generation_ != gen;
  }

  void abort() {
    std::lock_guard lock(mu_);
    aborted_ = true;
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t n_;
  std::size_t arrived_ = 0;
  std::uint64_t generation_ = 0;
  bool aborted_ = false;
};

struct Session {
  std::uint32_t id = 0;
  std::unique_ptr<TcpStream> stream;
  std::unique_ptr<UdpChannel> udp;
  std::unique_ptr<LossyDatagramChannel> data;
  std::unique_ptr<FramedControlChannel> control;
};

std::uint64_t step_of_round(std::uint64_t wire) { return wire / 2; }

}  // namespace

ServerReport run_server(const ServerOptions& options, TolerancePolicy policy) {
  if (options.workers == 0) throw ConfigError("server needs at least one worker");
  if (options.steps == 0) throw ConfigError("server needs at least one step");
  const auto announcement = make_announcement(options.layout, options.transport.max_payload_bytes);
  const auto buffer_bytes = total_elements(options.layout) * sizeof(float);

  TcpListener listener(options.listen);
  spdlog::info("server listening on {}:{}", options.listen.host, listener.port());
  if (options.on_listening) options.on_listening(listener.port());

  std::vector<Session> sessions(options.workers);
  for (std::uint32_t i = 0; i < options.workers; ++i) {
    auto& s = sessions[i];
    s.id = i;
    s.stream = listener.accept(options.handshake_timeout);
    s.udp = std::make_unique<UdpChannel>(Endpoint{options.listen.host, 0});
    const SessionInfo info{i, s.udp->local_port(), options.transport.max_payload_bytes, options.steps};
    const auto ack = server_handshake(*s.stream, announcement, info, options.handshake_timeout);
    s.udp->connect({s.stream->peer().host, ack.data_port});
    s.data = std::make_unique<LossyDatagramChannel>(
        *s.udp,
        LossInjector(path_schedule(options.loss, i, Direction::ServerToWorker), options.loss_model,
                     announcement.total_chunks),
        step_of_round);
    s.control = std::make_unique<FramedControlChannel>(*s.stream);
    spdlog::info("worker {} joined from {} (data port {} -> {})", i, s.stream->peer().host, info.data_port,
                 ack.data_port);
  }

  // Coordinator-owned state, written only by the barrier completion.
  std::vector<TensorList> gathered(options.workers);
  std::vector<std::uint32_t> received(options.workers, 0);
  Bytes mean_bytes;
  double gather_tolerance = policy.current();
  bool gather_clr = policy.clr_active();
  double tolerance = gather_tolerance;
  bool clr = gather_clr;

  MetricsCollector collector;
  ServerReport report;
  StepBarrier barrier(options.workers);
  std::mutex error_mu;
  std::exception_ptr first_error;

  auto handler = [&](Session& s) {
    try {
      for (std::uint64_t step = 0; step < options.steps; ++step) {
        const auto in = dblp_recv(wire_round(step, Direction::WorkerToServer), gather_tolerance, buffer_bytes,
                                  *s.data, *s.control, options.transport);
        gathered[s.id] = reconstruct(in.buffer, announcement.layout);
        received[s.id] = in.chunks_received;
        RoundMetrics m;
        m.round = step;
        m.worker_id = s.id;
        m.direction = Direction::WorkerToServer;
        m.latency = in.latency;
        m.passes = in.passes;
        m.tolerance = gather_tolerance;
        m.clr_active = gather_clr;
        m.burst_round = options.loss.is_burst(step);
        m.chunks_total = in.chunks_total;
        m.chunks_received = in.chunks_received;
        collector.add(m);

        const bool ok = barrier.arrive_and_wait([&] {
          StepResult r;
          r.round = step;
          const auto mean = reduce_mean(gathered);
          mean_bytes = serialize_tensors(mean);
          tolerance = policy.update(step, l2_norm(mean));
          clr = policy.clr_active();
          r.active_tolerance = tolerance;
          report.steps.push_back(std::move(r));
        });
        if (!ok) return;

        // gather_* still describe this step's gather; tolerance/clr apply to
        // the broadcast and, after the second barrier, to the next gather.
        const StepNotice notice{step, gather_tolerance, gather_clr, received[s.id], tolerance, clr};
        s.stream->send_frame(to_bytes(encode_step_notice(notice)));
        dblp_send(mean_bytes, wire_round(step, Direction::ServerToWorker), *s.data, *s.control, options.transport);

        if (!barrier.arrive_and_wait([&] {
              gather_tolerance = tolerance;
              gather_clr = clr;
            })) {
          return;
        }
      }
    } catch (const std::exception& e) {
      spdlog::error("worker {} session failed: {}", s.id, e.what());
      {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
      barrier.abort();
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(sessions.size());
  for (auto& s : sessions) threads.emplace_back(handler, std::ref(s));
  for (auto& t : threads) t.join();

  if (first_error) {
    try {
      std::rethrow_exception(first_error);
    } catch (const Error& e) {
      throw WorkerLost(e.what());
    }
  }
  report.records = collector.snapshot();
  return report;
}

WorkerReport run_worker(const WorkerOptions& options, const SourceFactory& make_source) {
  std::unique_ptr<TcpStream> stream;
  try {
    stream = TcpStream::connect(options.server, options.handshake_timeout);
  } catch (const Error& e) {
    throw ServerLost(fmt::format("cannot reach {}:{}: {}", options.server.host, options.server.port, e.what()));
  }
  UdpChannel udp({options.bind_host, 0});
  const auto hs = worker_handshake(*stream, options.layout, udp.local_port(), options.handshake_timeout);
  udp.connect({options.server.host, hs.session.data_port});

  const auto id = hs.session.worker_id;
  TransportConfig transport = options.transport;
  transport.max_payload_bytes = hs.session.max_payload_bytes;
  LossyDatagramChannel data(
      udp,
      LossInjector(path_schedule(options.loss, id, Direction::WorkerToServer), options.loss_model,
                   hs.announcement.total_chunks),
      step_of_round);
  FramedControlChannel control(*stream);
  Worker worker(id, make_source(id), options.learning_rate);
  const auto buffer_bytes = total_elements(hs.announcement.layout) * sizeof(float);
  spdlog::info("worker {}: {} chunks per round, {} steps", id, hs.announcement.total_chunks, hs.session.steps);

  WorkerReport report;
  report.worker_id = id;
  try {
    for (std::uint64_t step = 0; step < hs.session.steps; ++step) {
      const auto grad = serialize_tensors(worker.compute_gradient(step));
      const auto out = dblp_send(grad, wire_round(step, Direction::WorkerToServer), data, control, transport);

      // Skip leftovers of the finished round until the step notice.
      StepNotice notice;
      while (true) {
        auto frame = stream->recv_frame(std::chrono::duration_cast<Micros>(transport.recv_timeout));
        if (!frame) throw ServerLost(fmt::format("step {}: no step notice from the server", step));
        if (!frame->empty() && static_cast<char>(frame->front()) == 's') {
          notice = decode_step_notice(to_string(*frame));
          break;
        }
        decode_control(*frame);
      }
      if (notice.step != step) {
        throw ProtocolError(fmt::format("expected notice for step {}, got {}", step, notice.step));
      }

      RoundMetrics up;
      up.round = step;
      up.worker_id = id;
      up.direction = Direction::WorkerToServer;
      up.latency = out.latency;
      up.passes = out.passes;
      up.tolerance = notice.gather_tolerance;
      up.clr_active = notice.gather_clr;
      up.burst_round = options.loss.is_burst(step);
      up.chunks_total = hs.announcement.total_chunks;
      up.chunks_received = notice.chunks_received;
      report.records.push_back(up);

      const auto in = dblp_recv(wire_round(step, Direction::ServerToWorker), notice.tolerance, buffer_bytes, data,
                                control, transport);
      worker.apply_update(reconstruct(in.buffer, hs.announcement.layout));

      RoundMetrics down = up;
      down.direction = Direction::ServerToWorker;
      down.latency = in.latency;
      down.passes = in.passes;
      down.tolerance = notice.tolerance;
      down.clr_active = notice.clr;
      down.chunks_received = in.chunks_received;
      report.records.push_back(down);
    }
  } catch (const ChannelClosed& e) {
    throw ServerLost(e.what());
  } catch (const ControlTimeout& e) {
    throw ServerLost(e.what());
  }
  report.parameters = worker.parameters();
  return report;
}

}  // namespace dblp
