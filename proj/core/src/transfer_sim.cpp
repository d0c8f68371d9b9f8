#include "dblp/transfer_sim.hpp"

#include <algorithm>
#include <deque>
#include <utility>

#include <fmt/format.h>

#include "dblp/error.hpp"

namespace dblp {

SimTransferResult simulate_transfer(Sender& sender, Receiver& receiver, SimulatedPath& path,
                                    SimTime start, std::uint64_t loss_round,
                                    const TransportConfig& config) {
  using Queue = std::deque<std::pair<SimTime, ControlMessage>>;
  constexpr SimTime kNever = SimTime::max();
  const auto latency = path.link().control_latency;
  const auto probe_timeout = std::chrono::duration_cast<SimTime>(config.probe_timeout);

  Queue to_receiver;
  Queue to_sender;
  SimTime send_clock = start;
  SimTime probe_deadline = kNever;
  int unanswered = 0;

  SimTransferResult result;
  result.start = start;
  const auto stale_before = receiver.stale_drops();

  auto send_to_sender = [&](SimTime at, ControlMessage msg) {
    if (msg.kind == ControlKind::Stop) result.receiver_done = at;
    to_sender.emplace_back(at + latency, std::move(msg));
  };

  while (!(sender.stopped() && receiver.stopped())) {
    const auto next_data = path.next_arrival();
    const SimTime t_data = (!receiver.stopped() && next_data) ? *next_data : kNever;
    const SimTime t_to_receiver = to_receiver.empty() ? kNever : to_receiver.front().first;
    const SimTime t_to_sender = to_sender.empty() ? kNever : to_sender.front().first;
    SimTime t_action = kNever;
    if (!sender.stopped()) t_action = sender.phase() == SenderPhase::Probing ? probe_deadline : send_clock;

    const SimTime now = std::min({t_data, t_to_receiver, t_to_sender, t_action});
    if (now == kNever) {
      throw ControlTimeout(fmt::format("round {}: simulated transfer stalled", sender.round()));
    }

    if (t_data == now) {
      const auto datagram = path.pop_arrival();
      receiver.on_datagram(datagram);
      if (auto stop = receiver.take_stop()) send_to_sender(std::max(now, start), std::move(*stop));
      continue;
    }
    if (t_to_receiver == now) {
      auto msg = std::move(to_receiver.front().second);
      to_receiver.pop_front();
      if (auto reply = receiver.on_control(msg)) send_to_sender(now, std::move(*reply));
      continue;
    }
    if (t_to_sender == now) {
      auto msg = std::move(to_sender.front().second);
      to_sender.pop_front();
      sender.on_control(msg);
      if (sender.stopped()) {
        result.sender_done = now;
      } else if (sender.phase() == SenderPhase::Ready) {
        send_clock = std::max(send_clock, now);
        probe_deadline = kNever;
        unanswered = 0;
      }
      continue;
    }

    // Sender action at `now`.
    if (sender.phase() == SenderPhase::Probing) {
      if (++unanswered > config.max_probe_retries) {
        throw ControlTimeout(fmt::format("round {}: no reply to {} probes", sender.round(), unanswered));
      }
      to_receiver.emplace_back(now + latency, ControlMessage::probe(sender.round()));
      probe_deadline = now + probe_timeout;
      continue;
    }
    if (auto datagram = sender.next_datagram()) {
      send_clock = path.transmit(std::move(*datagram), loss_round, send_clock).free_at;
    } else {
      to_receiver.emplace_back(send_clock + latency, sender.probe());
      probe_deadline = send_clock + probe_timeout;
    }
  }

  result.latency = result.sender_done - start;
  result.passes = sender.passes();
  result.early_stop = sender.early_stop();
  result.datagrams = sender.datagrams_sent();
  result.chunks_received = receiver.bitmap().count();
  result.chunks_total = receiver.bitmap().total();
  result.stale_drops = receiver.stale_drops() - stale_before;
  return result;
}

}  // namespace dblp
