#pragma once

// Loss injection and the virtual-time datagram path.
//
// All randomness comes from counter_hash(), a stateless SplitMix64 cascade:
//
//   h = mix(mix(mix(mix(seed) ^ stream) ^ round) ^ counter)
//   mix(z): z += 0x9E3779B97F4A7C15;
//           z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//           z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
//           return z ^ (z >> 31);
//
// and a uniform double in [0, 1) is (h >> 11) * 2^-53. Any implementation
// of these two lines reproduces every drop decision bit for bit.

#include <chrono>
#include <cstdint>
#include <optional>
#include <queue>
#include <string_view>
#include <vector>

#include "dblp/tensor.hpp"

namespace dblp {

using SimTime = std::chrono::nanoseconds;

constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

constexpr std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t stream, std::uint64_t round,
                                     std::uint64_t counter) {
  auto h = splitmix64_mix(seed);
  h = splitmix64_mix(h ^ stream);
  h = splitmix64_mix(h ^ round);
  return splitmix64_mix(h ^ counter);
}

constexpr double unit_interval(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

/// Random streams drawn from counter_hash.
enum class Stream : std::uint64_t {
  Drop = 1,
  Rank = 2,
  Jitter = 3,
  Gradient = 4,
  Dataset = 5,
  Batch = 6,
  Init = 7,
};

struct Burst {
  std::uint64_t round = 0;
  double loss_rate = 0.0;

  bool operator==(const Burst&) const = default;
};

struct LossSchedule {
  double base_loss = 0.0;
  std::vector<Burst> bursts;
  std::uint64_t seed = 0;

  /// Throws ConfigError for rates outside [0, 1) or repeated burst rounds.
  void validate() const;
  bool is_burst(std::uint64_t round) const;
};

/// The burst rate for `round` if one is scheduled, else base_loss.
double effective_loss(const LossSchedule& schedule, std::uint64_t round);

enum class LossModel {
  /// Each datagram dropped independently with the round's loss rate.
  Bernoulli,
  /// Stratified: with n chunks per round and rate L, exactly ceil(n * L^t)
  /// chunks are still missing after t full passes.
  Exact,
};

std::string_view to_string(LossModel model);
LossModel parse_loss_model(std::string_view text);

/// Drop decisions for one direction of a link.
class LossInjector {
 public:
  /// `chunks_per_round` is required by the Exact model.
  explicit LossInjector(LossSchedule schedule, LossModel model = LossModel::Bernoulli,
                        std::uint32_t chunks_per_round = 0);

  /// Decides the fate of one datagram sent during `round`. Deterministic in
  /// (seed, round, position of the datagram within the round).
  bool deliver(ByteView datagram, std::uint64_t round);

  const LossSchedule& schedule() const { return schedule_; }
  LossModel model() const { return model_; }
  std::uint64_t dropped() const { return dropped_; }
  std::uint64_t delivered() const { return delivered_; }

 private:
  bool bernoulli(std::uint64_t round, double rate);
  bool exact(std::uint32_t seq, double rate);
  void enter_round(std::uint64_t round);

  LossSchedule schedule_;
  LossModel model_;
  std::uint32_t chunks_;
  std::optional<std::uint64_t> round_;
  std::uint64_t counter_ = 0;
  std::vector<std::uint32_t> rank_;
  std::vector<std::uint32_t> attempts_;
  std::uint64_t dropped_ = 0;
  std::uint64_t delivered_ = 0;
};

/// Holds back chunk `seq` of `round` by `extra` on its first transmission.
struct Straggler {
  std::uint64_t round = 0;
  std::uint32_t seq = 0;
  SimTime extra{0};
};

struct DelayModel {
  SimTime fixed{0};
  SimTime jitter{0};  // uniform in [0, jitter]
  std::vector<Straggler> stragglers;

  void validate() const;
};

/// Per-datagram extra delay drawn from a DelayModel. Each straggler entry
/// fires at most once.
class DelaySampler {
 public:
  DelaySampler(DelayModel model, std::uint64_t seed);

  SimTime sample(ByteView datagram, std::uint64_t round, std::uint64_t order);

 private:
  DelayModel model_;
  std::uint64_t seed_;
  std::vector<bool> fired_;
};

struct LinkProfile {
  double bandwidth_bps = 1e9;
  SimTime propagation{50'000};
  SimTime control_latency{50'000};

  /// Time to clock `bytes` onto the wire, rounded up to whole nanoseconds.
  SimTime serialization(std::size_t bytes) const;
};

/// One direction of a simulated link in virtual time. Datagrams left in
/// flight when a transfer ends stay queued and surface in later transfers,
/// which is how cross-round stragglers reach a receiver.
class SimulatedPath {
 public:
  SimulatedPath(LinkProfile link, LossInjector injector, DelayModel delay = {});

  struct Transmit {
    SimTime free_at;  // sender interface idle again
    bool delivered;
  };

  Transmit transmit(Bytes datagram, std::uint64_t loss_round, SimTime depart);

  std::optional<SimTime> next_arrival() const;
  /// Removes the earliest in-flight datagram. Precondition: next_arrival().
  Bytes pop_arrival();
  std::size_t in_flight() const { return queue_.size(); }

  const LinkProfile& link() const { return link_; }
  const LossInjector& injector() const { return injector_; }

 private:
  struct InFlight {
    SimTime arrival;
    std::uint64_t order;
    Bytes bytes;
  };
  struct Later {
    bool operator()(const InFlight& a, const InFlight& b) const {
      return a.arrival != b.arrival ? a.arrival > b.arrival : a.order > b.order;
    }
  };

  LinkProfile link_;
  LossInjector injector_;
  DelaySampler delay_;
  std::priority_queue<InFlight, std::vector<InFlight>, Later> queue_;
  std::uint64_t order_ = 0;
};

}  // namespace dblp
