#include "dblp/lossnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "dblp/error.hpp"
#include "dblp/wire.hpp"

namespace dblp {

void LossSchedule::validate() const {
  auto check = [](double rate, std::string_view what) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError(fmt::format("{} {} outside [0, 1)", what, rate));
  };
  check(base_loss, "base loss");
  std::set<std::uint64_t> seen;
  for (const auto& b : bursts) {
    check(b.loss_rate, "burst loss");
    if (!seen.insert(b.round).second) throw ConfigError(fmt::format("burst round {} listed twice", b.round));
  }
}

bool LossSchedule::is_burst(std::uint64_t round) const {
  return std::any_of(bursts.begin(), bursts.end(), [&](const Burst& b) { return b.round == round; });
}

double effective_loss(const LossSchedule& schedule, std::uint64_t round) {
  for (const auto& b : schedule.bursts) {
    if (b.round == round) return b.loss_rate;
  }
  return schedule.base_loss;
}

std::string_view to_string(LossModel model) {
  return model == LossModel::Exact ? "exact" : "bernoulli";
}

LossModel parse_loss_model(std::string_view text) {
  if (text == "exact") return LossModel::Exact;
  if (text == "bernoulli" || text == "iid") return LossModel::Bernoulli;
  throw ConfigError(fmt::format("unknown loss model '{}'", text));
}

// ---------------------------------------------------------------------------

LossInjector::LossInjector(LossSchedule schedule, LossModel model, std::uint32_t chunks_per_round)
    : schedule_(std::move(schedule)), model_(model), chunks_(chunks_per_round) {
  schedule_.validate();
  if (model_ == LossModel::Exact && chunks_ == 0) {
    throw ConfigError("exact loss model needs the number of chunks per round");
  }
}

void LossInjector::enter_round(std::uint64_t round) {
  if (round_ == round) return;
  round_ = round;
  counter_ = 0;
  if (model_ != LossModel::Exact) return;
  // Rank chunks by a per-round hash; the lowest ranks are the ones lost.
  std::vector<std::uint64_t> keys(chunks_);
  for (std::uint32_t seq = 0; seq < chunks_; ++seq) {
    keys[seq] = counter_hash(schedule_.seed, static_cast<std::uint64_t>(Stream::Rank), round, seq);
  }
  std::vector<std::uint32_t> order(chunks_);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return keys[a] != keys[b] ? keys[a] < keys[b] : a < b; });
  rank_.assign(chunks_, 0);
  for (std::uint32_t r = 0; r < chunks_; ++r) rank_[order[r]] = r;
  attempts_.assign(chunks_, 0);
}

bool LossInjector::bernoulli(std::uint64_t round, double rate) {
  const auto bits = counter_hash(schedule_.seed, static_cast<std::uint64_t>(Stream::Drop), round, counter_);
  return unit_interval(bits) >= rate;
}

bool LossInjector::exact(std::uint32_t seq, double rate) {
  const auto attempt = ++attempts_[seq];
  const double expected_missing = static_cast<double>(chunks_) * std::pow(rate, attempt);
  const auto still_missing = static_cast<std::uint32_t>(
      std::ceil(expected_missing - 1e-9 * std::max(1.0, expected_missing)));
  return rank_[seq] >= still_missing;
}

bool LossInjector::deliver(ByteView datagram, std::uint64_t round) {
  enter_round(round);
  const double rate = effective_loss(schedule_, round);
  bool ok = true;
  if (rate > 0.0) {
    std::optional<std::uint32_t> seq;
    if (model_ == LossModel::Exact && datagram.size() >= kChunkHeaderBytes) {
      try {
        const auto s = decode_chunk_view(datagram).header.seq;
        if (s < chunks_) seq = s;
      } catch (const TruncatedPacket&) {
      }
    }
    ok = seq ? exact(*seq, rate) : bernoulli(round, rate);
  }
  ++counter_;
  ok ? ++delivered_ : ++dropped_;
  return ok;
}

// ---------------------------------------------------------------------------

void DelayModel::validate() const {
  if (fixed.count() < 0 || jitter.count() < 0) throw ConfigError("delays must be non-negative");
  for (const auto& s : stragglers) {
    if (s.extra.count() < 0) throw ConfigError("straggler delay must be non-negative");
  }
}

SimTime LinkProfile::serialization(std::size_t bytes) const {
  if (!(bandwidth_bps > 0.0)) throw ConfigError("link bandwidth must be positive");
  return SimTime{static_cast<std::int64_t>(std::ceil(static_cast<double>(bytes) * 8.0 * 1e9 / bandwidth_bps))};
}

DelaySampler::DelaySampler(DelayModel model, std::uint64_t seed)
    : model_(std::move(model)), seed_(seed), fired_(model_.stragglers.size(), false) {
  model_.validate();
}

SimTime DelaySampler::sample(ByteView datagram, std::uint64_t round, std::uint64_t order) {
  SimTime extra = model_.fixed;
  if (model_.jitter.count() > 0) {
    const auto bits = counter_hash(seed_, static_cast<std::uint64_t>(Stream::Jitter), round, order);
    extra += SimTime{static_cast<std::int64_t>(unit_interval(bits) * static_cast<double>(model_.jitter.count()))};
  }
  if (!model_.stragglers.empty() && datagram.size() >= kChunkHeaderBytes) {
    try {
      const auto seq = decode_chunk_view(datagram).header.seq;
      for (std::size_t i = 0; i < model_.stragglers.size(); ++i) {
        const auto& s = model_.stragglers[i];
        if (!fired_[i] && s.round == round && s.seq == seq) {
          fired_[i] = true;
          extra += s.extra;
        }
      }
    } catch (const TruncatedPacket&) {
    }
  }
  return extra;
}

SimulatedPath::SimulatedPath(LinkProfile link, LossInjector injector, DelayModel delay)
    : link_(link), injector_(std::move(injector)), delay_(std::move(delay), injector_.schedule().seed) {}

SimulatedPath::Transmit SimulatedPath::transmit(Bytes datagram, std::uint64_t loss_round, SimTime depart) {
  const auto free_at = depart + link_.serialization(datagram.size());
  const bool delivered = injector_.deliver(datagram, loss_round);
  if (delivered) {
    const auto arrival = free_at + link_.propagation + delay_.sample(datagram, loss_round, order_);
    queue_.push({arrival, order_, std::move(datagram)});
  }
  ++order_;
  return {free_at, delivered};
}

std::optional<SimTime> SimulatedPath::next_arrival() const {
  if (queue_.empty()) return std::nullopt;
  return queue_.top().arrival;
}

Bytes SimulatedPath::pop_arrival() {
  // priority_queue::top is const; the element is discarded right after.
  Bytes out = std::move(const_cast<InFlight&>(queue_.top()).bytes);
  queue_.pop();
  return out;
}

}  // namespace dblp
