#include "dblp/inproc_channel.hpp"

#include <condition_variable>
#include <deque>
#include <mutex>
#include <queue>

#include "dblp/error.hpp"

namespace dblp {
namespace detail {

using Clock = std::chrono::steady_clock;

struct DatagramQueue {
  struct Item {
    Clock::time_point due;
    std::uint64_t order;
    Bytes bytes;
  };
  struct Later {
    bool operator()(const Item& a, const Item& b) const {
      return a.due != b.due ? a.due > b.due : a.order > b.order;
    }
  };

  std::mutex mu;
  std::condition_variable cv;
  std::priority_queue<Item, std::vector<Item>, Later> items;
  std::uint64_t order = 0;
  bool closed = false;

  void push(Bytes bytes, Clock::duration delay) {
    {
      std::lock_guard lock(mu);
      if (closed) throw ChannelClosed("datagram channel closed");
      items.push({Clock::now() + delay, order++, std::move(bytes)});
    }
    cv.notify_all();
  }

  std::optional<Bytes> pop(Micros timeout) {
    const auto deadline = Clock::now() + timeout;
    std::unique_lock lock(mu);
    while (true) {
      const auto now = Clock::now();
      if (!items.empty() && items.top().due <= now) {
        Bytes out = std::move(const_cast<Item&>(items.top()).bytes);
        items.pop();
        return out;
      }
      if (closed && items.empty()) throw ChannelClosed("datagram channel closed by peer");
      if (now >= deadline) return std::nullopt;
      auto wake = deadline;
      if (!items.empty()) wake = std::min(wake, items.top().due);
      cv.wait_until(lock, wake);
    }
  }

  void close() {
    {
      std::lock_guard lock(mu);
      closed = true;
    }
    cv.notify_all();
  }
};

struct FrameQueue {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Bytes> frames;
  bool closed = false;

  void push(Bytes body) {
    {
      std::lock_guard lock(mu);
      if (closed) throw ChannelClosed("control stream closed");
      frames.push_back(std::move(body));
    }
    cv.notify_all();
  }

  std::optional<Bytes> pop(Micros timeout) {
    std::unique_lock lock(mu);
    if (!cv.wait_for(lock, timeout, [&] { return !frames.empty() || closed; })) return std::nullopt;
    if (frames.empty()) throw ChannelClosed("control stream closed by peer");
    Bytes out = std::move(frames.front());
    frames.pop_front();
    return out;
  }

  void close() {
    {
      std::lock_guard lock(mu);
      closed = true;
    }
    cv.notify_all();
  }
};

}  // namespace detail

class InprocEndpoint::Data final : public DatagramChannel {
 public:
  Data(std::shared_ptr<detail::DatagramQueue> inbox, std::shared_ptr<detail::DatagramQueue> outbox,
       LossInjector injector, DelayModel delay)
      : inbox_(std::move(inbox)),
        outbox_(std::move(outbox)),
        injector_(std::move(injector)),
        delay_(std::move(delay), injector_.schedule().seed) {}

  bool send(ByteView datagram, std::uint64_t current_round) override {
    std::lock_guard lock(mu_);
    const auto order = sent_++;
    if (!injector_.deliver(datagram, current_round)) return false;
    const auto delay = delay_.sample(datagram, current_round, order);
    outbox_->push(Bytes(datagram.begin(), datagram.end()), delay);
    return true;
  }

  std::optional<Bytes> recv(Micros timeout) override { return inbox_->pop(timeout); }

  void close() { outbox_->close(); }

 private:
  std::shared_ptr<detail::DatagramQueue> inbox_;
  std::shared_ptr<detail::DatagramQueue> outbox_;
  std::mutex mu_;
  LossInjector injector_;
  DelaySampler delay_;
  std::uint64_t sent_ = 0;
};

class InprocEndpoint::Frames final : public FrameStream {
 public:
  Frames(std::shared_ptr<detail::FrameQueue> in, std::shared_ptr<detail::FrameQueue> out)
      : in_(std::move(in)), out_(std::move(out)) {}

  void send_frame(ByteView body) override { out_->push(Bytes(body.begin(), body.end())); }
  std::optional<Bytes> recv_frame(Micros timeout) override { return in_->pop(timeout); }
  void close() { out_->close(); }

 private:
  std::shared_ptr<detail::FrameQueue> in_;
  std::shared_ptr<detail::FrameQueue> out_;
};

InprocEndpoint::InprocEndpoint(std::shared_ptr<detail::DatagramQueue> inbox,
                               std::shared_ptr<detail::DatagramQueue> outbox,
                               std::shared_ptr<detail::FrameQueue> frames_in,
                               std::shared_ptr<detail::FrameQueue> frames_out, LossInjector injector,
                               DelayModel delay)
    : data_(std::make_unique<Data>(std::move(inbox), std::move(outbox), std::move(injector), std::move(delay))),
      frames_(std::make_unique<Frames>(std::move(frames_in), std::move(frames_out))),
      control_(*frames_) {}

DatagramChannel& InprocEndpoint::data() { return *data_; }
FrameStream& InprocEndpoint::frames() { return *frames_; }

InprocEndpoint::~InprocEndpoint() { close(); }

void InprocEndpoint::close() {
  data_->close();
  frames_->close();
}

std::pair<std::unique_ptr<InprocEndpoint>, std::unique_ptr<InprocEndpoint>> make_inproc_link(
    const InprocLinkOptions& options) {
  auto a_to_b = std::make_shared<detail::DatagramQueue>();
  auto b_to_a = std::make_shared<detail::DatagramQueue>();
  auto frames_ab = std::make_shared<detail::FrameQueue>();
  auto frames_ba = std::make_shared<detail::FrameQueue>();

  auto reverse = options.schedule;
  reverse.seed = ~reverse.seed;

  auto a = std::make_unique<InprocEndpoint>(b_to_a, a_to_b, frames_ba, frames_ab,
                                            LossInjector(options.schedule, options.model, options.chunks_per_round),
                                            options.delay);
  auto b = std::make_unique<InprocEndpoint>(a_to_b, b_to_a, frames_ab, frames_ba,
                                            LossInjector(reverse, options.model, options.chunks_per_round),
                                            options.delay);
  return {std::move(a), std::move(b)};
}

}  // namespace dblp
