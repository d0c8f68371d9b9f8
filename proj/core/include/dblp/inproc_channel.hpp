#pragma once

#include <memory>
#include <utility>

#include "dblp/channel.hpp"
#include "dblp/lossnet.hpp"

namespace dblp {

namespace detail {
struct DatagramQueue;
struct FrameQueue;
}  // namespace detail

/// One side of an in-process link for threaded use: a lossy datagram
/// channel plus a reliable framed control stream. Loss is injected on send
/// by this side's LossInjector; delays are applied in wall-clock time.
/// Destroying an endpoint closes both directions for its peer.
class InprocEndpoint {
 public:
  InprocEndpoint(std::shared_ptr<detail::DatagramQueue> inbox, std::shared_ptr<detail::DatagramQueue> outbox,
                 std::shared_ptr<detail::FrameQueue> frames_in, std::shared_ptr<detail::FrameQueue> frames_out,
                 LossInjector injector, DelayModel delay);
  ~InprocEndpoint();

  InprocEndpoint(const InprocEndpoint&) = delete;
  InprocEndpoint& operator=(const InprocEndpoint&) = delete;

  DatagramChannel& data();
  FrameStream& frames();
  ControlChannel& control() { return control_; }

  /// Closes both outgoing directions; the peer drains then sees ChannelClosed.
  void close();

 private:
  class Data;
  class Frames;
  std::unique_ptr<Data> data_;
  std::unique_ptr<Frames> frames_;
  FramedControlChannel control_;
};

struct InprocLinkOptions {
  LossSchedule schedule;
  LossModel model = LossModel::Bernoulli;
  std::uint32_t chunks_per_round = 0;
  DelayModel delay;
};

/// Two connected endpoints. Each direction gets its own injector; the second
/// endpoint's stream is decorrelated by flipping the seed.
std::pair<std::unique_ptr<InprocEndpoint>, std::unique_ptr<InprocEndpoint>> make_inproc_link(
    const InprocLinkOptions& options = {});

}  // namespace dblp
