#pragma once

// POSIX socket backends: UDP for the data channel, TCP with length-prefixed
// frames for the control channel. No artificial loss is ever injected here.

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

#include "dblp/channel.hpp"
#include "dblp/lossnet.hpp"

namespace dblp {

/// Owning file descriptor.
class FileDescriptor {
 public:
  FileDescriptor() = default;
  explicit FileDescriptor(int fd) : fd_(fd) {}
  ~FileDescriptor();

  FileDescriptor(FileDescriptor&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  FileDescriptor& operator=(FileDescriptor&& other) noexcept;
  FileDescriptor(const FileDescriptor&) = delete;
  FileDescriptor& operator=(const FileDescriptor&) = delete;

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset();

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

/// Parses `host:port`. Throws ConfigError.
Endpoint parse_endpoint(const std::string& text);

class UdpChannel final : public DatagramChannel {
 public:
  /// Binds to `local` (port 0 picks an ephemeral port).
  explicit UdpChannel(const Endpoint& local);

  std::uint16_t local_port() const { return port_; }

  /// Restricts traffic to `peer`; required before send().
  void connect(const Endpoint& peer);

  bool send(ByteView datagram, std::uint64_t current_round) override;
  std::optional<Bytes> recv(Micros timeout) override;

 private:
  FileDescriptor fd_;
  std::uint16_t port_ = 0;
  bool connected_ = false;
  Bytes scratch_;
};

/// Framed TCP connection. send_frame is safe to call from several threads.
class TcpStream final : public FrameStream {
 public:
  explicit TcpStream(FileDescriptor fd);

  /// Retries refused connections until `timeout` expires.
  static std::unique_ptr<TcpStream> connect(const Endpoint& peer, std::chrono::milliseconds timeout);

  void send_frame(ByteView body) override;
  std::optional<Bytes> recv_frame(Micros timeout) override;

  Endpoint peer() const;

 private:
  FileDescriptor fd_;
  std::mutex write_mu_;
  FrameDecoder decoder_;
};

class TcpListener {
 public:
  explicit TcpListener(const Endpoint& local);

  std::uint16_t port() const { return port_; }

  /// Throws ControlTimeout if nobody connects within `timeout`.
  std::unique_ptr<TcpStream> accept(std::chrono::milliseconds timeout);

 private:
  FileDescriptor fd_;
  std::uint16_t port_ = 0;
};

/// Injects loss on send in front of another datagram channel, for socket
/// runs that emulate a lossy network. `loss_round` maps the wire round given
/// to send() onto the loss schedule's round.
class LossyDatagramChannel final : public DatagramChannel {
 public:
  LossyDatagramChannel(DatagramChannel& inner, LossInjector injector,
                       std::function<std::uint64_t(std::uint64_t)> loss_round = {});

  bool send(ByteView datagram, std::uint64_t current_round) override;
  std::optional<Bytes> recv(Micros timeout) override { return inner_.recv(timeout); }

  const LossInjector& injector() const { return injector_; }

 private:
  DatagramChannel& inner_;
  LossInjector injector_;
  std::function<std::uint64_t(std::uint64_t)> loss_round_;
};

}  // namespace dblp
