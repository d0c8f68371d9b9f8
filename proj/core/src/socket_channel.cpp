#include "dblp/socket_channel.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <thread>
#include <unistd.h>

#include <fmt/format.h>

#include "dblp/error.hpp"

namespace dblp {
namespace {

[[noreturn]] void throw_errno(std::string_view what) {
  throw ChannelClosed(fmt::format("{}: {}", what, std::strerror(errno)));
}

sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (ep.host.empty() || ep.host == "*" || ep.host == "0.0.0.0") {
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    return addr;
  }
  if (inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo* res = nullptr;
  if (getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw ConfigError(fmt::format("cannot resolve host '{}'", ep.host));
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

std::uint16_t bound_port(int fd) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  if (getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) throw_errno("getsockname");
  return ntohs(addr.sin_port);
}

// Returns false on timeout.
bool wait_readable(int fd, Micros timeout) {
  pollfd pfd{fd, POLLIN, 0};
  const int ms = timeout.count() <= 0 ? 0 : static_cast<int>((timeout.count() + 999) / 1000);
  while (true) {
    const int rc = ::poll(&pfd, 1, ms);
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw_errno("poll");
  }
}

}  // namespace

FileDescriptor::~FileDescriptor() { reset(); }

FileDescriptor& FileDescriptor::operator=(FileDescriptor&& other) noexcept {
  if (this != &other) {
    reset();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

void FileDescriptor::reset() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw ConfigError(fmt::format("expected host:port, got '{}'", text));
  Endpoint ep;
  ep.host = text.substr(0, colon);
  const auto port_text = text.substr(colon + 1);
  try {
    const auto port = std::stoul(port_text);
    if (port > 0xFFFF) throw std::out_of_range("port");
    ep.port = static_cast<std::uint16_t>(port);
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("bad port in '{}'", text));
  }
  return ep;
}

// ---------------------------------------------------------------------------

UdpChannel::UdpChannel(const Endpoint& local) : fd_(::socket(AF_INET, SOCK_DGRAM, 0)), scratch_(65536) {
  if (!fd_.valid()) throw_errno("socket(udp)");
  const int buf = 8 << 20;
  ::setsockopt(fd_.get(), SOL_SOCKET, SO_RCVBUF, &buf, sizeof(buf));
  ::setsockopt(fd_.get(), SOL_SOCKET, SO_SNDBUF, &buf, sizeof(buf));
  const auto addr = resolve(local);
  if (::bind(fd_.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) throw_errno("bind(udp)");
  port_ = bound_port(fd_.get());
}

void UdpChannel::connect(const Endpoint& peer) {
  const auto addr = resolve(peer);
  if (::connect(fd_.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw_errno("connect(udp)");
  }
  connected_ = true;
}

bool UdpChannel::send(ByteView datagram, std::uint64_t /*current_round*/) {
  if (!connected_) throw ChannelClosed("udp channel has no peer");
  while (true) {
    const auto n = ::send(fd_.get(), datagram.data(), datagram.size(), 0);
    if (n >= 0) return true;
    if (errno == EINTR) continue;
    // A full socket buffer or an ICMP-refused peer is ordinary datagram loss.
    if (errno == ENOBUFS || errno == EAGAIN || errno == ECONNREFUSED) return true;
    throw_errno("send(udp)");
  }
}

std::optional<Bytes> UdpChannel::recv(Micros timeout) {
  while (true) {
    if (!wait_readable(fd_.get(), timeout)) return std::nullopt;
    const auto n = ::recv(fd_.get(), scratch_.data(), scratch_.size(), MSG_DONTWAIT);
    if (n >= 0) return Bytes(scratch_.begin(), scratch_.begin() + n);
    if (errno == EINTR || errno == EAGAIN || errno == ECONNREFUSED) {
      if (timeout.count() == 0) return std::nullopt;
      continue;
    }
    throw_errno("recv(udp)");
  }
}

// ---------------------------------------------------------------------------

TcpStream::TcpStream(FileDescriptor fd) : fd_(std::move(fd)) {
  const int one = 1;
  ::setsockopt(fd_.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

std::unique_ptr<TcpStream> TcpStream::connect(const Endpoint& peer, std::chrono::milliseconds timeout) {
  const auto addr = resolve(peer);
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    FileDescriptor fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!fd.valid()) throw_errno("socket(tcp)");
    if (::connect(fd.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) {
      return std::make_unique<TcpStream>(std::move(fd));
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      throw ChannelClosed(fmt::format("cannot connect to {}:{}: {}", peer.host, peer.port, std::strerror(errno)));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

void TcpStream::send_frame(ByteView body) {
  const auto bytes = frame(body);
  std::lock_guard lock(write_mu_);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = ::send(fd_.get(), bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("send(tcp)");
    }
    off += static_cast<std::size_t>(n);
  }
}

std::optional<Bytes> TcpStream::recv_frame(Micros timeout) {
  if (auto ready = decoder_.next()) return ready;
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::byte buf[16384];
  while (true) {
    const auto left = std::chrono::duration_cast<Micros>(deadline - std::chrono::steady_clock::now());
    if (!wait_readable(fd_.get(), std::max(left, Micros{0}))) return std::nullopt;
    const auto n = ::recv(fd_.get(), buf, sizeof(buf), MSG_DONTWAIT);
    if (n == 0) throw ChannelClosed("control connection closed by peer");
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw_errno("recv(tcp)");
    }
    decoder_.feed(ByteView(buf, static_cast<std::size_t>(n)));
    if (auto ready = decoder_.next()) return ready;
  }
}

Endpoint TcpStream::peer() const {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  if (getpeername(fd_.get(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) throw_errno("getpeername");
  char host[INET_ADDRSTRLEN] = {};
  inet_ntop(AF_INET, &addr.sin_addr, host, sizeof(host));
  return {host, ntohs(addr.sin_port)};
}

TcpListener::TcpListener(const Endpoint& local) : fd_(::socket(AF_INET, SOCK_STREAM, 0)) {
  if (!fd_.valid()) throw_errno("socket(tcp)");
  const int one = 1;
  ::setsockopt(fd_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  const auto addr = resolve(local);
  if (::bind(fd_.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) throw_errno("bind(tcp)");
  if (::listen(fd_.get(), 16) != 0) throw_errno("listen");
  port_ = bound_port(fd_.get());
}

std::unique_ptr<TcpStream> TcpListener::accept(std::chrono::milliseconds timeout) {
  if (!wait_readable(fd_.get(), std::chrono::duration_cast<Micros>(timeout))) {
    throw ControlTimeout("no worker connected before the accept timeout");
  }
  FileDescriptor fd(::accept(fd_.get(), nullptr, nullptr));
  if (!fd.valid()) throw_errno("accept");
  return std::make_unique<TcpStream>(std::move(fd));
}

LossyDatagramChannel::LossyDatagramChannel(DatagramChannel& inner, LossInjector injector,
                                           std::function<std::uint64_t(std::uint64_t)> loss_round)
    : inner_(inner), injector_(std::move(injector)), loss_round_(std::move(loss_round)) {}

bool LossyDatagramChannel::send(ByteView datagram, std::uint64_t current_round) {
  const auto round = loss_round_ ? loss_round_(current_round) : current_round;
  if (!injector_.deliver(datagram, round)) return false;
  return inner_.send(datagram, current_round);
}

}  // namespace dblp
