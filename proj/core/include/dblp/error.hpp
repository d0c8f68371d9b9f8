#pragma once

#include <stdexcept>
#include <string>

namespace dblp {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed bytes on either channel. Data-channel instances are dropped by
/// the receiver; control-channel instances are connection-fatal.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A datagram shorter than its header or its declared payload length.
class TruncatedPacket : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

/// A control frame whose kind byte is not Probe, Bitmap or Stop.
class UnknownKind : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

/// No Bitmap/Stop (sender) or no chunk/probe (receiver) before the deadline.
class ControlTimeout : public Error {
 public:
  using Error::Error;
};

class ChannelClosed : public Error {
 public:
  using Error::Error;
};

/// Buffer size disagrees with the announced tensor layout.
class LengthMismatch : public Error {
 public:
  using Error::Error;
};

/// Two endpoints (or two gradients) disagree on the tensor layout.
class LayoutMismatch : public Error {
 public:
  using Error::Error;
};

class WorkerLost : public Error {
 public:
  using Error::Error;
};

class ServerLost : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class EmptyRecords : public Error {
 public:
  using Error::Error;
};

}  // namespace dblp
