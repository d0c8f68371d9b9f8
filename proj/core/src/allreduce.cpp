#include "dblp/allreduce.hpp"

#include <charconv>
#include <map>

#include <fmt/format.h>

#include "dblp/error.hpp"

namespace dblp {
namespace {

// Parses `key=value` tokens separated by newlines or spaces.
std::map<std::string, std::string, std::less<>> parse_pairs(std::string_view text, std::string_view what) {
  std::map<std::string, std::string, std::less<>> out;
  while (!text.empty()) {
    const auto end = text.find_first_of(" \n");
    const auto token = text.substr(0, end);
    text = end == std::string_view::npos ? std::string_view{} : text.substr(end + 1);
    if (token.empty()) continue;
    const auto eq = token.find('=');
    if (eq == std::string_view::npos) throw ProtocolError(fmt::format("{}: token '{}' is not key=value", what, token));
    out.emplace(std::string(token.substr(0, eq)), std::string(token.substr(eq + 1)));
  }
  return out;
}

template <typename T>
T number(const std::map<std::string, std::string, std::less<>>& pairs, std::string_view key,
         std::string_view what) {
  auto it = pairs.find(key);
  if (it == pairs.end()) throw ProtocolError(fmt::format("{}: missing {}", what, key));
  T v{};
  const auto& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ProtocolError(fmt::format("{}: bad {} '{}'", what, key, s));
  }
  return v;
}

double real(const std::map<std::string, std::string, std::less<>>& pairs, std::string_view key,
            std::string_view what) {
  auto it = pairs.find(key);
  if (it == pairs.end()) throw ProtocolError(fmt::format("{}: missing {}", what, key));
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used == it->second.size()) return v;
  } catch (const std::exception&) {
  }
  throw ProtocolError(fmt::format("{}: bad {} '{}'", what, key, it->second));
}

bool flag(const std::map<std::string, std::string, std::less<>>& pairs, std::string_view key, std::string_view what) {
  const auto v = number<unsigned>(pairs, key, what);
  if (v > 1) throw ProtocolError(fmt::format("{}: {} must be 0 or 1", what, key));
  return v == 1;
}

template <typename Lost>
Bytes expect_frame(FrameStream& stream, std::chrono::milliseconds timeout, std::string_view what) {
  std::optional<Bytes> frame;
  try {
    frame = stream.recv_frame(std::chrono::duration_cast<Micros>(timeout));
  } catch (const ChannelClosed& e) {
    throw Lost(fmt::format("connection closed while waiting for {}: {}", what, e.what()));
  }
  if (!frame) throw Lost(fmt::format("timed out waiting for {}", what));
  return std::move(*frame);
}

}  // namespace

LossSchedule path_schedule(const LossSchedule& base, std::size_t worker, Direction d) {
  LossSchedule s = base;
  s.seed = counter_hash(base.seed, 0, worker, d == Direction::WorkerToServer ? 0 : 1);
  return s;
}

TensorList reduce_mean(std::span<const TensorList> gradients) {
  if (gradients.empty()) throw LayoutMismatch("reduce_mean needs at least one gradient set");
  const auto layout = layout_of(gradients.front());
  for (std::size_t i = 1; i < gradients.size(); ++i) {
    if (layout_of(gradients[i]) != layout) {
      throw LayoutMismatch(fmt::format("gradient set {} does not match the layout of set 0", i));
    }
  }
  auto out = gradients.front();
  for (std::size_t i = 1; i < gradients.size(); ++i) {
    for (std::size_t t = 0; t < out.size(); ++t) {
      auto& acc = out[t].values;
      const auto& add = gradients[i][t].values;
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += add[k];
    }
  }
  const auto n = static_cast<float>(gradients.size());
  for (auto& t : out) {
    for (auto& v : t.values) v /= n;
  }
  return out;
}

Worker::Worker(std::uint32_t id, std::unique_ptr<GradientSource> source, float learning_rate)
    : id_(id), source_(std::move(source)), lr_(learning_rate), params_(source_->initial_parameters()) {}

TensorList Worker::compute_gradient(std::uint64_t step) { return source_->gradient(step, params_); }

void Worker::apply_update(const TensorList& mean) {
  if (layout_of(mean) != layout_of(params_)) {
    throw LayoutMismatch(fmt::format("worker {}: update does not match the parameter layout", id_));
  }
  for (std::size_t t = 0; t < params_.size(); ++t) {
    auto& w = params_[t].values;
    const auto& g = mean[t].values;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const float step = lr_ * g[k];
      w[k] = w[k] - step;
    }
  }
}

// ---------------------------------------------------------------------------

std::string encode_session(const SessionInfo& s) {
  return fmt::format("worker_id={}\ndata_port={}\nmax_payload_bytes={}\nsteps={}\n", s.worker_id, s.data_port,
                     s.max_payload_bytes, s.steps);
}

SessionInfo decode_session(std::string_view text) {
  const auto pairs = parse_pairs(text, "session");
  SessionInfo s;
  s.worker_id = number<std::uint32_t>(pairs, "worker_id", "session");
  s.data_port = number<std::uint16_t>(pairs, "data_port", "session");
  s.max_payload_bytes = number<std::size_t>(pairs, "max_payload_bytes", "session");
  s.steps = number<std::uint64_t>(pairs, "steps", "session");
  return s;
}

std::string encode_ack(const HandshakeAck& a) {
  return fmt::format("ack total_chunks={} data_port={}\n", a.total_chunks, a.data_port);
}

HandshakeAck decode_ack(std::string_view text) {
  if (!text.starts_with("ack ")) throw ProtocolError("handshake reply is not an ack");
  const auto pairs = parse_pairs(text.substr(4), "ack");
  HandshakeAck a;
  a.total_chunks = number<std::uint32_t>(pairs, "total_chunks", "ack");
  a.data_port = number<std::uint16_t>(pairs, "data_port", "ack");
  return a;
}

HandshakeAck server_handshake(FrameStream& stream, const MetadataAnnouncement& announcement,
                              const SessionInfo& session, std::chrono::milliseconds timeout) {
  try {
    stream.send_frame(to_bytes(encode_metadata(announcement)));
    stream.send_frame(to_bytes(encode_session(session)));
  } catch (const Error& e) {
    throw WorkerLost(fmt::format("worker {}: handshake send failed: {}", session.worker_id, e.what()));
  }
  const auto reply = expect_frame<WorkerLost>(stream, timeout, "the handshake ack");
  const auto ack = decode_ack(to_string(reply));
  if (ack.total_chunks != announcement.total_chunks) {
    throw LayoutMismatch(fmt::format("worker {} acknowledged {} chunks, expected {}", session.worker_id,
                                     ack.total_chunks, announcement.total_chunks));
  }
  return ack;
}

WorkerHandshake worker_handshake(FrameStream& stream, const TensorLayout& expected, std::uint16_t local_data_port,
                                 std::chrono::milliseconds timeout) {
  WorkerHandshake out;
  out.announcement = decode_metadata(to_string(expect_frame<ServerLost>(stream, timeout, "the announcement")));
  out.session = decode_session(to_string(expect_frame<ServerLost>(stream, timeout, "the session frame")));
  if (out.announcement.layout != expected) {
    throw LayoutMismatch("announced tensor layout differs from the local model");
  }
  const auto local = make_announcement(expected, out.session.max_payload_bytes);
  if (local.total_chunks != out.announcement.total_chunks) {
    throw LayoutMismatch(fmt::format("announced {} chunks, local layout gives {}", out.announcement.total_chunks,
                                     local.total_chunks));
  }
  try {
    stream.send_frame(to_bytes(encode_ack({out.announcement.total_chunks, local_data_port})));
  } catch (const Error& e) {
    throw ServerLost(fmt::format("handshake ack failed: {}", e.what()));
  }
  return out;
}

std::string encode_step_notice(const StepNotice& n) {
  return fmt::format("step={} gather_tolerance={} gather_clr={:d} chunks_received={} tolerance={} clr={:d}\n",
                     n.step, n.gather_tolerance, n.gather_clr ? 1 : 0, n.chunks_received, n.tolerance,
                     n.clr ? 1 : 0);
}

StepNotice decode_step_notice(std::string_view text) {
  if (!text.starts_with("step=")) throw ProtocolError("frame is not a step notice");
  const auto pairs = parse_pairs(text, "step notice");
  StepNotice n;
  n.step = number<std::uint64_t>(pairs, "step", "step notice");
  n.gather_tolerance = real(pairs, "gather_tolerance", "step notice");
  n.gather_clr = flag(pairs, "gather_clr", "step notice");
  n.chunks_received = number<std::uint32_t>(pairs, "chunks_received", "step notice");
  n.tolerance = real(pairs, "tolerance", "step notice");
  n.clr = flag(pairs, "clr", "step notice");
  return n;
}

}  // namespace dblp
