#include <bit>
#include <deque>
#include <random>

#include <gtest/gtest.h>

#include "dblp/allreduce.hpp"
#include "dblp/error.hpp"
#include "oracles.hpp"

using namespace dblp;

namespace {

// Replays scripted incoming frames and records outgoing ones.
class ScriptedStream final : public FrameStream {
 public:
  std::deque<Bytes> incoming;
  std::vector<Bytes> sent;

  void send_frame(ByteView body) override { sent.emplace_back(body.begin(), body.end()); }
  std::optional<Bytes> recv_frame(Micros) override {
    if (incoming.empty()) return std::nullopt;
    auto b = std::move(incoming.front());
    incoming.pop_front();
    return b;
  }
};

// Splits a fixture of concatenated frames into bodies.
std::deque<Bytes> frames_of(const std::vector<std::uint8_t>& raw) {
  FrameDecoder d;
  d.feed(oracle::to_bytes(raw));
  std::deque<Bytes> out;
  while (auto b = d.next()) out.push_back(std::move(*b));
  return out;
}

std::vector<std::uint8_t> framed(const std::vector<Bytes>& bodies) {
  std::vector<std::uint8_t> out;
  for (const auto& b : bodies) {
    const auto f = oracle::to_u8(frame(b));
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

const TensorLayout kLayout{{"conv1.weight", 10}, {"fc.bias", 6}};
constexpr std::chrono::milliseconds kTimeout{100};

}  // namespace

TEST(Allreduce, WireRounds) {
  EXPECT_EQ(wire_round(0, Direction::WorkerToServer), 0u);
  EXPECT_EQ(wire_round(0, Direction::ServerToWorker), 1u);
  EXPECT_EQ(wire_round(279, Direction::WorkerToServer), 558u);
}

TEST(Allreduce, PathSchedulesKeepRatesAndSplitSeeds) {
  const LossSchedule base{0.05, {{3, 0.7}}, 9};
  const auto a = path_schedule(base, 0, Direction::WorkerToServer);
  const auto b = path_schedule(base, 0, Direction::ServerToWorker);
  const auto c = path_schedule(base, 1, Direction::WorkerToServer);
  EXPECT_EQ(a.bursts, base.bursts);
  EXPECT_DOUBLE_EQ(a.base_loss, 0.05);
  EXPECT_NE(a.seed, b.seed);
  EXPECT_NE(a.seed, c.seed);
  EXPECT_EQ(a.seed, path_schedule(base, 0, Direction::WorkerToServer).seed);
}

TEST(Allreduce, ReduceMeanExamples) {
  const std::vector<TensorList> three{{{"g", {1, 2}}}, {{"g", {3, 4}}}, {{"g", {5, 6}}}};
  EXPECT_EQ(reduce_mean(three), (TensorList{{"g", {3, 4}}}));
  const std::vector<TensorList> one{{{"g", {1.5f, -2.0f}}, {"h", {7.0f}}}};
  EXPECT_EQ(reduce_mean(one), one.front());
}

TEST(Allreduce, ReduceMeanMatchesOrderedOracle) {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> v(0.0f, 10.0f);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 6;
    std::vector<TensorList> grads(n, TensorList{{"a", std::vector<float>(40)}, {"b", std::vector<float>(3)}});
    for (auto& g : grads)
      for (auto& t : g)
        for (auto& x : t.values) x = v(rng);
    const auto mean = reduce_mean(grads);
    for (std::size_t t = 0; t < 2; ++t) {
      for (std::size_t k = 0; k < grads[0][t].values.size(); ++k) {
        float sum = grads[0][t].values[k];
        for (std::size_t w = 1; w < n; ++w) sum += grads[w][t].values[k];
        const float expected = sum / static_cast<float>(n);
        ASSERT_EQ(std::bit_cast<std::uint32_t>(mean[t].values[k]), std::bit_cast<std::uint32_t>(expected));
      }
    }
  }
}

TEST(Allreduce, ReduceMeanRejectsMismatchedLayouts) {
  const std::vector<TensorList> bad{{{"g", {1, 2}}}, {{"g", {3}}}};
  EXPECT_THROW(reduce_mean(bad), LayoutMismatch);
  EXPECT_THROW(reduce_mean(std::vector<TensorList>{}), LayoutMismatch);
}

TEST(Allreduce, HandshakeArithmetic) {
  EXPECT_EQ(make_announcement(kLayout, 32).total_chunks, 2u);
}

TEST(Allreduce, ServerHandshakeGolden) {
  ScriptedStream stream;
  stream.incoming = frames_of(oracle::read_hex("handshake_worker_to_server.hex"));
  const auto ack = server_handshake(stream, make_announcement(kLayout, 32), {1, 40001, 32, 100}, kTimeout);
  EXPECT_EQ(ack, (HandshakeAck{2, 50002}));
  EXPECT_EQ(framed(stream.sent), oracle::read_hex("handshake_server_to_worker.hex"));
}

TEST(Allreduce, WorkerHandshakeGolden) {
  ScriptedStream stream;
  stream.incoming = frames_of(oracle::read_hex("handshake_server_to_worker.hex"));
  const auto hs = worker_handshake(stream, kLayout, 50002, kTimeout);
  EXPECT_EQ(hs.announcement.total_chunks, 2u);
  EXPECT_EQ(hs.announcement.layout, kLayout);
  EXPECT_EQ(hs.session, (SessionInfo{1, 40001, 32, 100}));
  EXPECT_EQ(framed(stream.sent), oracle::read_hex("handshake_worker_to_server.hex"));
}

TEST(Allreduce, WorkerRejectsDifferentLayoutWithoutAck) {
  ScriptedStream stream;
  stream.incoming = frames_of(oracle::read_hex("handshake_server_to_worker.hex"));
  EXPECT_THROW(worker_handshake(stream, {{"conv1.weight", 10}, {"fc.bias", 7}}, 1, kTimeout), LayoutMismatch);
  EXPECT_TRUE(stream.sent.empty());
}

TEST(Allreduce, ServerRejectsWrongChunkCount) {
  ScriptedStream stream;
  stream.incoming.push_back(to_bytes(encode_ack({3, 1})));
  EXPECT_THROW(server_handshake(stream, make_announcement(kLayout, 32), {0, 1, 32, 1}, kTimeout), LayoutMismatch);
}

TEST(Allreduce, SilentPeersAreLost) {
  ScriptedStream server_side;
  EXPECT_THROW(server_handshake(server_side, make_announcement(kLayout, 32), {0, 1, 32, 1}, kTimeout), WorkerLost);
  ScriptedStream worker_side;
  EXPECT_THROW(worker_handshake(worker_side, kLayout, 1, kTimeout), ServerLost);
}

TEST(Allreduce, SessionAndAckText) {
  const SessionInfo s{2, 41000, 1386, 930};
  EXPECT_EQ(encode_session(s), "worker_id=2\ndata_port=41000\nmax_payload_bytes=1386\nsteps=930\n");
  EXPECT_EQ(decode_session(encode_session(s)), s);
  EXPECT_EQ(encode_ack({1000, 5}), "ack total_chunks=1000 data_port=5\n");
  EXPECT_EQ(decode_ack(encode_ack({1000, 5})), (HandshakeAck{1000, 5}));
  EXPECT_THROW(decode_session("worker_id=x\n"), ProtocolError);
  EXPECT_THROW(decode_ack("nack\n"), ProtocolError);
}

TEST(Allreduce, StepNoticeRoundTrip) {
  const StepNotice n{279, 0.408, false, 591, 0.008, true};
  const auto text = encode_step_notice(n);
  EXPECT_EQ(text, "step=279 gather_tolerance=0.408 gather_clr=0 chunks_received=591 tolerance=0.008 clr=1\n");
  EXPECT_EQ(decode_step_notice(text), n);
  EXPECT_THROW(decode_step_notice("stop"), ProtocolError);
  // Never mistaken for a control frame.
  EXPECT_GT(static_cast<unsigned char>(text.front()), 0x03);
}

TEST(Allreduce, WorkerUpdateIsPlainSgd) {
  class Fixed final : public GradientSource {
   public:
    TensorLayout layout() const override { return {{"w", 2}}; }
    TensorList initial_parameters() const override { return {{"w", {1.0f, -1.0f}}}; }
    TensorList gradient(std::uint64_t, const TensorList&) override { return {{"w", {0.5f, 0.25f}}}; }
  };
  Worker w(0, std::make_unique<Fixed>(), 0.1f);
  w.apply_update({{"w", {0.0f, 0.0f}}});
  EXPECT_EQ(w.parameters(), (TensorList{{"w", {1.0f, -1.0f}}}));
  w.apply_update(w.compute_gradient(0));
  EXPECT_EQ(w.parameters()[0].values[0], 1.0f - 0.1f * 0.5f);
  EXPECT_EQ(w.parameters()[0].values[1], -1.0f - 0.1f * 0.25f);
  EXPECT_THROW(w.apply_update({{"v", {0.0f, 0.0f}}}), LayoutMismatch);
}
