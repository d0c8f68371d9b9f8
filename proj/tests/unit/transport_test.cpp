#include <algorithm>
#include <cstring>
#include <functional>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "dblp/error.hpp"
#include "dblp/transport.hpp"
#include "oracles.hpp"

using namespace dblp;

namespace {

Bytes random_buffer(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::byte>(rng());
  return b;
}

// Lock-step driver: every datagram is delivered (or dropped) instantly and
// the receiver's proactive Stop reaches the sender before its next send.
std::size_t run_lockstep(Sender& s, Receiver& r, const std::function<bool(std::uint32_t seq)>& deliver) {
  while (!s.stopped()) {
    while (auto d = s.next_datagram()) {
      const auto seq = decode_chunk(*d).header.seq;
      if (deliver(seq)) r.on_datagram(*d);
      if (auto stop = r.take_stop()) s.on_control(*stop);
      if (s.stopped()) break;
    }
    if (s.stopped()) break;
    const auto reply = r.on_control(s.probe());
    if (!reply) ADD_FAILURE() << "probe unanswered";
    s.on_control(*reply);
  }
  return s.passes();
}

}  // namespace

TEST(Transport, RequiredReceivedMatchesIntegerOracle) {
  EXPECT_EQ(required_received(1000, 0.4), 600u);
  EXPECT_EQ(required_received(1000, 0.408), 592u);
  EXPECT_EQ(required_received(1000, 0.008), 992u);
  EXPECT_EQ(required_received(1000, 0.0), 1000u);
  for (std::uint32_t total : {1u, 7u, 17u, 100u, 999u, 1000u, 4097u}) {
    for (std::uint64_t permille = 0; permille < 1000; ++permille) {
      ASSERT_EQ(required_received(total, static_cast<double>(permille) / 1000.0),
                oracle::required(total, permille, 1000))
          << total << " " << permille;
    }
  }
  EXPECT_THROW(required_received(10, 1.0), std::invalid_argument);
  EXPECT_THROW(required_received(10, -0.1), std::invalid_argument);
}

TEST(Transport, SixHundredOfThousandSatisfiesFortyPercent) {
  const std::size_t payload = 4;
  const auto data = random_buffer(4000, 1);
  Receiver r(5, 0.4, data.size(), payload);
  ASSERT_EQ(r.bitmap().total(), 1000u);
  const auto chunks = split_into_chunks(data, 5, payload);
  for (std::uint32_t i = 0; i < 599; ++i) r.on_datagram(encode_chunk(chunks[i]));
  EXPECT_FALSE(r.threshold_satisfied());
  EXPECT_FALSE(r.take_stop());
  r.on_datagram(encode_chunk(chunks[599]));
  EXPECT_TRUE(r.threshold_satisfied());
  auto stop = r.take_stop();
  ASSERT_TRUE(stop);
  EXPECT_EQ(*stop, ControlMessage::stop(5));
  EXPECT_FALSE(r.take_stop());
  EXPECT_FALSE(r.on_control(ControlMessage::probe(5)));
  EXPECT_DOUBLE_EQ(r.received_ratio(), 0.6);
}

TEST(Transport, ProbeBeforeThresholdGetsBitmap) {
  const auto data = random_buffer(100, 2);
  Receiver r(1, 0.0, data.size(), 10);
  const auto chunks = split_into_chunks(data, 1, 10);
  r.on_datagram(encode_chunk(chunks[3]));
  const auto reply = r.on_control(ControlMessage::probe(1));
  ASSERT_TRUE(reply);
  EXPECT_EQ(reply->kind, ControlKind::Bitmap);
  EXPECT_EQ(oracle::to_u8(reply->bitmap), (std::vector<std::uint8_t>{0x10, 0x00}));
  EXPECT_EQ(r.bitmaps_sent(), 1u);
  EXPECT_FALSE(r.on_control(ControlMessage::probe(2)));
  EXPECT_FALSE(r.on_control(ControlMessage::stop(1)));
}

TEST(Transport, LosslessIsOnePassAndBitExact) {
  const auto data = random_buffer(12'345, 3);
  Sender s(data, 9, 100);
  Receiver r(9, 0.0, data.size(), 100);
  EXPECT_EQ(run_lockstep(s, r, [](std::uint32_t) { return true; }), 1u);
  EXPECT_EQ(r.buffer(), data);
  EXPECT_DOUBLE_EQ(r.received_ratio(), 1.0);
}

TEST(Transport, StaleRoundChunkIsDropped) {
  const auto data = random_buffer(50, 4);
  Receiver r(4, 0.0, data.size(), 10);
  const auto old_round = split_into_chunks(data, 3, 10);
  const auto before = r.bitmap();
  EXPECT_EQ(r.on_datagram(encode_chunk(old_round[0])), ChunkVerdict::Stale);
  EXPECT_EQ(r.bitmap(), before);
  EXPECT_EQ(r.stale_drops(), 1u);
  EXPECT_EQ(r.buffer(), Bytes(50));
}

TEST(Transport, DuplicatesAreIdempotent) {
  const auto data = random_buffer(50, 5);
  Receiver r(0, 0.5, data.size(), 10);
  const auto chunks = split_into_chunks(data, 0, 10);
  EXPECT_EQ(r.on_datagram(encode_chunk(chunks[1])), ChunkVerdict::Accepted);
  const auto bitmap = r.bitmap();
  const auto buffer = r.buffer();
  EXPECT_EQ(r.on_datagram(encode_chunk(chunks[1])), ChunkVerdict::Duplicate);
  EXPECT_EQ(r.bitmap(), bitmap);
  EXPECT_EQ(r.buffer(), buffer);
  EXPECT_EQ(r.duplicates(), 1u);
}

TEST(Transport, MalformedChunksAreCounted) {
  Receiver r(0, 0.0, 50, 10);
  EXPECT_EQ(r.on_datagram(Bytes(3)), ChunkVerdict::Malformed);
  EXPECT_EQ(r.on_datagram(encode_chunk({{7, 0, 10}, Bytes(10)})), ChunkVerdict::Malformed);  // seq out of range
  EXPECT_EQ(r.on_datagram(encode_chunk({{1, 0, 4}, Bytes(4)})), ChunkVerdict::Malformed);    // wrong length
  EXPECT_EQ(r.malformed(), 3u);
  EXPECT_EQ(r.bitmap().count(), 0u);
}

TEST(Transport, SenderNeverResendsAcknowledgedChunks) {
  const auto data = random_buffer(1000, 6);
  Sender s(data, 2, 10);
  Receiver r(2, 0.0, data.size(), 10);
  std::mt19937_64 rng(8);
  std::vector<std::set<std::uint32_t>> sent_per_pass;
  while (!s.stopped()) {
    const auto acked = s.acknowledged();
    std::set<std::uint32_t> sent;
    while (auto d = s.next_datagram()) {
      const auto seq = decode_chunk(*d).header.seq;
      EXPECT_FALSE(acked.test(seq));
      sent.insert(seq);
      if (rng() % 2) r.on_datagram(*d);
      if (auto stop = r.take_stop()) s.on_control(*stop);
    }
    sent_per_pass.push_back(sent);
    if (s.stopped()) break;
    s.on_control(*r.on_control(s.probe()));
  }
  EXPECT_EQ(sent_per_pass.front().size(), 100u);
  for (std::size_t i = 1; i < sent_per_pass.size(); ++i) {
    EXPECT_TRUE(std::includes(sent_per_pass[i - 1].begin(), sent_per_pass[i - 1].end(), sent_per_pass[i].begin(),
                              sent_per_pass[i].end()));
  }
}

TEST(Transport, LateBitmapMidPassOnlySuppressesReceivedChunks) {
  const auto data = random_buffer(100, 7);
  Sender s(data, 1, 10);
  ASSERT_TRUE(s.next_datagram());
  ChunkBitmap b(10);
  for (std::uint32_t i = 0; i < 9; ++i) b.set(i);
  EXPECT_TRUE(s.on_control(ControlMessage::with_bitmap(1, b.to_bytes())));
  EXPECT_EQ(s.phase(), SenderPhase::Sending);
  EXPECT_EQ(s.passes(), 1u);
  // The pass continues, minus the chunks the bitmap marks received.
  auto d = s.next_datagram();
  ASSERT_TRUE(d);
  EXPECT_EQ(decode_chunk(*d).header.seq, 9u);
  EXPECT_FALSE(s.next_datagram());
  s.probe();
  b.set(9);
  s.on_control(ControlMessage::with_bitmap(1, b.to_bytes()));
  EXPECT_FALSE(s.next_datagram());
}

TEST(Transport, StopMidPassIsEarlyStop) {
  const auto data = random_buffer(100, 8);
  Sender s(data, 1, 10);
  s.next_datagram();
  EXPECT_FALSE(s.on_control(ControlMessage::stop(0)));  // other round
  EXPECT_TRUE(s.on_control(ControlMessage::stop(1)));
  EXPECT_TRUE(s.stopped());
  EXPECT_TRUE(s.early_stop());
  EXPECT_FALSE(s.next_datagram());
}

TEST(Transport, ZeroFillMatchesDropMask) {
  const TensorLayout layout{{"a", 100}, {"b", 57}};
  std::vector<float> values(157);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(i) + 0.5f;
  const auto data = serialize_tensors({{"a", {values.begin(), values.begin() + 100}}, {"b", {values.begin() + 100, values.end()}}});
  Receiver r(0, 0.9, data.size(), 24);
  std::set<std::uint32_t> dropped{0, 3, 7, 26};
  for (const auto& c : split_into_chunks(data, 0, 24)) {
    if (!dropped.count(c.header.seq)) r.on_datagram(encode_chunk(c));
  }
  const auto tensors = reconstruct(r.buffer(), layout);
  std::size_t k = 0;
  for (const auto& t : tensors) {
    for (float v : t.values) {
      const auto seq = static_cast<std::uint32_t>(k * 4 / 24);
      float expected = 0.0f;
      if (!dropped.count(seq)) std::memcpy(&expected, data.data() + k * 4, 4);
      EXPECT_EQ(v, expected) << k;
      ++k;
    }
  }
  EXPECT_EQ(k, 157u);
}

TEST(Transport, ReconstructExamples) {
  const auto buf = serialize_tensors({{"w", {1.0f, 2.0f, 3.0f}}});
  EXPECT_EQ(buf.size(), 12u);
  const auto t = reconstruct(buf, {{"w", 3}});
  EXPECT_EQ(t, (TensorList{{"w", {1.0f, 2.0f, 3.0f}}}));
  EXPECT_EQ(reconstruct(Bytes(12), {{"w", 3}}), (TensorList{{"w", {0.0f, 0.0f, 0.0f}}}));
  EXPECT_THROW(reconstruct(Bytes(8), {{"w", 3}}), LengthMismatch);
}
