#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "dblp/error.hpp"
#include "dblp/lossnet.hpp"
#include "dblp/wire.hpp"
#include "oracles.hpp"

using namespace dblp;

TEST(Lossnet, PrngMatchesReferenceVectors) {
  auto in = oracle::open_fixture("prng_vectors.txt");
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream words(line);
    std::uint64_t seed, stream, round, counter, hash;
    double unit;
    words >> seed >> stream >> round >> counter >> hash >> unit;
    EXPECT_EQ(counter_hash(seed, stream, round, counter), hash) << line;
    EXPECT_EQ(unit_interval(hash), unit) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 5);
  EXPECT_EQ(splitmix64_mix(0), 16294208416658607535ull);
}

TEST(Lossnet, EffectiveLossExamples) {
  LossSchedule s{0.05, {}, 0};
  EXPECT_DOUBLE_EQ(effective_loss(s, 10), 0.05);
  s.bursts.push_back({10, 0.7});
  EXPECT_DOUBLE_EQ(effective_loss(s, 10), 0.7);
  EXPECT_DOUBLE_EQ(effective_loss(s, 11), 0.05);
  EXPECT_TRUE(s.is_burst(10));
  EXPECT_FALSE(s.is_burst(11));
}

TEST(Lossnet, ScheduleValidation) {
  EXPECT_THROW((LossSchedule{1.0, {}, 0}.validate()), ConfigError);
  EXPECT_THROW((LossSchedule{-0.1, {}, 0}.validate()), ConfigError);
  EXPECT_THROW((LossSchedule{0.0, {{1, 0.5}, {1, 0.6}}, 0}.validate()), ConfigError);
  EXPECT_THROW((LossSchedule{0.0, {{1, 1.5}}, 0}.validate()), ConfigError);
  EXPECT_THROW(LossInjector({}, LossModel::Exact, 0), ConfigError);
  EXPECT_EQ(parse_loss_model("exact"), LossModel::Exact);
  EXPECT_EQ(parse_loss_model("bernoulli"), LossModel::Bernoulli);
  EXPECT_THROW(parse_loss_model("gilbert"), ConfigError);
}

TEST(Lossnet, NoLossDeliversEverything) {
  LossInjector inj({}, LossModel::Bernoulli);
  const Bytes d(20);
  for (std::uint64_t r = 0; r < 10; ++r)
    for (int i = 0; i < 100; ++i) ASSERT_TRUE(inj.deliver(d, r));
  EXPECT_EQ(inj.dropped(), 0u);
}

TEST(Lossnet, BurstGoldenDeliveredCount) {
  LossInjector inj({0.0, {{50, 0.7}}, 42}, LossModel::Bernoulli);
  const Bytes d(20);
  std::uint64_t delivered = 0;
  for (int i = 0; i < 10'000; ++i) delivered += inj.deliver(d, 50);

  auto in = oracle::open_fixture("bernoulli_round50.txt");
  std::string line, key;
  std::uint64_t golden = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream(line) >> key >> golden;
  }
  EXPECT_EQ(delivered, golden);
  EXPECT_NEAR(static_cast<double>(delivered), 3000.0, 200.0);
}

TEST(Lossnet, DecisionsAreDeterministic) {
  for (auto model : {LossModel::Bernoulli, LossModel::Exact}) {
    LossInjector a({0.1, {{3, 0.7}}, 99}, model, 64);
    LossInjector b({0.1, {{3, 0.7}}, 99}, model, 64);
    for (std::uint64_t r = 0; r < 6; ++r) {
      for (std::uint32_t i = 0; i < 200; ++i) {
        const auto d = encode_chunk({{i % 64, r, 0}, {}});
        ASSERT_EQ(a.deliver(d, r), b.deliver(d, r));
      }
    }
  }
}

TEST(Lossnet, ExactModelLeavesGeometricRemainder) {
  const std::uint32_t n = 1000;
  LossInjector inj({0.0, {{7, 0.7}}, 5}, LossModel::Exact, n);
  std::vector<bool> received(n, false);
  double expected = n;
  for (int pass = 1; pass <= 14; ++pass) {
    for (std::uint32_t seq = 0; seq < n; ++seq) {
      if (received[seq]) continue;
      if (inj.deliver(encode_chunk({{seq, 7, 0}, {}}), 7)) received[seq] = true;
    }
    expected *= 0.7;
    const auto missing = static_cast<std::uint32_t>(std::count(received.begin(), received.end(), false));
    EXPECT_EQ(missing, static_cast<std::uint32_t>(std::ceil(expected - 1e-9))) << pass;
  }
}

TEST(Lossnet, LossAppliesToRetransmissions) {
  LossInjector inj({0.0, {{1, 0.5}}, 8}, LossModel::Bernoulli);
  const Bytes d(30);
  std::uint64_t delivered = 0;
  for (int i = 0; i < 20'000; ++i) delivered += inj.deliver(d, 1);
  EXPECT_NEAR(static_cast<double>(delivered) / 20'000.0, 0.5, 0.02);
}

TEST(Lossnet, DelaySamplerStragglerFiresOnce) {
  DelayModel m;
  m.fixed = SimTime{10};
  m.stragglers.push_back({3, 7, std::chrono::seconds(2)});
  DelaySampler s(m, 1);
  const auto d = encode_chunk({{7, 3, 0}, {}});
  EXPECT_EQ(s.sample(d, 3, 0), SimTime{10} + std::chrono::seconds(2));
  EXPECT_EQ(s.sample(d, 3, 1), SimTime{10});
  EXPECT_EQ(s.sample(d, 4, 2), SimTime{10});
}

TEST(Lossnet, JitterStaysInRange) {
  DelayModel m;
  m.jitter = SimTime{1000};
  DelaySampler s(m, 4);
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto v = s.sample(Bytes(20), 0, i);
    ASSERT_GE(v.count(), 0);
    ASSERT_LE(v.count(), 1000);
  }
}

TEST(Lossnet, SerializationTime) {
  LinkProfile link;
  link.bandwidth_bps = 1e9;
  EXPECT_EQ(link.serialization(1400), SimTime{11'200});
  link.bandwidth_bps = 3e9;
  EXPECT_EQ(link.serialization(1), SimTime{3});
}
