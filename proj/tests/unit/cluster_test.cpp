#include <gtest/gtest.h>

#include "dblp/cluster.hpp"
#include "dblp/error.hpp"
#include "checks.hpp"

using namespace dblp;

namespace {

std::vector<std::unique_ptr<GradientSource>> toy_sources(std::size_t n, std::uint64_t seed) {
  std::vector<std::unique_ptr<GradientSource>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(std::make_unique<ToySource>(ToyParams{}, seed + i));
  return out;
}

ClusterConfig small_payload(std::size_t payload) {
  ClusterConfig c;
  c.transport.max_payload_bytes = payload;
  c.learning_rate = 0.5f;
  return c;
}

// Zeroes every element whose byte range lies in a chunk missing from `mask`.
TensorList apply_mask(const TensorList& tensors, const ChunkBitmap& mask, std::size_t payload) {
  auto out = tensors;
  std::size_t flat = 0;
  for (auto& t : out) {
    for (auto& v : t.values) {
      if (!mask.test(static_cast<std::uint32_t>(flat * 4 / payload))) v = 0.0f;
      ++flat;
    }
  }
  return out;
}

}  // namespace

TEST(Cluster, LosslessTrajectoryEqualsSynchronousSgd) {
  for (std::size_t n : {1u, 3u}) {
    SimulatedCluster cluster(small_payload(16), TolerancePolicy::fixed(0.0), toy_sources(n, 100));
    checks::ReferenceSgd ref{toy_sources(n, 100), ToySource(ToyParams{}, 100).initial_parameters(), 0.5f};
    for (std::uint64_t s = 0; s < 100; ++s) {
      const auto report = cluster.step();
      ref.step(s);
      for (const auto& w : cluster.workers()) ASSERT_TRUE(checks::bit_equal(w.parameters(), ref.params)) << "step " << s;
      for (const auto& r : report.records) ASSERT_EQ(r.chunks_received, r.chunks_total);
    }
  }
}

TEST(Cluster, DroppedChunksReplayAsZeroedCoordinates) {
  auto config = small_payload(8);
  config.loss = {0.3, {}, 5};
  config.loss_model = LossModel::Bernoulli;
  const std::size_t n = 3;
  SimulatedCluster cluster(config, TolerancePolicy::fixed(0.408), toy_sources(n, 7));

  auto sources = toy_sources(n, 7);
  std::vector<TensorList> params(n, sources[0]->initial_parameters());
  bool saw_loss = false;
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto report = cluster.step();
    std::vector<TensorList> received;
    for (std::size_t w = 0; w < n; ++w) {
      saw_loss |= !report.gather_masks[w].complete();
      received.push_back(apply_mask(sources[w]->gradient(s, params[w]), report.gather_masks[w], 8));
    }
    const auto mean = reduce_mean(received);
    ASSERT_TRUE(checks::bit_equal(mean, report.result.mean_gradient)) << s;
    for (std::size_t w = 0; w < n; ++w) {
      const auto update = apply_mask(mean, report.broadcast_masks[w], 8);
      for (std::size_t t = 0; t < params[w].size(); ++t)
        for (std::size_t k = 0; k < params[w][t].values.size(); ++k) {
          const float delta = 0.5f * update[t].values[k];
          params[w][t].values[k] = params[w][t].values[k] - delta;
        }
      ASSERT_TRUE(checks::bit_equal(params[w], cluster.workers()[w].parameters())) << s << " " << w;
    }
  }
  EXPECT_TRUE(saw_loss);
}

TEST(Cluster, ZeroGradientLeavesWeightsUnchanged) {
  class Zero final : public GradientSource {
   public:
    TensorLayout layout() const override { return {{"w", 100}}; }
    TensorList initial_parameters() const override { return {{"w", std::vector<float>(100, 0.25f)}}; }
    TensorList gradient(std::uint64_t, const TensorList&) override { return zeros_like(layout()); }
  };
  std::vector<std::unique_ptr<GradientSource>> sources;
  for (int i = 0; i < 3; ++i) sources.push_back(std::make_unique<Zero>());
  auto config = small_payload(40);
  config.loss = {0.2, {}, 1};
  SimulatedCluster cluster(config, TolerancePolicy::adaptive({}), std::move(sources));
  for (int s = 0; s < 25; ++s) cluster.step();
  for (const auto& w : cluster.workers()) EXPECT_EQ(w.parameters()[0].values, std::vector<float>(100, 0.25f));
}

TEST(Cluster, BackgroundLossPassEconomy) {
  auto config = small_payload(kDefaultMaxPayloadBytes);
  config.loss = {0.05, {}, 3};
  auto synthetic = [] {
    std::vector<std::unique_ptr<GradientSource>> out;
    for (std::uint64_t i = 0; i < 3; ++i)
      out.push_back(std::make_unique<SyntheticSource>(TensorLayout{{"grad", 346'500}}, NormProfile::constant(1.0, 30), i));
    return out;
  };
  SimulatedCluster adaptive(config, TolerancePolicy::adaptive({}), synthetic());
  SimulatedCluster baseline(config, TolerancePolicy::fixed(0.008), synthetic());
  for (int s = 0; s < 12; ++s) {
    const auto a = adaptive.step();
    const auto b = baseline.step();
    for (const auto& r : b.records) EXPECT_EQ(r.passes, 2u) << s;
    for (const auto& r : a.records) {
      const bool low = r.tolerance == 0.008;
      EXPECT_EQ(r.passes, low ? 2u : 1u) << s;
      EXPECT_EQ(r.chunks_total, 1000u);
    }
  }
}

TEST(Cluster, GatherUsesPreviousToleranceAndBroadcastTheUpdatedOne) {
  std::vector<std::unique_ptr<GradientSource>> sources;
  for (std::uint64_t i = 0; i < 2; ++i)
    sources.push_back(std::make_unique<SyntheticSource>(TensorLayout{{"g", 200}},
                                                        NormProfile::parse("0-19:10,20-39:4"), i));
  SimulatedCluster cluster(small_payload(16), TolerancePolicy::adaptive({}), std::move(sources));
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto r = cluster.step();
    const double expected_gather = (s == 0 || s == 1 || (s >= 21 && s <= 30)) ? 0.008 : 0.408;
    const double expected_broadcast = (s == 0 || (s >= 20 && s <= 29)) ? 0.008 : 0.408;
    EXPECT_DOUBLE_EQ(r.gather_tolerance, expected_gather) << s;
    EXPECT_DOUBLE_EQ(r.result.active_tolerance, expected_broadcast) << s;
    for (std::size_t i = 0; i < r.records.size(); ++i) {
      EXPECT_EQ(r.records[i].round, s);
      EXPECT_DOUBLE_EQ(r.records[i].tolerance, i < 2 ? expected_gather : expected_broadcast);
    }
  }
}

TEST(Cluster, TimelineIsOrdered) {
  SimulatedCluster cluster(small_payload(64), TolerancePolicy::fixed(0.0), toy_sources(3, 1));
  SimTime previous{0};
  for (int s = 0; s < 5; ++s) {
    const auto r = cluster.step();
    EXPECT_EQ(r.start, previous);
    EXPECT_GT(r.barrier, r.start);
    EXPECT_GT(r.end, r.barrier);
    previous = r.end;
  }
  EXPECT_EQ(cluster.now(), previous);
  EXPECT_EQ(cluster.steps_done(), 5u);
}

TEST(Cluster, RejectsMixedLayouts) {
  std::vector<std::unique_ptr<GradientSource>> sources;
  sources.push_back(std::make_unique<SyntheticSource>(TensorLayout{{"g", 10}}, NormProfile::constant(1, 5), 0));
  sources.push_back(std::make_unique<SyntheticSource>(TensorLayout{{"g", 11}}, NormProfile::constant(1, 5), 0));
  EXPECT_THROW(SimulatedCluster(ClusterConfig{}, TolerancePolicy::fixed(0), std::move(sources)), LayoutMismatch);
  EXPECT_THROW(SimulatedCluster(ClusterConfig{}, TolerancePolicy::fixed(0), {}), ConfigError);
}
