#include <random>

#include <gtest/gtest.h>

#include "dblp/clr.hpp"
#include "dblp/error.hpp"
#include "oracles.hpp"

using namespace dblp;

namespace {

std::vector<double> run_schedule(ScheduleParams params, const std::vector<double>& norms) {
  ToleranceSchedule s(params);
  std::vector<double> out;
  for (std::size_t i = 0; i < norms.size(); ++i) out.push_back(s.advance(i, norms[i]));
  return out;
}

}  // namespace

TEST(Clr, TriggerExamples) {
  EXPECT_TRUE(clr_triggered(10, 4, 0.5));
  EXPECT_FALSE(clr_triggered(10, 6, 0.5));
  EXPECT_TRUE(clr_triggered(10, 16, 0.5));
  EXPECT_TRUE(clr_triggered(10, 5, 0.5));  // exactly eta
  EXPECT_TRUE(clr_triggered(0, 1, 0.5));
  EXPECT_FALSE(clr_triggered(0, 0, 0.5));
  EXPECT_THROW(clr_triggered(-1, 1, 0.5), std::invalid_argument);
}

TEST(Clr, TriggerIsScaleInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> norm(0.01, 100.0);
  std::uniform_real_distribution<double> eta(0.05, 0.95);
  for (int i = 0; i < 2000; ++i) {
    const double a = norm(rng), b = norm(rng), e = eta(rng);
    const bool base = clr_triggered(a, b, e);
    // Skip pairs within rounding distance of the threshold.
    if (std::fabs(std::fabs(a - b) / a - e) < 1e-9) continue;
    for (double c : {1e-3, 1.0, 1e3}) ASSERT_EQ(clr_triggered(c * a, c * b, e), base) << a << " " << b << " " << e;
  }
}

TEST(Clr, ConstantNormsOnlyStepZeroIsLow) {
  const auto t = run_schedule({}, std::vector<double>(100, 3.0));
  EXPECT_DOUBLE_EQ(t[0], 0.008);
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_DOUBLE_EQ(t[i], 0.408) << i;
}

TEST(Clr, DropAtStepTwentyGivesTenLowSteps) {
  std::vector<double> norms(60, 10.0);
  for (std::size_t i = 20; i < norms.size(); ++i) norms[i] = 4.0;
  const auto t = run_schedule({}, norms);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const bool low = i == 0 || (i >= 20 && i < 30);
    EXPECT_DOUBLE_EQ(t[i], low ? 0.008 : 0.408) << i;
  }
}

TEST(Clr, RetriggerRestartsTheWindow) {
  std::vector<double> norms(50);
  for (std::size_t i = 0; i < norms.size(); ++i) norms[i] = i < 10 ? 10.0 : i < 20 ? 4.0 : 1.0;
  ToleranceSchedule s({});
  for (std::size_t i = 0; i < norms.size(); ++i) {
    s.advance(i, norms[i]);
    if (i == 19) {
      EXPECT_EQ(s.clr_remaining(), 1u);
    }
    if (i == 20) {
      EXPECT_EQ(s.clr_remaining(), 10u);
    }
    const bool low = i == 0 || (i >= 10 && i < 30);
    EXPECT_EQ(s.clr_active(), low) << i;
  }
}

TEST(Clr, OnlyTwoToleranceValues) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> norm(0.0, 5.0);
  ScheduleParams p{0.024, 0.424, 0.5, 7, ClrCompare::CheckStep};
  ToleranceSchedule s(p);
  for (std::uint64_t i = 0; i < 5000; ++i) {
    const double t = s.advance(i, norm(rng));
    ASSERT_TRUE(t == 0.024 || t == 0.424);
    ASSERT_EQ(t == 0.024, s.clr_active());
  }
}

TEST(Clr, PreviousStepModeComparesAdjacentSteps) {
  // A drop at step 15 is invisible to check-step mode (20 vs 10 both see 4)
  // but previous-step mode compares step 20 with step 19 only.
  std::vector<double> norms(40, 10.0);
  for (std::size_t i = 15; i < 40; ++i) norms[i] = 4.0;
  const auto check = run_schedule({}, norms);
  ScheduleParams prev;
  prev.compare = ClrCompare::PreviousStep;
  const auto adjacent = run_schedule(prev, norms);
  EXPECT_DOUBLE_EQ(check[20], 0.008);
  EXPECT_DOUBLE_EQ(adjacent[20], 0.408);

  norms.assign(40, 10.0);
  norms[29] = 30.0;
  norms[30] = 10.0;
  const auto spike = run_schedule(prev, norms);
  EXPECT_DOUBLE_EQ(spike[30], 0.008);
  EXPECT_DOUBLE_EQ(run_schedule({}, norms)[30], 0.408);
}

TEST(Clr, StepsMustBeConsecutive) {
  ToleranceSchedule s({});
  s.advance(0, 1.0);
  EXPECT_THROW(s.advance(2, 1.0), std::invalid_argument);
}

TEST(Clr, ParamsValidation) {
  EXPECT_THROW(ToleranceSchedule({0.5, 0.4, 0.5, 10}), ConfigError);
  EXPECT_THROW(ToleranceSchedule({0.1, 1.0, 0.5, 10}), ConfigError);
  EXPECT_THROW(ToleranceSchedule({0.1, 0.4, 0.0, 10}), ConfigError);
  EXPECT_THROW(ToleranceSchedule({0.1, 0.4, 0.5, 0}), ConfigError);
  EXPECT_THROW(TolerancePolicy::fixed(1.0), ConfigError);
}

TEST(Clr, PolicyBeforeFirstStepIsLow) {
  auto p = TolerancePolicy::adaptive({});
  EXPECT_DOUBLE_EQ(p.current(), 0.008);
  EXPECT_TRUE(p.clr_active());
  auto f = TolerancePolicy::fixed(0.024);
  EXPECT_DOUBLE_EQ(f.update(0, 1.0), 0.024);
  EXPECT_FALSE(f.clr_active());
}

TEST(Clr, L2NormExamplesAndOracle) {
  EXPECT_DOUBLE_EQ(l2_norm({{"a", {3.0f, 4.0f}}}), 5.0);
  EXPECT_DOUBLE_EQ(l2_norm({{"a", {0.0f, 0.0f}}, {"b", {0.0f}}}), 0.0);
  std::mt19937_64 rng(3);
  std::normal_distribution<float> v(0.0f, 3.0f);
  for (int i = 0; i < 200; ++i) {
    TensorList t{{"x", std::vector<float>(1 + rng() % 500)}, {"y", std::vector<float>(1 + rng() % 50)}};
    for (auto& tensor : t)
      for (auto& f : tensor.values) f = v(rng);
    ASSERT_LT(oracle::relative_error(l2_norm(t), oracle::l2(t), 1e-300), 1e-6);
  }
}
