#include <random>

#include <gtest/gtest.h>

#include "dblp/bitmap.hpp"
#include "dblp/error.hpp"
#include "oracles.hpp"

using namespace dblp;

TEST(Bitmap, MissingRatioExamples) {
  ChunkBitmap b(1000);
  for (std::uint32_t i = 0; i < 600; ++i) b.set(i);
  EXPECT_DOUBLE_EQ(bitmap_missing_ratio(b), 0.4);

  ChunkBitmap full(8);
  for (std::uint32_t i = 0; i < 8; ++i) full.set(i);
  EXPECT_DOUBLE_EQ(bitmap_missing_ratio(full), 0.0);
  EXPECT_TRUE(full.complete());
}

TEST(Bitmap, MsbFirstWireForm) {
  ChunkBitmap b(10);
  b.set(0);
  b.set(2);
  b.set(9);
  EXPECT_EQ(oracle::to_u8(b.to_bytes()), (std::vector<std::uint8_t>{0xA0, 0x40}));
  EXPECT_EQ(ChunkBitmap::from_bytes(10, b.to_bytes()), b);
}

TEST(Bitmap, RejectsWrongLengthAndPadding) {
  EXPECT_THROW(ChunkBitmap::from_bytes(10, oracle::to_bytes({0xFF})), ProtocolError);
  EXPECT_THROW(ChunkBitmap::from_bytes(10, oracle::to_bytes({0xFF, 0x20})), ProtocolError);
  EXPECT_NO_THROW(ChunkBitmap::from_bytes(10, oracle::to_bytes({0xFF, 0xC0})));
}

TEST(Bitmap, RandomBitmapsMatchNaiveCount) {
  std::mt19937_64 rng(29);
  for (int i = 0; i < 1000; ++i) {
    const auto total = static_cast<std::uint32_t>(1 + rng() % 3000);
    ChunkBitmap b(total);
    std::vector<bool> naive(total);
    const auto sets = rng() % (2 * total);
    for (std::uint64_t k = 0; k < sets; ++k) {
      const auto seq = static_cast<std::uint32_t>(rng() % total);
      EXPECT_EQ(b.set(seq), !naive[seq]);
      naive[seq] = true;
    }
    const auto bytes = oracle::to_u8(b.to_bytes());
    const auto pop = oracle::popcount(bytes);
    ASSERT_EQ(b.count(), pop);
    ASSERT_DOUBLE_EQ(bitmap_missing_ratio(b), static_cast<double>(total - pop) / total);
    for (std::uint32_t s = 0; s < total; ++s) {
      ASSERT_EQ(b.test(s), naive[s]);
      ASSERT_EQ(((bytes[s / 8] >> (7 - s % 8)) & 1) != 0, naive[s]);
    }
  }
}

TEST(Bitmap, MergeIsMonotone) {
  ChunkBitmap a(20), b(20);
  a.set(1);
  b.set(1);
  b.set(19);
  a.merge(b);
  EXPECT_EQ(a.count(), 2u);
  EXPECT_TRUE(a.test(19));
  ChunkBitmap empty(20);
  a.merge(empty);
  EXPECT_EQ(a.count(), 2u);
  EXPECT_THROW(a.merge(ChunkBitmap(21)), std::invalid_argument);
}
