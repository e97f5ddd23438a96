// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "ffkit/geometry.hpp"
#include "oracle.hpp"

namespace ffkit {
namespace {

TEST(BoxIou, IdenticalBoxesGiveOne) { EXPECT_DOUBLE_EQ(box_iou({3, 4, 5, 6}, {3, 4, 5, 6}), 1.0); }

TEST(BoxIou, DisjointBoxesGiveZero) { EXPECT_EQ(box_iou({0, 0, 1, 1}, {5, 5, 1, 1}), 0.0); }

TEST(BoxIou, TouchingEdgesGiveZero) { EXPECT_EQ(box_iou({0, 0, 2, 2}, {2, 0, 2, 2}), 0.0); }

TEST(BoxIou, OverlapMatchesRasterCount) {
  // 1 shared pixel, 4 + 4 - 1 = 7 in the union
  EXPECT_DOUBLE_EQ(oracle::raster_box_iou({0, 0, 2, 2}, {1, 1, 2, 2}), 1.0 / 7.0);
  EXPECT_NEAR(box_iou({0, 0, 2, 2}, {1, 1, 2, 2}), 1.0 / 7.0, 1e-15);
}

TEST(BoxIou, SymmetricAndBoundedOnRandomIntegerBoxes) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> c(0, 20), s(1, 12);
  for (int i = 0; i < 500; ++i) {
    BBox a{double(c(rng)), double(c(rng)), double(s(rng)), double(s(rng))};
    BBox b{double(c(rng)), double(c(rng)), double(s(rng)), double(s(rng))};
    const double ab = box_iou(a, b);
    EXPECT_EQ(ab, box_iou(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_NEAR(ab, oracle::raster_box_iou(a, b), 1e-12);
  }
}

TEST(BoxIou, SubPixelBoxesAreAnalytic) {
  // half-pixel shift of a unit-height box: intersection 1.5, union 2.5
  EXPECT_NEAR(box_iou({0, 0, 2, 1}, {0.5, 0, 2, 1}), 1.5 / 2.5, 1e-15);
}

TEST(Rle, AllBackground) {
  BitMask m(2, 2);
  EXPECT_EQ(rle_encode(m).counts, (std::vector<std::uint32_t>{4}));
}

TEST(Rle, AllForeground) {
  BitMask m(2, 2);
  std::fill(m.bits.begin(), m.bits.end(), 1);
  EXPECT_EQ(rle_encode(m).counts, (std::vector<std::uint32_t>{0, 4}));
}

TEST(Rle, ColumnMajorScan) {
  // 2x3, foreground in the middle column only -> bg 2, fg 2, bg 2
  BitMask m(2, 3);
  m.at(0, 1) = 1;
  m.at(1, 1) = 1;
  const auto r = rle_encode(m);
  EXPECT_EQ(r.counts, (std::vector<std::uint32_t>{2, 2, 2}));
  EXPECT_EQ(r.height, 2);
  EXPECT_EQ(r.width, 3);
  EXPECT_EQ(rle_area(r), 2u);
}

TEST(Rle, RoundTripRandomMasks) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> dim(1, 64);
  std::uniform_real_distribution<double> density(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    BitMask m(dim(rng), dim(rng));
    std::bernoulli_distribution on(density(rng));
    for (auto& b : m.bits) b = on(rng);
    const auto r = rle_encode(m);
    EXPECT_EQ(rle_pixel_count(r), m.bits.size());
    EXPECT_EQ(rle_decode(r), m);
    EXPECT_EQ(oracle::decode_rowmajor(r), m.bits);
  }
}

TEST(Rle, DecodeRejectsSumMismatch) {
  MaskRLE bad{2, 2, {1, 2}};
  EXPECT_THROW(rle_decode(bad), ValidationError);
}

TEST(MaskIou, IdenticalAndDisjoint) {
  BitMask a(4, 4), b(4, 4);
  a.at(0, 0) = a.at(1, 1) = 1;
  b.at(3, 3) = 1;
  EXPECT_DOUBLE_EQ(mask_iou(rle_encode(a), rle_encode(a)), 1.0);
  EXPECT_EQ(mask_iou(rle_encode(a), rle_encode(b)), 0.0);
}

TEST(MaskIou, EmptyPairIsZero) {
  BitMask e(3, 3);
  EXPECT_EQ(mask_iou(rle_encode(e), rle_encode(e)), 0.0);
}

TEST(MaskIou, SizeMismatchThrows) {
  EXPECT_THROW(mask_iou(rle_encode(BitMask(2, 2)), rle_encode(BitMask(2, 3))), std::invalid_argument);
}

TEST(MaskIou, MatchesDecodeAndCountOracle) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> dim(1, 32);
  for (int i = 0; i < 200; ++i) {
    const int h = dim(rng), w = dim(rng);
    BitMask a(h, w), b(h, w);
    std::bernoulli_distribution pa(0.4), pb(0.6);
    for (auto& x : a.bits) x = pa(rng);
    for (auto& x : b.bits) x = pb(rng);
    const auto ra = rle_encode(a), rb = rle_encode(b);
    EXPECT_NEAR(mask_iou(ra, rb), oracle::raster_mask_iou(ra, rb), 1e-15);
    EXPECT_EQ(mask_iou(ra, rb), mask_iou(rb, ra));
  }
}

TEST(MaskIou, HandlesLeadingZeroRun) {
  MaskRLE a{1, 4, {0, 2, 2}};
  MaskRLE b{1, 4, {1, 3}};
  // a = 1100, b = 0111 -> inter 1, union 4
  EXPECT_DOUBLE_EQ(mask_iou(a, b), 0.25);
}

TEST(UnionBox, SingleBoxIsItself) {
  const BBox b{1, 2, 3, 4};
  EXPECT_EQ(union_box(std::vector{b}), b);
}

TEST(UnionBox, TwoBoxes) {
  // corners: min(10,50)=10, max(30,60)=60 on both axes
  EXPECT_EQ(union_box(std::vector<BBox>{{10, 10, 20, 20}, {50, 50, 10, 10}}), (BBox{10, 10, 50, 50}));
}

TEST(UnionBox, NestedGivesOuter) {
  EXPECT_EQ(union_box(std::vector<BBox>{{2, 2, 1, 1}, {0, 0, 10, 10}}), (BBox{0, 0, 10, 10}));
}

TEST(UnionBox, EmptyThrows) { EXPECT_THROW(union_box(std::vector<BBox>{}), std::invalid_argument); }

TEST(UnionBox, OrderIndependent) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> c(0, 50), s(1, 20);
  for (int i = 0; i < 100; ++i) {
    std::vector<BBox> boxes(5);
    for (auto& b : boxes) b = {double(c(rng)), double(c(rng)), double(s(rng)), double(s(rng))};
    const BBox u = union_box(boxes);
    std::shuffle(boxes.begin(), boxes.end(), rng);
    EXPECT_EQ(union_box(boxes), u);
    // union of two halves' unions equals the union of all
    const std::vector<BBox> halves{union_box(std::span(boxes).first(2)), union_box(std::span(boxes).subspan(2))};
    EXPECT_EQ(union_box(halves), u);
  }
}

TEST(RelativeMaskSize, Values) {
  EXPECT_DOUBLE_EQ(relative_mask_size(100.0, 10, 10), 1.0);
  EXPECT_DOUBLE_EQ(relative_mask_size(0.0, 10, 10), 0.0);
  // sqrt(360000 / 5760000) = sqrt(1/16)
  EXPECT_DOUBLE_EQ(relative_mask_size(600.0 * 600.0, 2400, 2400), 0.25);
}

TEST(RelativeMaskSize, Errors) {
  EXPECT_THROW(relative_mask_size(1.0, 0, 10), std::invalid_argument);
  EXPECT_THROW(relative_mask_size(101.0, 10, 10), std::invalid_argument);
}

TEST(FillBox, AreaEqualsIntegerBoxArea) {
  const auto m = fill_box({2, 3, 5, 4}, 10, 10);
  EXPECT_EQ(m.area(), 20u);
  EXPECT_EQ(mask_bbox(m), (BBox{2, 3, 5, 4}));
}

TEST(FillBox, CornerBoxStaysInBounds) {
  const auto m = fill_box({6, 6, 10, 10}, 8, 8);
  EXPECT_EQ(m.area(), 4u);
}

}  // namespace
}  // namespace ffkit
