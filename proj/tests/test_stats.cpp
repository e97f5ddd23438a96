// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "ffkit/stats.hpp"
#include "fixtures.hpp"

namespace ffkit {
namespace {

// Sum-of-products form, independent of the centered form used by pearson().
double raw_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i], sy += y[i], sxx += x[i] * x[i], syy += y[i] * y[i], sxy += x[i] * y[i];
  }
  return static_cast<double>((n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy)));
}

Dataset two_class(int a, int b) {
  Dataset d;
  d.categories = {{1, "a", "x"}, {2, "b", "x"}};
  Id id = 1;
  for (int k = 0; k < a + b; ++k, ++id) {
    d.images.push_back({id, 10, 10, "i.png"});
    GroundTruthAnnotation g;
    g.id = id;
    g.image_id = id;
    g.category_id = k < a ? 1 : 2;
    g.bbox = {0, 0, 5, 5};
    g.area = 25;
    d.annotations.push_back(g);
  }
  return d;
}

TEST(ClassDistribution, CountsAndZeros) {
  Dataset d = two_class(3, 1);
  d.categories.push_back({3, "c", "x"});
  const auto dist = class_distribution(d);
  EXPECT_EQ(dist.total, 4u);
  EXPECT_EQ(dist.counts.at(1), 3u);
  EXPECT_EQ(dist.counts.at(3), 0u);
  EXPECT_DOUBLE_EQ(dist.frequencies.at(1), 0.75);
  EXPECT_DOUBLE_EQ(dist.frequencies.at(3), 0.0);
}

TEST(ClassDistribution, FashionFailLike) {
  const auto d = fixtures::fashionfail_like();
  const auto dist = class_distribution(d);
  EXPECT_EQ(dist.total, 2495u);
  EXPECT_EQ(dist.counts.size(), 22u);
  double sum = 0;
  for (const auto& [_, f] : dist.frequencies) sum += f;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(MaskSize, RelativeToImage) {
  Dataset d = two_class(1, 1);
  d.annotations[1].area = 64;
  d.categories.push_back({3, "c", "x"});
  const auto sizes = mask_size_distribution(d);
  ASSERT_EQ(sizes.at(1).size(), 1u);
  EXPECT_DOUBLE_EQ(sizes.at(1)[0], 0.5);
  EXPECT_DOUBLE_EQ(sizes.at(2)[0], 0.8);
  EXPECT_TRUE(sizes.at(3).empty());
  const auto mean = mean_relative_size(d);
  EXPECT_DOUBLE_EQ(mean.at("b"), 0.8);
  EXPECT_FALSE(mean.contains("c"));
}

TEST(Split, Apportion) {
  EXPECT_EQ(detail::apportion(2495, {0.539, 0.060, 0.401}), (std::array<std::size_t, 3>{1345, 150, 1000}));
  EXPECT_EQ(detail::apportion(10, {0.5, 0.25, 0.25}), (std::array<std::size_t, 3>{5, 3, 2}));
  EXPECT_EQ(detail::apportion(0, {0.5, 0.25, 0.25}), (std::array<std::size_t, 3>{0, 0, 0}));
}

TEST(Split, ControlledRoundingTwoClasses) {
  // 10 + 10 images at 50/25/25: split sizes 10/5/5, each class 5 in train and
  // 2 or 3 in the others.
  const auto r = stratified_split(two_class(10, 10), {{0.5, 0.25, 0.25}, 1});
  EXPECT_EQ(r.parts[0].images.size(), 10u);
  EXPECT_EQ(r.parts[1].images.size(), 5u);
  EXPECT_EQ(r.parts[2].images.size(), 5u);
  for (Id c : {1, 2}) {
    EXPECT_EQ(class_distribution(r.parts[0]).counts.at(c), 5u);
    const auto v = class_distribution(r.parts[1]).counts.at(c);
    EXPECT_TRUE(v == 2 || v == 3);
  }
}

TEST(Split, FashionFailSizesAndFrequencies) {
  const auto d = fixtures::fashionfail_like();
  const auto r = stratified_split(d, {{0.539, 0.060, 0.401}, 42});
  const std::array<long, 3> expected{1344, 150, 1001};
  const auto global = class_distribution(d);
  std::set<Id> seen;
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_LE(std::labs(static_cast<long>(r.parts[s].images.size()) - expected[s]), 1) << kSplitNames[s];
    EXPECT_EQ(r.parts[s].categories.size(), 22u);
    EXPECT_TRUE(validate(r.parts[s]).empty());
    const auto dist = class_distribution(r.parts[s]);
    for (const auto& [id, f] : global.frequencies) EXPECT_LE(std::abs(dist.frequencies.at(id) - f), 0.02);
    for (const auto& img : r.parts[s].images) EXPECT_TRUE(seen.insert(img.id).second);
  }
  EXPECT_EQ(seen.size(), d.images.size());
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Split, DeterministicPerSeed) {
  const auto d = fixtures::small_dataset(60, 150, 4);
  const auto a = stratified_split(d, {{0.6, 0.2, 0.2}, 5});
  const auto b = stratified_split(d, {{0.6, 0.2, 0.2}, 5});
  const auto c = stratified_split(d, {{0.6, 0.2, 0.2}, 6});
  for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(a.parts[s], b.parts[s]);
  EXPECT_NE(a.parts[0].images, c.parts[0].images);
}

TEST(Split, ImagesWithoutAnnotationsAreKept) {
  auto d = fixtures::small_dataset(30, 10, 2);
  const auto r = stratified_split(d, {{0.5, 0.25, 0.25}, 3});
  std::size_t images = 0, anns = 0;
  for (const auto& p : r.parts) images += p.images.size(), anns += p.annotations.size();
  EXPECT_EQ(images, 30u);
  EXPECT_EQ(anns, 10u);
}

TEST(Split, RejectsBadFractions) {
  const auto d = two_class(2, 2);
  EXPECT_THROW(stratified_split(d, {{0.5, 0.5, 0.5}, 0}), ValidationError);
  EXPECT_THROW(stratified_split(d, {{1.2, -0.1, -0.1}, 0}), ValidationError);
}

TEST(Split, WarnsOnEmptySplit) {
  const auto r = stratified_split(two_class(3, 3), {{1.0, 0.0, 0.0}, 0});
  EXPECT_EQ(r.parts[0].images.size(), 6u);
  EXPECT_EQ(r.warnings.size(), 2u);
}

TEST(Pearson, Basics) {
  const std::vector<double> x{1, 2, 3, 4}, y{2, 4, 6, 8}, z{8, 6, 4, 2}, k{1, 1, 1, 1};
  EXPECT_NEAR(*pearson(x, y), 1.0, 1e-12);
  EXPECT_NEAR(*pearson(x, z), -1.0, 1e-12);
  EXPECT_FALSE(pearson(x, k).has_value());
  EXPECT_FALSE(pearson(std::vector<double>{1}, std::vector<double>{1}).has_value());
  EXPECT_THROW(pearson(x, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST(Pearson, MatchesRawFormula) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> x(20), y(20);
    for (int i = 0; i < 20; ++i) x[i] = u(rng), y[i] = 0.3 * x[i] + u(rng);
    EXPECT_NEAR(*pearson(x, y), raw_pearson(x, y), 1e-12);
  }
}

TEST(ScaleCorrelation, LinearDeltasGiveOne) {
  std::map<std::string, double> sa, sb, pa, pb;
  for (int i = 0; i < 6; ++i) {
    const std::string n = "c" + std::to_string(i);
    sa[n] = 0.1 * i;
    sb[n] = 0.0;
    pa[n] = 0.5;
    pb[n] = 0.5 - 0.02 * i;
  }
  sa["only_a"] = 0.9;
  const auto r = scale_performance_correlation(sa, sb, pa, pb);
  EXPECT_EQ(r.classes.size(), 6u);
  EXPECT_NEAR(*r.pearson_r, 1.0, 1e-12);
}

TEST(ScaleCorrelation, TooFewClasses) {
  std::map<std::string, double> one{{"a", 0.1}};
  EXPECT_THROW(scale_performance_correlation(one, one, one, one), std::invalid_argument);
}

TEST(ScaleCorrelation, ConstantDeltasAreUndefined) {
  std::map<std::string, double> s{{"a", 0.1}, {"b", 0.2}}, z{{"a", 0.0}, {"b", 0.1}};
  const auto r = scale_performance_correlation(s, z, s, z);
  EXPECT_FALSE(r.pearson_r.has_value());
}

TEST(Render, DistributionTable) {
  const auto d = two_class(3, 1);
  const auto t = render_distribution_table(d.categories, {{"all", class_distribution(d)}});
  EXPECT_NE(t.find("     3 ( 75.0%)"), std::string::npos);
  EXPECT_NE(t.find("total"), std::string::npos);
}

}  // namespace
}  // namespace ffkit
