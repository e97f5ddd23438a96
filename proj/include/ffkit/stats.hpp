// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

// Dataset statistics, stratified splitting and the object-scale vs. AP
// correlation analysis.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ffkit/datamodel.hpp"
#include "ffkit/geometry.hpp"

namespace ffkit {

struct ClassDistribution {
  std::map<Id, std::size_t> counts;  // every category of the dataset, zeros included
  std::map<Id, double> frequencies;  // count / total, all 0 when total is 0
  std::size_t total = 0;
};

inline ClassDistribution class_distribution(const Dataset& d) {
  ClassDistribution out;
  for (const auto& c : d.categories) out.counts[c.id] = 0;
  for (const auto& a : d.annotations) ++out.counts[a.category_id];
  out.total = d.annotations.size();
  for (const auto& [id, n] : out.counts)
    out.frequencies[id] = out.total == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(out.total);
  return out;
}

/// Relative mask size of every annotation, grouped by category. Categories
/// without annotations map to an empty list.
inline std::map<Id, std::vector<double>> mask_size_distribution(const Dataset& d) {
  std::map<Id, std::vector<double>> out;
  for (const auto& c : d.categories) out[c.id];
  std::map<Id, const ImageRecord*> images;
  for (const auto& i : d.images) images[i.id] = &i;
  for (const auto& a : d.annotations) {
    auto it = images.find(a.image_id);
    if (it == images.end()) throw ValidationError({"annotation " + std::to_string(a.id) + ": unknown image"});
    out[a.category_id].push_back(relative_mask_size(a.area, it->second->width, it->second->height));
  }
  return out;
}

/// Mean relative mask size per category name, over categories with annotations.
inline std::map<std::string, double> mean_relative_size(const Dataset& d) {
  std::map<std::string, double> out;
  for (const auto& [id, sizes] : mask_size_distribution(d)) {
    if (sizes.empty()) continue;
    double sum = 0.0;
    for (double s : sizes) sum += s;
    const Category* c = d.find_category(id);
    out[c ? c->name : std::to_string(id)] = sum / static_cast<double>(sizes.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

struct SplitSpec {
  std::array<double, 3> fractions{0.539, 0.060, 0.401};  // train, val, test
  std::uint64_t seed = 0;

  void check() const {
    std::vector<std::string> v;
    double sum = 0.0;
    for (double f : fractions) {
      if (!(f >= 0.0)) v.push_back("split fractions must be >= 0");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-6) v.push_back("split fractions must sum to 1 (got " + std::to_string(sum) + ")");
    if (!v.empty()) throw ValidationError(std::move(v));
  }
};

inline constexpr std::array<const char*, 3> kSplitNames{"train", "val", "test"};

struct SplitResult {
  std::array<Dataset, 3> parts;
  std::vector<std::string> warnings;
};

namespace detail {

/// Uniform integer in [0, n) from a 64-bit engine by rejection sampling.
/// Unlike std::uniform_int_distribution the result is identical on every
/// standard library.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  std::uint64_t x;
  do x = rng();
  while (x >= limit);
  return x % n;
}

template <typename T>
void fisher_yates(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

/// Largest-remainder apportionment of `total` by `fractions`.
inline std::array<std::size_t, 3> apportion(std::size_t total, const std::array<double, 3>& fractions) {
  std::array<std::size_t, 3> out{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const double q = static_cast<double>(total) * fractions[s];
    out[s] = static_cast<std::size_t>(std::floor(q + 1e-9));
    frac[s] = q - static_cast<double>(out[s]);
    assigned += out[s];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % 3, ++assigned) ++out[order[i]];
  while (assigned > total) {  // only reachable through rounding slack
    for (auto s : order)
      if (out[s] > 0 && assigned > total) --out[s], --assigned;
  }
  return out;
}

}  // namespace detail

/// Partition images into train/val/test so that every class keeps roughly its
/// global frequency in each split. Each image is stratified by its most
/// frequent category (lowest id on ties); images without annotations form
/// their own stratum. Split sizes follow the fractions by largest remainder,
/// and per-class quotas are rounded so both class totals and split sizes are
/// met exactly.
inline SplitResult stratified_split(const Dataset& d, const SplitSpec& spec) {
  spec.check();

  std::map<Id, std::map<Id, int>> per_image;
  for (const auto& a : d.annotations) ++per_image[a.image_id][a.category_id];
  std::map<Id, std::vector<Id>> strata;  // key 0 = no annotations
  for (const auto& img : d.images) {
    Id key = 0;
    int best = 0;
    if (auto it = per_image.find(img.id); it != per_image.end())
      for (const auto& [cat, n] : it->second)
        if (n > best) best = n, key = cat;
    strata[key].push_back(img.id);
  }

  const auto split_size = detail::apportion(d.images.size(), spec.fractions);

  // Per-stratum quotas: floors first, then hand out the leftovers by largest
  // fractional part while respecting the split sizes.
  struct Quota {
    std::array<std::size_t, 3> n{};
    std::array<double, 3> frac{};
    std::size_t left = 0;
  };
  std::map<Id, Quota> quota;
  std::array<std::ptrdiff_t, 3> deficit{};
  for (std::size_t s = 0; s < 3; ++s) deficit[s] = static_cast<std::ptrdiff_t>(split_size[s]);
  for (const auto& [key, ids] : strata) {
    Quota q;
    std::size_t used = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const double exact = static_cast<double>(ids.size()) * spec.fractions[s];
      q.n[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      q.frac[s] = exact - static_cast<double>(q.n[s]);
      used += q.n[s];
      deficit[s] -= static_cast<std::ptrdiff_t>(q.n[s]);
    }
    q.left = ids.size() - std::min(used, ids.size());
    quota[key] = q;
  }
  struct Candidate {
    double frac;
    Id key;
    std::size_t split;
  };
  std::vector<Candidate> candidates;
  for (const auto& [key, q] : quota)
    for (std::size_t s = 0; s < 3; ++s) candidates.push_back({q.frac[s], key, s});
  std::stable_sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) { return a.frac > b.frac; });
  for (const auto& c : candidates) {
    Quota& q = quota[c.key];
    if (q.left > 0 && deficit[c.split] > 0) {
      ++q.n[c.split];
      --q.left;
      --deficit[c.split];
    }
  }
  // A stratum can still owe images when every split it could round up into is
  // already full; place them wherever room is left.
  for (const auto& c : candidates) {
    Quota& q = quota[c.key];
    while (q.left > 0 && deficit[c.split] > 0) {
      ++q.n[c.split];
      --q.left;
      --deficit[c.split];
    }
  }

  std::mt19937_64 rng(spec.seed);
  std::map<Id, std::size_t> assignment;
  for (auto& [key, ids] : strata) {
    std::sort(ids.begin(), ids.end());
    detail::fisher_yates(ids, rng);
    const Quota& q = quota[key];
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t k = 0; k < q.n[s] && pos < ids.size(); ++k) assignment[ids[pos++]] = s;
    for (; pos < ids.size(); ++pos) assignment[ids[pos]] = 2;
  }

  SplitResult out;
  for (auto& part : out.parts) part.categories = d.categories;
  for (const auto& img : d.images) out.parts[assignment.at(img.id)].images.push_back(img);
  for (const auto& a : d.annotations) {
    auto it = assignment.find(a.image_id);
    if (it != assignment.end()) out.parts[it->second].annotations.push_back(a);
  }
  for (auto& part : out.parts) canonicalize(part);
  if (!d.annotations.empty()) {
    for (std::size_t s = 0; s < 3; ++s)
      if (out.parts[s].images.empty())
        out.warnings.push_back(std::string(kSplitNames[s]) + " split is empty (fraction " +
                               std::to_string(spec.fractions[s]) + ")");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scale vs. performance
// ---------------------------------------------------------------------------

/// Pearson correlation, or nullopt when either side has zero variance or
/// fewer than two points.
inline std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = xs.size();
  if (n < 2) return std::nullopt;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) mx += xs[i], my += ys[i];
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct ClassDelta {
  std::string name;
  double size_delta = 0.0;  // |size_a - size_b|
  double ap_delta = 0.0;    // |ap_a - ap_b|
};

struct ScaleCorrelation {
  std::vector<ClassDelta> classes;  // sorted by name
  std::optional<double> pearson_r;
};

/// Pairs the absolute differences in mean relative size and in AP for every
/// class present in all four tables, and correlates them.
inline ScaleCorrelation scale_performance_correlation(const std::map<std::string, double>& sizes_a,
                                                      const std::map<std::string, double>& sizes_b,
                                                      const std::map<std::string, double>& ap_a,
                                                      const std::map<std::string, double>& ap_b) {
  ScaleCorrelation out;
  for (const auto& [name, sa] : sizes_a) {
    auto sb = sizes_b.find(name);
    auto pa = ap_a.find(name);
    auto pb = ap_b.find(name);
    if (sb == sizes_b.end() || pa == ap_a.end() || pb == ap_b.end()) continue;
    out.classes.push_back({name, std::abs(sa - sb->second), std::abs(pa->second - pb->second)});
  }
  if (out.classes.size() < 2) {
    throw std::invalid_argument("scale_performance_correlation: fewer than 2 common classes (" +
                                std::to_string(out.classes.size()) + ")");
  }
  std::vector<double> xs, ys;
  for (const auto& c : out.classes) xs.push_back(c.size_delta), ys.push_back(c.ap_delta);
  out.pearson_r = pearson(xs, ys);
  return out;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// One row per category, count and percentage per named column.
inline std::string render_distribution_table(const std::vector<Category>& categories,
                                             const std::vector<std::pair<std::string, ClassDistribution>>& columns) {
  std::size_t name_w = 8;
  for (const auto& c : categories) name_w = std::max(name_w, c.name.size());
  std::ostringstream os;
  char buf[64];
  os << std::string(name_w, ' ');
  for (const auto& [title, _] : columns) {
    std::snprintf(buf, sizeof buf, " | %15s", title.c_str());
    os << buf;
  }
  os << "\n";
  auto row = [&](const std::string& label, auto&& cell) {
    os << label << std::string(name_w - std::min(name_w, label.size()), ' ');
    for (const auto& [_, dist] : columns) os << " | " << cell(dist);
    os << "\n";
  };
  for (const auto& c : categories) {
    row(c.name, [&](const ClassDistribution& d) {
      auto it = d.counts.find(c.id);
      const std::size_t n = it == d.counts.end() ? 0 : it->second;
      const double f = d.total == 0 ? 0.0 : 100.0 * static_cast<double>(n) / static_cast<double>(d.total);
      std::snprintf(buf, sizeof buf, "%6zu (%5.1f%%)", n, f);
      return std::string(buf);
    });
  }
  row("total", [&](const ClassDistribution& d) {
    std::snprintf(buf, sizeof buf, "%6zu         ", d.total);
    return std::string(buf);
  });
  return os.str();
}

}  // namespace ffkit
