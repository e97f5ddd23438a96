// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic datasets shared by several test binaries.

#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <string>

#include "ffkit/datamodel.hpp"
#include "ffkit/ontology.hpp"

namespace ffkit::fixtures {

/// Per-category annotation counts for a 2,495-image single-label dataset over
/// the 22 primary apparel categories: shoes at about a third, then a long tail
/// ending in a rare umbrella class.
inline std::map<std::string, int> fashionfail_counts() {
  return {
      {"shoe", 823},
      {"bag, wallet", 260},
      {"pants", 180},
      {"top, t-shirt, sweatshirt", 170},
      {"jacket", 150},
      {"dress", 130},
      {"shorts", 110},
      {"shirt, blouse", 100},
      {"hat", 90},
      {"skirt", 80},
      {"coat", 75},
      {"glasses", 60},
      {"sock", 55},
      {"cardigan", 45},
      {"vest", 35},
      {"jumpsuit", 30},
      {"watch", 28},
      {"scarf", 25},
      {"tights, stockings", 20},
      {"glove", 15},
      {"headband, head covering, hair accessory", 12},
      {"umbrella", 2},
  };
}

/// 2400x2400 images, exactly one box annotation each, categories from the
/// default ontology. Image order interleaves classes pseudo-randomly.
inline Dataset fashionfail_like(unsigned seed = 2024) {
  Dataset d;
  d.categories = fashionfail_ontology().surviving();
  std::map<std::string, Id> ids;
  for (const auto& c : d.categories) ids[c.name] = c.id;

  std::vector<Id> labels;
  for (const auto& [name, n] : fashionfail_counts()) labels.insert(labels.end(), n, ids.at(name));
  std::mt19937_64 rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  std::uniform_int_distribution<int> side(300, 2000);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Id id = static_cast<Id>(i + 1);
    d.images.push_back({id, 2400, 2400, "ff_" + std::to_string(id) + ".jpg"});
    const double w = side(rng), h = side(rng);
    GroundTruthAnnotation a;
    a.id = id;
    a.image_id = id;
    a.category_id = labels[i];
    a.bbox = {(2400 - w) / 2, (2400 - h) / 2, w, h};
    a.area = w * h;
    d.annotations.push_back(a);
  }
  return d;
}

/// Small multi-annotation dataset with rectangle masks.
inline Dataset small_dataset(int images, int annotations, int categories, unsigned seed = 7) {
  Dataset d;
  for (int c = 1; c <= categories; ++c) d.categories.push_back({c, "cat" + std::to_string(c), "thing"});
  for (int i = 1; i <= images; ++i) d.images.push_back({i, 32, 24, "im" + std::to_string(i) + ".png"});
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> img(1, images), cat(1, categories), x(0, 20), y(0, 14), s(1, 10);
  for (int a = 1; a <= annotations; ++a) {
    GroundTruthAnnotation g;
    g.id = a;
    g.image_id = img(rng);
    g.category_id = cat(rng);
    const double bx = x(rng), by = y(rng);
    g.bbox = {bx, by, std::min<double>(s(rng), 32 - bx), std::min<double>(s(rng), 24 - by)};
    g.mask = rle_encode(fill_box(g.bbox, 24, 32));
    g.area = static_cast<double>(rle_area(*g.mask));
    d.annotations.push_back(g);
  }
  return d;
}

}  // namespace ffkit::fixtures
