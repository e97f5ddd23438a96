// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

// Category taxonomy and label normalization for the annotation pipeline.
//
// The default ontology is the 46-category Fashionpedia taxonomy. Removing the
// part-level supercategories and five under-represented garments leaves the
// 22 primary apparel categories.

#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ffkit/datamodel.hpp"

namespace ffkit {

/// Lowercase, strip punctuation, collapse runs of whitespace, trim.
inline std::string normalize_label(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
    } else if (std::ispunct(c)) {
      continue;
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  return out;
}

enum class LabelRejection { none, unknown_label, excluded_category };

inline const char* to_string(LabelRejection r) {
  switch (r) {
    case LabelRejection::none: return "none";
    case LabelRejection::unknown_label: return "unknown_label";
    case LabelRejection::excluded_category: return "excluded_category";
  }
  return "?";
}

struct LabelMapping {
  std::optional<Category> category;
  LabelRejection rejection = LabelRejection::none;
  std::string detail;  // e.g. the excluding supercategory

  bool ok() const { return category.has_value(); }
};

struct Ontology {
  std::vector<Category> categories;
  std::set<std::string> excluded_supercategories{"garment parts", "closures", "decorations"};
  std::set<std::string> excluded_names{"sweater", "cape", "tie", "belt", "leg warmer"};

  bool is_excluded(const Category& c) const {
    return excluded_supercategories.contains(c.supercategory) || excluded_names.contains(normalize_label(c.name));
  }

  /// Categories that survive the exclusions, in id order.
  std::vector<Category> surviving() const {
    std::vector<Category> out;
    for (const auto& c : categories)
      if (!is_excluded(c)) out.push_back(c);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return out;
  }

  /// Exact match on the normalized full name ("bag, wallet" matches "Bag wallet").
  LabelMapping map_label(std::string_view label) const {
    const std::string key = normalize_label(label);
    for (const auto& c : categories) {
      if (normalize_label(c.name) != key) continue;
      if (excluded_supercategories.contains(c.supercategory)) {
        return {std::nullopt, LabelRejection::excluded_category, c.supercategory};
      }
      if (excluded_names.contains(key)) return {std::nullopt, LabelRejection::excluded_category, c.name};
      return {c, LabelRejection::none, {}};
    }
    return {std::nullopt, LabelRejection::unknown_label, key};
  }
};

/// Fashionpedia's 46 categories (ids 1..46) with the default exclusions.
inline Ontology fashionfail_ontology() {
  struct Row {
    const char* name;
    const char* super;
  };
  static constexpr Row rows[] = {
      {"shirt, blouse", "upperbody"},
      {"top, t-shirt, sweatshirt", "upperbody"},
      {"sweater", "upperbody"},
      {"cardigan", "upperbody"},
      {"jacket", "upperbody"},
      {"vest", "upperbody"},
      {"pants", "lowerbody"},
      {"shorts", "lowerbody"},
      {"skirt", "lowerbody"},
      {"coat", "wholebody"},
      {"dress", "wholebody"},
      {"jumpsuit", "wholebody"},
      {"cape", "wholebody"},
      {"glasses", "head"},
      {"hat", "head"},
      {"headband, head covering, hair accessory", "head"},
      {"tie", "neck"},
      {"glove", "arms and hands"},
      {"watch", "arms and hands"},
      {"belt", "waist"},
      {"leg warmer", "legs and feet"},
      {"tights, stockings", "legs and feet"},
      {"sock", "legs and feet"},
      {"shoe", "legs and feet"},
      {"bag, wallet", "others"},
      {"scarf", "others"},
      {"umbrella", "others"},
      {"hood", "garment parts"},
      {"collar", "garment parts"},
      {"lapel", "garment parts"},
      {"epaulette", "garment parts"},
      {"sleeve", "garment parts"},
      {"pocket", "garment parts"},
      {"neckline", "garment parts"},
      {"buckle", "closures"},
      {"zipper", "closures"},
      {"applique", "decorations"},
      {"bead", "decorations"},
      {"bow", "decorations"},
      {"flower", "decorations"},
      {"fringe", "decorations"},
      {"ribbon", "decorations"},
      {"rivet", "decorations"},
      {"ruffle", "decorations"},
      {"sequin", "decorations"},
      {"tassel", "decorations"},
  };
  Ontology o;
  Id id = 1;
  for (const auto& r : rows) o.categories.push_back({id++, r.name, r.super});
  return o;
}

}  // namespace ffkit
