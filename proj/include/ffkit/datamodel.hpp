// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

// Dataset and prediction types with COCO-style JSON input/output.
//
// Canonical serialization sorts images, annotations and categories by id and
// writes keys in a fixed order, so save -> load -> save is byte-identical.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ffkit/error.hpp"
#include "ffkit/geometry.hpp"
#include "json.hpp"

namespace ffkit {

using Id = std::int64_t;

struct Category {
  Id id = 0;
  std::string name;
  std::string supercategory;

  friend bool operator==(const Category&, const Category&) = default;
};

struct ImageRecord {
  Id id = 0;
  int width = 0;
  int height = 0;
  std::string file_name;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct GroundTruthAnnotation {
  Id id = 0;
  Id image_id = 0;
  Id category_id = 0;
  BBox bbox;
  std::optional<MaskRLE> mask;
  double area = 0.0;

  friend bool operator==(const GroundTruthAnnotation&, const GroundTruthAnnotation&) = default;
};

struct Detection {
  Id image_id = 0;
  Id category_id = 0;
  BBox bbox;
  std::optional<MaskRLE> mask;
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct Dataset {
  std::vector<ImageRecord> images;
  std::vector<GroundTruthAnnotation> annotations;
  std::vector<Category> categories;

  const ImageRecord* find_image(Id id) const {
    auto it = std::find_if(images.begin(), images.end(), [id](const auto& i) { return i.id == id; });
    return it == images.end() ? nullptr : &*it;
  }
  const Category* find_category(Id id) const {
    auto it = std::find_if(categories.begin(), categories.end(), [id](const auto& c) { return c.id == id; });
    return it == categories.end() ? nullptr : &*it;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Sort every list by id. Validation and serialization do not depend on order,
/// but equality comparisons between loaded and constructed datasets do.
inline void canonicalize(Dataset& d) {
  auto by_id = [](const auto& a, const auto& b) { return a.id < b.id; };
  std::stable_sort(d.images.begin(), d.images.end(), by_id);
  std::stable_sort(d.annotations.begin(), d.annotations.end(), by_id);
  std::stable_sort(d.categories.begin(), d.categories.end(), by_id);
}

namespace detail {

inline std::string bbox_str(const BBox& b) {
  std::ostringstream os;
  os << "[" << b.x << "," << b.y << "," << b.w << "," << b.h << "]";
  return os.str();
}

inline void check_rle(const MaskRLE& m, const std::string& who, std::vector<std::string>& out) {
  const std::uint64_t expected = static_cast<std::uint64_t>(std::max(m.height, 0)) * std::max(m.width, 0);
  if (m.height < 1 || m.width < 1) out.push_back(who + ": mask size must be positive");
  if (rle_pixel_count(m) != expected) {
    out.push_back(who + ": mask counts sum " + std::to_string(rle_pixel_count(m)) + " != height*width " +
                  std::to_string(expected));
  }
  for (std::size_t i = 0; i + 1 < m.counts.size(); ++i) {
    if (m.counts[i] == 0 && m.counts[i + 1] == 0) {
      out.push_back(who + ": mask has consecutive zero runs at index " + std::to_string(i));
      break;
    }
  }
}

}  // namespace detail

/// Every invariant violation in `d`, each naming the offending id and rule.
/// Empty when the dataset is structurally valid.
inline std::vector<std::string> validate(const Dataset& d) {
  std::vector<std::string> out;

  std::map<Id, const ImageRecord*> images;
  for (const auto& img : d.images) {
    const std::string who = "image " + std::to_string(img.id);
    if (img.id < 1) out.push_back(who + ": id must be positive");
    if (!images.emplace(img.id, &img).second) out.push_back(who + ": duplicate image id");
    if (img.width < 1 || img.height < 1) out.push_back(who + ": width and height must be >= 1");
  }

  std::set<Id> categories;
  for (const auto& c : d.categories) {
    const std::string who = "category " + std::to_string(c.id);
    if (c.id < 1) out.push_back(who + ": id must be positive");
    if (!categories.insert(c.id).second) out.push_back(who + ": duplicate category id");
    if (c.name.empty()) out.push_back(who + ": name must be non-empty");
  }

  std::set<Id> annotation_ids;
  for (const auto& a : d.annotations) {
    const std::string who = "annotation " + std::to_string(a.id);
    if (a.id < 1) out.push_back(who + ": id must be positive");
    if (!annotation_ids.insert(a.id).second) out.push_back(who + ": duplicate annotation id");
    if (!categories.contains(a.category_id)) {
      out.push_back(who + ": category_id " + std::to_string(a.category_id) + " does not resolve");
    }
    if (!(a.bbox.w > 0.0) || !(a.bbox.h > 0.0)) {
      out.push_back(who + ": bbox " + detail::bbox_str(a.bbox) + " must have w > 0 and h > 0");
    }
    auto it = images.find(a.image_id);
    if (it == images.end()) {
      out.push_back(who + ": image_id " + std::to_string(a.image_id) + " does not resolve");
      continue;
    }
    const ImageRecord& img = *it->second;
    constexpr double eps = 1e-9;
    if (a.bbox.x < -eps || a.bbox.y < -eps || a.bbox.right() > img.width + eps ||
        a.bbox.bottom() > img.height + eps) {
      out.push_back(who + ": bbox " + detail::bbox_str(a.bbox) + " exceeds image " + std::to_string(img.id) +
                    " extent " + std::to_string(img.width) + "x" + std::to_string(img.height));
    }
    if (a.mask) {
      detail::check_rle(*a.mask, who, out);
      if (a.mask->height != img.height || a.mask->width != img.width) {
        out.push_back(who + ": mask size " + std::to_string(a.mask->height) + "x" + std::to_string(a.mask->width) +
                      " does not match image extent");
      }
      const double fg = static_cast<double>(rle_area(*a.mask));
      if (std::abs(fg - a.area) > 1e-6) {
        out.push_back(who + ": area " + std::to_string(a.area) + " != mask foreground " + std::to_string(fg));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace detail {

using ordered = nlohmann::ordered_json;

template <typename T>
T get_field(const nlohmann::json& j, const char* key, const std::string& who) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(who + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(who + ": field '" + key + "' has wrong type (" + e.what() + ")");
  }
}

inline BBox parse_bbox(const nlohmann::json& j, const std::string& who) {
  if (!j.is_array() || j.size() != 4) throw ParseError(who + ": bbox must be [x,y,w,h]");
  for (const auto& v : j)
    if (!v.is_number()) throw ParseError(who + ": bbox entries must be numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline MaskRLE parse_rle(const nlohmann::json& j, const std::string& who) {
  if (!j.is_object()) throw ParseError(who + ": segmentation must be an RLE object (polygons are not supported)");
  const auto size = get_field<std::vector<int>>(j, "size", who);
  if (size.size() != 2) throw ParseError(who + ": segmentation size must be [h,w]");
  if (!j.contains("counts") || !j["counts"].is_array()) {
    throw ParseError(who + ": segmentation counts must be an integer array (compressed RLE strings are not supported)");
  }
  MaskRLE m{size[0], size[1], {}};
  for (const auto& c : j["counts"]) {
    if (!c.is_number_integer() || c.get<std::int64_t>() < 0 || c.get<std::int64_t>() > UINT32_MAX) {
      throw ParseError(who + ": segmentation counts must be non-negative integers");
    }
    m.counts.push_back(c.get<std::uint32_t>());
  }
  return m;
}

inline ordered rle_json(const MaskRLE& m) {
  ordered j;
  j["size"] = {m.height, m.width};
  j["counts"] = m.counts;
  return j;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace detail

/// Parse a COCO-style annotation document. Unknown fields are ignored.
/// Throws ParseError on malformed input and ValidationError when references
/// or invariants do not hold.
inline Dataset parse_dataset(const nlohmann::json& j) {
  using detail::get_field;
  if (!j.is_object()) throw ParseError("dataset: top level must be an object");
  Dataset d;
  auto array_of = [&](const char* key) -> const nlohmann::json& {
    static const nlohmann::json empty = nlohmann::json::array();
    if (!j.contains(key)) return empty;
    if (!j[key].is_array()) throw ParseError(std::string("dataset: '") + key + "' must be an array");
    return j[key];
  };

  for (const auto& ij : array_of("images")) {
    const std::string who = "image";
    d.images.push_back({get_field<Id>(ij, "id", who), get_field<int>(ij, "width", who),
                        get_field<int>(ij, "height", who),
                        ij.contains("file_name") ? get_field<std::string>(ij, "file_name", who) : std::string{}});
  }
  for (const auto& cj : array_of("categories")) {
    const std::string who = "category";
    d.categories.push_back(
        {get_field<Id>(cj, "id", who), get_field<std::string>(cj, "name", who),
         cj.contains("supercategory") ? get_field<std::string>(cj, "supercategory", who) : std::string{}});
  }
  for (const auto& aj : array_of("annotations")) {
    GroundTruthAnnotation a;
    a.id = get_field<Id>(aj, "id", "annotation");
    const std::string who = "annotation " + std::to_string(a.id);
    a.image_id = get_field<Id>(aj, "image_id", who);
    a.category_id = get_field<Id>(aj, "category_id", who);
    if (!aj.contains("bbox")) throw ParseError(who + ": missing field 'bbox'");
    a.bbox = detail::parse_bbox(aj["bbox"], who);
    if (aj.contains("segmentation") && !aj["segmentation"].is_null()) {
      a.mask = detail::parse_rle(aj["segmentation"], who);
    }
    if (aj.contains("area") && !aj["area"].is_null()) {
      a.area = get_field<double>(aj, "area", who);
    } else if (a.mask) {
      a.area = static_cast<double>(rle_area(*a.mask));
    } else {
      a.area = a.bbox.area();
    }
    d.annotations.push_back(std::move(a));
  }

  if (auto violations = validate(d); !violations.empty()) throw ValidationError(std::move(violations));
  canonicalize(d);
  return d;
}

inline Dataset load_dataset(const std::string& path) { return parse_dataset(detail::read_json_file(path)); }

inline nlohmann::ordered_json dataset_json(const Dataset& src) {
  Dataset d = src;
  canonicalize(d);
  detail::ordered j;
  j["images"] = detail::ordered::array();
  for (const auto& i : d.images) {
    detail::ordered ij;
    ij["id"] = i.id;
    ij["width"] = i.width;
    ij["height"] = i.height;
    ij["file_name"] = i.file_name;
    j["images"].push_back(std::move(ij));
  }
  j["annotations"] = detail::ordered::array();
  for (const auto& a : d.annotations) {
    detail::ordered aj;
    aj["id"] = a.id;
    aj["image_id"] = a.image_id;
    aj["category_id"] = a.category_id;
    aj["bbox"] = {a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h};
    if (a.mask) aj["segmentation"] = detail::rle_json(*a.mask);
    aj["area"] = a.area;
    j["annotations"].push_back(std::move(aj));
  }
  j["categories"] = detail::ordered::array();
  for (const auto& c : d.categories) {
    detail::ordered cj;
    cj["id"] = c.id;
    cj["name"] = c.name;
    cj["supercategory"] = c.supercategory;
    j["categories"].push_back(std::move(cj));
  }
  return j;
}

inline std::string serialize_dataset(const Dataset& d) { return dataset_json(d).dump(1) + "\n"; }

/// Requires validate(d) to be empty; throws ValidationError otherwise.
inline void save_dataset(const Dataset& d, const std::string& path) {
  if (auto violations = validate(d); !violations.empty()) throw ValidationError(std::move(violations));
  detail::write_text_file(path, serialize_dataset(d));
}

/// Parse a COCO results array. Scores are kept exactly and order is preserved.
inline std::vector<Detection> parse_detections(const nlohmann::json& j) {
  if (!j.is_array()) throw ParseError("detections: top level must be an array");
  std::vector<Detection> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& dj = j[i];
    const std::string who = "detection " + std::to_string(i);
    Detection det;
    det.image_id = detail::get_field<Id>(dj, "image_id", who);
    det.category_id = detail::get_field<Id>(dj, "category_id", who);
    if (!dj.contains("bbox")) throw ParseError(who + ": missing field 'bbox'");
    det.bbox = detail::parse_bbox(dj["bbox"], who);
    if (det.bbox.w < 0.0 || det.bbox.h < 0.0) throw ParseError(who + ": bbox has negative extent");
    det.score = detail::get_field<double>(dj, "score", who);
    if (!(det.score >= 0.0 && det.score <= 1.0)) {
      throw ValidationError({who + ": score " + std::to_string(det.score) + " outside [0,1]"});
    }
    if (dj.contains("segmentation") && !dj["segmentation"].is_null()) {
      det.mask = detail::parse_rle(dj["segmentation"], who);
    }
    out.push_back(std::move(det));
  }
  return out;
}

inline std::vector<Detection> load_detections(const std::string& path) {
  return parse_detections(detail::read_json_file(path));
}

inline nlohmann::ordered_json detections_json(const std::vector<Detection>& dets) {
  auto j = detail::ordered::array();
  for (const auto& d : dets) {
    detail::ordered dj;
    dj["image_id"] = d.image_id;
    dj["category_id"] = d.category_id;
    dj["bbox"] = {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h};
    dj["score"] = d.score;
    if (d.mask) dj["segmentation"] = detail::rle_json(*d.mask);
    j.push_back(std::move(dj));
  }
  return j;
}

inline void save_detections(const std::vector<Detection>& dets, const std::string& path) {
  detail::write_text_file(path, detections_json(dets).dump(1) + "\n");
}

}  // namespace ffkit
