// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

// Class-frequency-weighted detection metrics.
//
//   AP_c@phi      101-point interpolated average precision of class c
//   mAP_w@phi     sum_c w_c * AP_c@phi,  w_c = n_c / N over classes with ground truth
//   mAP_w         mean of mAP_w@phi over the IoU thresholds
//   AR_c^top k    per-image recall with only the k best-scoring detections admitted,
//                 averaged over images holding class c and over the IoU thresholds
//   mAR_w^top k   sum_c w_c * AR_c^top k
//
// Matching is greedy per (image, class): detections in descending score, each
// taking the unmatched ground truth of highest IoU >= phi. Detections below
// the score floor are dropped before anything else happens.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ffkit/datamodel.hpp"
#include "ffkit/geometry.hpp"
#include "json.hpp"

namespace ffkit {

enum class IouKind { box, mask };

inline const char* to_string(IouKind k) { return k == IouKind::box ? "box" : "mask"; }

inline IouKind parse_iou_kind(const std::string& s) {
  if (s == "box" || s == "bbox") return IouKind::box;
  if (s == "mask" || s == "segm") return IouKind::mask;
  throw std::invalid_argument("unknown evaluation kind '" + s + "' (expected box or mask)");
}

/// {0.50, 0.55, ..., 0.95}. Each value is i/20 so that comparisons against
/// exact rational IoUs behave predictably.
inline std::vector<double> default_iou_thresholds() {
  std::vector<double> t;
  for (int i = 10; i <= 19; ++i) t.push_back(i / 20.0);
  return t;
}

/// {0.00, 0.01, ..., 1.00}, each value i/100.
inline std::vector<double> default_recall_grid() {
  std::vector<double> r;
  for (int i = 0; i <= 100; ++i) r.push_back(i / 100.0);
  return r;
}

struct EvalConfig {
  std::vector<double> iou_thresholds = default_iou_thresholds();
  std::vector<double> recall_grid = default_recall_grid();
  double score_floor = 0.05;
  std::vector<int> top_k_values{1, 100};
  IouKind kind = IouKind::box;

  void check() const {
    std::vector<std::string> v;
    if (iou_thresholds.empty()) v.push_back("iou_thresholds must be non-empty");
    for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
      if (iou_thresholds[i] < 0.0 || iou_thresholds[i] > 1.0) v.push_back("iou threshold outside [0,1]");
      if (i > 0 && !(iou_thresholds[i] > iou_thresholds[i - 1])) v.push_back("iou thresholds not strictly increasing");
    }
    if (recall_grid.empty()) v.push_back("recall_grid must be non-empty");
    for (std::size_t i = 0; i < recall_grid.size(); ++i) {
      if (recall_grid[i] < 0.0 || recall_grid[i] > 1.0) v.push_back("recall level outside [0,1]");
      if (i > 0 && !(recall_grid[i] > recall_grid[i - 1])) v.push_back("recall grid not strictly increasing");
    }
    if (!(score_floor >= 0.0 && score_floor < 1.0)) v.push_back("score_floor must be in [0,1)");
    for (int k : top_k_values)
      if (k < 1) v.push_back("top_k values must be >= 1");
    if (!v.empty()) throw ValidationError(std::move(v));
  }

  /// Index of the threshold equal to `phi` (within 1e-9), if configured.
  std::optional<std::size_t> threshold_index(double phi) const {
    for (std::size_t i = 0; i < iou_thresholds.size(); ++i)
      if (std::abs(iou_thresholds[i] - phi) < 1e-9) return i;
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

struct MatchedDetection {
  double score = 0.0;
  /// Matched ground-truth id per IoU threshold.
  std::vector<std::optional<Id>> gt;

  bool is_tp(std::size_t t) const { return gt[t].has_value(); }
};

/// Matching of one (image, class) pair across all IoU thresholds.
struct MatchResult {
  std::vector<MatchedDetection> detections;  // descending score, stable
  std::vector<Id> gt_ids;                    // ascending id
  std::vector<std::vector<bool>> gt_matched;  // [gt][threshold]

  std::size_t num_gt() const { return gt_ids.size(); }
};

namespace detail {

inline double pair_iou(const GroundTruthAnnotation& g, const Detection& d, IouKind kind) {
  if (kind == IouKind::box) return box_iou(g.bbox, d.bbox);
  if (!g.mask) throw ValidationError({"annotation " + std::to_string(g.id) + ": mask evaluation needs a mask"});
  if (!d.mask) return 0.0;
  return mask_iou(*g.mask, *d.mask);
}

}  // namespace detail

/// Greedy matching of one image's detections against its ground truth for a
/// single class. The caller restricts both lists to that image and class and
/// drops detections under the score floor.
inline MatchResult match_detections(std::span<const GroundTruthAnnotation> gts, std::span<const Detection> dets,
                                    const EvalConfig& cfg) {
  const std::size_t nt = cfg.iou_thresholds.size();

  std::vector<std::size_t> gt_order(gts.size());
  std::iota(gt_order.begin(), gt_order.end(), 0);
  std::stable_sort(gt_order.begin(), gt_order.end(), [&](auto a, auto b) { return gts[a].id < gts[b].id; });

  std::vector<std::size_t> det_order(dets.size());
  std::iota(det_order.begin(), det_order.end(), 0);
  std::stable_sort(det_order.begin(), det_order.end(),
                   [&](auto a, auto b) { return dets[a].score > dets[b].score; });

  MatchResult r;
  for (auto gi : gt_order) r.gt_ids.push_back(gts[gi].id);
  r.gt_matched.assign(gts.size(), std::vector<bool>(nt, false));

  // ious[d][g] with d, g in sorted order
  std::vector<std::vector<double>> ious(dets.size(), std::vector<double>(gts.size()));
  for (std::size_t d = 0; d < dets.size(); ++d)
    for (std::size_t g = 0; g < gts.size(); ++g)
      ious[d][g] = detail::pair_iou(gts[gt_order[g]], dets[det_order[d]], cfg.kind);

  r.detections.resize(dets.size());
  for (std::size_t d = 0; d < dets.size(); ++d) {
    r.detections[d].score = dets[det_order[d]].score;
    r.detections[d].gt.assign(nt, std::nullopt);
  }
  for (std::size_t t = 0; t < nt; ++t) {
    const double phi = cfg.iou_thresholds[t];
    for (std::size_t d = 0; d < dets.size(); ++d) {
      std::optional<std::size_t> best;
      double best_iou = -1.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (r.gt_matched[g][t]) continue;
        const double iou = ious[d][g];
        if (iou >= phi && iou > best_iou) {
          best = g;
          best_iou = iou;
        }
      }
      if (best) {
        r.gt_matched[*best][t] = true;
        r.detections[d].gt[t] = r.gt_ids[*best];
      }
    }
  }
  return r;
}

/// All detections of one class across the dataset, merged into one ranking.
struct ClassMatches {
  std::vector<MatchedDetection> detections;  // descending score, stable across image order
  std::size_t num_gt = 0;
};

inline ClassMatches aggregate(std::span<const MatchResult> per_image) {
  ClassMatches c;
  for (const auto& m : per_image) {
    c.num_gt += m.num_gt();
    c.detections.insert(c.detections.end(), m.detections.begin(), m.detections.end());
  }
  std::stable_sort(c.detections.begin(), c.detections.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });
  return c;
}

struct PrecisionRecall {
  double precision = 1.0;
  double recall = 0.0;
};

/// Precision and recall at IoU threshold index `t` counting only detections
/// with score >= tau. Precision is 1 with no admitted detections; recall is 0
/// without ground truth.
inline PrecisionRecall precision_recall(const ClassMatches& m, std::size_t t, double tau) {
  std::size_t tp = 0, fp = 0;
  for (const auto& d : m.detections) {
    if (d.score < tau) continue;
    (d.is_tp(t) ? tp : fp) += 1;
  }
  PrecisionRecall pr;
  if (tp + fp > 0) pr.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (m.num_gt > 0) pr.recall = static_cast<double>(tp) / static_cast<double>(m.num_gt);
  return pr;
}

/// Mean over the recall grid of the best precision reachable at recall >= r.
inline double interpolated_ap(const ClassMatches& m, std::size_t t, std::span<const double> recall_grid) {
  if (m.num_gt == 0 || m.detections.empty() || recall_grid.empty()) return 0.0;
  const std::size_t n = m.detections.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (m.detections[i].is_tp(t) ? tp : fp) += 1;
    precision[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
    recall[i] = static_cast<double>(tp) / static_cast<double>(m.num_gt);
  }
  // precision envelope: max to the right
  for (std::size_t i = n - 1; i > 0; --i) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double sum = 0.0;
  for (double r : recall_grid) {
    auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / static_cast<double>(recall_grid.size());
}

/// Per-image recall admitting the top k detections, averaged over the images
/// (each holding >= 1 ground truth of the class) and the IoU thresholds.
///
/// tau is the k-th highest score, or the lowest score when fewer than k
/// detections exist, or 1.0 when there are none. Ties at tau are admitted.
inline double ar_top_k(std::span<const MatchResult> per_image, int k, std::size_t num_thresholds) {
  if (k < 1) throw std::invalid_argument("ar_top_k: k must be >= 1");
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& m : per_image) {
    if (m.num_gt() == 0) continue;
    ++n;
    if (m.detections.empty()) continue;
    const std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(k), m.detections.size()) - 1;
    const double tau = m.detections[idx].score;
    for (std::size_t t = 0; t < num_thresholds; ++t) {
      std::size_t tp = 0;
      for (const auto& d : m.detections)
        if (d.score >= tau && d.is_tp(t)) ++tp;
      sum += static_cast<double>(tp) / static_cast<double>(m.num_gt());
    }
  }
  if (n == 0 || num_thresholds == 0) return 0.0;
  return sum / static_cast<double>(n * num_thresholds);
}

// ---------------------------------------------------------------------------
// Weighting
// ---------------------------------------------------------------------------

using ClassValues = std::map<Id, double>;

/// w_c = n_c / N over classes with at least one ground truth annotation.
inline ClassValues class_weights(const Dataset& gt) {
  std::map<Id, std::size_t> counts;
  for (const auto& a : gt.annotations) ++counts[a.category_id];
  ClassValues w;
  const double total = static_cast<double>(gt.annotations.size());
  for (const auto& [id, n] : counts) w[id] = static_cast<double>(n) / total;
  return w;
}

/// sum_c w_c v_c / sum_c w_c. Keys must match exactly.
inline double weighted_mean(const ClassValues& values, const ClassValues& weights) {
  if (values.size() != weights.size()) {
    throw std::invalid_argument("weighted_mean: class sets differ (" + std::to_string(values.size()) + " values, " +
                                std::to_string(weights.size()) + " weights)");
  }
  double num = 0.0, den = 0.0;
  for (const auto& [id, w] : weights) {
    auto it = values.find(id);
    if (it == values.end()) throw std::invalid_argument("weighted_mean: no value for class " + std::to_string(id));
    num += w * it->second;
    den += w;
  }
  if (den <= 0.0) return 0.0;
  return num / den;
}

inline double weighted_map_at_iou(const ClassValues& per_class_ap, const ClassValues& weights) {
  return weighted_mean(per_class_ap, weights);
}

/// Mean over IoU thresholds of the weighted mAP; one ClassValues per threshold.
inline double weighted_map(std::span<const ClassValues> per_class_ap_by_iou, const ClassValues& weights) {
  if (per_class_ap_by_iou.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& ap : per_class_ap_by_iou) sum += weighted_map_at_iou(ap, weights);
  return sum / static_cast<double>(per_class_ap_by_iou.size());
}

inline double weighted_mar_top_k(const ClassValues& per_class_ar, const ClassValues& weights) {
  return weighted_mean(per_class_ar, weights);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct EvalReport {
  IouKind kind = IouKind::box;
  double map_w = 0.0;
  std::optional<double> map_w_50;
  std::optional<double> map_w_75;
  std::map<int, double> mar_w_top;  // k -> mAR_w^top k
  std::vector<double> map_w_by_iou;
  ClassValues per_class_ap;               // averaged over IoU thresholds
  std::vector<ClassValues> per_class_ap_by_iou;
  std::map<int, ClassValues> per_class_ar;  // k -> class -> AR
  ClassValues class_weights;
  std::vector<double> iou_thresholds;

  double mar_top(int k) const {
    auto it = mar_w_top.find(k);
    return it == mar_w_top.end() ? 0.0 : it->second;
  }
};

/// Full evaluation of `dets` against `gt`. Classes without ground truth get no
/// weight and no AP entry. Throws ValidationError on unresolvable references.
inline EvalReport evaluate(const Dataset& gt, std::span<const Detection> dets, const EvalConfig& cfg) {
  cfg.check();
  std::set<Id> image_ids, category_ids;
  for (const auto& i : gt.images) image_ids.insert(i.id);
  for (const auto& c : gt.categories) category_ids.insert(c.id);
  std::vector<std::string> bad;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (!image_ids.contains(dets[i].image_id))
      bad.push_back("detection " + std::to_string(i) + ": image_id " + std::to_string(dets[i].image_id) +
                    " does not resolve");
    if (!category_ids.contains(dets[i].category_id))
      bad.push_back("detection " + std::to_string(i) + ": category_id " + std::to_string(dets[i].category_id) +
                    " does not resolve");
  }
  if (!bad.empty()) throw ValidationError(std::move(bad));

  using Key = std::pair<Id, Id>;  // (category, image)
  std::map<Key, std::vector<GroundTruthAnnotation>> gt_by;
  std::map<Key, std::vector<Detection>> dt_by;
  for (const auto& a : gt.annotations) gt_by[{a.category_id, a.image_id}].push_back(a);
  for (const auto& d : dets)
    if (d.score >= cfg.score_floor) dt_by[{d.category_id, d.image_id}].push_back(d);

  EvalReport rep;
  rep.kind = cfg.kind;
  rep.iou_thresholds = cfg.iou_thresholds;
  rep.class_weights = class_weights(gt);
  const std::size_t nt = cfg.iou_thresholds.size();
  rep.per_class_ap_by_iou.assign(nt, {});

  for (const auto& [cat, weight] : rep.class_weights) {
    std::vector<MatchResult> per_image;
    std::set<Id> images;
    for (auto it = gt_by.lower_bound({cat, INT64_MIN}); it != gt_by.end() && it->first.first == cat; ++it)
      images.insert(it->first.second);
    for (auto it = dt_by.lower_bound({cat, INT64_MIN}); it != dt_by.end() && it->first.first == cat; ++it)
      images.insert(it->first.second);
    static const std::vector<GroundTruthAnnotation> no_gt;
    static const std::vector<Detection> no_dt;
    for (Id img : images) {
      auto g = gt_by.find({cat, img});
      auto d = dt_by.find({cat, img});
      per_image.push_back(match_detections(g == gt_by.end() ? no_gt : g->second,
                                           d == dt_by.end() ? no_dt : d->second, cfg));
    }
    const ClassMatches merged = aggregate(per_image);
    double ap_sum = 0.0;
    for (std::size_t t = 0; t < nt; ++t) {
      const double ap = interpolated_ap(merged, t, cfg.recall_grid);
      rep.per_class_ap_by_iou[t][cat] = ap;
      ap_sum += ap;
    }
    rep.per_class_ap[cat] = ap_sum / static_cast<double>(nt);
    for (int k : cfg.top_k_values) rep.per_class_ar[k][cat] = ar_top_k(per_image, k, nt);
  }

  for (std::size_t t = 0; t < nt; ++t)
    rep.map_w_by_iou.push_back(weighted_map_at_iou(rep.per_class_ap_by_iou[t], rep.class_weights));
  rep.map_w = weighted_map(rep.per_class_ap_by_iou, rep.class_weights);
  if (auto i = cfg.threshold_index(0.50)) rep.map_w_50 = rep.map_w_by_iou[*i];
  if (auto i = cfg.threshold_index(0.75)) rep.map_w_75 = rep.map_w_by_iou[*i];
  for (int k : cfg.top_k_values) rep.mar_w_top[k] = weighted_mar_top_k(rep.per_class_ar[k], rep.class_weights);
  return rep;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// The five headline numbers of one evaluation kind, in [0,1].
struct MetricSummary {
  std::optional<double> map_w, map_w_50, map_w_75, mar_top1, mar_top100;

  static MetricSummary from(const EvalReport& r) {
    MetricSummary s;
    s.map_w = r.map_w;
    s.map_w_50 = r.map_w_50;
    s.map_w_75 = r.map_w_75;
    if (r.mar_w_top.contains(1)) s.mar_top1 = r.mar_w_top.at(1);
    if (r.mar_w_top.contains(100)) s.mar_top100 = r.mar_w_top.at(100);
    return s;
  }
};

struct TableRow {
  std::string method;
  MetricSummary box;
  MetricSummary mask;
};

namespace detail {

inline std::string pct(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", *v * 100.0);
  return buf;
}

inline std::string pad(const std::string& s, std::size_t width, bool left = false) {
  if (s.size() >= width) return s;
  return left ? s + std::string(width - s.size(), ' ') : std::string(width - s.size(), ' ') + s;
}

}  // namespace detail

/// Plain-text table with the column order mAP_w, mAP_w@.50, mAP_w@.75,
/// mAR_w^top1, mAR_w^top100, each split into box and mask, values x100.
inline std::string render_table(std::span<const TableRow> rows) {
  std::size_t name_w = 6;
  for (const auto& r : rows) name_w = std::max(name_w, r.method.size());
  const char* groups[] = {"mAP_w", "mAP_w@.50", "mAP_w@.75", "mAR_w^top1", "mAR_w^top100"};
  constexpr std::size_t cell = 6;
  std::ostringstream os;
  os << detail::pad("", name_w, true);
  for (const char* g : groups) os << " | " << detail::pad(g, 2 * cell + 1, true);
  os << "\n" << detail::pad("Method", name_w, true);
  for (std::size_t i = 0; i < 5; ++i) os << " | " << detail::pad("box", cell) << " " << detail::pad("mask", cell);
  os << "\n" << std::string(name_w + 5 * (3 + 2 * cell + 1), '-') << "\n";
  for (const auto& r : rows) {
    const std::optional<double> box[] = {r.box.map_w, r.box.map_w_50, r.box.map_w_75, r.box.mar_top1,
                                         r.box.mar_top100};
    const std::optional<double> mask[] = {r.mask.map_w, r.mask.map_w_50, r.mask.map_w_75, r.mask.mar_top1,
                                          r.mask.mar_top100};
    os << detail::pad(r.method, name_w, true);
    for (std::size_t i = 0; i < 5; ++i)
      os << " | " << detail::pad(detail::pct(box[i]), cell) << " " << detail::pad(detail::pct(mask[i]), cell);
    os << "\n";
  }
  return os.str();
}

inline nlohmann::ordered_json report_json(const EvalReport& r, const Dataset* names = nullptr) {
  auto key = [&](Id id) {
    if (names)
      if (const auto* c = names->find_category(id)) return c->name;
    return std::to_string(id);
  };
  auto class_map = [&](const ClassValues& v) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [id, x] : v) j[key(id)] = x;
    return j;
  };
  nlohmann::ordered_json j;
  j["kind"] = to_string(r.kind);
  j["mAP_w"] = r.map_w;
  j["mAP_w@0.50"] = r.map_w_50 ? nlohmann::ordered_json(*r.map_w_50) : nlohmann::ordered_json();
  j["mAP_w@0.75"] = r.map_w_75 ? nlohmann::ordered_json(*r.map_w_75) : nlohmann::ordered_json();
  for (const auto& [k, v] : r.mar_w_top) j["mAR_w_top" + std::to_string(k)] = v;
  j["iou_thresholds"] = r.iou_thresholds;
  j["mAP_w_by_iou"] = r.map_w_by_iou;
  j["per_class_ap"] = class_map(r.per_class_ap);
  nlohmann::ordered_json ar = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.per_class_ar) ar["top" + std::to_string(k)] = class_map(v);
  j["per_class_ar"] = ar;
  j["class_weights"] = class_map(r.class_weights);
  return j;
}

}  // namespace ffkit
