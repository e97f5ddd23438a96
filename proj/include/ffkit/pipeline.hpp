// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

// Model-assisted annotation pipeline: manifest ingestion, product filtering,
// label/box/mask oracle stages, anomaly filtering, ontology mapping and the
// review state machine. All state changes go through an append-only decision
// log; the pipeline state is the fold of that log.

#pragma once

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ffkit/datamodel.hpp"
#include "ffkit/error.hpp"
#include "ffkit/geometry.hpp"
#include "ffkit/ontology.hpp"

namespace ffkit {

// ---------------------------------------------------------------------------
// Timestamps
// ---------------------------------------------------------------------------

using TimePoint = std::chrono::system_clock::time_point;
using Clock = std::function<TimePoint()>;

inline TimePoint system_now() { return std::chrono::system_clock::now(); }

/// ISO 8601 UTC with milliseconds, e.g. 2026-10-19T08:30:00.125Z.
inline std::string format_timestamp(TimePoint tp) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(tp.time_since_epoch()).count();
  std::time_t secs = static_cast<std::time_t>(ms / 1000);
  long frac = static_cast<long>(ms % 1000);
  if (frac < 0) frac += 1000, --secs;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03ldZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, frac);
  return buf;
}

inline std::optional<TimePoint> parse_timestamp(const std::string& s) {
  std::tm tm{};
  int ms = 0;
  if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d.%3dZ", &tm.tm_year, &tm.tm_mon, &tm.tm_mday, &tm.tm_hour,
                  &tm.tm_min, &tm.tm_sec, &ms) != 7)
    return std::nullopt;
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  return std::chrono::system_clock::from_time_t(timegm(&tm)) + std::chrono::milliseconds(ms);
}

// ---------------------------------------------------------------------------
// Ingestion and filtering
// ---------------------------------------------------------------------------

struct ImageRef {
  std::string path;
  int width = 0;
  int height = 0;

  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

struct ProductEntry {
  std::string id;
  std::vector<ImageRef> images;
  std::string description;

  friend bool operator==(const ProductEntry&, const ProductEntry&) = default;
};

struct SkippedEntry {
  std::size_t line = 0;
  std::string id;
  std::string reason;
};

struct IngestResult {
  std::vector<ProductEntry> entries;
  std::vector<SkippedEntry> skipped;
};

/// Resolves (width, height) of an image the manifest gives without extents.
using ImageProbe = std::function<std::pair<int, int>(const std::string& path)>;

/// Line-delimited JSON records {id, images, description}. An image is either a
/// path string or {path, width, height}. Blank lines are ignored.
inline IngestResult parse_manifest(std::istream& in, const ImageProbe& probe = {}) {
  IngestResult out;
  std::map<std::string, std::size_t> seen;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    const std::string who = "manifest line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(who + ": " + e.what());
    }
    ProductEntry e;
    e.id = detail::get_field<std::string>(j, "id", who);
    e.description = detail::get_field<std::string>(j, "description", who);
    if (!j.contains("images") || !j["images"].is_array()) throw ParseError(who + ": 'images' must be an array");
    if (auto [it, fresh] = seen.emplace(e.id, lineno); !fresh) {
      throw ValidationError({"duplicate product id '" + e.id + "' (lines " + std::to_string(it->second) + " and " +
                             std::to_string(lineno) + ")"});
    }
    std::string problem;
    for (const auto& img : j["images"]) {
      ImageRef ref;
      if (img.is_string()) {
        ref.path = img.get<std::string>();
      } else if (img.is_object()) {
        ref.path = detail::get_field<std::string>(img, "path", who);
        if (img.contains("width")) ref.width = detail::get_field<int>(img, "width", who);
        if (img.contains("height")) ref.height = detail::get_field<int>(img, "height", who);
      } else {
        throw ParseError(who + ": image entries must be a path or {path, width, height}");
      }
      if (ref.width <= 0 || ref.height <= 0) {
        if (!probe) {
          problem = "extent of '" + ref.path + "' unknown";
        } else {
          try {
            std::tie(ref.width, ref.height) = probe(ref.path);
          } catch (const std::exception& ex) {
            problem = "cannot probe '" + ref.path + "': " + ex.what();
          }
          if (problem.empty() && (ref.width <= 0 || ref.height <= 0)) problem = "cannot probe '" + ref.path + "'";
        }
      }
      e.images.push_back(std::move(ref));
    }
    if (e.images.empty()) problem = "no images";
    if (e.description.find_first_not_of(" \t\r\n") == std::string::npos) problem = "empty description";
    if (!problem.empty()) {
      out.skipped.push_back({lineno, e.id, problem});
      continue;
    }
    out.entries.push_back(std::move(e));
  }
  return out;
}

inline IngestResult ingest(const std::string& path, const ImageProbe& probe = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  return parse_manifest(in, probe);
}

struct FilterDecision {
  bool multiple_objects = false;
  bool human_body_visible = false;
  bool extreme_closeup = false;
  std::string decided_at;
  std::string annotator;

  bool excluded() const { return multiple_objects || human_body_visible || extreme_closeup; }
};

enum class FilterOutcome { kept, excluded };

inline FilterOutcome apply_filter(const ProductEntry&, const FilterDecision& d) {
  return d.excluded() ? FilterOutcome::excluded : FilterOutcome::kept;
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

struct ScoredBox {
  BBox box;
  double score = 0.0;

  friend bool operator==(const ScoredBox&, const ScoredBox&) = default;
};

class LabelOracle {
 public:
  virtual ~LabelOracle() = default;
  /// Free-text apparel label for a product description; empty when none.
  virtual std::string predict_label(const std::string& description) = 0;
};

class BoxOracle {
 public:
  virtual ~BoxOracle() = default;
  virtual std::vector<ScoredBox> detect(const ImageRef& image, const std::string& prompt) = 0;
};

class MaskOracle {
 public:
  virtual ~MaskOracle() = default;
  virtual MaskRLE segment(const ImageRef& image, const BBox& box) = 0;
};

/// Looks descriptions up by their normalized text.
class TableLabelOracle : public LabelOracle {
 public:
  std::map<std::string, std::string> table;
  std::set<std::string> failing;
  std::atomic<int> calls{0};

  TableLabelOracle() = default;
  explicit TableLabelOracle(std::map<std::string, std::string> t) {
    for (auto& [k, v] : t) table[normalize_label(k)] = std::move(v);
  }

  std::string predict_label(const std::string& description) override {
    ++calls;
    const std::string key = normalize_label(description);
    if (failing.contains(key)) throw OracleError("label oracle failed for '" + description + "'");
    auto it = table.find(key);
    return it == table.end() ? std::string() : it->second;
  }
};

/// Boxes keyed by image path; unknown images get one centered box covering
/// half of each dimension.
class TableBoxOracle : public BoxOracle {
 public:
  std::map<std::string, std::vector<ScoredBox>> table;
  std::set<std::string> failing;
  std::atomic<int> calls{0};

  std::vector<ScoredBox> detect(const ImageRef& image, const std::string&) override {
    ++calls;
    if (failing.contains(image.path)) throw OracleError("box oracle failed for '" + image.path + "'");
    if (auto it = table.find(image.path); it != table.end()) return it->second;
    const double w = std::floor(image.width / 2.0), h = std::floor(image.height / 2.0);
    return {{{std::floor(image.width / 4.0), std::floor(image.height / 4.0), std::max(1.0, w), std::max(1.0, h)}, 0.9}};
  }
};

/// Fills the box rectangle at the image extent.
class RectMaskOracle : public MaskOracle {
 public:
  std::map<std::string, std::pair<int, int>> wrong_extent;  // path -> (height, width) to emit instead
  std::set<std::string> failing;
  std::atomic<int> calls{0};

  MaskRLE segment(const ImageRef& image, const BBox& box) override {
    ++calls;
    if (failing.contains(image.path)) throw OracleError("mask oracle failed for '" + image.path + "'");
    int h = image.height, w = image.width;
    if (auto it = wrong_extent.find(image.path); it != wrong_extent.end()) std::tie(h, w) = it->second;
    return rle_encode(fill_box(box, h, w));
  }
};

// ---------------------------------------------------------------------------
// Candidates
// ---------------------------------------------------------------------------

enum class CandidateStatus { pending, auto_rejected, awaiting_review, approved, flagged };

inline const char* to_string(CandidateStatus s) {
  switch (s) {
    case CandidateStatus::pending: return "pending";
    case CandidateStatus::auto_rejected: return "auto_rejected";
    case CandidateStatus::awaiting_review: return "awaiting_review";
    case CandidateStatus::approved: return "approved";
    case CandidateStatus::flagged: return "flagged";
  }
  return "?";
}

inline bool can_transition(CandidateStatus from, CandidateStatus to) {
  using S = CandidateStatus;
  return (from == S::pending && (to == S::auto_rejected || to == S::awaiting_review)) ||
         (from == S::awaiting_review && (to == S::approved || to == S::flagged));
}

inline bool is_terminal(CandidateStatus s) {
  return s == CandidateStatus::auto_rejected || s == CandidateStatus::approved || s == CandidateStatus::flagged;
}

struct AnnotationCandidate {
  std::string id;  // "<product>:<image index>"
  std::string product_id;
  ImageRef image;
  std::string description;

  bool label_done = false;
  std::optional<std::string> label;
  bool boxes_done = false;
  std::vector<ScoredBox> boxes;
  bool anomaly_done = false;
  std::optional<Category> category;
  bool mask_done = false;
  std::optional<MaskRLE> mask;

  CandidateStatus status = CandidateStatus::pending;
  std::string reason;
  std::optional<std::string> review_key;

  void transition(CandidateStatus to, std::string why = {}) {
    if (!can_transition(status, to)) {
      throw ConflictError("candidate '" + id + "': cannot move from " + to_string(status) + " to " + to_string(to));
    }
    status = to;
    reason = std::move(why);
  }

  friend bool operator==(const AnnotationCandidate&, const AnnotationCandidate&) = default;
};

/// One candidate per image of every product not excluded by a filter decision.
/// With `require_filter`, products without a decision are left out as well.
inline std::vector<AnnotationCandidate> make_candidates(std::span<const ProductEntry> entries,
                                                        const std::map<std::string, FilterDecision>& filters = {},
                                                        bool require_filter = false) {
  std::vector<AnnotationCandidate> out;
  for (const auto& e : entries) {
    auto f = filters.find(e.id);
    if (f == filters.end() ? require_filter : apply_filter(e, f->second) == FilterOutcome::excluded) continue;
    for (std::size_t i = 0; i < e.images.size(); ++i) {
      AnnotationCandidate c;
      c.id = e.id + ":" + std::to_string(i);
      c.product_id = e.id;
      c.image = e.images[i];
      c.description = e.description;
      out.push_back(std::move(c));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Lowercased and trimmed oracle output, nullopt when empty. Throws OracleError.
inline std::optional<std::string> run_label_stage(const std::string& description, LabelOracle& oracle) {
  std::string s = oracle.predict_label(description);
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return std::nullopt;
  s = s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

inline std::vector<ScoredBox> run_box_stage(const ImageRef& image, BoxOracle& oracle,
                                            const std::string& prompt = "an object") {
  return oracle.detect(image, prompt);
}

inline MaskRLE run_mask_stage(const ImageRef& image, const BBox& box, MaskOracle& oracle) {
  return oracle.segment(image, box);
}

inline bool mask_matches(const ImageRef& image, const MaskRLE& m) {
  return m.height == image.height && m.width == image.width &&
         rle_pixel_count(m) == static_cast<std::uint64_t>(image.height) * static_cast<std::uint64_t>(image.width);
}

/// Anomaly rule: no label, or a box count other than one.
inline bool is_anomalous(const AnnotationCandidate& c) { return !c.label || c.boxes.size() != 1; }

/// Rejects pending candidates whose label and box stages are complete and that
/// break the anomaly rule. Returns the number rejected.
inline std::size_t anomaly_filter(std::span<AnnotationCandidate> candidates) {
  std::size_t n = 0;
  for (auto& c : candidates) {
    if (c.status != CandidateStatus::pending || !c.label_done || !c.boxes_done) continue;
    c.anomaly_done = true;
    if (is_anomalous(c)) c.transition(CandidateStatus::auto_rejected, "anomaly"), ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Decision log
// ---------------------------------------------------------------------------

struct LogRecord {
  std::string candidate_id;
  std::string stage;
  nlohmann::json outcome;
  std::string timestamp;
  std::string actor;
};

inline nlohmann::ordered_json record_json(const LogRecord& r) {
  nlohmann::ordered_json j;
  j["candidate_id"] = r.candidate_id;
  j["stage"] = r.stage;
  j["outcome"] = r.outcome;
  j["timestamp"] = r.timestamp;
  j["actor"] = r.actor;
  return j;
}

/// Append-only line-delimited log. Each append is flushed to disk before it
/// returns. A trailing partial line left by a crash is discarded on open.
class DecisionLog {
 public:
  explicit DecisionLog(std::string path, Clock clock = system_now) : path_(std::move(path)), clock_(std::move(clock)) {
    std::string text;
    if (std::ifstream in(path_, std::ios::binary); in) {
      std::ostringstream ss;
      ss << in.rdbuf();
      text = ss.str();
    }
    const auto keep = text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1;
    std::istringstream lines(text.substr(0, keep));
    std::string line;
    for (std::size_t lineno = 1; std::getline(lines, line); ++lineno) {
      if (line.empty()) continue;
      const std::string who = "decision log line " + std::to_string(lineno);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(who + ": " + e.what());
      }
      LogRecord r;
      r.candidate_id = detail::get_field<std::string>(j, "candidate_id", who);
      r.stage = detail::get_field<std::string>(j, "stage", who);
      r.outcome = j.contains("outcome") ? j["outcome"] : nlohmann::json::object();
      r.timestamp = detail::get_field<std::string>(j, "timestamp", who);
      r.actor = detail::get_field<std::string>(j, "actor", who);
      records_.push_back(std::move(r));
    }
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open decision log '" + path_ + "'");
    if (keep != text.size() && ::ftruncate(fd_, static_cast<off_t>(keep)) != 0) {
      ::close(fd_);
      throw IoError("cannot truncate decision log '" + path_ + "'");
    }
    ::lseek(fd_, 0, SEEK_END);
  }

  DecisionLog(const DecisionLog&) = delete;
  DecisionLog& operator=(const DecisionLog&) = delete;
  ~DecisionLog() {
    if (fd_ >= 0) ::close(fd_);
  }

  const std::string& path() const { return path_; }
  TimePoint now() const { return clock_(); }

  std::vector<LogRecord> records() const {
    std::lock_guard lock(mu_);
    return records_;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return records_.size();
  }

  /// Writes the record and fsyncs before returning it.
  LogRecord append(std::string candidate_id, std::string stage, nlohmann::json outcome, std::string actor) {
    std::lock_guard lock(mu_);
    LogRecord r{std::move(candidate_id), std::move(stage), std::move(outcome), format_timestamp(clock_()),
                std::move(actor)};
    const std::string line = record_json(r).dump() + "\n";
    std::size_t off = 0;
    while (off < line.size()) {
      const ssize_t n = ::write(fd_, line.data() + off, line.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw IoError("write to decision log '" + path_ + "' failed");
      }
      off += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw IoError("fsync of decision log '" + path_ + "' failed");
    records_.push_back(r);
    return r;
  }

 private:
  std::string path_;
  Clock clock_;
  int fd_ = -1;
  mutable std::mutex mu_;
  std::vector<LogRecord> records_;
};

namespace detail {

inline nlohmann::json boxes_json(const std::vector<ScoredBox>& boxes) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& b : boxes) a.push_back({{"bbox", {b.box.x, b.box.y, b.box.w, b.box.h}}, {"score", b.score}});
  return a;
}

inline std::vector<ScoredBox> parse_boxes(const nlohmann::json& a, const std::string& who) {
  if (!a.is_array()) throw ParseError(who + ": boxes must be an array");
  std::vector<ScoredBox> out;
  for (const auto& b : a) {
    out.push_back({parse_bbox(b.contains("bbox") ? b["bbox"] : nlohmann::json(), who),
                   b.contains("score") && b["score"].is_number() ? b["score"].get<double>() : 0.0});
  }
  return out;
}

}  // namespace detail

/// Applies one log record to a candidate. Records that do not fit the current
/// state are ignored, so a log replays to the same state however often it is
/// folded.
inline void apply_record(AnnotationCandidate& c, const LogRecord& r) {
  const auto& o = r.outcome;
  const std::string who = "record for '" + c.id + "'";
  auto error_reason = [&](const char* fallback) {
    return o.contains("reason") && o["reason"].is_string() ? o["reason"].get<std::string>() : std::string(fallback);
  };
  if (r.stage == "label") {
    if (c.label_done || c.status != CandidateStatus::pending) return;
    c.label_done = true;
    if (o.contains("error")) return c.transition(CandidateStatus::auto_rejected, "oracle_error");
    if (o.contains("label") && o["label"].is_string()) c.label = o["label"].get<std::string>();
  } else if (r.stage == "box") {
    if (c.boxes_done || c.status != CandidateStatus::pending) return;
    c.boxes_done = true;
    if (o.contains("error")) return c.transition(CandidateStatus::auto_rejected, "oracle_error");
    c.boxes = detail::parse_boxes(o.value("boxes", nlohmann::json::array()), who);
  } else if (r.stage == "anomaly") {
    if (c.anomaly_done || c.status != CandidateStatus::pending) return;
    c.anomaly_done = true;
    if (!o.value("passed", false)) return c.transition(CandidateStatus::auto_rejected, error_reason("anomaly"));
    c.category = Category{o.value("category_id", Id{0}), o.value("category", std::string()),
                          o.value("supercategory", std::string())};
  } else if (r.stage == "mask") {
    if (c.mask_done || c.status != CandidateStatus::pending) return;
    c.mask_done = true;
    if (o.contains("error")) return c.transition(CandidateStatus::auto_rejected, error_reason("oracle_error"));
    c.mask = detail::parse_rle(o.value("mask", nlohmann::json()), who);
    c.transition(CandidateStatus::awaiting_review);
  } else if (r.stage == "review") {
    if (c.status != CandidateStatus::awaiting_review) return;
    const bool approve = o.value("verdict", std::string()) == "approve";
    c.transition(approve ? CandidateStatus::approved : CandidateStatus::flagged,
                 approve ? std::string() : o.value("reason", std::string()));
    if (o.contains("idempotency_key") && o["idempotency_key"].is_string())
      c.review_key = o["idempotency_key"].get<std::string>();
  }
}

/// Pipeline state as the fold of the log over the initial candidates.
/// Records for unknown candidates are skipped.
inline std::vector<AnnotationCandidate> fold(std::vector<AnnotationCandidate> candidates,
                                             std::span<const LogRecord> records) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < candidates.size(); ++i) index[candidates[i].id] = i;
  for (const auto& r : records)
    if (auto it = index.find(r.candidate_id); it != index.end()) apply_record(candidates[it->second], r);
  return candidates;
}

/// Filter decisions recorded in the log, keyed by product id. The first
/// decision per product wins.
inline std::map<std::string, FilterDecision> fold_filters(std::span<const LogRecord> records) {
  std::map<std::string, FilterDecision> out;
  for (const auto& r : records) {
    if (r.stage != "filter" || out.contains(r.candidate_id)) continue;
    FilterDecision d;
    d.multiple_objects = r.outcome.value("multiple_objects", false);
    d.human_body_visible = r.outcome.value("human_body_visible", false);
    d.extreme_closeup = r.outcome.value("extreme_closeup", false);
    d.decided_at = r.timestamp;
    d.annotator = r.actor;
    out[r.candidate_id] = d;
  }
  return out;
}

inline nlohmann::json filter_outcome_json(const FilterDecision& d) {
  return {{"multiple_objects", d.multiple_objects},
          {"human_body_visible", d.human_body_visible},
          {"extreme_closeup", d.extreme_closeup},
          {"excluded", d.excluded()}};
}

/// Records a filter decision for a product. Repeating the same flags is a
/// no-op; different flags on a decided product raise ConflictError.
inline FilterDecision record_filter(const std::string& product_id, const FilterDecision& d, DecisionLog& log,
                                    const std::string& actor) {
  const auto records = log.records();
  const auto existing = fold_filters(records);
  if (auto it = existing.find(product_id); it != existing.end()) {
    const auto& e = it->second;
    if (e.multiple_objects == d.multiple_objects && e.human_body_visible == d.human_body_visible &&
        e.extreme_closeup == d.extreme_closeup)
      return e;
    throw ConflictError("product '" + product_id + "' already has a filter decision");
  }
  const auto r = log.append(product_id, "filter", filter_outcome_json(d), actor);
  return fold_filters(std::span<const LogRecord>(&r, 1)).at(product_id);
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

struct PipelineOracles {
  LabelOracle& label;
  BoxOracle& box;
  MaskOracle& mask;
};

struct PipelineConfig {
  std::string prompt = "an object";
  std::size_t workers = 4;
  Ontology ontology = fashionfail_ontology();
  std::string actor = "pipeline";
};

namespace detail {

/// Runs the stages still missing for one candidate, logging each outcome.
inline void advance(AnnotationCandidate& c, PipelineOracles& oracles, DecisionLog& log, const PipelineConfig& cfg) {
  auto commit = [&](const char* stage, nlohmann::json outcome) {
    apply_record(c, log.append(c.id, stage, std::move(outcome), cfg.actor));
  };
  auto pending = [&] { return c.status == CandidateStatus::pending; };

  if (pending() && !c.label_done) {
    try {
      const auto label = run_label_stage(c.description, oracles.label);
      commit("label", {{"label", label ? nlohmann::json(*label) : nlohmann::json(nullptr)}});
    } catch (const IoError&) {
      throw;
    } catch (const std::exception& e) {
      commit("label", {{"error", e.what()}});
    }
  }
  if (pending() && !c.boxes_done) {
    try {
      commit("box", {{"boxes", boxes_json(run_box_stage(c.image, oracles.box, cfg.prompt))}});
    } catch (const IoError&) {
      throw;
    } catch (const std::exception& e) {
      commit("box", {{"error", e.what()}});
    }
  }
  if (pending() && !c.anomaly_done) {
    if (is_anomalous(c)) {
      commit("anomaly", {{"passed", false}, {"reason", "anomaly"}});
    } else if (const auto m = cfg.ontology.map_label(*c.label); !m.ok()) {
      commit("anomaly", {{"passed", false}, {"reason", to_string(m.rejection)}, {"detail", m.detail}});
    } else {
      commit("anomaly", {{"passed", true},
                         {"category_id", m.category->id},
                         {"category", m.category->name},
                         {"supercategory", m.category->supercategory}});
    }
  }
  if (pending() && !c.mask_done) {
    try {
      const auto mask = run_mask_stage(c.image, c.boxes.front().box, oracles.mask);
      if (mask_matches(c.image, mask)) {
        commit("mask", {{"mask", rle_json(mask)}});
      } else {
        commit("mask", {{"error", "mask extent " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                                      " does not match image " + std::to_string(c.image.height) + "x" +
                                      std::to_string(c.image.width)},
                        {"reason", "bad_mask"}});
      }
    } catch (const IoError&) {
      throw;
    } catch (const std::exception& e) {
      commit("mask", {{"error", e.what()}, {"reason", "oracle_error"}});
    }
  }
}

}  // namespace detail

/// Brings every candidate through the automatic stages. Stages already in the
/// log are not rerun, so the call resumes an interrupted run. Candidates are
/// processed by a bounded pool of workers; the result is the fold of the log
/// and does not depend on completion order.
inline std::vector<AnnotationCandidate> run_pipeline(const std::vector<AnnotationCandidate>& candidates,
                                                     PipelineOracles oracles, DecisionLog& log,
                                                     const PipelineConfig& cfg = {}) {
  auto state = fold(candidates, log.records());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t i; (i = next++) < state.size();) {
      try {
        detail::advance(state[i], oracles, log, cfg);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = state.size();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(cfg.workers, state.size()));
  std::vector<std::thread> pool;
  for (std::size_t k = 1; k < n; ++k) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return fold(candidates, log.records());
}

struct StatusCounts {
  std::map<std::string, std::size_t> by_status;          // status name -> count
  std::map<std::string, std::size_t> rejected_by_reason;  // auto_rejected reason -> count
  std::map<std::string, std::size_t> flagged_by_reason;
  std::size_t total = 0;
};

inline StatusCounts count_statuses(std::span<const AnnotationCandidate> candidates) {
  StatusCounts out;
  for (auto s : {CandidateStatus::pending, CandidateStatus::auto_rejected, CandidateStatus::awaiting_review,
                 CandidateStatus::approved, CandidateStatus::flagged})
    out.by_status[to_string(s)] = 0;
  for (const auto& c : candidates) {
    ++out.by_status[to_string(c.status)];
    if (c.status == CandidateStatus::auto_rejected) ++out.rejected_by_reason[c.reason];
    if (c.status == CandidateStatus::flagged) ++out.flagged_by_reason[c.reason];
  }
  out.total = candidates.size();
  return out;
}

// ---------------------------------------------------------------------------
// Review
// ---------------------------------------------------------------------------

enum class VerdictKind { approve, flag };

struct Verdict {
  VerdictKind kind = VerdictKind::approve;
  std::string reason;  // bad_label | bad_box | bad_mask for flags
  std::optional<std::string> idempotency_key;
};

inline const std::set<std::string>& flag_reasons() {
  static const std::set<std::string> r{"bad_label", "bad_box", "bad_mask"};
  return r;
}

inline void check_verdict(const Verdict& v) {
  if (v.kind == VerdictKind::flag && !flag_reasons().contains(v.reason))
    throw ValidationError({"flag reason must be one of bad_label, bad_box, bad_mask (got '" + v.reason + "')"});
  if (v.kind == VerdictKind::approve && !v.reason.empty())
    throw ValidationError({"approve takes no reason"});
}

/// True when the candidate's recorded verdict is the same as `v`.
inline bool same_verdict(const AnnotationCandidate& c, const Verdict& v) {
  return (c.status == CandidateStatus::approved && v.kind == VerdictKind::approve) ||
         (c.status == CandidateStatus::flagged && v.kind == VerdictKind::flag && c.reason == v.reason);
}

/// Applies a human verdict to a candidate awaiting review and logs it.
/// Repeating the recorded verdict is a no-op; anything else on a decided or
/// never-reviewable candidate raises ConflictError.
inline AnnotationCandidate record_review(const AnnotationCandidate& c, const Verdict& v, DecisionLog& log,
                                         const std::string& actor) {
  check_verdict(v);
  if (c.status != CandidateStatus::awaiting_review) {
    if (same_verdict(c, v)) return c;
    throw ConflictError("candidate '" + c.id + "' is " + to_string(c.status) + (c.reason.empty() ? "" : "(" + c.reason + ")") +
                        " and cannot be reviewed");
  }
  nlohmann::json outcome{{"verdict", v.kind == VerdictKind::approve ? "approve" : "flag"}};
  if (v.kind == VerdictKind::flag) outcome["reason"] = v.reason;
  if (v.idempotency_key) outcome["idempotency_key"] = *v.idempotency_key;
  AnnotationCandidate out = c;
  apply_record(out, log.append(c.id, "review", std::move(outcome), actor));
  return out;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// Builds a dataset with one image and one annotation per approved candidate,
/// in candidate-id order. Categories are those used, or the whole surviving
/// ontology with `all_categories`.
inline Dataset export_dataset(std::span<const AnnotationCandidate> approved, const Ontology& ont,
                              bool all_categories = false) {
  std::vector<const AnnotationCandidate*> order;
  for (const auto& c : approved) order.push_back(&c);
  std::sort(order.begin(), order.end(), [](auto a, auto b) { return a->id < b->id; });

  Dataset d;
  std::map<Id, Category> used;
  Id next = 1;
  for (const AnnotationCandidate* c : order) {
    const std::string who = "candidate '" + c->id + "'";
    std::vector<std::string> v;
    if (c->status != CandidateStatus::approved) v.push_back(who + ": status is " + to_string(c->status) + ", not approved");
    if (!c->label) v.push_back(who + ": no label");
    if (c->boxes.size() != 1) v.push_back(who + ": expected exactly one box, got " + std::to_string(c->boxes.size()));
    if (!c->mask) v.push_back(who + ": no mask");
    std::optional<Category> cat;
    if (c->label) {
      const auto m = ont.map_label(*c->label);
      if (m.ok()) cat = m.category;
      else v.push_back(who + ": label '" + *c->label + "' rejected (" + to_string(m.rejection) + ")");
    }
    if (v.empty()) {
      Dataset one;
      one.categories = {*cat};
      one.images = {{next, c->image.width, c->image.height, c->image.path}};
      GroundTruthAnnotation a;
      a.id = next;
      a.image_id = next;
      a.category_id = cat->id;
      a.bbox = c->boxes.front().box;
      a.mask = c->mask;
      a.area = static_cast<double>(rle_area(*c->mask));
      one.annotations = {a};
      for (const auto& s : validate(one)) v.push_back(who + ": " + s);
      if (v.empty()) {
        d.images.push_back(one.images.front());
        d.annotations.push_back(a);
        used[cat->id] = *cat;
        ++next;
      }
    }
    if (!v.empty()) throw ValidationError(std::move(v));
  }
  if (all_categories) {
    d.categories = ont.surviving();
  } else {
    for (const auto& [_, c] : used) d.categories.push_back(c);
  }
  canonicalize(d);
  if (auto v = validate(d); !v.empty()) throw ValidationError(std::move(v));
  return d;
}

}  // namespace ffkit
