// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

// HTTP review service. Two modes share one queue: `filter` walks products and
// records exclusion flags, `quality` walks candidates awaiting review and
// records approve/flag verdicts. Every accepted decision is in the decision
// log before the response is sent.

#pragma once

#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ffkit/pipeline.hpp"
#include "ffkit/png.hpp"
#include "httplib.h"

namespace ffkit {

enum class ReviewMode { filter, quality };

inline const char* to_string(ReviewMode m) { return m == ReviewMode::filter ? "filter" : "quality"; }

inline ReviewMode parse_review_mode(const std::string& s) {
  if (s == "filter") return ReviewMode::filter;
  if (s == "quality") return ReviewMode::quality;
  throw std::invalid_argument("unknown review mode '" + s + "' (expected filter or quality)");
}

/// Queue progress with a sliding-window throughput estimate.
struct ReviewQueueState {
  std::size_t total = 0;
  std::size_t completed = 0;
  TimePoint started_at{};
  std::chrono::milliseconds window{std::chrono::seconds(60)};
  std::deque<TimePoint> recent;  // decision times, oldest first

  void record(TimePoint t) {
    ++completed;
    recent.push_back(t);
  }

  std::size_t in_window(TimePoint now) const {
    std::size_t n = 0;
    for (auto t : recent) n += t > now - window && t <= now;
    return n;
  }

  /// Decisions per second over the window ending at `now`.
  double speed(TimePoint now) const {
    return static_cast<double>(in_window(now)) / std::chrono::duration<double>(window).count();
  }

  /// Seconds until the queue is drained at the current speed; none when idle.
  std::optional<double> eta_seconds(TimePoint now) const {
    const double s = speed(now);
    if (s <= 0.0) return std::nullopt;
    return static_cast<double>(total - std::min(total, completed)) / s;
  }

  void prune(TimePoint now) {
    while (!recent.empty() && recent.front() <= now - window) recent.pop_front();
  }
};

struct ServiceOptions {
  std::string image_root = ".";
  std::chrono::milliseconds window{std::chrono::seconds(60)};
  std::string default_actor = "reviewer";
};

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

namespace detail {

inline std::string url_encode_path(const std::string& s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '/' || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 15]);
    }
  }
  return out;
}

inline HttpReply json_reply(int status, const nlohmann::ordered_json& j) { return {status, j.dump(), "application/json"}; }

inline HttpReply error_reply(int status, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = message;
  return json_reply(status, j);
}

inline std::string content_type_for(const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".png") return "image/png";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  if (ext == ".bmp") return "image/bmp";
  return "application/octet-stream";
}

}  // namespace detail

class ReviewService {
 public:
  ReviewService(ReviewMode mode, DecisionLog& log, std::vector<ProductEntry> products,
                std::vector<AnnotationCandidate> candidates, ServiceOptions opts = {})
      : mode_(mode), log_(log), products_(std::move(products)), opts_(std::move(opts)) {
    queue_.window = opts_.window;
    queue_.started_at = log_.now();
    const auto records = log_.records();
    if (mode_ == ReviewMode::filter) {
      for (std::size_t i = 0; i < products_.size(); ++i) product_index_[products_[i].id] = i;
      filters_ = fold_filters(records);
      for (const auto& r : records)
        if (r.stage == "filter" && product_index_.contains(r.candidate_id) && !keys_.contains(r.candidate_id))
          keys_[r.candidate_id] = r.outcome.value("idempotency_key", std::string());
      queue_.total = products_.size();
      for (const auto& p : products_)
        if (filters_.contains(p.id)) count_decision(record_time(records, p.id, "filter"));
    } else {
      for (auto& c : fold(std::move(candidates), records)) {
        if (c.status != CandidateStatus::awaiting_review && c.status != CandidateStatus::approved &&
            c.status != CandidateStatus::flagged)
          continue;
        candidate_index_[c.id] = candidates_.size();
        candidates_.push_back(std::move(c));
      }
      queue_.total = candidates_.size();
      for (const auto& c : candidates_)
        if (c.status != CandidateStatus::awaiting_review) count_decision(record_time(records, c.id, "review"));
    }
  }

  ReviewMode mode() const { return mode_; }

  ReviewQueueState queue_state() const {
    std::lock_guard lock(mu_);
    return queue_;
  }

  std::vector<AnnotationCandidate> candidates() const {
    std::lock_guard lock(mu_);
    return candidates_;
  }

  HttpReply next() {
    std::lock_guard lock(mu_);
    if (mode_ == ReviewMode::filter) {
      for (const auto& p : products_)
        if (!filters_.contains(p.id)) return detail::json_reply(200, product_json(p));
    } else {
      for (const auto& c : candidates_)
        if (c.status == CandidateStatus::awaiting_review) return detail::json_reply(200, candidate_json(c));
    }
    return {204, "", "application/json"};
  }

  HttpReply item(const std::string& id) {
    std::lock_guard lock(mu_);
    if (mode_ == ReviewMode::filter) {
      auto it = product_index_.find(id);
      if (it == product_index_.end()) return detail::error_reply(404, "unknown item '" + id + "'");
      return detail::json_reply(200, product_json(products_[it->second]));
    }
    auto it = candidate_index_.find(id);
    if (it == candidate_index_.end()) return detail::error_reply(404, "unknown item '" + id + "'");
    return detail::json_reply(200, candidate_json(candidates_[it->second]));
  }

  /// Body: filter mode {verdict: keep|exclude, flags: {...}}; quality mode
  /// {verdict: approve|flag, reason}. Either may carry idempotency_key, which
  /// the Idempotency-Key header overrides.
  HttpReply decide(const std::string& id, const std::string& body, const std::string& header_key = {},
                   const std::string& header_actor = {}) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      return detail::error_reply(400, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) return detail::error_reply(400, "body must be a JSON object");
    std::string key = header_key;
    if (key.empty() && j.contains("idempotency_key")) {
      if (!j["idempotency_key"].is_string()) return detail::error_reply(400, "idempotency_key must be a string");
      key = j["idempotency_key"].get<std::string>();
    }
    std::string actor = header_actor.empty() ? opts_.default_actor : header_actor;
    if (j.contains("annotator") && j["annotator"].is_string()) actor = j["annotator"].get<std::string>();

    std::lock_guard lock(mu_);
    try {
      return mode_ == ReviewMode::filter ? decide_filter(id, j, key, actor) : decide_quality(id, j, key, actor);
    } catch (const ValidationError& e) {
      return detail::error_reply(400, e.violations().empty() ? e.what() : e.violations().front());
    } catch (const ConflictError& e) {
      return detail::error_reply(409, e.what());
    } catch (const IoError& e) {
      return detail::error_reply(500, e.what());
    }
  }

  HttpReply progress() {
    std::lock_guard lock(mu_);
    const auto now = log_.now();
    queue_.prune(now);
    nlohmann::ordered_json j;
    j["mode"] = to_string(mode_);
    j["total"] = queue_.total;
    j["completed"] = queue_.completed;
    j["remaining"] = queue_.total - std::min(queue_.total, queue_.completed);
    j["window_seconds"] = std::chrono::duration<double>(queue_.window).count();
    j["decisions_in_window"] = queue_.in_window(now);
    j["speed"] = queue_.speed(now);
    const auto eta = queue_.eta_seconds(now);
    j["eta_seconds"] = eta ? nlohmann::ordered_json(*eta) : nlohmann::ordered_json(nullptr);
    j["started_at"] = format_timestamp(queue_.started_at);
    return detail::json_reply(200, j);
  }

  /// Serves a file below the image root. Paths escaping the root are refused.
  HttpReply image(const std::string& relative) const {
    namespace fs = std::filesystem;
    const fs::path rel(relative);
    if (relative.empty() || rel.is_absolute()) return detail::error_reply(400, "bad image path");
    for (const auto& part : rel)
      if (part == "..") return detail::error_reply(400, "bad image path");
    const fs::path full = fs::path(opts_.image_root) / rel;
    std::ifstream in(full, std::ios::binary);
    if (!in) return detail::error_reply(404, "no such image '" + relative + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return {200, ss.str(), detail::content_type_for(relative)};
  }

  /// Grayscale PNG of a candidate's mask (quality mode).
  HttpReply mask(const std::string& id) {
    std::lock_guard lock(mu_);
    auto it = candidate_index_.find(id);
    if (it == candidate_index_.end() || !candidates_[it->second].mask)
      return detail::error_reply(404, "no mask for '" + id + "'");
    return {200, mask_png(rle_decode(*candidates_[it->second].mask)), "image/png"};
  }

  /// Registers the API and content routes on `server`.
  void mount(httplib::Server& server) {
    auto send = [](httplib::Response& res, const HttpReply& r) {
      res.status = r.status;
      if (!r.body.empty() || r.status != 204) res.set_content(r.body, r.content_type);
    };
    server.Get("/api/queue/next", [this, send](const httplib::Request&, httplib::Response& res) { send(res, next()); });
    server.Get("/api/progress", [this, send](const httplib::Request&, httplib::Response& res) { send(res, progress()); });
    server.Post(R"(/api/items/(.+)/decision)", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, decide(req.matches[1], req.body, req.get_header_value("Idempotency-Key"),
                       req.get_header_value("X-Annotator")));
    });
    server.Get(R"(/api/items/(.+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, item(req.matches[1]));
    });
    server.Get(R"(/content/images/(.+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, image(req.matches[1]));
    });
    server.Get(R"(/content/masks/(.+)\.png)", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, mask(req.matches[1]));
    });
  }

 private:
  static std::optional<TimePoint> record_time(const std::vector<LogRecord>& records, const std::string& id,
                                              const std::string& stage) {
    for (const auto& r : records)
      if (r.candidate_id == id && r.stage == stage) return parse_timestamp(r.timestamp);
    return std::nullopt;
  }

  void count_decision(std::optional<TimePoint> t) {
    if (t) queue_.record(*t);
    else ++queue_.completed;
  }

  nlohmann::ordered_json product_json(const ProductEntry& p) const {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["mode"] = "filter";
    j["image_url"] = "/content/images/" + detail::url_encode_path(p.images.front().path);
    j["image_urls"] = nlohmann::ordered_json::array();
    for (const auto& img : p.images) j["image_urls"].push_back("/content/images/" + detail::url_encode_path(img.path));
    j["description"] = p.description;
    if (auto it = filters_.find(p.id); it != filters_.end()) {
      j["status"] = it->second.excluded() ? "excluded" : "kept";
      j["flags"] = filter_outcome_json(it->second);
    } else {
      j["status"] = "pending";
    }
    return j;
  }

  nlohmann::ordered_json candidate_json(const AnnotationCandidate& c) const {
    nlohmann::ordered_json j;
    j["id"] = c.id;
    j["mode"] = "quality";
    j["image_url"] = "/content/images/" + detail::url_encode_path(c.image.path);
    j["width"] = c.image.width;
    j["height"] = c.image.height;
    j["label"] = c.label ? nlohmann::ordered_json(*c.label) : nlohmann::ordered_json(nullptr);
    j["category"] = c.category ? nlohmann::ordered_json(c.category->name) : nlohmann::ordered_json(nullptr);
    if (!c.boxes.empty()) {
      const auto& b = c.boxes.front();
      j["bbox"] = {b.box.x, b.box.y, b.box.w, b.box.h};
      j["score"] = b.score;
    }
    j["mask_url"] = "/content/masks/" + detail::url_encode_path(c.id) + ".png";
    j["status"] = to_string(c.status);
    if (!c.reason.empty()) j["reason"] = c.reason;
    j["description"] = c.description;
    return j;
  }

  HttpReply decide_filter(const std::string& id, const nlohmann::json& j, const std::string& key,
                          const std::string& actor) {
    auto it = product_index_.find(id);
    if (it == product_index_.end()) return detail::error_reply(404, "unknown item '" + id + "'");
    const std::string verdict = j.value("verdict", std::string());
    if (verdict != "keep" && verdict != "exclude")
      return detail::error_reply(400, "verdict must be 'keep' or 'exclude'");
    FilterDecision d;
    if (j.contains("flags")) {
      const auto& f = j["flags"];
      if (!f.is_object()) return detail::error_reply(400, "flags must be an object");
      for (const auto& [name, v] : f.items()) {
        if (!v.is_boolean()) return detail::error_reply(400, "flag '" + name + "' must be a boolean");
        if (name == "multiple_objects") d.multiple_objects = v.get<bool>();
        else if (name == "human_body_visible") d.human_body_visible = v.get<bool>();
        else if (name == "extreme_closeup") d.extreme_closeup = v.get<bool>();
        else return detail::error_reply(400, "unknown flag '" + name + "'");
      }
    }
    if ((verdict == "exclude") != d.excluded())
      return detail::error_reply(400, "'exclude' needs at least one flag and 'keep' none");

    if (auto done = filters_.find(id); done != filters_.end()) {
      if (!key.empty() && keys_[id] == key) return detail::json_reply(200, product_json(products_[it->second]));
      return detail::error_reply(409, "item '" + id + "' already decided");
    }
    auto outcome = filter_outcome_json(d);
    if (!key.empty()) outcome["idempotency_key"] = key;
    const auto r = log_.append(id, "filter", outcome, actor);
    d.decided_at = r.timestamp;
    d.annotator = r.actor;
    filters_[id] = d;
    keys_[id] = key;
    queue_.record(parse_timestamp(r.timestamp).value_or(log_.now()));
    return detail::json_reply(200, product_json(products_[it->second]));
  }

  HttpReply decide_quality(const std::string& id, const nlohmann::json& j, const std::string& key,
                           const std::string& actor) {
    auto it = candidate_index_.find(id);
    if (it == candidate_index_.end()) return detail::error_reply(404, "unknown item '" + id + "'");
    Verdict v;
    const std::string verdict = j.value("verdict", std::string());
    if (verdict == "approve") v.kind = VerdictKind::approve;
    else if (verdict == "flag") v.kind = VerdictKind::flag;
    else return detail::error_reply(400, "verdict must be 'approve' or 'flag'");
    if (j.contains("reason")) {
      if (!j["reason"].is_string()) return detail::error_reply(400, "reason must be a string");
      v.reason = j["reason"].get<std::string>();
    }
    check_verdict(v);
    if (!key.empty()) v.idempotency_key = key;

    AnnotationCandidate& c = candidates_[it->second];
    if (c.status != CandidateStatus::awaiting_review) {
      if (!key.empty() && c.review_key == key) return detail::json_reply(200, candidate_json(c));
      return detail::error_reply(409, "item '" + id + "' already decided (" + to_string(c.status) + ")");
    }
    c = record_review(c, v, log_, actor);
    queue_.record(log_.now());
    return detail::json_reply(200, candidate_json(c));
  }

  ReviewMode mode_;
  DecisionLog& log_;
  std::vector<ProductEntry> products_;
  std::vector<AnnotationCandidate> candidates_;
  ServiceOptions opts_;
  std::map<std::string, std::size_t> product_index_, candidate_index_;
  std::map<std::string, FilterDecision> filters_;
  std::map<std::string, std::string> keys_;
  ReviewQueueState queue_;
  mutable std::mutex mu_;
};

}  // namespace ffkit
