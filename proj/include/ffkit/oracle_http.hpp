// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

// HTTP clients for externally hosted label, box and mask models.
//
//   POST {description}            -> {label}
//   POST {image, prompt}          -> {boxes: [{bbox, score}]}
//   POST {image, bbox}            -> {mask: {size, counts}}
//
// `image` is the image path as it appears in the manifest.

#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <thread>

#include "ffkit/pipeline.hpp"
#include "httplib.h"

namespace ffkit {

struct HttpOracleConfig {
  std::string base_url;  // e.g. http://localhost:9000
  std::string path;      // e.g. /label
  int attempts = 3;
  std::chrono::milliseconds backoff{500};  // doubled after every failed attempt
  std::chrono::seconds timeout{30};
  std::function<void(std::chrono::milliseconds)> sleep = [](auto d) { std::this_thread::sleep_for(d); };
};

namespace detail {

/// POSTs JSON with retries; returns the parsed response body or throws OracleError.
inline nlohmann::json post_json(const HttpOracleConfig& cfg, const nlohmann::json& body) {
  httplib::Client client(cfg.base_url);
  client.set_connection_timeout(cfg.timeout);
  client.set_read_timeout(cfg.timeout);
  client.set_write_timeout(cfg.timeout);
  std::string last_error = "no attempt made";
  auto delay = cfg.backoff;
  for (int attempt = 1; attempt <= cfg.attempts; ++attempt) {
    if (auto res = client.Post(cfg.path, body.dump(), "application/json")) {
      if (res->status >= 200 && res->status < 300) {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error& e) {
          last_error = std::string("malformed response: ") + e.what();
        }
      } else {
        last_error = "HTTP " + std::to_string(res->status);
      }
    } else {
      last_error = httplib::to_string(res.error());
    }
    if (attempt < cfg.attempts) {
      cfg.sleep(delay);
      delay *= 2;
    }
  }
  throw OracleError(cfg.base_url + cfg.path + ": " + last_error + " after " + std::to_string(cfg.attempts) +
                    " attempts");
}

}  // namespace detail

class HttpLabelOracle : public LabelOracle {
 public:
  explicit HttpLabelOracle(HttpOracleConfig cfg) : cfg_(std::move(cfg)) {}

  std::string predict_label(const std::string& description) override {
    const auto j = detail::post_json(cfg_, {{"description", description}});
    if (!j.contains("label") || j["label"].is_null()) return {};
    if (!j["label"].is_string()) throw OracleError("label oracle: 'label' must be a string");
    return j["label"].get<std::string>();
  }

 private:
  HttpOracleConfig cfg_;
};

class HttpBoxOracle : public BoxOracle {
 public:
  explicit HttpBoxOracle(HttpOracleConfig cfg) : cfg_(std::move(cfg)) {}

  std::vector<ScoredBox> detect(const ImageRef& image, const std::string& prompt) override {
    const auto j = detail::post_json(cfg_, {{"image", image.path}, {"prompt", prompt}});
    try {
      return detail::parse_boxes(j.value("boxes", nlohmann::json::array()), "box oracle");
    } catch (const ParseError& e) {
      throw OracleError(e.what());
    }
  }

 private:
  HttpOracleConfig cfg_;
};

class HttpMaskOracle : public MaskOracle {
 public:
  explicit HttpMaskOracle(HttpOracleConfig cfg) : cfg_(std::move(cfg)) {}

  MaskRLE segment(const ImageRef& image, const BBox& box) override {
    const auto j = detail::post_json(cfg_, {{"image", image.path}, {"bbox", {box.x, box.y, box.w, box.h}}});
    try {
      return detail::parse_rle(j.value("mask", nlohmann::json()), "mask oracle");
    } catch (const ParseError& e) {
      throw OracleError(e.what());
    }
  }

 private:
  HttpOracleConfig cfg_;
};

}  // namespace ffkit
