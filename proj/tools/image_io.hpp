// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

// OpenCV-backed image reading and writing for the command line tool.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <string>
#include <utility>

#include "ffkit/augment.hpp"
#include "ffkit/error.hpp"

namespace ffkit::tools {

inline Raster read_raster(const std::string& path) {
  const cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot read image '" + path + "'");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Raster r(rgb.rows, rgb.cols);
  for (int y = 0; y < rgb.rows; ++y) std::memcpy(r.px(y, 0), rgb.ptr(y), static_cast<std::size_t>(rgb.cols) * 3);
  return r;
}

inline void write_raster(const Raster& r, const std::string& path) {
  cv::Mat rgb(r.height, r.width, CV_8UC3);
  for (int y = 0; y < r.height; ++y) std::memcpy(rgb.ptr(y), r.px(y, 0), static_cast<std::size_t>(r.width) * 3);
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  if (!cv::imwrite(path, bgr)) throw IoError("cannot write image '" + path + "'");
}

/// (width, height) of an image file.
inline std::pair<int, int> probe_image(const std::string& path) {
  const cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot read image '" + path + "'");
  return {m.cols, m.rows};
}

/// Two-pixel box outlines, clipped to the raster.
inline void draw_boxes(Raster& r, const std::vector<BBox>& boxes, Rgb color = {255, 32, 32}) {
  for (const auto& b : boxes) {
    const int x0 = std::max(0, static_cast<int>(std::floor(b.x))), y0 = std::max(0, static_cast<int>(std::floor(b.y)));
    const int x1 = std::min(r.width - 1, static_cast<int>(std::ceil(b.right())) - 1);
    const int y1 = std::min(r.height - 1, static_cast<int>(std::ceil(b.bottom())) - 1);
    auto set = [&](int y, int x) {
      if (x >= 0 && y >= 0 && x < r.width && y < r.height) std::copy(color.begin(), color.end(), r.px(y, x));
    };
    for (int t = 0; t < 2; ++t) {
      for (int x = x0; x <= x1; ++x) set(y0 + t, x), set(y1 - t, x);
      for (int y = y0; y <= y1; ++y) set(y, x0 + t), set(y, x1 - t);
    }
  }
}

}  // namespace ffkit::tools
