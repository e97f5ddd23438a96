// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

// Box and mask geometry: IoU, run-length codec, union boxes, relative size.
//
// Boxes use the COCO convention: top-left origin, (x, y, w, h), x to the
// right, y down. Run-length masks scan column-major and always start with a
// background run, so an all-foreground mask encodes as [0, h*w].

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "ffkit/error.hpp"

namespace ffkit {

struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const noexcept { return w * h; }
  double right() const noexcept { return x + w; }
  double bottom() const noexcept { return y + h; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct MaskRLE {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  friend bool operator==(const MaskRLE&, const MaskRLE&) = default;
};

/// Dense binary mask, row-major, one byte per pixel (0 or 1).
struct BitMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  BitMask() = default;
  BitMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int row, int col) { return bits[static_cast<std::size_t>(row) * width + col]; }
  std::uint8_t at(int row, int col) const { return bits[static_cast<std::size_t>(row) * width + col]; }

  std::size_t area() const noexcept {
    return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
  }

  friend bool operator==(const BitMask&, const BitMask&) = default;
};

inline double box_iou(const BBox& a, const BBox& b) noexcept {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline std::uint64_t rle_pixel_count(const MaskRLE& r) noexcept {
  std::uint64_t total = 0;
  for (auto c : r.counts) total += c;
  return total;
}

/// Foreground pixel count (sum of the odd-indexed runs).
inline std::uint64_t rle_area(const MaskRLE& r) noexcept {
  std::uint64_t fg = 0;
  for (std::size_t i = 1; i < r.counts.size(); i += 2) fg += r.counts[i];
  return fg;
}

inline MaskRLE rle_encode(const BitMask& m) {
  if (m.height < 0 || m.width < 0 || m.bits.size() != static_cast<std::size_t>(m.height) * m.width) {
    throw std::invalid_argument("rle_encode: bit grid does not match mask extent");
  }
  MaskRLE out{m.height, m.width, {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (int col = 0; col < m.width; ++col) {
    for (int row = 0; row < m.height; ++row) {
      const std::uint8_t v = m.at(row, col) ? 1 : 0;
      if (v != current) {
        out.counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  out.counts.push_back(run);
  return out;
}

inline BitMask rle_decode(const MaskRLE& r) {
  if (r.height < 0 || r.width < 0) throw ValidationError({"rle: negative extent"});
  const std::uint64_t expected = static_cast<std::uint64_t>(r.height) * r.width;
  if (rle_pixel_count(r) != expected) {
    throw ValidationError({"rle: counts sum " + std::to_string(rle_pixel_count(r)) + " != height*width " +
                           std::to_string(expected)});
  }
  BitMask m(r.height, r.width);
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < r.counts.size(); ++i) {
    const bool fg = (i % 2) == 1;
    for (std::uint32_t k = 0; k < r.counts[i]; ++k, ++pos) {
      if (fg) {
        const auto col = static_cast<int>(pos / r.height);
        const auto row = static_cast<int>(pos % r.height);
        m.at(row, col) = 1;
      }
    }
  }
  return m;
}

/// Intersection over union computed directly on the runs, without decoding.
/// Two empty masks have IoU 0.
inline double mask_iou(const MaskRLE& a, const MaskRLE& b) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("mask_iou: mask sizes differ");
  }
  const std::uint64_t total = static_cast<std::uint64_t>(a.height) * a.width;
  if (rle_pixel_count(a) != total || rle_pixel_count(b) != total) {
    throw ValidationError({"mask_iou: counts do not cover the mask extent"});
  }
  const std::uint64_t area_a = rle_area(a);
  const std::uint64_t area_b = rle_area(b);

  // Walk both run sequences in lockstep, accumulating overlap of foreground runs.
  std::uint64_t inter = 0;
  std::size_t ia = 0, ib = 0;
  std::uint64_t left_a = a.counts.empty() ? 0 : a.counts[0];
  std::uint64_t left_b = b.counts.empty() ? 0 : b.counts[0];
  std::uint64_t pos = 0;
  while (pos < total) {
    while (left_a == 0 && ia + 1 < a.counts.size()) left_a = a.counts[++ia];
    while (left_b == 0 && ib + 1 < b.counts.size()) left_b = b.counts[++ib];
    const std::uint64_t step = std::min(left_a, left_b);
    if (step == 0) break;
    if ((ia % 2) == 1 && (ib % 2) == 1) inter += step;
    left_a -= step;
    left_b -= step;
    pos += step;
  }
  const std::uint64_t uni = area_a + area_b - inter;
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline BBox union_box(std::span<const BBox> boxes) {
  if (boxes.empty()) throw std::invalid_argument("union_box: empty box list");
  double x0 = boxes[0].x, y0 = boxes[0].y, x1 = boxes[0].right(), y1 = boxes[0].bottom();
  for (const auto& b : boxes.subspan(1)) {
    x0 = std::min(x0, b.x);
    y0 = std::min(y0, b.y);
    x1 = std::max(x1, b.right());
    y1 = std::max(y1, b.bottom());
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

/// sqrt(mask_area / image_area), the scale statistic used for object size comparisons.
inline double relative_mask_size(double mask_area, int image_width, int image_height) {
  const double image_area = static_cast<double>(image_width) * static_cast<double>(image_height);
  if (image_width <= 0 || image_height <= 0) throw std::invalid_argument("relative_mask_size: zero-area image");
  if (mask_area < 0.0 || mask_area > image_area) {
    throw std::invalid_argument("relative_mask_size: mask area outside [0, image area]");
  }
  return std::sqrt(mask_area / image_area);
}

/// Foreground rectangle covering the pixels whose centers fall inside the box.
inline BitMask fill_box(const BBox& box, int height, int width) {
  BitMask m(height, width);
  const int c0 = std::max(0, static_cast<int>(std::ceil(box.x - 0.5)));
  const int r0 = std::max(0, static_cast<int>(std::ceil(box.y - 0.5)));
  const int c1 = std::min(width, static_cast<int>(std::ceil(box.right() - 0.5)));
  const int r1 = std::min(height, static_cast<int>(std::ceil(box.bottom() - 0.5)));
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) m.at(r, c) = 1;
  return m;
}

/// Tight bounding box of the foreground, or an empty box when there is none.
inline BBox mask_bbox(const BitMask& m) {
  int r0 = m.height, c0 = m.width, r1 = -1, c1 = -1;
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c)
      if (m.at(r, c)) {
        r0 = std::min(r0, r);
        c0 = std::min(c0, c);
        r1 = std::max(r1, r);
        c1 = std::max(c1, c);
      }
  if (r1 < 0) return {};
  return {static_cast<double>(c0), static_cast<double>(r0), static_cast<double>(c1 - c0 + 1),
          static_cast<double>(r1 - r0 + 1)};
}

}  // namespace ffkit
