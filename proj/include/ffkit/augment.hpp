// Copyright 2026 The ffkit Authors
// SPDX-License-Identifier: Apache-2.0

// Training-time augmentations on image + annotation samples: horizontal flip,
// photometric distortion, union-box crop and large-scale jitter.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ffkit/error.hpp"
#include "ffkit/geometry.hpp"

namespace ffkit {

using Rgb = std::array<std::uint8_t, 3>;

/// Interleaved 8-bit RGB, row-major.
struct Raster {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Raster() = default;
  Raster(int h, int w, Rgb fill = {0, 0, 0}) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3) {
    for (std::size_t i = 0; i < data.size(); i += 3) std::copy(fill.begin(), fill.end(), data.begin() + i);
  }

  std::uint8_t* px(int row, int col) { return data.data() + (static_cast<std::size_t>(row) * width + col) * 3; }
  const std::uint8_t* px(int row, int col) const {
    return data.data() + (static_cast<std::size_t>(row) * width + col) * 3;
  }

  friend bool operator==(const Raster&, const Raster&) = default;
};

struct Sample {
  Raster raster;
  std::vector<BBox> boxes;
  std::vector<BitMask> masks;  // empty, or parallel to boxes
  std::vector<std::int64_t> labels;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Violations of the sample invariants; empty when the sample is valid.
inline std::vector<std::string> check_sample(const Sample& s, double eps = 1e-6) {
  std::vector<std::string> v;
  const auto& r = s.raster;
  if (r.data.size() != static_cast<std::size_t>(r.height) * r.width * 3) v.push_back("raster size mismatch");
  if (s.labels.size() != s.boxes.size()) v.push_back("labels not parallel to boxes");
  if (!s.masks.empty() && s.masks.size() != s.boxes.size()) v.push_back("masks not parallel to boxes");
  for (std::size_t i = 0; i < s.boxes.size(); ++i) {
    const auto& b = s.boxes[i];
    if (!(b.w > 0 && b.h > 0)) v.push_back("box " + std::to_string(i) + ": non-positive extent");
    if (b.x < -eps || b.y < -eps || b.right() > r.width + eps || b.bottom() > r.height + eps)
      v.push_back("box " + std::to_string(i) + ": outside raster");
  }
  for (std::size_t i = 0; i < s.masks.size(); ++i)
    if (s.masks[i].height != r.height || s.masks[i].width != r.width)
      v.push_back("mask " + std::to_string(i) + ": extent differs from raster");
  return v;
}

struct PhotometricConfig {
  double brightness_delta = 32.0;  // on the 0..255 scale
  double contrast_lo = 0.5, contrast_hi = 1.5;
  double saturation_lo = 0.5, saturation_hi = 1.5;
  double hue_degrees = 18.0;
  double step_probability = 0.5;
};

struct AugmentConfig {
  double flip_probability = 0.5;
  double photometric_probability = 0.5;
  double crop_probability = 0.5;
  double jitter_probability = 0.5;
  double jitter_min = 0.1, jitter_max = 2.0;
  bool random_anchor = false;
  Rgb pad_value{128, 128, 128};
  PhotometricConfig photometric;
  std::uint64_t seed = 0;

  void check() const {
    std::vector<std::string> v;
    for (double p : {flip_probability, photometric_probability, crop_probability, jitter_probability,
                     photometric.step_probability})
      if (!(p >= 0.0 && p <= 1.0)) v.push_back("probabilities must lie in [0, 1]");
    if (!(jitter_min > 0.0 && jitter_min < jitter_max)) v.push_back("jitter scale range must be positive with min < max");
    if (!(photometric.contrast_lo > 0 && photometric.contrast_lo <= photometric.contrast_hi))
      v.push_back("contrast range invalid");
    if (!(photometric.saturation_lo >= 0 && photometric.saturation_lo <= photometric.saturation_hi))
      v.push_back("saturation range invalid");
    if (!v.empty()) throw ValidationError(std::move(v));
  }
};

namespace detail {

/// Uniform double in [0, 1), identical across standard libraries.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); }

inline std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0;
  if (d == 0) h = 0;
  else if (mx == r) h = 60.0 * std::fmod((g - b) / d + 6.0, 6.0);
  else if (mx == g) h = 60.0 * ((b - r) / d + 2.0);
  else h = 60.0 * ((r - g) / d + 4.0);
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0);
  const double c = v * s, x = c * (1 - std::abs(std::fmod(h / 60.0, 2.0) - 1)), m = v - c;
  double r1 = 0, g1 = 0, b1 = 0;
  switch (static_cast<int>(h / 60.0) % 6) {
    case 0: r1 = c, g1 = x; break;
    case 1: r1 = x, g1 = c; break;
    case 2: g1 = c, b1 = x; break;
    case 3: g1 = x, b1 = c; break;
    case 4: r1 = x, b1 = c; break;
    default: r1 = c, b1 = x; break;
  }
  r = r1 + m, g = g1 + m, b = b1 + m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Flip
// ---------------------------------------------------------------------------

inline Sample horizontal_flip(const Sample& s) {
  Sample out = s;
  const int w = s.raster.width;
  for (int r = 0; r < s.raster.height; ++r)
    for (int c = 0; c < w; ++c) std::copy_n(s.raster.px(r, c), 3, out.raster.px(r, w - 1 - c));
  for (auto& b : out.boxes) b.x = w - b.x - b.w;
  for (std::size_t i = 0; i < s.masks.size(); ++i)
    for (int r = 0; r < s.masks[i].height; ++r)
      for (int c = 0; c < w; ++c) out.masks[i].at(r, w - 1 - c) = s.masks[i].at(r, c);
  return out;
}

// ---------------------------------------------------------------------------
// Photometric distortion
// ---------------------------------------------------------------------------

/// One draw of the photometric recipe; an empty slot means the sub-step is skipped.
struct PhotometricParams {
  std::optional<double> brightness;  // additive delta
  std::optional<double> contrast;    // multiplicative factor
  std::optional<double> saturation;  // blend factor against luma
  std::optional<double> hue;         // degrees

  friend bool operator==(const PhotometricParams&, const PhotometricParams&) = default;
};

inline PhotometricParams sample_photometric(const PhotometricConfig& cfg, std::mt19937_64& rng) {
  PhotometricParams p;
  if (detail::unit_uniform(rng) < cfg.step_probability)
    p.brightness = detail::uniform(rng, -cfg.brightness_delta, cfg.brightness_delta);
  if (detail::unit_uniform(rng) < cfg.step_probability)
    p.contrast = detail::uniform(rng, cfg.contrast_lo, cfg.contrast_hi);
  if (detail::unit_uniform(rng) < cfg.step_probability)
    p.saturation = detail::uniform(rng, cfg.saturation_lo, cfg.saturation_hi);
  if (detail::unit_uniform(rng) < cfg.step_probability)
    p.hue = detail::uniform(rng, -cfg.hue_degrees, cfg.hue_degrees);
  return p;
}

/// Applies brightness, contrast, saturation and hue in that order, in floating
/// point, clamping to [0, 255] once at the end. Geometry is untouched.
inline Sample photometric_distortion(const Sample& s, const PhotometricParams& p) {
  Sample out = s;
  if (!p.brightness && !p.contrast && !p.saturation && !p.hue) return out;
  for (std::size_t i = 0; i < out.raster.data.size(); i += 3) {
    std::uint8_t* px = out.raster.data.data() + i;
    double r = px[0], g = px[1], b = px[2];
    if (p.brightness) r += *p.brightness, g += *p.brightness, b += *p.brightness;
    if (p.contrast) r *= *p.contrast, g *= *p.contrast, b *= *p.contrast;
    if (p.saturation) {
      const double y = 0.299 * r + 0.587 * g + 0.114 * b;
      r = y + *p.saturation * (r - y), g = y + *p.saturation * (g - y), b = y + *p.saturation * (b - y);
    }
    if (p.hue) {
      r = std::clamp(r, 0.0, 255.0), g = std::clamp(g, 0.0, 255.0), b = std::clamp(b, 0.0, 255.0);
      double h, sat, v;
      detail::rgb_to_hsv(r, g, b, h, sat, v);
      detail::hsv_to_rgb(h + *p.hue, sat, v, r, g, b);
    }
    px[0] = detail::clamp_byte(r), px[1] = detail::clamp_byte(g), px[2] = detail::clamp_byte(b);
  }
  return out;
}

inline Sample photometric_distortion(const Sample& s, const PhotometricConfig& cfg, std::mt19937_64& rng) {
  return photometric_distortion(s, sample_photometric(cfg, rng));
}

// ---------------------------------------------------------------------------
// Union-box crop
// ---------------------------------------------------------------------------

/// Crops to the pixel-aligned hull of the union of all boxes.
inline Sample box_crop(const Sample& s) {
  if (s.boxes.empty()) throw std::invalid_argument("box_crop: sample has no boxes");
  const BBox u = union_box(s.boxes);
  const int x0 = std::clamp(static_cast<int>(std::floor(u.x)), 0, s.raster.width);
  const int y0 = std::clamp(static_cast<int>(std::floor(u.y)), 0, s.raster.height);
  const int x1 = std::clamp(static_cast<int>(std::ceil(u.right())), x0, s.raster.width);
  const int y1 = std::clamp(static_cast<int>(std::ceil(u.bottom())), y0, s.raster.height);
  const int w = x1 - x0, h = y1 - y0;

  Sample out;
  out.raster = Raster(h, w);
  for (int r = 0; r < h; ++r) std::copy_n(s.raster.px(y0 + r, x0), static_cast<std::size_t>(w) * 3, out.raster.px(r, 0));
  out.labels = s.labels;
  for (const auto& b : s.boxes) out.boxes.push_back({b.x - x0, b.y - y0, b.w, b.h});
  for (const auto& m : s.masks) {
    BitMask c(h, w);
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) c.at(r, col) = m.at(y0 + r, x0 + col);
    out.masks.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Large-scale jitter
// ---------------------------------------------------------------------------

/// Bilinear resize with half-pixel centers and edge clamping.
inline Raster resize_bilinear(const Raster& src, int h, int w) {
  Raster out(h, w);
  if (src.width == 0 || src.height == 0) return out;
  const double sy = static_cast<double>(src.height) / h, sx = static_cast<double>(src.width) / w;
  for (int r = 0; r < h; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy - y0;
    for (int c = 0; c < w; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx - x0;
      for (int k = 0; k < 3; ++k) {
        const double top = src.px(y0, x0)[k] * (1 - tx) + src.px(y0, x1)[k] * tx;
        const double bot = src.px(y1, x0)[k] * (1 - tx) + src.px(y1, x1)[k] * tx;
        out.px(r, c)[k] = detail::clamp_byte(top * (1 - ty) + bot * ty);
      }
    }
  }
  return out;
}

inline BitMask resize_nearest(const BitMask& src, int h, int w) {
  BitMask out(h, w);
  for (int r = 0; r < h; ++r) {
    const int sr = std::min(src.height - 1, static_cast<int>((r + 0.5) * src.height / h));
    for (int c = 0; c < w; ++c) {
      const int sc = std::min(src.width - 1, static_cast<int>((c + 0.5) * src.width / w));
      out.at(r, c) = src.at(sr, sc);
    }
  }
  return out;
}

/// Where the scaled content sits relative to the canvas, as a fraction of the
/// slack (0 = top-left, 1 = bottom-right).
struct JitterAnchor {
  double fx = 0.0;
  double fy = 0.0;
};

/// Resizes the content by `scale` and restores the original canvas by padding
/// (shrink) or windowing (enlarge). Boxes whose visible part is under one pixel
/// in either dimension are dropped together with their mask and label.
inline Sample large_scale_jitter(const Sample& s, double scale, const AugmentConfig& cfg, JitterAnchor anchor = {}) {
  if (!(scale >= cfg.jitter_min && scale <= cfg.jitter_max)) {
    throw std::invalid_argument("large_scale_jitter: scale " + std::to_string(scale) + " outside configured range");
  }
  const int W = s.raster.width, H = s.raster.height;
  const int sw = std::max(1, static_cast<int>(std::lround(W * scale)));
  const int sh = std::max(1, static_cast<int>(std::lround(H * scale)));
  const double kx = static_cast<double>(sw) / W, ky = static_cast<double>(sh) / H;
  // Offset of the content's top-left corner on the canvas (negative when windowing).
  const auto offset = [](int canvas, int content, double f) {
    const int slack = std::abs(canvas - content);
    const int o = std::min(slack, static_cast<int>(std::floor(std::clamp(f, 0.0, 1.0) * (slack + 1))));
    return content <= canvas ? o : -o;
  };
  const int ox = offset(W, sw, anchor.fx), oy = offset(H, sh, anchor.fy);

  const Raster content = resize_bilinear(s.raster, sh, sw);
  Sample out;
  out.raster = Raster(H, W, cfg.pad_value);
  for (int r = std::max(0, oy); r < std::min(H, oy + sh); ++r)
    for (int c = std::max(0, ox); c < std::min(W, ox + sw); ++c) std::copy_n(content.px(r - oy, c - ox), 3, out.raster.px(r, c));

  for (std::size_t i = 0; i < s.boxes.size(); ++i) {
    const auto& b = s.boxes[i];
    const double x0 = std::clamp(b.x * kx + ox, 0.0, static_cast<double>(W));
    const double y0 = std::clamp(b.y * ky + oy, 0.0, static_cast<double>(H));
    const double x1 = std::clamp(b.right() * kx + ox, 0.0, static_cast<double>(W));
    const double y1 = std::clamp(b.bottom() * ky + oy, 0.0, static_cast<double>(H));
    if (x1 - x0 < 1.0 || y1 - y0 < 1.0) continue;
    out.boxes.push_back({x0, y0, x1 - x0, y1 - y0});
    out.labels.push_back(s.labels[i]);
    if (!s.masks.empty()) {
      const BitMask scaled = resize_nearest(s.masks[i], sh, sw);
      BitMask m(H, W);
      for (int r = std::max(0, oy); r < std::min(H, oy + sh); ++r)
        for (int c = std::max(0, ox); c < std::min(W, ox + sw); ++c) m.at(r, c) = scaled.at(r - oy, c - ox);
      out.masks.push_back(std::move(m));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Every random decision of one pipeline application, drawn before any pixel
/// is touched.
struct AugmentPlan {
  bool flip = false;
  std::optional<PhotometricParams> photometric;
  bool crop = false;
  std::optional<double> jitter_scale;
  JitterAnchor anchor;
};

inline AugmentPlan draw_plan(const AugmentConfig& cfg, std::mt19937_64& rng) {
  AugmentPlan p;
  p.flip = detail::unit_uniform(rng) < cfg.flip_probability;
  const bool photometric = detail::unit_uniform(rng) < cfg.photometric_probability;
  const PhotometricParams params = sample_photometric(cfg.photometric, rng);
  if (photometric) p.photometric = params;
  p.crop = detail::unit_uniform(rng) < cfg.crop_probability;
  const bool jitter = detail::unit_uniform(rng) < cfg.jitter_probability;
  const double scale = detail::uniform(rng, cfg.jitter_min, cfg.jitter_max);
  if (jitter) p.jitter_scale = scale;
  if (cfg.random_anchor) p.anchor = {detail::unit_uniform(rng), detail::unit_uniform(rng)};
  return p;
}

/// Order: flip, photometric, crop, jitter. The crop is skipped for samples
/// without boxes.
inline Sample apply_plan(const Sample& s, const AugmentPlan& plan, const AugmentConfig& cfg) {
  Sample out = s;
  if (plan.flip) out = horizontal_flip(out);
  if (plan.photometric) out = photometric_distortion(out, *plan.photometric);
  if (plan.crop && !out.boxes.empty()) out = box_crop(out);
  if (plan.jitter_scale) out = large_scale_jitter(out, *plan.jitter_scale, cfg, plan.anchor);
  return out;
}

inline Sample apply_pipeline(const Sample& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
  cfg.check();
  return apply_plan(s, draw_plan(cfg, rng), cfg);
}

/// Per-sample seed for batch use, so samples can be processed in any order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Side-by-side composite of several rasters on a pad background, tops aligned.
inline Raster compose_side_by_side(const std::vector<Raster>& panels, int gap = 8, Rgb background = {255, 255, 255}) {
  int w = 0, h = 0;
  for (const auto& p : panels) w += p.width, h = std::max(h, p.height);
  if (!panels.empty()) w += gap * static_cast<int>(panels.size() - 1);
  Raster out(h, w, background);
  int x = 0;
  for (const auto& p : panels) {
    for (int r = 0; r < p.height; ++r) std::copy_n(p.px(r, 0), static_cast<std::size_t>(p.width) * 3, out.px(r, x));
    x += p.width + gap;
  }
  return out;
}

}  // namespace ffkit
