// SPDX-License-Identifier: Apache-2.0
/**
 * @file   synth.hpp
 * @brief  Synthetic fundus-like vessel images with exact masks.
 *
 * Vessel trees grow as curved polylines that branch recursively, each child
 * thinner and shorter than its parent, so the same zig-zag pattern repeats
 * across scales. Strokes are rasterized with a one-pixel anti-aliasing ramp
 * and darken a smoothly textured reddish background; the mask is the set of
 * pixels whose centre lies within half a stroke width of the centre line.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "gdcunet/image_io.hpp"
#include "gdcunet/losses.hpp"
#include "gdcunet/params.hpp"

namespace gdc {

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t height = 128, width = 128;
  int branches = 3;              // root vessels
  int branch_depth = 3;          // levels of recursive branching below each root
  double width_min = 1.5, width_max = 3.5;  // stroke width range, pixels
  double curvature = 0.35;       // max heading change per step, radians
  double noise = 0.03;           // std-dev of per-pixel noise
  double contrast = 0.55;        // relative darkening on vessel centre lines
};

struct SamplePair {
  Image image;        // (1, H, W, 3) in [0, 1]
  BinaryMask mask;
  std::string id;
};

namespace detail {

struct Segment {
  double y0, x0, y1, x1, width;
};

class VesselGrower {
public:
  VesselGrower(const SynthConfig& cfg, Rng& rng) : cfg_(cfg), rng_(rng) {}

  std::vector<Segment> grow() {
    const double h = double(cfg_.height), w = double(cfg_.width);
    // roots leave from a disc-like hub placed off-centre
    const double hy = h * uni(0.35, 0.65), hx = w * uni(0.2, 0.4);
    for (int b = 0; b < cfg_.branches; ++b) {
      const double heading = 2.0 * std::numbers::pi * (double(b) + uni(0.0, 0.8)) /
                             double(std::max(cfg_.branches, 1));
      branch(hy, hx, heading, cfg_.width_max * uni(0.85, 1.0), std::max(h, w) * uni(0.5, 0.8),
             cfg_.branch_depth);
    }
    return std::move(segments_);
  }

private:
  double uni(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng_); }

  void branch(double y, double x, double heading, double width, double length, int depth) {
    const double step = 1.5;
    const int steps = static_cast<int>(length / step);
    const double h = double(cfg_.height), w = double(cfg_.width);
    double turn = 0;
    for (int i = 0; i < steps; ++i) {
      // smoothly varying turn rate gives tortuous, zig-zag centre lines
      turn = 0.7 * turn + 0.3 * uni(-cfg_.curvature, cfg_.curvature);
      heading += turn;
      const double ny = y + step * std::sin(heading), nx = x + step * std::cos(heading);
      segments_.push_back({y, x, ny, nx, width});
      y = ny;
      x = nx;
      if (y < -4 || x < -4 || y > h + 4 || x > w + 4) return;
      if (depth > 0 && i > 3 && uni(0.0, 1.0) < 2.5 / double(std::max(steps, 1))) {
        const double side = uni(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
        const double child_w = std::max(cfg_.width_min, width * uni(0.6, 0.8));
        branch(y, x, heading + side * uni(0.4, 1.0), child_w,
               length * uni(0.35, 0.6), depth - 1);
      }
    }
  }

  const SynthConfig& cfg_;
  Rng& rng_;
  std::vector<Segment> segments_;
};

inline double point_segment_distance(double py, double px, const Segment& s) {
  const double dy = s.y1 - s.y0, dx = s.x1 - s.x0;
  const double len2 = dy * dy + dx * dx;
  double t = len2 > 0 ? ((py - s.y0) * dy + (px - s.x0) * dx) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ey = s.y0 + t * dy - py, ex = s.x0 + t * dx - px;
  return std::sqrt(ey * ey + ex * ex);
}

}  // namespace detail

inline SamplePair synth_vessels(const SynthConfig& cfg) {
  Rng rng(cfg.seed);
  const std::size_t h = cfg.height, w = cfg.width;
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // background: reddish base, radial vignette, a few low-frequency waves
  const double base[3] = {0.62 + 0.1 * u01(rng), 0.32 + 0.08 * u01(rng), 0.16 + 0.06 * u01(rng)};
  struct Wave {
    double ky, kx, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 4; ++i)
    waves.push_back({(u01(rng) - 0.5) * 0.15, (u01(rng) - 0.5) * 0.15,
                     u01(rng) * 2 * std::numbers::pi, 0.03 + 0.03 * u01(rng)});

  std::vector<double> coverage(h * w, 0.0);
  BinaryMask mask(h, w);
  for (const auto& s : detail::VesselGrower(cfg, rng).grow()) {
    const double pad = s.width / 2 + 1.5;
    const long y_lo = std::max(0L, long(std::floor(std::min(s.y0, s.y1) - pad)));
    const long y_hi = std::min(long(h) - 1, long(std::ceil(std::max(s.y0, s.y1) + pad)));
    const long x_lo = std::max(0L, long(std::floor(std::min(s.x0, s.x1) - pad)));
    const long x_hi = std::min(long(w) - 1, long(std::ceil(std::max(s.x0, s.x1) + pad)));
    for (long y = y_lo; y <= y_hi; ++y)
      for (long x = x_lo; x <= x_hi; ++x) {
        const double d = detail::point_segment_distance(double(y), double(x), s);
        const std::size_t i = std::size_t(y) * w + std::size_t(x);
        coverage[i] = std::max(coverage[i], std::clamp(s.width / 2 + 0.5 - d, 0.0, 1.0));
        if (d <= s.width / 2) mask.data[i] = 1;
      }
  }

  std::normal_distribution<double> noise(0.0, cfg.noise);
  Image img(Shape{1, h, w, 3});
  const double cy = double(h) / 2, cx = double(w) / 2, r0 = std::max(cy, cx);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double tex = 0;
      for (const auto& wv : waves) tex += wv.amp * std::sin(wv.ky * y + wv.kx * x + wv.phase);
      const double r = std::hypot(double(y) - cy, double(x) - cx) / r0;
      const double vignette = 1.0 - 0.35 * r * r;
      const double dark = 1.0 - cfg.contrast * coverage[y * w + x];
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = (base[c] + tex) * vignette * dark + noise(rng);
        img(0, y, x, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  return {std::move(img), std::move(mask), "synth_" + std::to_string(cfg.seed)};
}

}  // namespace gdc
