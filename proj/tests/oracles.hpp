// SPDX-License-Identifier: Apache-2.0
// Brute-force reference implementations shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "gdcunet/metrics.hpp"

namespace oracle {

struct Counts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Counts count(const gdc::BinaryMask& p, const gdc::BinaryMask& g) {
  Counts c;
  for (std::size_t y = 0; y < p.height; ++y)
    for (std::size_t x = 0; x < p.width; ++x) {
      const int a = p(y, x), b = g(y, x);
      c.tp += a & b;
      c.fp += a & (1 - b);
      c.fn += (1 - a) & b;
      c.tn += (1 - a) & (1 - b);
    }
  return c;
}

inline double frac(std::uint64_t n, std::uint64_t d, double if_empty) {
  return d ? double(n) / double(d) : if_empty;
}

struct Overlap {
  double iou, dice, recall, specificity, precision;
};

inline Overlap overlap(const gdc::BinaryMask& p, const gdc::BinaryMask& g) {
  const Counts c = count(p, g);
  const double none = (c.tp + c.fp + c.fn == 0) ? 1.0 : 0.0;
  return {frac(c.tp, c.tp + c.fp + c.fn, 1.0), frac(2 * c.tp, 2 * c.tp + c.fp + c.fn, 1.0),
          frac(c.tp, c.tp + c.fn, none), frac(c.tn, c.tn + c.fp, 1.0), frac(c.tp, c.tp + c.fp, none)};
}

/// Distance from every foreground pixel of `from` to the nearest foreground pixel of `to`.
inline std::vector<double> directed(const gdc::BinaryMask& from, const gdc::BinaryMask& to) {
  std::vector<double> out;
  for (std::size_t y = 0; y < from.height; ++y)
    for (std::size_t x = 0; x < from.width; ++x) {
      if (!from(y, x)) continue;
      std::int64_t best = std::numeric_limits<std::int64_t>::max();
      for (std::size_t v = 0; v < to.height; ++v)
        for (std::size_t u = 0; u < to.width; ++u) {
          if (!to(v, u)) continue;
          const std::int64_t dy = std::int64_t(y) - std::int64_t(v), dx = std::int64_t(x) - std::int64_t(u);
          best = std::min(best, dy * dy + dx * dx);
        }
      out.push_back(std::sqrt(double(best)));
    }
  return out;
}

struct Hd {
  double hd, hd95;
};

inline std::optional<Hd> hausdorff(const gdc::BinaryMask& p, const gdc::BinaryMask& g) {
  const auto np = p.count(), ng = g.count();
  if (np == 0 && ng == 0) return Hd{0, 0};
  if (np == 0 || ng == 0) return std::nullopt;
  auto d = directed(p, g);
  const auto e = directed(g, p);
  d.insert(d.end(), e.begin(), e.end());
  std::sort(d.begin(), d.end());
  const double pos = 0.95 * double(d.size() - 1);
  const auto lo = std::size_t(pos);
  const auto hi = std::min(lo + 1, d.size() - 1);
  return Hd{d.back(), d[lo] + (pos - double(lo)) * (d[hi] - d[lo])};
}

/// Random mask with a per-pair foreground density, so sparse, dense and empty masks all occur.
template <class Rng>
gdc::BinaryMask random_mask(std::size_t h, std::size_t w, Rng& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  const double density = std::pow(u(rng), 2);
  gdc::BinaryMask m(h, w);
  for (auto& v : m.data) v = u(rng) < density ? 1 : 0;
  return m;
}

}  // namespace oracle
