// SPDX-License-Identifier: Apache-2.0
/**
 * @file   metrics.hpp
 * @brief  Segmentation metrics: IoU, Dice, recall, specificity, precision,
 *         Hausdorff distance and HD95 over foreground pixel sets.
 *
 * Conventions:
 *  - A ratio whose denominator is empty is 1 when prediction and ground truth
 *    agree on that part of the image (e.g. both masks empty) and 0 otherwise.
 *  - Hausdorff distances use the Euclidean metric between foreground pixel
 *    centres. HD95 is the 95th percentile (linear interpolation) of the pooled
 *    directed point-to-set distances of both directions.
 *  - If exactly one mask is empty the Hausdorff distance is undefined
 *    (std::nullopt). Two empty masks have distance 0.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gdcunet/losses.hpp"

namespace gdc {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct OverlapMetrics {
  double iou = 0, dice = 0, recall = 0, specificity = 0, precision = 0;
  ConfusionCounts counts;
};

inline ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw ShapeError("metrics: mask extents differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

namespace detail {
/// num / den, with 0/0 resolved to `empty_value`.
inline double ratio(std::uint64_t num, std::uint64_t den, double empty_value) {
  return den == 0 ? empty_value : double(num) / double(den);
}
}  // namespace detail

inline OverlapMetrics overlap_metrics(const BinaryMask& pred, const BinaryMask& gt) {
  const ConfusionCounts c = confusion(pred, gt);
  OverlapMetrics m;
  m.counts = c;
  // with both foregrounds empty every foreground ratio is 0/0 and the masks agree
  const bool both_empty = c.tp + c.fp + c.fn == 0;
  const double empty = both_empty ? 1.0 : 0.0;
  m.iou = detail::ratio(c.tp, c.tp + c.fp + c.fn, 1.0);
  m.dice = detail::ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, 1.0);
  m.recall = detail::ratio(c.tp, c.tp + c.fn, empty);
  m.precision = detail::ratio(c.tp, c.tp + c.fp, empty);
  m.specificity = detail::ratio(c.tn, c.tn + c.fp, 1.0);
  return m;
}

/// Exact squared Euclidean distance from every pixel to the nearest foreground
/// pixel of `mask` (Meijster's separable algorithm, integer arithmetic).
/// Returns an empty vector if the mask has no foreground.
inline std::vector<std::int64_t> squared_distance_transform(const BinaryMask& mask) {
  const std::int64_t h = static_cast<std::int64_t>(mask.height),
                     w = static_cast<std::int64_t>(mask.width);
  if (mask.count() == 0) return {};
  const std::int64_t inf = h + w + 1;
  std::vector<std::int64_t> g(static_cast<std::size_t>(h * w));
  for (std::int64_t x = 0; x < w; ++x) {
    g[x] = mask(0, x) ? 0 : inf;
    for (std::int64_t y = 1; y < h; ++y)
      g[y * w + x] = mask(y, x) ? 0 : std::min(inf, g[(y - 1) * w + x] + 1);
    for (std::int64_t y = h - 2; y >= 0; --y)
      if (g[(y + 1) * w + x] < g[y * w + x]) g[y * w + x] = g[(y + 1) * w + x] + 1;
  }

  std::vector<std::int64_t> dt(static_cast<std::size_t>(h * w));
  std::vector<std::int64_t> s(w), t(w);
  for (std::int64_t y = 0; y < h; ++y) {
    const std::int64_t* gr = &g[y * w];
    auto f = [&](std::int64_t x, std::int64_t i) { return (x - i) * (x - i) + gr[i] * gr[i]; };
    auto sep = [&](std::int64_t i, std::int64_t u) {
      return (u * u - i * i + gr[u] * gr[u] - gr[i] * gr[i]) / (2 * (u - i));
    };
    std::int64_t q = 0;
    s[0] = 0;
    t[0] = 0;
    for (std::int64_t u = 1; u < w; ++u) {
      while (q >= 0 && f(t[q], s[q]) > f(t[q], u)) --q;
      if (q < 0) {
        q = 0;
        s[0] = u;
      } else {
        const std::int64_t wv = 1 + sep(s[q], u);
        if (wv < w) {
          ++q;
          s[q] = u;
          t[q] = wv;
        }
      }
    }
    for (std::int64_t u = w - 1; u >= 0; --u) {
      dt[y * w + u] = f(u, s[q]);
      if (u == t[q]) --q;
    }
  }
  return dt;
}

/// 95th percentile with linear interpolation between order statistics.
inline double percentile95(std::vector<double> values) {
  if (values.empty()) throw UsageError("percentile95: no values");
  std::sort(values.begin(), values.end());
  const double pos = 0.95 * double(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - double(lo)) * (values[hi] - values[lo]);
}

struct HausdorffResult {
  double hd = 0, hd95 = 0;
};

inline std::optional<HausdorffResult> hausdorff(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw ShapeError("hausdorff: mask extents differ");
  const std::size_t np = pred.count(), ng = gt.count();
  if (np == 0 && ng == 0) return HausdorffResult{0.0, 0.0};
  if (np == 0 || ng == 0) return std::nullopt;

  const auto to_gt = squared_distance_transform(gt);
  const auto to_pred = squared_distance_transform(pred);
  std::vector<double> pooled;
  pooled.reserve(np + ng);
  for (std::size_t i = 0; i < pred.data.size(); ++i)
    if (pred.data[i]) pooled.push_back(std::sqrt(double(to_gt[i])));
  for (std::size_t i = 0; i < gt.data.size(); ++i)
    if (gt.data[i]) pooled.push_back(std::sqrt(double(to_pred[i])));
  HausdorffResult r;
  r.hd = *std::max_element(pooled.begin(), pooled.end());
  r.hd95 = percentile95(std::move(pooled));
  return r;
}

struct MetricsReport {
  double iou = 0, dice = 0;
  std::optional<double> hd, hd95;
  double recall = 0, specificity = 0, precision = 0;
};

inline MetricsReport evaluate_masks(const BinaryMask& pred, const BinaryMask& gt) {
  const auto o = overlap_metrics(pred, gt);
  MetricsReport r;
  r.iou = o.iou;
  r.dice = o.dice;
  r.recall = o.recall;
  r.specificity = o.specificity;
  r.precision = o.precision;
  if (auto h = hausdorff(pred, gt)) {
    r.hd = h->hd;
    r.hd95 = h->hd95;
  }
  return r;
}

/// Arithmetic mean of each column; Hausdorff columns average the defined
/// entries only and stay undefined if none is.
inline MetricsReport mean_report(const std::vector<MetricsReport>& rows) {
  MetricsReport m;
  if (rows.empty()) return m;
  double hd = 0, hd95 = 0;
  std::size_t defined = 0;
  for (const auto& r : rows) {
    m.iou += r.iou;
    m.dice += r.dice;
    m.recall += r.recall;
    m.specificity += r.specificity;
    m.precision += r.precision;
    if (r.hd) {
      hd += *r.hd;
      hd95 += *r.hd95;
      ++defined;
    }
  }
  const double n = double(rows.size());
  m.iou /= n;
  m.dice /= n;
  m.recall /= n;
  m.specificity /= n;
  m.precision /= n;
  if (defined) {
    m.hd = hd / double(defined);
    m.hd95 = hd95 / double(defined);
  }
  return m;
}

inline const char* metrics_csv_header() {
  return "id,iou,dice,hd,hd95,recall,specificity,precision";
}

inline void write_metrics_row(std::ostream& os, const std::string& id, const MetricsReport& r) {
  auto opt = [&](const std::optional<double>& v) {
    if (v) os << *v;
    else os << "undefined";
  };
  os << std::setprecision(17) << id << ',' << r.iou << ',' << r.dice << ',';
  opt(r.hd);
  os << ',';
  opt(r.hd95);
  os << ',' << r.recall << ',' << r.specificity << ',' << r.precision << '\n';
}

}  // namespace gdc
