#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nucleoseg/errors.hpp"
#include "nucleoseg/image.hpp"

namespace nseg {

struct PixelCounts {
  std::size_t tp = 0, fp = 0, fn = 0;

  PixelCounts& operator+=(const PixelCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

inline PixelCounts pixel_counts(const BinaryMask& pred, const BinaryMask& truth) {
  if (pred.h != truth.h || pred.w != truth.w)
    throw ShapeError("mask sizes differ");
  PixelCounts c;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    if (pred.v[i] && truth.v[i]) ++c.tp;
    else if (pred.v[i]) ++c.fp;
    else if (truth.v[i]) ++c.fn;
  }
  return c;
}

struct PRF {
  double precision = 0, recall = 0, f1 = 0;
};

// Degenerate cases: a side with nothing predicted scores precision 1
// when there was also nothing to find, 0 otherwise; same for recall.
// F1 is 0 whenever precision + recall is 0.
inline PRF prf_from_counts(const PixelCounts& c) {
  PRF r;
  if (c.tp + c.fp == 0)
    r.precision = c.fn == 0 ? 1.0 : 0.0;
  else
    r.precision = double(c.tp) / double(c.tp + c.fp);
  if (c.tp + c.fn == 0)
    r.recall = c.fp == 0 ? 1.0 : 0.0;
  else
    r.recall = double(c.tp) / double(c.tp + c.fn);
  r.f1 = (r.precision + r.recall) > 0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

struct SeparationCounts {
  std::size_t separated = 0, pairs = 0;

  SeparationCounts& operator+=(const SeparationCounts& o) {
    separated += o.separated;
    pairs += o.pairs;
    return *this;
  }

  double rate() const {
    return pairs == 0 ? 0.0 : double(separated) / double(pairs);
  }
};

namespace detail {

// Best-overlap assignment: for each truth instance, the predicted
// instance with the highest IoU (ties to the lower predicted id).
struct BestMatch {
  std::vector<double> iou;           // indexed by truth id
  std::vector<std::uint32_t> pred;   // 0 when unmatched
};

inline BestMatch best_matches(const LabelMap& pred, const LabelMap& truth) {
  if (pred.h != truth.h || pred.w != truth.w)
    throw ShapeError("label map sizes differ");
  std::uint32_t tmax = truth.max_id(), pmax = pred.max_id();
  std::vector<std::size_t> t_area(tmax + 1, 0), p_area(pmax + 1, 0);
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> inter;
  for (std::size_t i = 0; i < truth.ids.size(); ++i) {
    std::uint32_t t = truth.ids[i], p = pred.ids[i];
    if (t) ++t_area[t];
    if (p) ++p_area[p];
    if (t && p) ++inter[{t, p}];
  }
  BestMatch best;
  best.iou.assign(tmax + 1, 0.0);
  best.pred.assign(tmax + 1, 0);
  for (const auto& [key, count] : inter) {
    auto [t, p] = key;
    double iou = double(count) / double(t_area[t] + p_area[p] - count);
    if (iou > best.iou[t]) {
      best.iou[t] = iou;
      best.pred[t] = p;
    }
  }
  return best;
}

}  // namespace detail

// A touching pair counts as separated when both members are matched at
// or above the IoU threshold and their matches are distinct predicted
// instances.
inline SeparationCounts separation_counts(
    const LabelMap& pred, const LabelMap& truth,
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs,
    double iou_threshold = 0.5) {
  SeparationCounts sc;
  if (pairs.empty()) return sc;
  detail::BestMatch best = detail::best_matches(pred, truth);
  for (const auto& [a, b] : pairs) {
    if (a == 0 || b == 0 || a >= best.iou.size() || b >= best.iou.size())
      throw DataError("touching pair references unknown instance id");
    ++sc.pairs;
    if (best.iou[a] >= iou_threshold && best.iou[b] >= iou_threshold &&
        best.pred[a] != best.pred[b])
      ++sc.separated;
  }
  return sc;
}

struct EvalRow {
  std::string method;
  PixelCounts px;
  SeparationCounts sep;
};

// Fixed-width report with two-decimal metrics, one row per method.
inline std::string format_report(const std::vector<EvalRow>& rows) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-20s %9s %9s %9s %14s\n", "method",
                "precision", "recall", "f1", "separation");
  out += line;
  for (const auto& row : rows) {
    PRF m = prf_from_counts(row.px);
    char sep[80];
    if (row.sep.pairs == 0)
      std::snprintf(sep, sizeof(sep), "%14s", "n/a");
    else {
      char frac[64];
      std::snprintf(frac, sizeof(frac), "%.2f (%zu/%zu)", row.sep.rate(),
                    row.sep.separated, row.sep.pairs);
      std::snprintf(sep, sizeof(sep), "%14s", frac);
    }
    std::snprintf(line, sizeof(line), "%-20s %9.2f %9.2f %9.2f %s\n",
                  row.method.c_str(), m.precision, m.recall, m.f1, sep);
    out += line;
  }
  return out;
}

}  // namespace nseg
