#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nucleoseg/errors.hpp"
#include "nucleoseg/tensor.hpp"

namespace nseg {

// Dense per-pixel class ids for a batch, row major per sample.
struct LabelBatch {
  std::uint32_t n = 0, h = 0, w = 0;
  std::vector<std::int32_t> ids;

  std::size_t count() const { return std::size_t(n) * h * w; }
  std::int32_t at(std::uint32_t ni, std::uint32_t y, std::uint32_t x) const {
    return ids[(std::size_t(ni) * h + y) * w + x];
  }
};

template <class S>
struct LossResult {
  double loss = 0;
  Tensor<S> grad_logits;     // d loss / d logits
  std::size_t correct = 0;   // argmax == label
  std::size_t pixels = 0;
};

// Softmax followed by pixelwise weighted cross-entropy, fused for
// numerical stability:  L = sum_i w[y_i] * (-log p_i[y_i]) / sum_i w[y_i].
// The returned gradient is with respect to the logits.
template <class S>
LossResult<S> softmax_cross_entropy(const Tensor<S>& logits, const LabelBatch& labels,
                                    const std::vector<double>& class_weights) {
  Dims d = logits.dims();
  if (labels.n != d.n || labels.h != d.h || labels.w != d.w)
    throw ShapeError("loss: label grid does not match logits " + d.str());
  if (class_weights.size() != d.c)
    throw ShapeError("loss: need one class weight per channel");

  LossResult<S> res;
  res.grad_logits = Tensor<S>(d);
  res.pixels = labels.count();
  double weight_sum = 0;
  for (std::size_t i = 0; i < res.pixels; ++i) {
    std::int32_t y = labels.ids[i];
    if (y < 0 || std::uint32_t(y) >= d.c)
      throw DataError("loss: label " + std::to_string(y) + " out of range for " +
                      std::to_string(d.c) + " classes");
    weight_sum += class_weights[std::size_t(y)];
  }
  if (weight_sum <= 0) throw NumericError("loss: nonpositive total weight");

  double loss_sum = 0;
  std::vector<double> p(d.c);
  for (std::uint32_t n = 0; n < d.n; ++n)
    for (std::uint32_t yy = 0; yy < d.h; ++yy)
      for (std::uint32_t xx = 0; xx < d.w; ++xx) {
        double m = logits.at(n, 0, yy, xx);
        for (std::uint32_t c = 1; c < d.c; ++c)
          m = std::max(m, double(logits.at(n, c, yy, xx)));
        double denom = 0;
        std::uint32_t arg = 0;
        double best = -1;
        for (std::uint32_t c = 0; c < d.c; ++c) {
          p[c] = std::exp(double(logits.at(n, c, yy, xx)) - m);
          denom += p[c];
          if (p[c] > best) {
            best = p[c];
            arg = c;
          }
        }
        std::int32_t label = labels.at(n, yy, xx);
        double w = class_weights[std::size_t(label)] / weight_sum;
        double log_denom = std::log(denom);
        // -log softmax(label) = log_denom - (z_label - m)
        loss_sum += w * (log_denom -
                         (double(logits.at(n, std::uint32_t(label), yy, xx)) - m));
        for (std::uint32_t c = 0; c < d.c; ++c) {
          double soft = p[c] / denom;
          double g = w * (soft - (std::int32_t(c) == label ? 1.0 : 0.0));
          res.grad_logits.at(n, c, yy, xx) = S(g);
        }
        if (std::int32_t(arg) == label) ++res.correct;
      }
  if (!std::isfinite(loss_sum)) throw NumericError("loss: non-finite value");
  res.loss = loss_sum;
  return res;
}

}  // namespace nseg
