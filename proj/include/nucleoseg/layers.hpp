#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nucleoseg/errors.hpp"
#include "nucleoseg/rng.hpp"
#include "nucleoseg/tensor.hpp"

namespace nseg {

// Winner positions from a max-pool, kept so a decoder can unpool into
// exactly the pixels that won. argmax holds flat indices into the
// source tensor, one per pooled element; ties go to the smallest index.
struct PoolIndices {
  Dims source;
  Dims pooled;
  std::vector<std::uint64_t> argmax;
};

template <class S>
struct Pooled {
  Tensor<S> value;
  PoolIndices indices;
};

// 2x2 max-pool, stride 2, output ceil(h/2) x ceil(w/2). Odd borders are
// handled by clamping window coordinates (replication padding).
template <class S>
Pooled<S> maxpool2x2(const Tensor<S>& x) {
  Dims in = x.dims();
  Dims od{in.n, in.c, (in.h + 1) / 2, (in.w + 1) / 2};
  Pooled<S> out{Tensor<S>(od), PoolIndices{in, od, {}}};
  out.indices.argmax.resize(od.count());
  std::size_t o = 0;
  for (std::uint32_t n = 0; n < od.n; ++n)
    for (std::uint32_t c = 0; c < od.c; ++c)
      for (std::uint32_t oy = 0; oy < od.h; ++oy)
        for (std::uint32_t ox = 0; ox < od.w; ++ox, ++o) {
          S best = x.at(n, c, 2 * oy, 2 * ox);
          std::size_t best_i = x.index(n, c, 2 * oy, 2 * ox);
          for (std::uint32_t dy = 0; dy < 2; ++dy)
            for (std::uint32_t dx = 0; dx < 2; ++dx) {
              std::uint32_t iy = std::min(2 * oy + dy, in.h - 1);
              std::uint32_t ix = std::min(2 * ox + dx, in.w - 1);
              std::size_t i = x.index(n, c, iy, ix);
              if (x[i] > best || (x[i] == best && i < best_i)) {
                best = x[i];
                best_i = i;
              }
            }
          out.value[o] = best;
          out.indices.argmax[o] = best_i;
        }
  return out;
}

// 2x2 max-pool, stride 1, same output size (windows clamp at the
// bottom/right edge). Used by the initial block's pooling branch.
template <class S>
Pooled<S> maxpool2x2_s1(const Tensor<S>& x) {
  Dims in = x.dims();
  Pooled<S> out{Tensor<S>(in), PoolIndices{in, in, {}}};
  out.indices.argmax.resize(in.count());
  std::size_t o = 0;
  for (std::uint32_t n = 0; n < in.n; ++n)
    for (std::uint32_t c = 0; c < in.c; ++c)
      for (std::uint32_t y = 0; y < in.h; ++y)
        for (std::uint32_t x0 = 0; x0 < in.w; ++x0, ++o) {
          S best = x.at(n, c, y, x0);
          std::size_t best_i = x.index(n, c, y, x0);
          for (std::uint32_t dy = 0; dy < 2; ++dy)
            for (std::uint32_t dx = 0; dx < 2; ++dx) {
              std::uint32_t iy = std::min(y + dy, in.h - 1);
              std::uint32_t ix = std::min(x0 + dx, in.w - 1);
              std::size_t i = x.index(n, c, iy, ix);
              if (x[i] > best || (x[i] == best && i < best_i)) {
                best = x[i];
                best_i = i;
              }
            }
          out.value[o] = best;
          out.indices.argmax[o] = best_i;
        }
  return out;
}

// Routes pooled-gradient values back to the winning source pixels.
template <class S>
Tensor<S> maxpool_backward(const Tensor<S>& gy, const PoolIndices& idx) {
  if (!(gy.dims() == idx.pooled))
    throw ShapeError("maxpool backward: gradient dims " + gy.dims().str() +
                     " do not match pooled " + idx.pooled.str());
  Tensor<S> gx(idx.source);
  for (std::size_t o = 0; o < idx.argmax.size(); ++o)
    gx[idx.argmax[o]] += gy[o];
  return gx;
}

// Places each value at the source position that won the paired pool;
// all other positions stay zero. Sum is therefore preserved.
template <class S>
Tensor<S> maxunpool2x2(const Tensor<S>& y, const PoolIndices& idx) {
  if (!(y.dims() == idx.pooled))
    throw ShapeError("maxunpool: input dims " + y.dims().str() +
                     " do not match recorded pooled dims " + idx.pooled.str());
  Tensor<S> out(idx.source);
  for (std::size_t o = 0; o < idx.argmax.size(); ++o)
    out[idx.argmax[o]] = y[o];
  return out;
}

template <class S>
Tensor<S> maxunpool_backward(const Tensor<S>& gout, const PoolIndices& idx) {
  if (!(gout.dims() == idx.source))
    throw ShapeError("maxunpool backward: gradient dims " + gout.dims().str() +
                     " do not match source " + idx.source.str());
  Tensor<S> gy(idx.pooled);
  for (std::size_t o = 0; o < idx.argmax.size(); ++o)
    gy[o] = gout[idx.argmax[o]];
  return gy;
}

// Per-channel batch normalization. Training mode normalizes with batch
// statistics (biased variance) and updates running buffers as
// r = momentum * r + (1 - momentum) * batch.
template <class S>
struct BatchNorm {
  std::uint32_t channels = 0;
  double momentum = 0.9;
  double eps = 1e-5;
  Tensor<S> gamma, beta;
  Tensor<S> running_mean, running_var;

  struct Cache {
    Tensor<S> xhat;
    std::vector<S> inv_std;
    bool training = false;
  };

  BatchNorm() = default;
  explicit BatchNorm(std::uint32_t c) : channels(c) {
    gamma = Tensor<S>(Dims{1, c, 1, 1}, S(1));
    beta = Tensor<S>(Dims{1, c, 1, 1}, S(0));
    running_mean = Tensor<S>(Dims{1, c, 1, 1}, S(0));
    running_var = Tensor<S>(Dims{1, c, 1, 1}, S(1));
  }

  Tensor<S> forward(const Tensor<S>& x, bool training, Cache* cache) {
    Dims d = x.dims();
    if (d.c != channels)
      throw ShapeError("batchnorm: expected " + std::to_string(channels) +
                       " channels, got " + std::to_string(d.c));
    Tensor<S> y(d);
    Tensor<S> xhat(d);
    std::vector<S> inv_std(channels);
    S m = S(d.n) * S(d.h) * S(d.w);
    for (std::uint32_t c = 0; c < channels; ++c) {
      S mean, var;
      if (training) {
        S sum = 0;
        for (std::uint32_t n = 0; n < d.n; ++n)
          for (std::uint32_t yy = 0; yy < d.h; ++yy)
            for (std::uint32_t xx = 0; xx < d.w; ++xx) sum += x.at(n, c, yy, xx);
        mean = sum / m;
        S sq = 0;
        for (std::uint32_t n = 0; n < d.n; ++n)
          for (std::uint32_t yy = 0; yy < d.h; ++yy)
            for (std::uint32_t xx = 0; xx < d.w; ++xx) {
              S dlt = x.at(n, c, yy, xx) - mean;
              sq += dlt * dlt;
            }
        var = sq / m;
        running_mean[c] = S(momentum) * running_mean[c] + S(1 - momentum) * mean;
        running_var[c] = S(momentum) * running_var[c] + S(1 - momentum) * var;
      } else {
        mean = running_mean[c];
        var = running_var[c];
      }
      S istd = S(1) / std::sqrt(var + S(eps));
      inv_std[c] = istd;
      for (std::uint32_t n = 0; n < d.n; ++n)
        for (std::uint32_t yy = 0; yy < d.h; ++yy)
          for (std::uint32_t xx = 0; xx < d.w; ++xx) {
            S xh = (x.at(n, c, yy, xx) - mean) * istd;
            xhat.at(n, c, yy, xx) = xh;
            y.at(n, c, yy, xx) = gamma[c] * xh + beta[c];
          }
    }
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv_std);
      cache->training = training;
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy, const Cache& cache) {
    Dims d = gy.dims();
    auto& gg = gamma.grad();
    auto& gb = beta.grad();
    Tensor<S> gx(d);
    S m = S(d.n) * S(d.h) * S(d.w);
    for (std::uint32_t c = 0; c < channels; ++c) {
      S sum_gy = 0, sum_gy_xhat = 0;
      for (std::uint32_t n = 0; n < d.n; ++n)
        for (std::uint32_t yy = 0; yy < d.h; ++yy)
          for (std::uint32_t xx = 0; xx < d.w; ++xx) {
            S g = gy.at(n, c, yy, xx);
            sum_gy += g;
            sum_gy_xhat += g * cache.xhat.at(n, c, yy, xx);
          }
      gg[c] += sum_gy_xhat;
      gb[c] += sum_gy;
      S k = gamma[c] * cache.inv_std[c];
      for (std::uint32_t n = 0; n < d.n; ++n)
        for (std::uint32_t yy = 0; yy < d.h; ++yy)
          for (std::uint32_t xx = 0; xx < d.w; ++xx) {
            S g = gy.at(n, c, yy, xx);
            if (cache.training) {
              S xh = cache.xhat.at(n, c, yy, xx);
              gx.at(n, c, yy, xx) = k * (g - (sum_gy + xh * sum_gy_xhat) / m);
            } else {
              gx.at(n, c, yy, xx) = k * g;
            }
          }
    }
    return gx;
  }
};

// Per-channel parametric ReLU.
template <class S>
struct PRelu {
  Tensor<S> slope;

  PRelu() = default;
  explicit PRelu(std::uint32_t c, S init = S(0.25)) {
    slope = Tensor<S>(Dims{1, c, 1, 1}, init);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Dims d = x.dims();
    if (d.c != slope.dims().c)
      throw ShapeError("prelu: channel mismatch");
    Tensor<S> y(d);
    for (std::uint32_t n = 0; n < d.n; ++n)
      for (std::uint32_t c = 0; c < d.c; ++c) {
        S a = slope[c];
        for (std::uint32_t yy = 0; yy < d.h; ++yy)
          for (std::uint32_t xx = 0; xx < d.w; ++xx) {
            S v = x.at(n, c, yy, xx);
            y.at(n, c, yy, xx) = v >= S(0) ? v : a * v;
          }
      }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& x, const Tensor<S>& gy) {
    Dims d = x.dims();
    auto& ga = slope.grad();
    Tensor<S> gx(d);
    for (std::uint32_t n = 0; n < d.n; ++n)
      for (std::uint32_t c = 0; c < d.c; ++c) {
        S a = slope[c];
        for (std::uint32_t yy = 0; yy < d.h; ++yy)
          for (std::uint32_t xx = 0; xx < d.w; ++xx) {
            S v = x.at(n, c, yy, xx);
            S g = gy.at(n, c, yy, xx);
            if (v >= S(0)) {
              gx.at(n, c, yy, xx) = g;
            } else {
              gx.at(n, c, yy, xx) = a * g;
              ga[c] += g * v;
            }
          }
      }
    return gx;
  }
};

// Spatial dropout: drops whole channels per sample. Kept channels are
// scaled by 1/(1-rate) so expectations match at inference, where this
// is the identity. The mask has one entry per (n, c).
template <class S>
struct DropoutMask {
  std::vector<S> chan;  // 0 or 1/(1-rate)
  bool active = false;
};

template <class S>
Tensor<S> spatial_dropout(const Tensor<S>& x, double rate, bool training,
                          Rng& rng, DropoutMask<S>* mask) {
  Dims d = x.dims();
  if (rate < 0 || rate >= 1)
    throw NumericError("dropout rate must be in [0, 1)");
  if (!training || rate == 0) {
    if (mask) mask->active = false;
    return x;
  }
  S keep_scale = S(1.0 / (1.0 - rate));
  std::vector<S> chan(std::size_t(d.n) * d.c);
  for (auto& v : chan) v = rng.uniform() < rate ? S(0) : keep_scale;
  Tensor<S> y(d);
  for (std::uint32_t n = 0; n < d.n; ++n)
    for (std::uint32_t c = 0; c < d.c; ++c) {
      S s = chan[std::size_t(n) * d.c + c];
      for (std::uint32_t yy = 0; yy < d.h; ++yy)
        for (std::uint32_t xx = 0; xx < d.w; ++xx)
          y.at(n, c, yy, xx) = s * x.at(n, c, yy, xx);
    }
  if (mask) {
    mask->chan = std::move(chan);
    mask->active = true;
  }
  return y;
}

template <class S>
Tensor<S> spatial_dropout_backward(const Tensor<S>& gy, const DropoutMask<S>& mask) {
  if (!mask.active) return gy;
  Dims d = gy.dims();
  Tensor<S> gx(d);
  for (std::uint32_t n = 0; n < d.n; ++n)
    for (std::uint32_t c = 0; c < d.c; ++c) {
      S s = mask.chan[std::size_t(n) * d.c + c];
      for (std::uint32_t yy = 0; yy < d.h; ++yy)
        for (std::uint32_t xx = 0; xx < d.w; ++xx)
          gx.at(n, c, yy, xx) = s * gy.at(n, c, yy, xx);
    }
  return gx;
}

}  // namespace nseg
