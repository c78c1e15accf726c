#pragma once

#include <cmath>
#include <cstdint>

#include "nucleoseg/errors.hpp"
#include "nucleoseg/rng.hpp"
#include "nucleoseg/tensor.hpp"

namespace nseg {

// Geometry of one convolution. Cross-correlation, no kernel flip.
// Stride 1 keeps spatial size (symmetric zero padding); stride 2 halves
// it, rounding up, padding bottom/right when the input size is odd.
struct ConvSpec {
  std::uint32_t in_c = 0, out_c = 0;
  std::uint32_t kh = 0, kw = 0;
  std::uint32_t stride = 1;
  std::uint32_t dilation = 1;

  void validate() const {
    bool known = (kh == 1 && kw == 1) || (kh == 3 && kw == 3) ||
                 (kh == 5 && kw == 1) || (kh == 1 && kw == 5) ||
                 (kh == 2 && kw == 2);
    if (!known)
      throw ShapeError("conv: unsupported kernel " + std::to_string(kh) + "x" +
                       std::to_string(kw));
    if (in_c == 0 || out_c == 0) throw ShapeError("conv: zero channel count");
    if (stride != 1 && stride != 2)
      throw ShapeError("conv: stride must be 1 or 2");
    if (stride == 2 && !(kh == 2 && kw == 2))
      throw ShapeError("conv: stride 2 requires a 2x2 kernel");
    if (dilation == 0) throw ShapeError("conv: zero dilation");
    if (dilation > 1 && !(kh == 3 && kw == 3))
      throw ShapeError("conv: dilation requires a 3x3 kernel");
  }

  std::uint32_t pad_top() const { return stride == 1 ? dilation * (kh - 1) / 2 : 0; }
  std::uint32_t pad_left() const { return stride == 1 ? dilation * (kw - 1) / 2 : 0; }

  Dims out_dims(Dims in) const {
    if (in.c != in_c)
      throw ShapeError("conv: expected " + std::to_string(in_c) +
                       " input channels, got " + std::to_string(in.c));
    if (stride == 1) return Dims{in.n, out_c, in.h, in.w};
    return Dims{in.n, out_c, (in.h + 1) / 2, (in.w + 1) / 2};
  }
};

// Convolution layer: weight (out_c, in_c, kh, kw), bias (1, out_c, 1, 1).
template <class S>
struct Conv {
  ConvSpec spec;
  Tensor<S> weight;
  Tensor<S> bias;

  Conv() = default;
  explicit Conv(ConvSpec sp) : spec(sp) {
    spec.validate();
    weight = Tensor<S>(Dims{spec.out_c, spec.in_c, spec.kh, spec.kw});
    bias = Tensor<S>(Dims{1, spec.out_c, 1, 1});
  }

  void init(Rng& rng) {
    double fan_in = double(spec.in_c) * spec.kh * spec.kw;
    double fan_out = double(spec.out_c) * spec.kh * spec.kw;
    double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < weight.size(); ++i)
      weight[i] = static_cast<S>(rng.uniform(-bound, bound));
    bias.fill(S(0));
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Dims in = x.dims();
    Dims od = spec.out_dims(in);
    Tensor<S> y(od);
    std::int64_t pt = spec.pad_top(), pl = spec.pad_left();
    for (std::uint32_t n = 0; n < od.n; ++n)
      for (std::uint32_t oc = 0; oc < od.c; ++oc) {
        S b = bias.at(0, oc, 0, 0);
        for (std::uint32_t oy = 0; oy < od.h; ++oy)
          for (std::uint32_t ox = 0; ox < od.w; ++ox) {
            S acc = b;
            for (std::uint32_t ic = 0; ic < spec.in_c; ++ic)
              for (std::uint32_t ky = 0; ky < spec.kh; ++ky) {
                std::int64_t iy =
                    std::int64_t(oy) * spec.stride - pt + std::int64_t(ky) * spec.dilation;
                if (iy < 0 || iy >= in.h) continue;
                for (std::uint32_t kx = 0; kx < spec.kw; ++kx) {
                  std::int64_t ix =
                      std::int64_t(ox) * spec.stride - pl + std::int64_t(kx) * spec.dilation;
                  if (ix < 0 || ix >= in.w) continue;
                  acc += weight.at(oc, ic, ky, kx) *
                         x.at(n, ic, std::uint32_t(iy), std::uint32_t(ix));
                }
              }
            y.at(n, oc, oy, ox) = acc;
          }
      }
    return y;
  }

  // Accumulates weight/bias gradients and returns the input gradient.
  // x must be the tensor the forward pass saw.
  Tensor<S> backward(const Tensor<S>& x, const Tensor<S>& gy) {
    Dims in = x.dims();
    Dims od = spec.out_dims(in);
    if (!(gy.dims() == od))
      throw ShapeError("conv backward: gradient dims " + gy.dims().str() +
                       " do not match output " + od.str());
    auto& gw = weight.grad();
    auto& gb = bias.grad();
    Tensor<S> gx(in);
    std::int64_t pt = spec.pad_top(), pl = spec.pad_left();
    for (std::uint32_t n = 0; n < od.n; ++n)
      for (std::uint32_t oc = 0; oc < od.c; ++oc)
        for (std::uint32_t oy = 0; oy < od.h; ++oy)
          for (std::uint32_t ox = 0; ox < od.w; ++ox) {
            S g = gy.at(n, oc, oy, ox);
            if (g == S(0)) continue;
            gb[oc] += g;
            for (std::uint32_t ic = 0; ic < spec.in_c; ++ic)
              for (std::uint32_t ky = 0; ky < spec.kh; ++ky) {
                std::int64_t iy =
                    std::int64_t(oy) * spec.stride - pt + std::int64_t(ky) * spec.dilation;
                if (iy < 0 || iy >= in.h) continue;
                for (std::uint32_t kx = 0; kx < spec.kw; ++kx) {
                  std::int64_t ix =
                      std::int64_t(ox) * spec.stride - pl + std::int64_t(kx) * spec.dilation;
                  if (ix < 0 || ix >= in.w) continue;
                  std::size_t wi = weight.index(oc, ic, ky, kx);
                  std::size_t xi = x.index(n, ic, std::uint32_t(iy), std::uint32_t(ix));
                  gw[wi] += g * x[xi];
                  gx[xi] += weight[wi] * g;
                }
              }
          }
    return gx;
  }
};

}  // namespace nseg
