#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "nucleoseg/adam.hpp"
#include "nucleoseg/conv.hpp"
#include "nucleoseg/errors.hpp"
#include "nucleoseg/layers.hpp"
#include "nucleoseg/rng.hpp"
#include "nucleoseg/tensor.hpp"

namespace nseg {

inline constexpr std::uint32_t kNumClasses = 2;

enum class Role { Region, Boundary, Fusion };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::Region: return "region";
    case Role::Boundary: return "boundary";
    default: return "fusion";
  }
}

inline Role role_from_name(const std::string& s) {
  if (s == "region") return Role::Region;
  if (s == "boundary") return Role::Boundary;
  if (s == "fusion") return Role::Fusion;
  throw FormatError("unknown model role '" + s + "'");
}

struct LayerInfo {
  std::string name;
  std::string kind;  // initial, down, regular, dilated, asym, up, final
  std::uint32_t in_c = 0, out_c = 0;
  std::uint32_t dilation = 1;
};

// Two-branch residual unit. The main branch is identity (regular),
// max-pool + channel zero-pad (down) or a 1x1 projection whose sum with
// the bottleneck branch is max-unpooled (up). The bottleneck branch is
// project -> transform -> expand, each conv followed by batch norm,
// with PReLU between stages and spatial dropout before the residual add.
template <class S>
struct Bottleneck {
  enum class Kind { Regular, Dilated, Asym, Down, Up };

  Kind kind = Kind::Regular;
  std::string name;
  std::uint32_t in_c = 0, out_c = 0, internal = 0, dilation = 1;
  double dropout_rate = 0;

  Conv<S> proj, mid, mid2, expand, skip;
  BatchNorm<S> bn1, bn2, bn3, skip_bn;
  PRelu<S> act1, act2, act_out;

  Bottleneck() = default;
  Bottleneck(Kind k, std::string nm, std::uint32_t in, std::uint32_t out,
             std::uint32_t dil, double drop)
      : kind(k), name(std::move(nm)), in_c(in), out_c(out),
        internal((out + 3) / 4), dilation(dil), dropout_rate(drop) {
    if (internal == 0) internal = 1;
    if (kind == Kind::Down) {
      proj = Conv<S>({in_c, internal, 2, 2, /*stride=*/2});
      mid = Conv<S>({internal, internal, 3, 3});
      if (out_c < in_c) throw ShapeError(name + ": down block cannot shrink channels");
    } else {
      proj = Conv<S>({in_c, internal, 1, 1});
      switch (kind) {
        case Kind::Dilated:
          mid = Conv<S>({internal, internal, 3, 3, 1, dilation});
          break;
        case Kind::Asym:
          mid = Conv<S>({internal, internal, 5, 1});
          mid2 = Conv<S>({internal, internal, 1, 5});
          break;
        default:
          mid = Conv<S>({internal, internal, 3, 3});
          break;
      }
    }
    expand = Conv<S>({internal, out_c, 1, 1});
    bn1 = BatchNorm<S>(internal);
    bn2 = BatchNorm<S>(internal);
    bn3 = BatchNorm<S>(out_c);
    act1 = PRelu<S>(internal);
    act2 = PRelu<S>(internal);
    act_out = PRelu<S>(out_c);
    if (kind == Kind::Up) {
      skip = Conv<S>({in_c, out_c, 1, 1});
      skip_bn = BatchNorm<S>(out_c);
    }
    if (kind != Kind::Down && kind != Kind::Up && in_c != out_c)
      throw ShapeError(name + ": residual block needs in_c == out_c");
  }

  void init(Rng& rng) {
    proj.init(rng);
    mid.init(rng);
    if (kind == Kind::Asym) mid2.init(rng);
    expand.init(rng);
    if (kind == Kind::Up) skip.init(rng);
  }

  struct Cache {
    Tensor<S> x;
    typename BatchNorm<S>::Cache c1, c2, c3, cskip;
    Tensor<S> a1_in, mid_in, mid_mid, a2_in, exp_in, aout_in;
    DropoutMask<S> drop;
    PoolIndices pool_idx;  // down: produced; up: the consumed indices
  };

  // up_idx must be given for Kind::Up and is ignored otherwise.
  Tensor<S> forward(const Tensor<S>& x, bool training, Rng& rng, Cache& cc,
                    const PoolIndices* up_idx = nullptr) {
    cc.x = x;
    Tensor<S> t = proj.forward(x);
    t = bn1.forward(t, training, &cc.c1);
    cc.a1_in = t;
    t = act1.forward(t);
    cc.mid_in = t;
    t = mid.forward(t);
    if (kind == Kind::Asym) {
      cc.mid_mid = t;
      t = mid2.forward(t);
    }
    t = bn2.forward(t, training, &cc.c2);
    cc.a2_in = t;
    t = act2.forward(t);
    cc.exp_in = t;
    t = expand.forward(t);
    t = bn3.forward(t, training, &cc.c3);
    t = spatial_dropout(t, dropout_rate, training, rng, &cc.drop);

    Tensor<S> sum;
    if (kind == Kind::Down) {
      Pooled<S> pooled = maxpool2x2(x);
      cc.pool_idx = std::move(pooled.indices);
      Tensor<S> skip_t(t.dims());
      Dims pd = pooled.value.dims();
      for (std::uint32_t n = 0; n < pd.n; ++n)
        for (std::uint32_t c = 0; c < pd.c; ++c)
          for (std::uint32_t yy = 0; yy < pd.h; ++yy)
            for (std::uint32_t xx = 0; xx < pd.w; ++xx)
              skip_t.at(n, c, yy, xx) = pooled.value.at(n, c, yy, xx);
      sum = add(skip_t, t);
    } else if (kind == Kind::Up) {
      if (!up_idx) throw ShapeError(name + ": upsample block needs pool indices");
      cc.pool_idx = *up_idx;
      Tensor<S> sk = skip.forward(x);
      sk = skip_bn.forward(sk, training, &cc.cskip);
      sum = maxunpool2x2(add(sk, t), cc.pool_idx);
    } else {
      sum = add(x, t);
    }
    cc.aout_in = sum;
    return act_out.forward(sum);
  }

  Tensor<S> backward(const Tensor<S>& gy, Cache& cc) {
    Tensor<S> gsum = act_out.backward(cc.aout_in, gy);
    Tensor<S> gx;
    Tensor<S> gbranch;
    if (kind == Kind::Up) {
      Tensor<S> gpair = maxunpool_backward(gsum, cc.pool_idx);
      Tensor<S> gskip = skip_bn.backward(gpair, cc.cskip);
      gx = skip.backward(cc.x, gskip);
      gbranch = std::move(gpair);
    } else if (kind == Kind::Down) {
      Tensor<S> gpool = slice_channels(gsum, 0, in_c);
      gx = maxpool_backward(gpool, cc.pool_idx);
      gbranch = std::move(gsum);
    } else {
      gx = gsum;
      gbranch = std::move(gsum);
    }

    Tensor<S> g = spatial_dropout_backward(gbranch, cc.drop);
    g = bn3.backward(g, cc.c3);
    g = expand.backward(cc.exp_in, g);
    g = act2.backward(cc.a2_in, g);
    g = bn2.backward(g, cc.c2);
    if (kind == Kind::Asym) {
      g = mid2.backward(cc.mid_mid, g);
      g = mid.backward(cc.mid_in, g);
    } else {
      g = mid.backward(cc.mid_in, g);
    }
    g = act1.backward(cc.a1_in, g);
    g = bn1.backward(g, cc.c1);
    g = proj.backward(cc.x, g);
    return add(gx, g);
  }

  void collect(std::vector<ParamRef<S>>& out) {
    auto push = [&](const std::string& sub, Tensor<S>& t, bool trainable) {
      out.push_back({name + "." + sub, &t, trainable});
    };
    push("proj.weight", proj.weight, true);
    push("proj.bias", proj.bias, true);
    push("bn1.gamma", bn1.gamma, true);
    push("bn1.beta", bn1.beta, true);
    push("bn1.running_mean", bn1.running_mean, false);
    push("bn1.running_var", bn1.running_var, false);
    push("act1.slope", act1.slope, true);
    push("mid.weight", mid.weight, true);
    push("mid.bias", mid.bias, true);
    if (kind == Kind::Asym) {
      push("mid2.weight", mid2.weight, true);
      push("mid2.bias", mid2.bias, true);
    }
    push("bn2.gamma", bn2.gamma, true);
    push("bn2.beta", bn2.beta, true);
    push("bn2.running_mean", bn2.running_mean, false);
    push("bn2.running_var", bn2.running_var, false);
    push("act2.slope", act2.slope, true);
    push("expand.weight", expand.weight, true);
    push("expand.bias", expand.bias, true);
    push("bn3.gamma", bn3.gamma, true);
    push("bn3.beta", bn3.beta, true);
    push("bn3.running_mean", bn3.running_mean, false);
    push("bn3.running_var", bn3.running_var, false);
    if (kind == Kind::Up) {
      push("skip.weight", skip.weight, true);
      push("skip.bias", skip.bias, true);
      push("skip_bn.gamma", skip_bn.gamma, true);
      push("skip_bn.beta", skip_bn.beta, true);
      push("skip_bn.running_mean", skip_bn.running_mean, false);
      push("skip_bn.running_var", skip_bn.running_var, false);
    }
    push("act_out.slope", act_out.slope, true);
  }

  LayerInfo info() const {
    const char* k = "regular";
    if (kind == Kind::Dilated) k = "dilated";
    else if (kind == Kind::Asym) k = "asym";
    else if (kind == Kind::Down) k = "down";
    else if (kind == Kind::Up) k = "up";
    return LayerInfo{name, k, in_c, out_c, dilation};
  }
};

// Initial block: 3x3 conv in parallel with a stride-1 2x2 max-pool of
// the input, concatenated along channels, then batch norm and PReLU.
template <class S>
struct InitialBlock {
  std::uint32_t in_c = 0, out_c = 0;
  Conv<S> conv;
  BatchNorm<S> bn;
  PRelu<S> act;

  InitialBlock() = default;
  InitialBlock(std::uint32_t in, std::uint32_t out) : in_c(in), out_c(out) {
    if (out_c <= in_c) throw ShapeError("initial block: out_c must exceed in_c");
    conv = Conv<S>({in_c, out_c - in_c, 3, 3});
    bn = BatchNorm<S>(out_c);
    act = PRelu<S>(out_c);
  }

  void init(Rng& rng) { conv.init(rng); }

  struct Cache {
    Tensor<S> x;
    PoolIndices pool_idx;
    typename BatchNorm<S>::Cache cbn;
    Tensor<S> act_in;
  };

  Tensor<S> forward(const Tensor<S>& x, bool training, Cache& cc) {
    cc.x = x;
    Tensor<S> cv = conv.forward(x);
    Pooled<S> p = maxpool2x2_s1(x);
    cc.pool_idx = std::move(p.indices);
    Tensor<S> t = concat_channels(cv, p.value);
    t = bn.forward(t, training, &cc.cbn);
    cc.act_in = t;
    return act.forward(t);
  }

  Tensor<S> backward(const Tensor<S>& gy, Cache& cc) {
    Tensor<S> g = act.backward(cc.act_in, gy);
    g = bn.backward(g, cc.cbn);
    Tensor<S> gconv = slice_channels(g, 0, out_c - in_c);
    Tensor<S> gpool = slice_channels(g, out_c - in_c, out_c);
    Tensor<S> gx = conv.backward(cc.x, gconv);
    return add(gx, maxpool_backward(gpool, cc.pool_idx));
  }

  void collect(std::vector<ParamRef<S>>& out) {
    out.push_back({"initial.conv.weight", &conv.weight, true});
    out.push_back({"initial.conv.bias", &conv.bias, true});
    out.push_back({"initial.bn.gamma", &bn.gamma, true});
    out.push_back({"initial.bn.beta", &bn.beta, true});
    out.push_back({"initial.bn.running_mean", &bn.running_mean, false});
    out.push_back({"initial.bn.running_var", &bn.running_var, false});
    out.push_back({"initial.act.slope", &act.slope, true});
  }
};

// 17-layer encoder-decoder segmentation network. The encoder is the
// initial block plus ten bottlenecks in two stages (each started by a
// downsampling bottleneck that records its pooling indices); the decoder
// is five bottlenecks whose two upsampling units reuse those indices in
// reverse order; a final 1x1 convolution maps to class logits.
template <class S>
class EnetModel {
 public:
  Role role = Role::Region;
  double width_multiplier = 1.0;
  std::uint32_t input_c = 1;
  double dropout_rate = 0.1;

  EnetModel() = default;
  EnetModel(Role r, double wm, std::uint32_t in_c, double drop = 0.1)
      : role(r), width_multiplier(wm), input_c(in_c), dropout_rate(drop) {
    if (wm <= 0 || wm > 4) throw ShapeError("width multiplier out of range");
    if (in_c == 0) throw ShapeError("model needs at least one input channel");
    std::uint32_t w0 = scaled(13) + in_c;
    std::uint32_t w1 = scaled(32);
    std::uint32_t w2 = scaled(64);
    using K = typename Bottleneck<S>::Kind;
    initial_ = InitialBlock<S>(in_c, w0);
    enc_.emplace_back(K::Down, "enc1_down", w0, w1, 1, drop);
    enc_.emplace_back(K::Regular, "enc1_reg", w1, w1, 1, drop);
    enc_.emplace_back(K::Dilated, "enc1_dil2", w1, w1, 2, drop);
    enc_.emplace_back(K::Asym, "enc1_asym", w1, w1, 1, drop);
    enc_.emplace_back(K::Dilated, "enc1_dil4", w1, w1, 4, drop);
    enc_.emplace_back(K::Down, "enc2_down", w1, w2, 1, drop);
    enc_.emplace_back(K::Regular, "enc2_reg", w2, w2, 1, drop);
    enc_.emplace_back(K::Dilated, "enc2_dil8", w2, w2, 8, drop);
    enc_.emplace_back(K::Asym, "enc2_asym", w2, w2, 1, drop);
    enc_.emplace_back(K::Dilated, "enc2_dil16", w2, w2, 16, drop);
    dec_.emplace_back(K::Up, "dec1_up", w2, w1, 1, 0.0);
    dec_.emplace_back(K::Regular, "dec1_reg1", w1, w1, 1, 0.0);
    dec_.emplace_back(K::Regular, "dec1_reg2", w1, w1, 1, 0.0);
    dec_.emplace_back(K::Up, "dec2_up", w1, w0, 1, 0.0);
    dec_.emplace_back(K::Regular, "dec2_reg", w0, w0, 1, 0.0);
    final_ = Conv<S>({w0, kNumClasses, 1, 1});
  }

  void init(Rng rng) {
    initial_.init(rng);
    for (auto& b : enc_) b.init(rng);
    for (auto& b : dec_) b.init(rng);
    final_.init(rng);
  }

  struct Cache {
    typename InitialBlock<S>::Cache init;
    std::vector<typename Bottleneck<S>::Cache> enc, dec;
    Tensor<S> final_in;
  };

  struct Output {
    Tensor<S> logits;
    Tensor<S> probs;
  };

  Output forward(const Tensor<S>& x, bool training, Rng& rng, Cache* cache) {
    if (x.dims().c != input_c)
      throw ShapeError(std::string(role_name(role)) + " model expects " +
                       std::to_string(input_c) + " input channels, got " +
                       std::to_string(x.dims().c));
    Cache local;
    Cache& cc = cache ? *cache : local;
    cc.enc.resize(enc_.size());
    cc.dec.resize(dec_.size());
    Tensor<S> t = initial_.forward(x, training, cc.init);
    for (std::size_t i = 0; i < enc_.size(); ++i)
      t = enc_[i].forward(t, training, rng, cc.enc[i]);
    const PoolIndices* idx1 = &cc.enc[0].pool_idx;
    const PoolIndices* idx2 = &cc.enc[5].pool_idx;
    t = dec_[0].forward(t, training, rng, cc.dec[0], idx2);
    t = dec_[1].forward(t, training, rng, cc.dec[1]);
    t = dec_[2].forward(t, training, rng, cc.dec[2]);
    t = dec_[3].forward(t, training, rng, cc.dec[3], idx1);
    t = dec_[4].forward(t, training, rng, cc.dec[4]);
    cc.final_in = t;
    Output out;
    out.logits = final_.forward(t);
    out.probs = channel_softmax(out.logits);
    return out;
  }

  Tensor<S> backward(const Tensor<S>& grad_logits, Cache& cc) {
    Tensor<S> g = final_.backward(cc.final_in, grad_logits);
    for (std::size_t i = dec_.size(); i-- > 0;)
      g = dec_[i].backward(g, cc.dec[i]);
    for (std::size_t i = enc_.size(); i-- > 0;)
      g = enc_[i].backward(g, cc.enc[i]);
    return initial_.backward(g, cc.init);
  }

  std::vector<ParamRef<S>> params() {
    std::vector<ParamRef<S>> out;
    initial_.collect(out);
    for (auto& b : enc_) b.collect(out);
    for (auto& b : dec_) b.collect(out);
    out.push_back({"final.weight", &final_.weight, true});
    out.push_back({"final.bias", &final_.bias, true});
    return out;
  }

  std::vector<ParamRef<S>> trainable_params() {
    std::vector<ParamRef<S>> out;
    for (auto& p : params())
      if (p.trainable) out.push_back(p);
    return out;
  }

  std::vector<LayerInfo> layer_infos() const {
    std::vector<LayerInfo> out;
    out.push_back({"initial", "initial", input_c, initial_.out_c, 1});
    for (const auto& b : enc_) out.push_back(b.info());
    for (const auto& b : dec_) out.push_back(b.info());
    out.push_back({"final", "final", final_.spec.in_c, final_.spec.out_c, 1});
    return out;
  }

  std::string describe() const {
    std::ostringstream os;
    os << role_name(role) << " network, width multiplier " << width_multiplier
       << ", " << input_c << " input channel" << (input_c == 1 ? "" : "s") << "\n";
    auto infos = layer_infos();
    for (std::size_t i = 0; i < infos.size(); ++i) {
      const auto& li = infos[i];
      os << (i + 1 < 10 ? " " : "") << (i + 1) << "  " << li.name;
      for (std::size_t pad = li.name.size(); pad < 12; ++pad) os << ' ';
      os << li.kind;
      if (li.kind == "dilated") os << "(" << li.dilation << ")";
      os << "  " << li.in_c << " -> " << li.out_c << "\n";
    }
    return os.str();
  }

  // Spatial output equals spatial input; channels become kNumClasses.
  Dims output_dims(Dims in) const { return Dims{in.n, kNumClasses, in.h, in.w}; }

 private:
  std::uint32_t scaled(std::uint32_t base) const {
    auto v = static_cast<std::uint32_t>(std::ceil(base * width_multiplier));
    return v == 0 ? 1 : v;
  }

  InitialBlock<S> initial_;
  std::vector<Bottleneck<S>> enc_, dec_;
  Conv<S> final_;
};

}  // namespace nseg
