#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nucleoseg/errors.hpp"
#include "nucleoseg/tensor.hpp"

namespace nseg {

// Named handle to a parameter tensor inside a model. Non-trainable
// entries (running statistics) are serialized but never stepped.
template <class S>
struct ParamRef {
  std::string name;
  Tensor<S>* tensor = nullptr;
  bool trainable = true;
};

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double l2 = 2e-4;
};

// Adam with L2 regularization folded into the gradient:
//   g <- g + l2 * theta, then the usual bias-corrected moment update.
// Gradients are zeroed after each step.
template <class S>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }

  void step(std::vector<ParamRef<S>>& params) {
    if (m_.empty()) {
      for (auto& p : params) {
        m_.emplace_back(p.trainable ? p.tensor->size() : 0, S(0));
        v_.emplace_back(p.trainable ? p.tensor->size() : 0, S(0));
      }
    }
    if (m_.size() != params.size())
      throw ShapeError("adam: parameter list changed between steps");
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto& p = params[pi];
      if (!p.trainable) continue;
      if (m_[pi].size() != p.tensor->size())
        throw ShapeError("adam: size change for parameter " + p.name);
      auto& theta = *p.tensor;
      auto& grad = theta.grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < grad.size(); ++i) {
        double g = double(grad[i]);
        if (!std::isfinite(g))
          throw NumericError("adam: non-finite gradient in " + p.name);
        g += cfg_.l2 * double(theta[i]);
        double mn = cfg_.beta1 * double(m[i]) + (1.0 - cfg_.beta1) * g;
        double vn = cfg_.beta2 * double(v[i]) + (1.0 - cfg_.beta2) * g * g;
        m[i] = S(mn);
        v[i] = S(vn);
        double mhat = mn / bc1;
        double vhat = vn / bc2;
        theta[i] = S(double(theta[i]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
      theta.zero_grad();
    }
  }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

}  // namespace nseg
