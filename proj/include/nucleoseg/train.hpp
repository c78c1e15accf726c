#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "nucleoseg/adam.hpp"
#include "nucleoseg/enet.hpp"
#include "nucleoseg/errors.hpp"
#include "nucleoseg/loss.hpp"
#include "nucleoseg/rng.hpp"
#include "nucleoseg/tensor.hpp"

namespace nseg {

// One prepared image: a (1, C, h, w) input and its per-pixel classes.
struct TrainSample {
  Tensor<float> input;
  LabelBatch labels;
};

struct TrainConfig {
  std::uint32_t epochs = 30;
  std::uint32_t batch_size = 2;
  AdamConfig adam;
  std::vector<double> class_weights;  // empty selects inverse-frequency
};

struct StepLog {
  std::uint64_t step = 0;
  double loss = 0;
  double accuracy = 0;
};

// w_c = total / (classes * count_c), so a perfectly balanced class gets
// weight 1. A class that never occurs gets weight 0; it cannot appear
// in the loss anyway and must not poison the others.
inline std::vector<double> inverse_frequency_weights(
    const std::vector<TrainSample>& data, std::uint32_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  std::size_t total = 0;
  for (const auto& s : data)
    for (auto id : s.labels.ids) {
      if (id < 0 || std::uint32_t(id) >= classes)
        throw DataError("label id " + std::to_string(id) +
                        " outside class range");
      ++counts[std::size_t(id)];
      ++total;
    }
  std::vector<double> w(classes, 0.0);
  for (std::uint32_t c = 0; c < classes; ++c)
    if (counts[c] > 0) w[c] = double(total) / (double(classes) * double(counts[c]));
  return w;
}

// Minibatch training with Adam. All randomness comes from streams
// derived from `root` (1: epoch shuffles, 2: dropout masks), so runs
// with the same root, data, and config are bit-for-bit repeatable.
inline std::vector<StepLog> train_network(EnetModel<float>& model,
                                          const std::vector<TrainSample>& data,
                                          const TrainConfig& cfg, Rng root,
                                          std::ostream* progress = nullptr) {
  if (data.empty()) throw DataError("no training samples");
  if (cfg.batch_size == 0) throw ShapeError("batch size must be positive");
  const Dims d0 = data[0].input.dims();
  for (const auto& s : data) {
    if (s.input.dims().n != 1 || s.labels.n != 1)
      throw ShapeError("training samples must be single images");
    if (!(s.input.dims() == d0))
      throw ShapeError("training samples must share one size");
  }
  std::vector<double> weights = cfg.class_weights.empty()
                                    ? inverse_frequency_weights(data, kNumClasses)
                                    : cfg.class_weights;

  Rng shuffle_rng = root.derive(1);
  Rng drop_rng = root.derive(2);
  Adam<float> opt(cfg.adam);
  auto params = model.trainable_params();

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<StepLog> logs;
  std::uint64_t step = 0;
  const std::size_t plane = std::size_t(d0.h) * d0.w;

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double ep_loss = 0, ep_acc = 0;
    std::size_t ep_steps = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      auto bn = std::uint32_t(std::min<std::size_t>(cfg.batch_size,
                                                    order.size() - start));
      Tensor<float> x(Dims{bn, d0.c, d0.h, d0.w});
      LabelBatch lb;
      lb.n = bn;
      lb.h = d0.h;
      lb.w = d0.w;
      lb.ids.resize(std::size_t(bn) * plane);
      for (std::uint32_t b = 0; b < bn; ++b) {
        const TrainSample& s = data[order[start + b]];
        std::copy(s.input.data(), s.input.data() + s.input.size(),
                  x.data() + std::size_t(b) * d0.c * plane);
        std::copy(s.labels.ids.begin(), s.labels.ids.end(),
                  lb.ids.begin() + std::size_t(b) * plane);
      }

      typename EnetModel<float>::Cache cache;
      auto out = model.forward(x, true, drop_rng, &cache);
      auto loss = softmax_cross_entropy(out.logits, lb, weights);
      model.backward(loss.grad_logits, cache);
      opt.step(params);
      ++step;
      double acc = double(loss.correct) / double(loss.pixels);
      logs.push_back({step, loss.loss, acc});
      ep_loss += loss.loss;
      ep_acc += acc;
      ++ep_steps;
    }

    if (progress && ep_steps > 0) {
      auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
      char line[160];
      std::snprintf(line, sizeof(line),
                    "epoch %u/%u  loss %.6f  acc %.4f  (%.1fs)\n", epoch + 1,
                    cfg.epochs, ep_loss / double(ep_steps),
                    ep_acc / double(ep_steps), dt.count());
      (*progress) << line << std::flush;
    }
  }
  return logs;
}

// Step logs as CSV. Timing stays out of the file so reruns of the same
// seed produce identical bytes.
inline void write_train_log(const std::filesystem::path& path,
                            const std::vector<StepLog>& logs) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write log " + path.string());
  os << "step,loss,accuracy\n";
  char line[96];
  for (const auto& l : logs) {
    std::snprintf(line, sizeof(line), "%llu,%.12g,%.12g\n",
                  static_cast<unsigned long long>(l.step), l.loss, l.accuracy);
    os << line;
  }
}

}  // namespace nseg
