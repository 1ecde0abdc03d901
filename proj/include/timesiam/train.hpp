#pragma once

// Pre-training: repeated Adam steps over batches of sampled past/current
// pairs, epoch-level loss logging, and NaN divergence guards. Fully
// deterministic for a fixed seed.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "timesiam/checkpoint.hpp"
#include "timesiam/common.hpp"
#include "timesiam/data.hpp"
#include "timesiam/model.hpp"
#include "timesiam/optim.hpp"

namespace timesiam {

struct PretrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 32;
  int epochs = 50;
  int steps_per_epoch = 0;  // 0: ceil(window starts / batch_size)
  uint64_t seed = 0;
  LossMode loss_mode = LossMode::all;

  // Defaults used for labeled corpora (larger batches, longer schedule).
  static PretrainConfig classification_defaults() {
    PretrainConfig c;
    c.batch_size = 256;
    c.epochs = 100;
    return c;
  }

  void validate() const {
    if (learning_rate <= 0) throw ConfigError("learning rate must be positive");
    if (batch_size <= 0) throw ConfigError("batch size must be positive");
    if (epochs < 0) throw ConfigError("epoch count must be non-negative");
    if (steps_per_epoch < 0) throw ConfigError("steps per epoch must be non-negative");
  }
};

struct PretrainResult {
  SiameseModel<float> model;
  CheckpointMeta meta;
  std::vector<double> epoch_losses;
};

namespace detail {

// RNG stream ids. Kept disjoint from the synthetic-data streams and from
// the per-step dropout block at 1 << 40.
constexpr uint64_t kStreamData = 2;
constexpr uint64_t kStreamDropoutBase = uint64_t(1) << 40;

}  // namespace detail

// Mean pre-training loss over a batch of pairs, on one tape.
inline Tensor<float> batch_loss(Graph<float>& g, SiameseModel<float>& model,
                                const std::vector<SiamesePair>& batch, LossMode mode) {
  Tensor<float> acc;
  for (const auto& pair : batch) {
    Tensor<float> l = pretrain_forward(g, model, pair, mode).loss;
    acc = acc.defined() ? add(g, acc, l) : l;
  }
  return scale(g, acc, 1.0f / static_cast<float>(batch.size()));
}

// Runs epochs x steps_per_epoch Adam steps of masked past-to-current
// reconstruction on `frame`. Logs one line per epoch: `epoch=<i> mean_loss=<f>`.
inline PretrainResult pretrain(const TimeSeriesFrame& frame, const ModelConfig& mcfg,
                               const PretrainConfig& tcfg, std::ostream* log = nullptr) {
  mcfg.validate();
  tcfg.validate();
  if (frame.length() < mcfg.window)
    throw DataError("series length " + std::to_string(frame.length()) +
                    " is shorter than the window length " + std::to_string(mcfg.window));
  if (frame.channels() != mcfg.channels)
    throw ConfigError("data has " + std::to_string(frame.channels()) +
                      " channels but the model is configured for " +
                      std::to_string(mcfg.channels));

  PretrainResult res;
  res.model = build_model<float>(mcfg, tcfg.seed);
  res.meta.seed = tcfg.seed;

  const int starts = frame.length() - mcfg.window + 1;
  const int steps = tcfg.steps_per_epoch > 0
                        ? tcfg.steps_per_epoch
                        : (starts + tcfg.batch_size - 1) / tcfg.batch_size;

  auto params = res.model.named_parameters();
  std::vector<Tensor<float>> tensors;
  tensors.reserve(params.size());
  for (auto& [name, t] : params) tensors.push_back(t);
  AdamConfig<float> acfg;
  acfg.lr = static_cast<float>(tcfg.learning_rate);
  AdamState<float> opt(acfg, tensors);

  Rng data_rng = Rng::derive(tcfg.seed, detail::kStreamData);
  long global_step = 0;
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    double epoch_sum = 0.0;
    for (int s = 0; s < steps; ++s, ++global_step) {
      const auto batch =
          make_pretrain_batch(frame, tcfg.batch_size, mcfg.window,
                              mcfg.sampling_range, mcfg.mask, data_rng);
      Graph<float> g(true, Rng::derive(tcfg.seed, detail::kStreamDropoutBase +
                                                      static_cast<uint64_t>(global_step)));
      Tensor<float> loss = batch_loss(g, res.model, batch, tcfg.loss_mode);
      const double lv = static_cast<double>(loss.values()[0]);
      if (!std::isfinite(lv))
        throw NumericError("training diverged: non-finite loss at step " +
                           std::to_string(global_step) + " (epoch " +
                           std::to_string(epoch) + ")");
      epoch_sum += lv;
      g.backward(loss);
      adam_step(opt, tensors);
    }
    const double mean = epoch_sum / steps;
    res.epoch_losses.push_back(mean);
    if (log) {
      std::ostringstream line;
      line.precision(10);
      line << "epoch=" << epoch << " mean_loss=" << mean;
      *log << line.str() << "\n";
      log->flush();
    }
    res.meta.epoch = epoch;
    res.meta.final_loss = mean;
  }
  return res;
}

}  // namespace timesiam
