#pragma once

// Downstream use of a pre-trained model: lineage-fusion encodings, forecast
// and classification heads, full fine-tuning vs linear probing, and the
// evaluation loops that produce metric reports. The lineage table is always
// frozen downstream; linear probing freezes everything but the head.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "timesiam/checkpoint.hpp"
#include "timesiam/common.hpp"
#include "timesiam/data.hpp"
#include "timesiam/metrics.hpp"
#include "timesiam/model.hpp"
#include "timesiam/optim.hpp"
#include "timesiam/train.hpp"

namespace timesiam {

enum class TaskKind { forecast, classify };
enum class TuneMode { full, linear_probe };
enum class FusionKind { fixed_multi_lineage, extended_multi_lineage, single };

inline TaskKind parse_task(const std::string& s) {
  if (s == "forecast") return TaskKind::forecast;
  if (s == "classify") return TaskKind::classify;
  throw ConfigError("unknown task '" + s + "' (expected forecast or classify)");
}

inline std::string task_name(TaskKind t) {
  return t == TaskKind::forecast ? "forecast" : "classify";
}

inline TuneMode parse_tune_mode(const std::string& s) {
  if (s == "full") return TuneMode::full;
  if (s == "linear-probe" || s == "linear_probe") return TuneMode::linear_probe;
  throw ConfigError("unknown mode '" + s + "' (expected full or linear-probe)");
}

inline std::string tune_mode_name(TuneMode m) {
  return m == TuneMode::full ? "full" : "linear_probe";
}

inline FusionKind parse_fusion(const std::string& s) {
  if (s == "fixed" || s == "fixed_multi_lineage") return FusionKind::fixed_multi_lineage;
  if (s == "extended" || s == "extended_multi_lineage")
    return FusionKind::extended_multi_lineage;
  if (s == "single") return FusionKind::single;
  throw ConfigError("unknown fusion '" + s + "' (expected fixed, extended, or single)");
}

inline std::string fusion_name(FusionKind f) {
  switch (f) {
    case FusionKind::fixed_multi_lineage: return "fixed_multi_lineage";
    case FusionKind::extended_multi_lineage: return "extended_multi_lineage";
    case FusionKind::single: return "single";
  }
  throw ConfigError("bad fusion value");
}

// ---------------------------------------------------------------------------
// Fusion encodings.

// Mean of the encodings of `window` under lineage rows 0..n-1 (all rows when
// the model is queried with n = N+1). n=1 is exactly the row-0 encoding.
template <class S>
TokenSeq<S> fuse_fixed(Graph<S>& g, SiameseModel<S>& m, const Mat& window, int n) {
  if (n < 1 || n > m.lineages.count())
    throw ConfigError("lineage fusion count " + std::to_string(n) + " outside [1, " +
                      std::to_string(m.lineages.count()) + "]");
  TokenSeq<S> acc;
  for (int i = 0; i < n; ++i) {
    TokenSeq<S> enc =
        encode(g, m, add_lineage(g, embed_window(g, m, window), m.lineages, i));
    if (i == 0) {
      acc = enc;
    } else {
      for (size_t gi = 0; gi < acc.groups.size(); ++gi)
        acc.groups[gi] = add(g, acc.groups[gi], enc.groups[gi]);
    }
  }
  if (n > 1)
    for (auto& grp : acc.groups) grp = scale(g, grp, S(1) / static_cast<S>(n));
  return acc;
}

// Splits a longer (already normalized) window into length-T segments from
// the most recent end backwards, encodes segment i with the lineage row
// matching age i*T (clamped to the sampling horizon), and concatenates the
// token sequences newest-first.
template <class S>
TokenSeq<S> fuse_extended(Graph<S>& g, SiameseModel<S>& m, const Mat& window) {
  const int T = m.cfg.window;
  if (window.rows <= 0 || window.rows % T != 0)
    throw ConfigError("input length " + std::to_string(window.rows) +
                      ": length must be a multiple of " + std::to_string(T));
  const int segments = window.rows / T;
  const int64_t max_age = static_cast<int64_t>(T) * m.cfg.sampling_range;

  std::vector<TokenSeq<S>> encoded;
  encoded.reserve(static_cast<size_t>(segments));
  for (int i = 0; i < segments; ++i) {
    Mat seg(T, window.cols);
    const int r0 = window.rows - (i + 1) * T;
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < window.cols; ++c) seg.at(t, c) = window.at(r0 + t, c);
    const int age = static_cast<int>(std::min<int64_t>(static_cast<int64_t>(i) * T, max_age));
    const int lin = lineage_matching(age, T, m.cfg.sampling_range, m.cfg.lineages);
    encoded.push_back(
        encode(g, m, add_lineage(g, embed_window(g, m, seg), m.lineages, lin)));
  }

  TokenSeq<S> out;
  const size_t n_groups = encoded[0].groups.size();
  out.groups.reserve(n_groups);
  for (size_t gi = 0; gi < n_groups; ++gi) {
    std::vector<Tensor<S>> parts;
    parts.reserve(encoded.size());
    for (auto& e : encoded) parts.push_back(e.groups[gi]);
    out.groups.push_back(parts.size() == 1 ? parts[0] : concat_rows(g, parts));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fine-tune configuration.

struct FinetuneConfig {
  TaskKind task = TaskKind::forecast;
  TuneMode mode = TuneMode::full;
  FusionKind fusion = FusionKind::fixed_multi_lineage;
  int lineages_used = 0;  // fixed fusion: how many rows to average; 0 = all
  std::vector<int> horizons = {96, 192, 336, 720};
  double learning_rate = 1e-4;
  int epochs = 10;  // forecast default; classification runs default to 50
  int batch_size = 32;
  int steps_per_epoch = 0;  // 0: one pass worth of batches
  int input_length = 0;     // forecast input; 0 = model window (2x for extended)
  double test_fraction = 0.2;  // classification fallback split
  uint64_t seed = 0;

  static FinetuneConfig classification_defaults() {
    FinetuneConfig c;
    c.task = TaskKind::classify;
    c.epochs = 50;
    c.batch_size = 64;
    return c;
  }

  int effective_lineages(const ModelConfig& mcfg) const {
    return lineages_used > 0 ? lineages_used : mcfg.lineages + 1;
  }

  int effective_input_length(const ModelConfig& mcfg) const {
    if (input_length > 0) return input_length;
    return fusion == FusionKind::extended_multi_lineage ? 2 * mcfg.window : mcfg.window;
  }

  void validate(const ModelConfig& mcfg) const {
    if (learning_rate <= 0) throw ConfigError("learning rate must be positive");
    if (epochs < 0) throw ConfigError("epoch count must be non-negative");
    if (batch_size <= 0) throw ConfigError("batch size must be positive");
    if (steps_per_epoch < 0) throw ConfigError("steps per epoch must be non-negative");
    if (test_fraction <= 0.0 || test_fraction >= 1.0)
      throw ConfigError("test fraction must be in (0, 1)");
    if (lineages_used < 0 || lineages_used > mcfg.lineages + 1)
      throw ConfigError("lineages_used " + std::to_string(lineages_used) +
                        " outside [0, " + std::to_string(mcfg.lineages + 1) + "]");
    const int in_len = effective_input_length(mcfg);
    if (fusion == FusionKind::extended_multi_lineage) {
      if (in_len % mcfg.window != 0)
        throw ConfigError("input length " + std::to_string(in_len) +
                          ": length must be a multiple of " + std::to_string(mcfg.window));
    } else if (in_len != mcfg.window) {
      throw ConfigError("input length " + std::to_string(in_len) +
                        " must equal the model window " + std::to_string(mcfg.window) +
                        " unless extended fusion is used");
    }
    if (task == TaskKind::forecast) {
      if (horizons.empty()) throw ConfigError("forecast needs at least one horizon");
      for (int h : horizons)
        if (h <= 0) throw ConfigError("horizons must be positive");
    }
  }
};

// Dispatches to the configured fusion op; `window` is already normalized.
template <class S>
TokenSeq<S> fused_representation(Graph<S>& g, SiameseModel<S>& m, const Mat& window,
                                 const FinetuneConfig& fcfg) {
  switch (fcfg.fusion) {
    case FusionKind::single: return fuse_fixed(g, m, window, 1);
    case FusionKind::fixed_multi_lineage:
      return fuse_fixed(g, m, window, fcfg.effective_lineages(m.cfg));
    case FusionKind::extended_multi_lineage: return fuse_extended(g, m, window);
  }
  throw ConfigError("bad fusion value");
}

// Tokens one channel contributes to a fused representation.
inline int fused_tokens_per_channel(const ModelConfig& mcfg, const FinetuneConfig& fcfg) {
  const int per_window = mcfg.backbone == Backbone::patch ? mcfg.window / mcfg.patch_len : 1;
  const int windows = fcfg.fusion == FusionKind::extended_multi_lineage
                          ? fcfg.effective_input_length(mcfg) / mcfg.window
                          : 1;
  return windows * per_window;
}

// ---------------------------------------------------------------------------
// Heads.

template <class S>
struct ForecastHead {
  Tensor<S> weight;  // [tokens_per_channel * D x O], shared across channels
  Tensor<S> bias;    // [1 x O]
};

template <class S>
ForecastHead<S> init_forecast_head(const ModelConfig& mcfg, const FinetuneConfig& fcfg,
                                   int horizon, uint64_t seed) {
  const int in_dim = fused_tokens_per_channel(mcfg, fcfg) * mcfg.d_model;
  Rng rng = Rng::derive(seed, 0x6ead + static_cast<uint64_t>(horizon));
  ForecastHead<S> h;
  h.weight = detail::xavier<S>(rng, in_dim, horizon, in_dim, horizon);
  h.bias = detail::zeros_param<S>(1, horizon);
  return h;
}

namespace detail {

// The token rows belonging to channel `c`, as one [m x D] matrix. Patch mode
// keeps channels in separate groups; variate mode interleaves channels
// within one group (row j*C + c belongs to channel c).
template <class S>
Tensor<S> channel_tokens(Graph<S>& g, const ModelConfig& mcfg, const TokenSeq<S>& rep,
                         int c) {
  if (mcfg.backbone == Backbone::patch) return rep.groups[static_cast<size_t>(c)];
  const Tensor<S>& grp = rep.groups[0];
  const int C = mcfg.channels;
  const int reps = grp.rows() / C;
  if (reps == 1) return slice_rows(g, grp, c, c + 1);
  std::vector<Tensor<S>> rows;
  rows.reserve(static_cast<size_t>(reps));
  for (int j = 0; j < reps; ++j) rows.push_back(slice_rows(g, grp, j * C + c, j * C + c + 1));
  return concat_rows(g, rows);
}

}  // namespace detail

// Flattens each channel's fused tokens and applies the shared linear head;
// returns the [O x C] prediction in normalized space.
template <class S>
Tensor<S> forecast_from_tokens(Graph<S>& g, const ModelConfig& mcfg,
                               const TokenSeq<S>& rep, ForecastHead<S>& head) {
  std::vector<Tensor<S>> per_channel;  // each [1 x O]
  per_channel.reserve(static_cast<size_t>(mcfg.channels));
  for (int c = 0; c < mcfg.channels; ++c) {
    Tensor<S> toks = detail::channel_tokens(g, mcfg, rep, c);
    Tensor<S> flat = reshape(g, toks, {1, toks.rows() * toks.cols()});
    if (flat.cols() != head.weight.rows())
      throw ShapeError("forecast head expects input dim " +
                       std::to_string(head.weight.rows()) + ", got " +
                       std::to_string(flat.cols()));
    per_channel.push_back(add_row(g, matmul(g, flat, head.weight), head.bias));
  }
  Tensor<S> stacked =
      per_channel.size() == 1 ? per_channel[0] : concat_rows(g, per_channel);
  return transpose(g, stacked);  // [O x C]
}

template <class S>
struct ClassifyHead {
  Tensor<S> weight;  // [D x K]
  Tensor<S> bias;    // [1 x K]
};

template <class S>
ClassifyHead<S> init_classify_head(const ModelConfig& mcfg, int classes, uint64_t seed) {
  if (classes < 2) throw ConfigError("classification needs at least 2 classes");
  Rng rng = Rng::derive(seed, 0xc1f);
  ClassifyHead<S> h;
  h.weight = detail::xavier<S>(rng, mcfg.d_model, classes, mcfg.d_model, classes);
  h.bias = detail::zeros_param<S>(1, classes);
  return h;
}

// Mean-pools every token across all groups, then maps to K logits ([1 x K]).
template <class S>
Tensor<S> classify_from_tokens(Graph<S>& g, const TokenSeq<S>& rep,
                               ClassifyHead<S>& head) {
  Tensor<S> all = rep.groups.size() == 1 ? rep.groups[0] : concat_rows(g, rep.groups);
  Tensor<S> pooled = mean_rows(g, all);
  return add_row(g, matmul(g, pooled, head.weight), head.bias);
}

// Argmax with lowest-index tie-break.
template <class S>
int argmax_logits(const Tensor<S>& logits) {
  int best = 0;
  for (int j = 1; j < logits.cols(); ++j)
    if (logits.values()[static_cast<size_t>(j)] > logits.values()[static_cast<size_t>(best)])
      best = j;
  return best;
}

// ---------------------------------------------------------------------------
// Parameter selection (freeze contracts).

// full: everything trains except the lineage table. linear_probe: only the
// head trains. Head tensors are passed separately by the task loops.
template <class S>
std::vector<Tensor<S>> trainable_model_params(SiameseModel<S>& m, TuneMode mode) {
  std::vector<Tensor<S>> out;
  if (mode == TuneMode::linear_probe) return out;
  for (auto& [name, t] : m.named_parameters())
    if (name != "lineage.embeddings") out.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// Forecast fine-tuning and evaluation.

template <class S>
struct ForecastModel {
  SiameseModel<S> model;
  std::map<int, ForecastHead<S>> heads;  // one per horizon
};

namespace detail {

inline Mat take_window(const TimeSeriesFrame& f, int start, int len) {
  Mat w(len, f.channels());
  for (int t = 0; t < len; ++t)
    for (int c = 0; c < f.channels(); ++c) w.at(t, c) = f.values.at(start + t, c);
  return w;
}

template <class S>
Tensor<S> mat_to_tensor(const Mat& m) {
  std::vector<S> vals(static_cast<size_t>(m.rows) * m.cols);
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<S>(m.v[i]);
  return Tensor<S>::from({m.rows, m.cols}, std::move(vals));
}

}  // namespace detail

// One de-normalized [O x C] forecast for the raw input window.
inline Mat forecast_window(ForecastModel<float>& fm, const FinetuneConfig& fcfg,
                           const Mat& raw_input, int horizon) {
  auto it = fm.heads.find(horizon);
  if (it == fm.heads.end())
    throw ConfigError("no forecast head for horizon " + std::to_string(horizon));
  Mat input = raw_input;
  const NormStats stats = instance_normalize(input);
  Graph<float> g(false);
  TokenSeq<float> rep = fused_representation(g, fm.model, input, fcfg);
  Tensor<float> pred = forecast_from_tokens(g, fm.model.cfg, rep, it->second);
  Mat out(pred.rows(), pred.cols());
  for (int t = 0; t < out.rows; ++t)
    for (int c = 0; c < out.cols; ++c) out.at(t, c) = static_cast<double>(pred.at(t, c));
  denormalize(out, stats);
  return out;
}

// MSE/MAE per horizon over every stride-1 (input, future) pair in `test`;
// horizons that do not fit are skipped with a warning.
inline ForecastReport evaluate_forecast(ForecastModel<float>& fm,
                                        const FinetuneConfig& fcfg,
                                        const TimeSeriesFrame& test,
                                        std::ostream* warn = nullptr) {
  const int in_len = fcfg.effective_input_length(fm.model.cfg);
  ForecastReport rep;
  for (int O : fcfg.horizons) {
    const int n_windows = test.length() - in_len - O + 1;
    if (n_windows < 1) {
      if (warn)
        *warn << "warning: skipping horizon " << O << " (test series has "
              << test.length() << " rows, needs " << in_len + O << ")\n";
      continue;
    }
    double se = 0.0, ae = 0.0;
    for (int s = 0; s < n_windows; ++s) {
      const Mat input = detail::take_window(test, s, in_len);
      const Mat pred = forecast_window(fm, fcfg, input, O);
      for (int t = 0; t < O; ++t)
        for (int c = 0; c < test.channels(); ++c) {
          const double d = pred.at(t, c) - test.values.at(s + in_len + t, c);
          se += d * d;
          ae += std::abs(d);
        }
    }
    const double denom = static_cast<double>(n_windows) * O * test.channels();
    rep.horizons.push_back({O, se / denom, ae / denom, n_windows});
  }
  if (rep.horizons.empty())
    throw DataError("test series too short for every requested horizon");
  rep.finalize();
  return rep;
}

// Fine-tunes on `train` and reports on `test`. The model is updated in
// place (clone first via cast_model if the original matters); heads are
// created fresh. Supervised by squared error in normalized space, shared
// trunk across horizons.
inline ForecastReport finetune_forecast(ForecastModel<float>& fm,
                                        const TimeSeriesFrame& train,
                                        const TimeSeriesFrame& test,
                                        const FinetuneConfig& fcfg,
                                        std::ostream* log = nullptr) {
  const ModelConfig& mcfg = fm.model.cfg;
  fcfg.validate(mcfg);
  if (train.channels() != mcfg.channels)
    throw DataError("training data has " + std::to_string(train.channels()) +
                    " channels, model expects " + std::to_string(mcfg.channels));
  const int in_len = fcfg.effective_input_length(mcfg);
  int max_h = 0;
  for (int O : fcfg.horizons) max_h = std::max(max_h, O);
  const int starts = train.length() - in_len - max_h + 1;
  if (fcfg.epochs > 0 && starts < 1)
    throw DataError("training series has " + std::to_string(train.length()) +
                    " rows; needs at least " + std::to_string(in_len + max_h) +
                    " for input length " + std::to_string(in_len) + " plus horizon " +
                    std::to_string(max_h));

  fm.heads.clear();
  for (int O : fcfg.horizons)
    fm.heads.emplace(O, init_forecast_head<float>(mcfg, fcfg, O, fcfg.seed));

  std::vector<Tensor<float>> trainable = trainable_model_params(fm.model, fcfg.mode);
  for (auto& [O, head] : fm.heads) {
    trainable.push_back(head.weight);
    trainable.push_back(head.bias);
  }
  AdamConfig<float> acfg;
  acfg.lr = static_cast<float>(fcfg.learning_rate);
  AdamState<float> opt(acfg, trainable);

  Rng data_rng = Rng::derive(fcfg.seed, 4);
  const int steps = fcfg.steps_per_epoch > 0
                        ? fcfg.steps_per_epoch
                        : (starts + fcfg.batch_size - 1) / fcfg.batch_size;
  const bool use_dropout = fcfg.mode == TuneMode::full;
  long global_step = 0;
  for (int epoch = 1; epoch <= fcfg.epochs; ++epoch) {
    double epoch_sum = 0.0;
    for (int s = 0; s < steps; ++s, ++global_step) {
      Graph<float> g(use_dropout,
                     Rng::derive(fcfg.seed, detail::kStreamDropoutBase +
                                                static_cast<uint64_t>(global_step)));
      Tensor<float> acc;
      int terms = 0;
      for (int b = 0; b < fcfg.batch_size; ++b) {
        const int start = static_cast<int>(data_rng.uniform_int(0, starts - 1));
        Mat input = detail::take_window(train, start, in_len);
        const NormStats stats = instance_normalize(input);
        TokenSeq<float> rep = fused_representation(g, fm.model, input, fcfg);
        for (int O : fcfg.horizons) {
          Mat target = detail::take_window(train, start + in_len, O);
          // Normalize the target with the input window's statistics so the
          // head learns in the same space the encoder sees.
          for (int t = 0; t < O; ++t)
            for (int c = 0; c < target.cols; ++c)
              target.at(t, c) = (target.at(t, c) - stats.mean[c]) / stats.std[c];
          Tensor<float> pred =
              forecast_from_tokens(g, mcfg, rep, fm.heads.at(O));
          Tensor<float> l = mse(g, pred, detail::mat_to_tensor<float>(target));
          acc = acc.defined() ? add(g, acc, l) : l;
          ++terms;
        }
      }
      Tensor<float> loss = scale(g, acc, 1.0f / static_cast<float>(terms));
      const double lv = static_cast<double>(loss.values()[0]);
      if (!std::isfinite(lv))
        throw NumericError("fine-tuning diverged: non-finite loss at step " +
                           std::to_string(global_step));
      epoch_sum += lv;
      g.backward(loss);
      adam_step(opt, trainable);
    }
    if (log) {
      std::ostringstream line;
      line.precision(10);
      line << "epoch=" << epoch << " mean_loss=" << (epoch_sum / steps);
      *log << line.str() << "\n";
      log->flush();
    }
  }
  return evaluate_forecast(fm, fcfg, test, log);
}

// ---------------------------------------------------------------------------
// Classification fine-tuning and evaluation.

template <class S>
struct ClassifyModel {
  SiameseModel<S> model;
  ClassifyHead<S> head;
  int classes = 0;
};

// Normalized copy of one labeled window.
inline Mat normalized_window(const Mat& w) {
  Mat out = w;
  instance_normalize(out);
  return out;
}

inline std::vector<double> softmax_row(const std::vector<float>& logits) {
  double mx = logits.empty() ? 0.0 : static_cast<double>(logits[0]);
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

inline ClassifyReport evaluate_classify(ClassifyModel<float>& cm,
                                        const FinetuneConfig& fcfg,
                                        const LabeledWindows& test) {
  if (test.windows.empty()) throw DataError("empty classification test set");
  std::vector<int> labels = test.labels;
  std::vector<int> preds(test.size());
  std::vector<std::vector<double>> scores(test.size());
  for (size_t i = 0; i < test.size(); ++i) {
    Graph<float> g(false);
    TokenSeq<float> rep =
        fused_representation(g, cm.model, normalized_window(test.windows[i]), fcfg);
    Tensor<float> logits = classify_from_tokens(g, rep, cm.head);
    preds[i] = argmax_logits(logits);
    scores[i] = softmax_row(logits.values());
  }
  return evaluate_classification(labels, preds, cm.classes, scores);
}

// Splits labeled windows into train/test with a seeded shuffle when no
// explicit test set is supplied.
inline std::pair<LabeledWindows, LabeledWindows> split_labeled(const LabeledWindows& all,
                                                               double test_fraction,
                                                               uint64_t seed) {
  const int n = static_cast<int>(all.size());
  int n_test = static_cast<int>(std::lround(test_fraction * n));
  n_test = std::max(1, std::min(n - 1, n_test));
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng = Rng::derive(seed, 5);
  rng.shuffle(order);
  LabeledWindows train, test;
  train.T = test.T = all.T;
  train.C = test.C = all.C;
  train.K = test.K = all.K;
  for (int i = 0; i < n; ++i) {
    auto& dst = i < n_test ? test : train;
    dst.windows.push_back(all.windows[static_cast<size_t>(order[static_cast<size_t>(i)])]);
    dst.labels.push_back(all.labels[static_cast<size_t>(order[static_cast<size_t>(i)])]);
  }
  return {std::move(train), std::move(test)};
}

inline ClassifyReport finetune_classify(ClassifyModel<float>& cm,
                                        const LabeledWindows& train,
                                        const LabeledWindows& test,
                                        const FinetuneConfig& fcfg,
                                        std::ostream* log = nullptr) {
  const ModelConfig& mcfg = cm.model.cfg;
  fcfg.validate(mcfg);
  if (train.C != mcfg.channels)
    throw DataError("labeled data has " + std::to_string(train.C) +
                    " channels, model expects " + std::to_string(mcfg.channels));
  const int in_len = fcfg.effective_input_length(mcfg);
  if (train.T != in_len)
    throw DataError("labeled windows have length " + std::to_string(train.T) +
                    ", fine-tune input length is " + std::to_string(in_len));
  if (train.windows.empty()) throw DataError("empty classification training set");

  cm.classes = train.K;
  cm.head = init_classify_head<float>(mcfg, train.K, fcfg.seed);

  std::vector<Tensor<float>> trainable = trainable_model_params(cm.model, fcfg.mode);
  trainable.push_back(cm.head.weight);
  trainable.push_back(cm.head.bias);
  AdamConfig<float> acfg;
  acfg.lr = static_cast<float>(fcfg.learning_rate);
  AdamState<float> opt(acfg, trainable);

  Rng shuffle_rng = Rng::derive(fcfg.seed, 4);
  const bool use_dropout = fcfg.mode == TuneMode::full;
  std::vector<int> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  long global_step = 0;
  for (int epoch = 1; epoch <= fcfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_sum = 0.0;
    int batches = 0;
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(fcfg.batch_size)) {
      const size_t end = std::min(order.size(), pos + static_cast<size_t>(fcfg.batch_size));
      Graph<float> g(use_dropout,
                     Rng::derive(fcfg.seed, detail::kStreamDropoutBase +
                                                static_cast<uint64_t>(global_step)));
      Tensor<float> acc;
      for (size_t i = pos; i < end; ++i) {
        const int idx = order[i];
        TokenSeq<float> rep = fused_representation(
            g, cm.model, normalized_window(train.windows[static_cast<size_t>(idx)]), fcfg);
        Tensor<float> logits = classify_from_tokens(g, rep, cm.head);
        Tensor<float> l =
            softmax_cross_entropy(g, logits, train.labels[static_cast<size_t>(idx)]);
        acc = acc.defined() ? add(g, acc, l) : l;
      }
      Tensor<float> loss = scale(g, acc, 1.0f / static_cast<float>(end - pos));
      const double lv = static_cast<double>(loss.values()[0]);
      if (!std::isfinite(lv))
        throw NumericError("fine-tuning diverged: non-finite loss at step " +
                           std::to_string(global_step));
      epoch_sum += lv;
      ++batches;
      g.backward(loss);
      adam_step(opt, trainable);
      ++global_step;
    }
    if (log) {
      std::ostringstream line;
      line.precision(10);
      line << "epoch=" << epoch << " mean_loss=" << (epoch_sum / std::max(1, batches));
      *log << line.str() << "\n";
      log->flush();
    }
  }
  return evaluate_classify(cm, fcfg, test);
}

// ---------------------------------------------------------------------------
// Fine-tuned checkpoint plumbing.

inline std::map<std::string, std::string> finetune_config_entries(const FinetuneConfig& f) {
  std::map<std::string, std::string> kv;
  kv["finetune.task"] = task_name(f.task);
  kv["finetune.mode"] = tune_mode_name(f.mode);
  kv["finetune.fusion"] = fusion_name(f.fusion);
  kv["finetune.lineages_used"] = std::to_string(f.lineages_used);
  kv["finetune.input_length"] = std::to_string(f.input_length);
  std::string hs;
  for (size_t i = 0; i < f.horizons.size(); ++i)
    hs += (i ? "," : "") + std::to_string(f.horizons[i]);
  kv["finetune.horizons"] = hs;
  return kv;
}

inline void save_forecast_checkpoint(const std::string& path, ForecastModel<float>& fm,
                                     const FinetuneConfig& fcfg, const CheckpointMeta& meta) {
  std::vector<RawTensor> extra;
  for (auto& [O, head] : fm.heads) {
    extra.push_back({"head." + std::to_string(O) + ".weight", head.weight.dims(),
                     head.weight.values()});
    extra.push_back({"head." + std::to_string(O) + ".bias", head.bias.dims(),
                     head.bias.values()});
  }
  save_checkpoint(path, fm.model, meta, extra, finetune_config_entries(fcfg));
}

inline void save_classify_checkpoint(const std::string& path, ClassifyModel<float>& cm,
                                     const FinetuneConfig& fcfg, const CheckpointMeta& meta) {
  std::vector<RawTensor> extra;
  extra.push_back({"head.weight", cm.head.weight.dims(), cm.head.weight.values()});
  extra.push_back({"head.bias", cm.head.bias.dims(), cm.head.bias.values()});
  auto kv = finetune_config_entries(fcfg);
  kv["finetune.classes"] = std::to_string(cm.classes);
  save_checkpoint(path, cm.model, meta, extra, kv);
}

// Reads finetune.* keys back into a config (task-specific fields only).
inline FinetuneConfig finetune_config_from_raw(const RawCheckpoint& raw) {
  FinetuneConfig f;
  auto get = [&raw](const char* k) -> const std::string* {
    auto it = raw.config.find(k);
    return it == raw.config.end() ? nullptr : &it->second;
  };
  if (auto* v = get("finetune.task")) f.task = parse_task(*v);
  if (auto* v = get("finetune.mode")) f.mode = parse_tune_mode(*v);
  if (auto* v = get("finetune.fusion")) f.fusion = parse_fusion(*v);
  if (auto* v = get("finetune.lineages_used")) f.lineages_used = std::stoi(*v);
  if (auto* v = get("finetune.input_length")) f.input_length = std::stoi(*v);
  if (auto* v = get("finetune.horizons")) {
    f.horizons.clear();
    std::istringstream is(*v);
    std::string tok;
    while (std::getline(is, tok, ','))
      if (!tok.empty()) f.horizons.push_back(std::stoi(tok));
  }
  return f;
}

// Rebuilds a fine-tuned forecast model (trunk + heads) from a checkpoint.
inline ForecastModel<float> load_forecast_checkpoint(const LoadedCheckpoint& ck,
                                                     const FinetuneConfig& fcfg) {
  ForecastModel<float> fm;
  fm.model = ck.model;
  for (int O : fcfg.horizons) {
    const RawTensor* w = ck.raw.find("head." + std::to_string(O) + ".weight");
    const RawTensor* b = ck.raw.find("head." + std::to_string(O) + ".bias");
    if (!w || !b)
      throw DataError("checkpoint has no forecast head for horizon " + std::to_string(O) +
                      "; run finetune first");
    ForecastHead<float> h;
    h.weight = Tensor<float>::from(w->dims, w->values, true);
    h.bias = Tensor<float>::from(b->dims, b->values, true);
    fm.heads.emplace(O, std::move(h));
  }
  return fm;
}

inline ClassifyModel<float> load_classify_checkpoint(const LoadedCheckpoint& ck) {
  ClassifyModel<float> cm;
  cm.model = ck.model;
  const RawTensor* w = ck.raw.find("head.weight");
  const RawTensor* b = ck.raw.find("head.bias");
  if (!w || !b)
    throw DataError("checkpoint has no classification head; run finetune first");
  cm.head.weight = Tensor<float>::from(w->dims, w->values, true);
  cm.head.bias = Tensor<float>::from(b->dims, b->values, true);
  auto it = ck.raw.config.find("finetune.classes");
  if (it == ck.raw.config.end())
    throw DataError("checkpoint is missing finetune.classes");
  cm.classes = std::stoi(it->second);
  return cm;
}

}  // namespace timesiam
