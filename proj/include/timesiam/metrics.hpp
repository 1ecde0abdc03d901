#pragma once

// Evaluation reports: forecasting MSE/MAE per horizon with their average,
// and the classification suite (accuracy, macro precision/recall/F1, AUROC,
// AUPRC). Rank-based AUROC uses tie-averaged ranks; AUPRC is average
// precision. Multi-class AUROC/AUPRC aggregate one-vs-rest per class.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "timesiam/common.hpp"

namespace timesiam {

// ---------------------------------------------------------------------------
// Forecasting.

struct HorizonMetrics {
  int horizon = 0;
  double mse = 0.0;
  double mae = 0.0;
  long windows = 0;
};

struct ForecastReport {
  std::vector<HorizonMetrics> horizons;
  double avg_mse = 0.0;  // mean of per-horizon MSEs
  double avg_mae = 0.0;

  void finalize() {
    if (horizons.empty()) throw ConfigError("forecast report with no horizons");
    avg_mse = 0.0;
    avg_mae = 0.0;
    for (const auto& h : horizons) {
      avg_mse += h.mse;
      avg_mae += h.mae;
    }
    avg_mse /= static_cast<double>(horizons.size());
    avg_mae /= static_cast<double>(horizons.size());
  }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(10);
    os << "task=forecast\n";
    for (const auto& h : horizons) {
      os << "horizon." << h.horizon << ".mse=" << h.mse << "\n";
      os << "horizon." << h.horizon << ".mae=" << h.mae << "\n";
      os << "horizon." << h.horizon << ".windows=" << h.windows << "\n";
    }
    os << "avg.mse=" << avg_mse << "\n";
    os << "avg.mae=" << avg_mae << "\n";
    return os.str();
  }

  std::string csv_header() const {
    std::string s = "task";
    for (const auto& h : horizons)
      s += ",mse_" + std::to_string(h.horizon) + ",mae_" + std::to_string(h.horizon);
    return s + ",avg_mse,avg_mae";
  }

  std::string csv_row() const {
    std::ostringstream os;
    os.precision(10);
    os << "forecast";
    for (const auto& h : horizons) os << "," << h.mse << "," << h.mae;
    os << "," << avg_mse << "," << avg_mae;
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// Classification.

struct ClassMetrics {
  int label = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;  // true examples of this class
};

struct ClassifyReport {
  long examples = 0;
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  // Absent (not zero) when undefined, e.g. a single-class test set.
  std::optional<double> auroc;
  std::optional<double> auprc;

  std::string to_text() const {
    std::ostringstream os;
    os.precision(10);
    os << "task=classify\n";
    os << "examples=" << examples << "\n";
    os << "accuracy=" << accuracy << "\n";
    for (const auto& c : per_class) {
      os << "class." << c.label << ".precision=" << c.precision << "\n";
      os << "class." << c.label << ".recall=" << c.recall << "\n";
      os << "class." << c.label << ".f1=" << c.f1 << "\n";
      os << "class." << c.label << ".support=" << c.support << "\n";
    }
    os << "macro.precision=" << macro_precision << "\n";
    os << "macro.recall=" << macro_recall << "\n";
    os << "macro.f1=" << macro_f1 << "\n";
    if (auroc) os << "auroc=" << *auroc << "\n";
    else os << "auroc=absent\n";
    if (auprc) os << "auprc=" << *auprc << "\n";
    else os << "auprc=absent\n";
    return os.str();
  }

  std::string csv_header() const {
    return "task,examples,accuracy,macro_precision,macro_recall,macro_f1,auroc,auprc";
  }

  std::string csv_row() const {
    std::ostringstream os;
    os.precision(10);
    os << "classify," << examples << "," << accuracy << "," << macro_precision << ","
       << macro_recall << "," << macro_f1 << ",";
    if (auroc) os << *auroc;
    os << ",";
    if (auprc) os << *auprc;
    return os.str();
  }
};

// Binary AUROC from scores: probability a positive outranks a negative,
// ties shared via rank averaging (Mann-Whitney U). Absent when either class
// is missing.
inline std::optional<double> binary_auroc(const std::vector<double>& scores,
                                          const std::vector<uint8_t>& is_positive) {
  if (scores.size() != is_positive.size())
    throw ConfigError("auroc: score/label length mismatch");
  const size_t n = scores.size();
  long n_pos = 0;
  for (uint8_t b : is_positive) n_pos += b;
  const long n_neg = static_cast<long>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&scores](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Tie-averaged ranks (1-based).
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t t = i; t <= j; ++t)
      if (is_positive[order[t]]) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double u = rank_sum_pos - 0.5 * n_pos * (n_pos + 1.0);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Binary AUPRC as average precision: sum of precision-at-threshold weighted
// by recall increments, descending score order, ties handled as one group.
inline std::optional<double> binary_auprc(const std::vector<double>& scores,
                                          const std::vector<uint8_t>& is_positive) {
  if (scores.size() != is_positive.size())
    throw ConfigError("auprc: score/label length mismatch");
  const size_t n = scores.size();
  long n_pos = 0;
  for (uint8_t b : is_positive) n_pos += b;
  if (n_pos == 0 || n_pos == static_cast<long>(n)) return std::nullopt;

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&scores](size_t a, size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  long tp = 0, fp = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    long tp_inc = 0;
    for (size_t t = i; t <= j; ++t) {
      if (is_positive[order[t]]) ++tp_inc;
      else ++fp;
    }
    tp += tp_inc;
    if (tp_inc > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      const double recall_inc = static_cast<double>(tp_inc) / static_cast<double>(n_pos);
      ap += precision * recall_inc;
    }
    i = j + 1;
  }
  return ap;
}

// Full classification report from labels, argmax predictions, and (optional)
// per-class scores, e.g. softmax probabilities, for the rank metrics.
// `scores` may be empty; then AUROC/AUPRC are absent.
inline ClassifyReport evaluate_classification(const std::vector<int>& labels,
                                              const std::vector<int>& preds, int K,
                                              const std::vector<std::vector<double>>& scores = {}) {
  if (labels.size() != preds.size())
    throw ConfigError("classification report: label/prediction length mismatch");
  if (labels.empty()) throw ConfigError("classification report: no examples");
  if (K < 2) throw ConfigError("classification report needs at least 2 classes");
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= K)
      throw ConfigError("label " + std::to_string(labels[i]) + " outside [0, " +
                        std::to_string(K) + ")");
    if (preds[i] < 0 || preds[i] >= K)
      throw ConfigError("prediction " + std::to_string(preds[i]) + " outside [0, " +
                        std::to_string(K) + ")");
  }
  if (!scores.empty() && scores.size() != labels.size())
    throw ConfigError("classification report: score row count mismatch");

  ClassifyReport rep;
  rep.examples = static_cast<long>(labels.size());

  long correct = 0;
  std::vector<long> tp(static_cast<size_t>(K), 0), fp(static_cast<size_t>(K), 0),
      fn(static_cast<size_t>(K), 0);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == preds[i]) {
      ++correct;
      ++tp[static_cast<size_t>(labels[i])];
    } else {
      ++fp[static_cast<size_t>(preds[i])];
      ++fn[static_cast<size_t>(labels[i])];
    }
  }
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());

  rep.per_class.resize(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) {
    auto& c = rep.per_class[static_cast<size_t>(k)];
    c.label = k;
    c.support = tp[static_cast<size_t>(k)] + fn[static_cast<size_t>(k)];
    const long denom_p = tp[static_cast<size_t>(k)] + fp[static_cast<size_t>(k)];
    const long denom_r = tp[static_cast<size_t>(k)] + fn[static_cast<size_t>(k)];
    c.precision = denom_p > 0 ? static_cast<double>(tp[static_cast<size_t>(k)]) / denom_p : 0.0;
    c.recall = denom_r > 0 ? static_cast<double>(tp[static_cast<size_t>(k)]) / denom_r : 0.0;
    c.f1 = (c.precision + c.recall) > 0
               ? 2.0 * c.precision * c.recall / (c.precision + c.recall)
               : 0.0;
    rep.macro_precision += c.precision;
    rep.macro_recall += c.recall;
    rep.macro_f1 += c.f1;
  }
  rep.macro_precision /= K;
  rep.macro_recall /= K;
  rep.macro_f1 /= K;

  if (!scores.empty()) {
    double auroc_sum = 0.0, auprc_sum = 0.0;
    int auroc_n = 0, auprc_n = 0;
    for (int k = 0; k < K; ++k) {
      std::vector<double> s(labels.size());
      std::vector<uint8_t> pos(labels.size());
      for (size_t i = 0; i < labels.size(); ++i) {
        if (static_cast<int>(scores[i].size()) != K)
          throw ConfigError("classification report: score row has wrong class count");
        s[i] = scores[i][static_cast<size_t>(k)];
        pos[i] = labels[i] == k ? 1 : 0;
      }
      if (auto a = binary_auroc(s, pos)) {
        auroc_sum += *a;
        ++auroc_n;
      }
      if (auto a = binary_auprc(s, pos)) {
        auprc_sum += *a;
        ++auprc_n;
      }
    }
    if (auroc_n > 0) rep.auroc = auroc_sum / auroc_n;
    if (auprc_n > 0) rep.auprc = auprc_sum / auprc_n;
  }
  return rep;
}

// Convenience for the binary case with a single positive-class score vector.
inline ClassifyReport evaluate_binary(const std::vector<int>& labels,
                                      const std::vector<int>& preds,
                                      const std::vector<double>& pos_scores) {
  std::vector<std::vector<double>> scores;
  scores.reserve(pos_scores.size());
  for (double s : pos_scores) scores.push_back({1.0 - s, s});
  return evaluate_classification(labels, preds, 2, scores);
}

}  // namespace timesiam
