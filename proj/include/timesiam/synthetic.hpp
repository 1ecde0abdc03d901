#pragma once

// Seeded synthetic series for demos and tests: smooth sine mixtures and a
// seasonal AR(1) process. Same seed, same series, on every platform.

#include <cmath>
#include <string>
#include <vector>

#include "timesiam/common.hpp"
#include "timesiam/data.hpp"

namespace timesiam {

// Sum of a few sinusoids per channel with channel-specific phases and
// periods, plus a small amount of noise.
inline TimeSeriesFrame synth_sine(int length, int channels, uint64_t seed) {
  if (length <= 0 || channels <= 0)
    throw ConfigError("synthetic series needs positive length and channels");
  Rng rng = Rng::derive(seed, 0x51e1);
  TimeSeriesFrame f;
  f.values = Mat(length, channels);
  for (int c = 0; c < channels; ++c) {
    f.channel_names.push_back("ch" + std::to_string(c));
    const double p1 = 24.0 + 8.0 * rng.uniform();
    const double p2 = 96.0 + 32.0 * rng.uniform();
    const double ph1 = 6.283185307179586 * rng.uniform();
    const double ph2 = 6.283185307179586 * rng.uniform();
    const double a1 = 0.6 + 0.4 * rng.uniform();
    const double a2 = 0.3 + 0.3 * rng.uniform();
    for (int t = 0; t < length; ++t)
      f.values.at(t, c) = a1 * std::sin(6.283185307179586 * t / p1 + ph1) +
                          a2 * std::sin(6.283185307179586 * t / p2 + ph2) +
                          0.05 * rng.normal(0.0, 1.0);
  }
  return f;
}

// AR(1) around a daily-style seasonal mean with a slow trend; rougher and
// less predictable than the sine mixture.
inline TimeSeriesFrame synth_seasonal_ar(int length, int channels, uint64_t seed) {
  if (length <= 0 || channels <= 0)
    throw ConfigError("synthetic series needs positive length and channels");
  Rng rng = Rng::derive(seed, 0xa7);
  TimeSeriesFrame f;
  f.values = Mat(length, channels);
  for (int c = 0; c < channels; ++c) {
    f.channel_names.push_back("ch" + std::to_string(c));
    const double period = 48.0 + 16.0 * rng.uniform();
    const double phase = 6.283185307179586 * rng.uniform();
    const double phi = 0.85 + 0.1 * rng.uniform();  // AR coefficient
    const double trend = 0.0005 * (rng.uniform() - 0.5);
    double state = rng.normal(0.0, 0.5);
    for (int t = 0; t < length; ++t) {
      state = phi * state + rng.normal(0.0, 0.25);
      f.values.at(t, c) = std::sin(6.283185307179586 * t / period + phase) +
                          trend * t + state;
    }
  }
  return f;
}

inline TimeSeriesFrame make_synthetic(const std::string& kind, int length, int channels,
                                      uint64_t seed) {
  if (kind == "sine") return synth_sine(length, channels, seed);
  if (kind == "seasonal-ar") return synth_seasonal_ar(length, channels, seed);
  throw ConfigError("unknown synthetic generator '" + kind +
                    "' (expected sine or seasonal-ar)");
}

// Labeled windows for classification demos: each class uses a distinct
// frequency regime so the classes are separable but not trivial.
inline LabeledWindows synth_labeled(int n_per_class, int T, int C, int K, uint64_t seed) {
  if (n_per_class <= 0 || T <= 0 || C <= 0 || K < 2)
    throw ConfigError("labeled generator needs positive sizes and at least 2 classes");
  Rng rng = Rng::derive(seed, 0xc1a55);
  LabeledWindows set;
  set.T = T;
  set.C = C;
  set.K = K;
  for (int k = 0; k < K; ++k) {
    const double period = T / (2.0 + 1.5 * k);  // class-specific frequency
    for (int i = 0; i < n_per_class; ++i) {
      Mat w(T, C);
      const double phase = 6.283185307179586 * rng.uniform();
      for (int c = 0; c < C; ++c) {
        const double chan_shift = 0.8 * c;
        for (int t = 0; t < T; ++t)
          w.at(t, c) = std::sin(6.283185307179586 * t / period + phase + chan_shift) +
                       0.15 * rng.normal(0.0, 1.0);
      }
      set.windows.push_back(std::move(w));
      set.labels.push_back(k);
    }
  }
  // Shuffle windows and labels together so splits are class-balanced.
  std::vector<int> order(set.windows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  LabeledWindows shuffled;
  shuffled.T = T;
  shuffled.C = C;
  shuffled.K = K;
  for (int idx : order) {
    shuffled.windows.push_back(std::move(set.windows[static_cast<size_t>(idx)]));
    shuffled.labels.push_back(set.labels[static_cast<size_t>(idx)]);
  }
  return shuffled;
}

}  // namespace timesiam
