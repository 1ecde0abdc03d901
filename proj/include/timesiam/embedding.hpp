#pragma once

// Turning windows into token sequences, and the lineage embeddings that tag
// each window with how far in the past it was sampled from.

#include <cmath>
#include <string>
#include <vector>

#include "timesiam/autodiff.hpp"
#include "timesiam/common.hpp"
#include "timesiam/data.hpp"

namespace timesiam {

// A tokenized window: one token matrix (M x D) per group. The patch backbone
// keeps channels independent (one group per channel, M = T / patch_len); the
// variate backbone uses a single group whose tokens are whole channels.
template <class S>
struct TokenSeq {
  std::vector<Tensor<S>> groups;
  int tokens_per_group() const {
    return groups.empty() ? 0 : groups.front().rows();
  }
  int total_tokens() const {
    int n = 0;
    for (const auto& g : groups) n += g.rows();
    return n;
  }
};

enum class Backbone { patch, variate };

inline Backbone parse_backbone(const std::string& s) {
  if (s == "patch") return Backbone::patch;
  if (s == "variate") return Backbone::variate;
  throw ConfigError("unknown backbone '" + s + "' (expected patch or variate)");
}

inline std::string backbone_name(Backbone b) {
  return b == Backbone::patch ? "patch" : "variate";
}

// Input-embedding parameters. For the patch backbone `weight` maps a
// patch_len-step slice to d_model; for the variate backbone it maps a full
// T-step channel to d_model. `positional` is learned and shared by the past
// and current views, one row per token.
template <class S>
struct EmbedParams {
  Tensor<S> weight;      // patch: [patch_len x D]; variate: [T x D]
  Tensor<S> bias;        // [1 x D]
  Tensor<S> positional;  // [tokens x D]
};

// Tokenizes a T x C window into per-channel patch tokens:
// token m of channel c = window[m*patch_len : (m+1)*patch_len, c] * W + b
// + positional[m]. T must be a multiple of patch_len.
template <class S>
TokenSeq<S> patch_embed(Graph<S>& g, const Mat& window, const EmbedParams<S>& emb,
                        int patch_len) {
  if (patch_len <= 0) throw ConfigError("patch length must be positive");
  if (window.rows % patch_len != 0)
    throw ConfigError("window length " + std::to_string(window.rows) +
                      " is not a multiple of patch length " + std::to_string(patch_len));
  const int M = window.rows / patch_len;
  if (emb.positional.rows() != M)
    throw ShapeError("positional table has " + std::to_string(emb.positional.rows()) +
                     " rows, expected " + std::to_string(M));
  TokenSeq<S> seq;
  seq.groups.reserve(static_cast<size_t>(window.cols));
  for (int c = 0; c < window.cols; ++c) {
    // Patches of one channel as an M x patch_len constant matrix.
    std::vector<S> vals(static_cast<size_t>(M) * patch_len);
    for (int m = 0; m < M; ++m)
      for (int p = 0; p < patch_len; ++p)
        vals[static_cast<size_t>(m) * patch_len + p] =
            static_cast<S>(window.at(m * patch_len + p, c));
    Tensor<S> patches = Tensor<S>::from({M, patch_len}, std::move(vals));
    Tensor<S> tok = matmul(g, patches, emb.weight);
    tok = add_row(g, tok, emb.bias);
    tok = add(g, tok, emb.positional);
    seq.groups.push_back(tok);
  }
  return seq;
}

// Tokenizes a T x C window into one token per channel (a single group of C
// tokens): token c = window[:, c] * W + b + positional[c].
template <class S>
TokenSeq<S> variate_embed(Graph<S>& g, const Mat& window, const EmbedParams<S>& emb) {
  if (emb.weight.rows() != window.rows)
    throw ShapeError("variate embedding expects windows of length " +
                     std::to_string(emb.weight.rows()) + ", got " +
                     std::to_string(window.rows));
  if (emb.positional.rows() != window.cols)
    throw ShapeError("positional table has " + std::to_string(emb.positional.rows()) +
                     " rows, expected one per channel (" + std::to_string(window.cols) + ")");
  // X^T as a C x T constant matrix.
  std::vector<S> vals(static_cast<size_t>(window.cols) * window.rows);
  for (int c = 0; c < window.cols; ++c)
    for (int t = 0; t < window.rows; ++t)
      vals[static_cast<size_t>(c) * window.rows + t] = static_cast<S>(window.at(t, c));
  Tensor<S> xt = Tensor<S>::from({window.cols, window.rows}, std::move(vals));
  Tensor<S> tok = matmul(g, xt, emb.weight);
  tok = add_row(g, tok, emb.bias);
  tok = add(g, tok, emb.positional);
  TokenSeq<S> seq;
  seq.groups.push_back(tok);
  return seq;
}

// ---------------------------------------------------------------------------
// Lineage embeddings.

// N + 1 learned d_model vectors. Index 0 tags a past window that coincides
// with the current one (distance 0); indices 1..N bucket increasing
// distances up to the sampling horizon T * sampling_range.
template <class S>
struct LineageSet {
  Tensor<S> embeddings;  // [(N + 1) x D]
  int count() const { return embeddings.rows(); }
};

// Maps a sampled distance to its lineage index. Distance 0 is its own
// bucket; the rest of [1, T * r] is cut into N equal buckets, so index
// = min(N, 1 + floor((d - 1) * N / (T * r))).
inline int lineage_matching(int distance, int T, int sampling_range, int N) {
  if (N < 1) throw ConfigError("lineage count must be at least 1");
  if (distance == 0) return 0;
  if (sampling_range <= 0)
    throw ConfigError("distance " + std::to_string(distance) +
                      " is impossible with sampling range 0");
  const int64_t max_d = static_cast<int64_t>(T) * sampling_range;
  if (distance < 0 || distance > max_d)
    throw ConfigError("distance " + std::to_string(distance) + " outside [0, " +
                      std::to_string(max_d) + "]");
  const int64_t idx = 1 + (static_cast<int64_t>(distance) - 1) * N / max_d;
  return static_cast<int>(std::min<int64_t>(N, idx));
}

// Adds lineage row `index` to every token of every group. Gradients flow
// back into that row of the table.
template <class S>
TokenSeq<S> add_lineage(Graph<S>& g, const TokenSeq<S>& seq, const LineageSet<S>& lin,
                        int index) {
  if (index < 0 || index >= lin.count())
    throw ConfigError("lineage index " + std::to_string(index) + " outside [0, " +
                      std::to_string(lin.count()) + ")");
  Tensor<S> row = slice_rows(g, lin.embeddings, index, index + 1);
  TokenSeq<S> out;
  out.groups.reserve(seq.groups.size());
  for (const auto& grp : seq.groups) out.groups.push_back(add_row(g, grp, row));
  return out;
}

}  // namespace timesiam
