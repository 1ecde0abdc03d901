#pragma once

// The reconstruction model: a shared-weight transformer encoder applied to
// the past and (masked) current windows, a cross-attention decoder that
// queries the current tokens against the past, and a linear projector back
// to the time domain.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "timesiam/autodiff.hpp"
#include "timesiam/common.hpp"
#include "timesiam/data.hpp"
#include "timesiam/embedding.hpp"

namespace timesiam {

template <class S>
struct AttentionParams {
  Tensor<S> wq, wk, wv, wo;  // [D x D]
  Tensor<S> bq, bk, bv, bo;  // [1 x D]
};

// Scaled dot-product attention with `heads` heads over row-token matrices.
// query: [Mq x D]; key/value source: [Mk x D]. Output: [Mq x D].
template <class S>
Tensor<S> multi_head_attention(Graph<S>& g, const AttentionParams<S>& at,
                               const Tensor<S>& query, const Tensor<S>& keyval,
                               int heads, double dropout_p) {
  const int D = query.cols();
  if (keyval.cols() != D) throw ShapeError("attention: query/key dims differ");
  if (heads < 1 || D % heads != 0)
    throw ConfigError("model dim " + std::to_string(D) +
                      " is not divisible by head count " + std::to_string(heads));
  const int dh = D / heads;
  const S att_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  Tensor<S> q = add_row(g, matmul(g, query, at.wq), at.bq);
  Tensor<S> k = add_row(g, matmul(g, keyval, at.wk), at.bk);
  Tensor<S> v = add_row(g, matmul(g, keyval, at.wv), at.bv);

  std::vector<Tensor<S>> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor<S> qh = slice_cols(g, q, h * dh, (h + 1) * dh);
    Tensor<S> kh = slice_cols(g, k, h * dh, (h + 1) * dh);
    Tensor<S> vh = slice_cols(g, v, h * dh, (h + 1) * dh);
    Tensor<S> scores = scale(g, matmul(g, qh, transpose(g, kh)), att_scale);
    Tensor<S> weights = softmax_rows(g, scores);
    head_outs.push_back(matmul(g, weights, vh));
  }
  Tensor<S> merged = heads == 1 ? head_outs[0] : concat_cols(g, head_outs);
  Tensor<S> out = add_row(g, matmul(g, merged, at.wo), at.bo);
  return dropout(g, out, dropout_p);
}

template <class S>
struct LayerNormParams {
  Tensor<S> gamma, beta;  // [1 x D]
};

template <class S>
struct FfnParams {
  Tensor<S> w1, b1;  // [D x d_ff], [1 x d_ff]
  Tensor<S> w2, b2;  // [d_ff x D], [1 x D]
};

template <class S>
Tensor<S> ffn_forward(Graph<S>& g, const FfnParams<S>& f, const Tensor<S>& x,
                      double dropout_p) {
  Tensor<S> h = gelu(g, add_row(g, matmul(g, x, f.w1), f.b1));
  h = dropout(g, h, dropout_p);
  return add_row(g, matmul(g, h, f.w2), f.b2);
}

// Pre-norm encoder block: x + Attn(LN(x)), then + FFN(LN(.)).
template <class S>
struct EncoderLayer {
  LayerNormParams<S> ln1, ln2;
  AttentionParams<S> attn;
  FfnParams<S> ffn;

  Tensor<S> forward(Graph<S>& g, const Tensor<S>& x, int heads, double dropout_p) const {
    Tensor<S> n1 = layer_norm(g, x, ln1.gamma, ln1.beta);
    Tensor<S> a = add(g, x, multi_head_attention(g, attn, n1, n1, heads, dropout_p));
    Tensor<S> n2 = layer_norm(g, a, ln2.gamma, ln2.beta);
    return add(g, a, ffn_forward(g, ffn, n2, dropout_p));
  }
};

// Post-norm decoder block:
//   a = LN(q + CrossAttn(q, kv));  b = LN(a + SelfAttn(a));  out = LN(b + FFN(b))
template <class S>
struct DecoderLayer {
  AttentionParams<S> cross, self;
  FfnParams<S> ffn;
  LayerNormParams<S> ln1, ln2, ln3;

  Tensor<S> forward(Graph<S>& g, const Tensor<S>& q, const Tensor<S>& kv, int heads,
                    double dropout_p) const {
    Tensor<S> a = add(g, q, multi_head_attention(g, cross, q, kv, heads, dropout_p));
    a = layer_norm(g, a, ln1.gamma, ln1.beta);
    Tensor<S> b = add(g, a, multi_head_attention(g, self, a, a, heads, dropout_p));
    b = layer_norm(g, b, ln2.gamma, ln2.beta);
    Tensor<S> o = add(g, b, ffn_forward(g, ffn, b, dropout_p));
    return layer_norm(g, o, ln3.gamma, ln3.beta);
  }
};

// ---------------------------------------------------------------------------
// Model configuration.

struct ModelConfig {
  int window = 96;      // T: subseries length
  int channels = 1;     // C
  int d_model = 128;
  int d_ff = 256;
  int n_heads = 8;
  int e_layers = 3;
  int d_layers = 1;
  int lineages = 3;        // N: past lineage count (table has N + 1 rows)
  int sampling_range = 6;  // r: max distance is window * r
  int patch_len = 12;
  Backbone backbone = Backbone::patch;
  MaskSpec mask;
  double dropout = 0.1;

  void validate() const {
    if (window <= 0 || channels <= 0) throw ConfigError("window and channels must be positive");
    if (d_model <= 0 || d_ff <= 0) throw ConfigError("d_model and d_ff must be positive");
    if (n_heads <= 0 || d_model % n_heads != 0)
      throw ConfigError("d_model " + std::to_string(d_model) +
                        " must be divisible by n_heads " + std::to_string(n_heads));
    if (e_layers < 1 || d_layers < 1)
      throw ConfigError("need at least one encoder and one decoder layer");
    if (lineages < 1) throw ConfigError("lineage count must be at least 1");
    if (sampling_range < 0) throw ConfigError("sampling range must be non-negative");
    if (patch_len <= 0) throw ConfigError("patch length must be positive");
    if (backbone == Backbone::patch) {
      if (patch_len > window)
        throw ConfigError("patch length " + std::to_string(patch_len) +
                          " exceeds window length " + std::to_string(window));
      if (window % patch_len != 0)
        throw ConfigError("window length " + std::to_string(window) +
                          " is not a multiple of patch length " + std::to_string(patch_len));
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    mask.validate();
  }

  // Tokens per group: patches per channel, or one token per channel.
  int tokens_per_group() const {
    return backbone == Backbone::patch ? window / patch_len : channels;
  }

  static ModelConfig base_preset() {
    ModelConfig c;
    c.e_layers = 3;
    c.d_layers = 1;
    c.d_model = 128;
    c.d_ff = 256;
    c.n_heads = 8;
    return c;
  }

  static ModelConfig large_preset() {
    ModelConfig c;
    c.e_layers = 5;
    c.d_layers = 2;
    c.d_model = 128;
    c.d_ff = 1024;
    c.n_heads = 16;
    return c;
  }
};

// ---------------------------------------------------------------------------
// The full model.

template <class S>
struct SiameseModel {
  ModelConfig cfg;
  EmbedParams<S> embed;
  LineageSet<S> lineages;
  std::vector<EncoderLayer<S>> encoder;
  LayerNormParams<S> encoder_norm;  // final norm after the pre-norm stack
  std::vector<DecoderLayer<S>> decoder;
  Tensor<S> proj_weight;  // patch: [D x patch_len]; variate: [D x window]
  Tensor<S> proj_bias;    // patch: [1 x patch_len]; variate: [1 x window]

  // Stable name -> tensor listing used by the optimizer, checkpoints, and
  // the freeze logic. Order is fixed across runs.
  std::vector<std::pair<std::string, Tensor<S>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    out.emplace_back("embed.weight", embed.weight);
    out.emplace_back("embed.bias", embed.bias);
    out.emplace_back("embed.positional", embed.positional);
    out.emplace_back("lineage.embeddings", lineages.embeddings);
    auto add_attn = [&out](const std::string& p, AttentionParams<S>& a) {
      out.emplace_back(p + ".wq", a.wq);
      out.emplace_back(p + ".bq", a.bq);
      out.emplace_back(p + ".wk", a.wk);
      out.emplace_back(p + ".bk", a.bk);
      out.emplace_back(p + ".wv", a.wv);
      out.emplace_back(p + ".bv", a.bv);
      out.emplace_back(p + ".wo", a.wo);
      out.emplace_back(p + ".bo", a.bo);
    };
    auto add_ffn = [&out](const std::string& p, FfnParams<S>& f) {
      out.emplace_back(p + ".w1", f.w1);
      out.emplace_back(p + ".b1", f.b1);
      out.emplace_back(p + ".w2", f.w2);
      out.emplace_back(p + ".b2", f.b2);
    };
    auto add_ln = [&out](const std::string& p, LayerNormParams<S>& n) {
      out.emplace_back(p + ".gamma", n.gamma);
      out.emplace_back(p + ".beta", n.beta);
    };
    for (size_t i = 0; i < encoder.size(); ++i) {
      const std::string p = "encoder." + std::to_string(i);
      add_ln(p + ".ln1", encoder[i].ln1);
      add_attn(p + ".attn", encoder[i].attn);
      add_ln(p + ".ln2", encoder[i].ln2);
      add_ffn(p + ".ffn", encoder[i].ffn);
    }
    add_ln("encoder_norm", encoder_norm);
    for (size_t i = 0; i < decoder.size(); ++i) {
      const std::string p = "decoder." + std::to_string(i);
      add_attn(p + ".cross", decoder[i].cross);
      add_ln(p + ".ln1", decoder[i].ln1);
      add_attn(p + ".self", decoder[i].self);
      add_ln(p + ".ln2", decoder[i].ln2);
      add_ffn(p + ".ffn", decoder[i].ffn);
      add_ln(p + ".ln3", decoder[i].ln3);
    }
    out.emplace_back("proj.weight", proj_weight);
    out.emplace_back("proj.bias", proj_bias);
    return out;
  }

  long count_parameters() {
    long n = 0;
    for (auto& [name, t] : named_parameters()) n += static_cast<long>(t.size());
    return n;
  }
};

namespace detail {

template <class S>
Tensor<S> xavier(Rng& rng, int fan_in, int fan_out, int rows, int cols) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<S> vals(static_cast<size_t>(rows) * cols);
  for (S& v : vals) v = static_cast<S>(rng.uniform(-bound, bound));
  return Tensor<S>::from({rows, cols}, std::move(vals), true);
}

template <class S>
Tensor<S> gaussian(Rng& rng, int rows, int cols, double stddev) {
  std::vector<S> vals(static_cast<size_t>(rows) * cols);
  for (S& v : vals) v = static_cast<S>(rng.normal(0.0, stddev));
  return Tensor<S>::from({rows, cols}, std::move(vals), true);
}

template <class S>
Tensor<S> zeros_param(int rows, int cols) {
  return Tensor<S>::zeros({rows, cols}, true);
}

template <class S>
Tensor<S> ones_param(int rows, int cols) {
  std::vector<S> vals(static_cast<size_t>(rows) * cols, S(1));
  return Tensor<S>::from({rows, cols}, std::move(vals), true);
}

template <class S>
AttentionParams<S> init_attention(Rng& rng, int d_model) {
  AttentionParams<S> a;
  a.wq = xavier<S>(rng, d_model, d_model, d_model, d_model);
  a.wk = xavier<S>(rng, d_model, d_model, d_model, d_model);
  a.wv = xavier<S>(rng, d_model, d_model, d_model, d_model);
  a.wo = xavier<S>(rng, d_model, d_model, d_model, d_model);
  a.bq = zeros_param<S>(1, d_model);
  a.bk = zeros_param<S>(1, d_model);
  a.bv = zeros_param<S>(1, d_model);
  a.bo = zeros_param<S>(1, d_model);
  return a;
}

template <class S>
FfnParams<S> init_ffn(Rng& rng, int d_model, int d_ff) {
  FfnParams<S> f;
  f.w1 = xavier<S>(rng, d_model, d_ff, d_model, d_ff);
  f.b1 = zeros_param<S>(1, d_ff);
  f.w2 = xavier<S>(rng, d_ff, d_model, d_ff, d_model);
  f.b2 = zeros_param<S>(1, d_model);
  return f;
}

template <class S>
LayerNormParams<S> init_layer_norm(int d_model) {
  LayerNormParams<S> n;
  n.gamma = ones_param<S>(1, d_model);
  n.beta = zeros_param<S>(1, d_model);
  return n;
}

}  // namespace detail

// Builds a freshly initialized model. Projections are Xavier-uniform,
// biases zero, embedding/positional/lineage tables normal(0, 0.02).
// Deterministic: same config + seed, same weights.
template <class S>
SiameseModel<S> build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng = Rng::derive(seed, 0x10de1);
  SiameseModel<S> m;
  m.cfg = cfg;

  const int D = cfg.d_model;
  const int in_len = cfg.backbone == Backbone::patch ? cfg.patch_len : cfg.window;
  m.embed.weight = detail::xavier<S>(rng, in_len, D, in_len, D);
  m.embed.bias = detail::zeros_param<S>(1, D);
  m.embed.positional = detail::gaussian<S>(rng, cfg.tokens_per_group(), D, 0.02);
  m.lineages.embeddings = detail::gaussian<S>(rng, cfg.lineages + 1, D, 0.02);

  m.encoder.resize(static_cast<size_t>(cfg.e_layers));
  for (auto& layer : m.encoder) {
    layer.ln1 = detail::init_layer_norm<S>(D);
    layer.attn = detail::init_attention<S>(rng, D);
    layer.ln2 = detail::init_layer_norm<S>(D);
    layer.ffn = detail::init_ffn<S>(rng, D, cfg.d_ff);
  }
  m.encoder_norm = detail::init_layer_norm<S>(D);

  m.decoder.resize(static_cast<size_t>(cfg.d_layers));
  for (auto& layer : m.decoder) {
    layer.cross = detail::init_attention<S>(rng, D);
    layer.ln1 = detail::init_layer_norm<S>(D);
    layer.self = detail::init_attention<S>(rng, D);
    layer.ln2 = detail::init_layer_norm<S>(D);
    layer.ffn = detail::init_ffn<S>(rng, D, cfg.d_ff);
    layer.ln3 = detail::init_layer_norm<S>(D);
  }

  const int out_len = cfg.backbone == Backbone::patch ? cfg.patch_len : cfg.window;
  m.proj_weight = detail::xavier<S>(rng, D, out_len, D, out_len);
  m.proj_bias = detail::zeros_param<S>(1, out_len);
  return m;
}

// ---------------------------------------------------------------------------
// Forward passes.

// Tokenizes a window with the model's backbone (no lineage row added yet).
template <class S>
TokenSeq<S> embed_window(Graph<S>& g, SiameseModel<S>& m, const Mat& window) {
  if (m.cfg.backbone == Backbone::patch) {
    if (window.rows != m.cfg.window)
      throw ShapeError("window length " + std::to_string(window.rows) +
                       " does not match model window " + std::to_string(m.cfg.window));
    return patch_embed(g, window, m.embed, m.cfg.patch_len);
  }
  if (window.cols != m.cfg.channels)
    throw ShapeError("window has " + std::to_string(window.cols) +
                     " channels, model expects " + std::to_string(m.cfg.channels));
  return variate_embed(g, window, m.embed);
}

// Runs the shared encoder stack over every group; one parameter set serves
// both the past and current branches.
template <class S>
TokenSeq<S> encode(Graph<S>& g, SiameseModel<S>& m, const TokenSeq<S>& tokens) {
  TokenSeq<S> out;
  out.groups.reserve(tokens.groups.size());
  for (const auto& grp : tokens.groups) {
    Tensor<S> x = grp;
    for (const auto& layer : m.encoder)
      x = layer.forward(g, x, m.cfg.n_heads, m.cfg.dropout);
    x = layer_norm(g, x, m.encoder_norm.gamma, m.encoder_norm.beta);
    out.groups.push_back(x);
  }
  return out;
}

// Decodes current tokens (queries) against past tokens (keys/values),
// group by group: in patch mode channel i attends to channel i.
template <class S>
TokenSeq<S> decode(Graph<S>& g, SiameseModel<S>& m, const TokenSeq<S>& h_curr,
                   const TokenSeq<S>& h_past) {
  if (h_curr.groups.size() != h_past.groups.size())
    throw ShapeError("decode: query and key/value group counts differ (" +
                     std::to_string(h_curr.groups.size()) + " vs " +
                     std::to_string(h_past.groups.size()) + ")");
  TokenSeq<S> out;
  out.groups.reserve(h_curr.groups.size());
  for (size_t gi = 0; gi < h_curr.groups.size(); ++gi) {
    Tensor<S> x = h_curr.groups[gi];
    for (const auto& layer : m.decoder)
      x = layer.forward(g, x, h_past.groups[gi], m.cfg.n_heads, m.cfg.dropout);
    out.groups.push_back(x);
  }
  return out;
}

// Maps decoded tokens back to a T x C window tensor.
// Patch mode: each token -> patch_len steps of its channel; variate mode:
// each token -> the full T steps of its channel.
template <class S>
Tensor<S> project(Graph<S>& g, SiameseModel<S>& m, const TokenSeq<S>& decoded) {
  if (m.cfg.backbone == Backbone::patch) {
    std::vector<Tensor<S>> channels;
    channels.reserve(decoded.groups.size());
    for (const auto& grp : decoded.groups) {
      Tensor<S> patches = add_row(g, matmul(g, grp, m.proj_weight), m.proj_bias);
      // [M x patch_len] rows laid end to end are the channel's T steps.
      channels.push_back(reshape(g, patches, {m.cfg.window, 1}));
    }
    return channels.size() == 1 ? channels[0] : concat_cols(g, channels);
  }
  // Variate: one group of C tokens; projecting gives [C x T], transpose to T x C.
  Tensor<S> series = add_row(g, matmul(g, decoded.groups[0], m.proj_weight), m.proj_bias);
  return transpose(g, series);
}

enum class LossMode { all, masked_only };

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "all") return LossMode::all;
  if (s == "masked_only") return LossMode::masked_only;
  throw ConfigError("unknown loss mode '" + s + "' (expected all or masked_only)");
}

// Squared-error reconstruction loss. mode=all averages over every element;
// mode=masked_only averages over the masked positions only.
template <class S>
Tensor<S> reconstruction_loss(Graph<S>& g, const Mat& target, const Tensor<S>& recon,
                              const BoolMat& mask, LossMode mode) {
  if (recon.rows() != target.rows || recon.cols() != target.cols)
    throw ShapeError("reconstruction_loss: target and reconstruction shapes differ");
  std::vector<S> tvals(static_cast<size_t>(target.rows) * target.cols);
  for (int t = 0; t < target.rows; ++t)
    for (int c = 0; c < target.cols; ++c)
      tvals[static_cast<size_t>(t) * target.cols + c] = static_cast<S>(target.at(t, c));
  Tensor<S> tgt = Tensor<S>::from({target.rows, target.cols}, std::move(tvals));
  if (mode == LossMode::all) return mse(g, recon, tgt);

  if (mask.rows != target.rows || mask.cols != target.cols)
    throw ShapeError("reconstruction_loss: mask shape differs from target");
  const long k = mask.count();
  if (k == 0) throw ConfigError("masked_only loss with an empty mask");
  std::vector<S> mvals(static_cast<size_t>(mask.rows) * mask.cols);
  for (size_t i = 0; i < mvals.size(); ++i) mvals[i] = static_cast<S>(mask.v[i]);
  Tensor<S> msk = Tensor<S>::from({mask.rows, mask.cols}, std::move(mvals));
  Tensor<S> diff = mul(g, sub(g, recon, tgt), msk);
  Tensor<S> total = sum_all(g, mul(g, diff, diff));
  return scale(g, total, S(1) / static_cast<S>(k));
}

template <class S>
struct PretrainOutput {
  Tensor<S> loss;
  Tensor<S> reconstruction;  // [T x C]
};

// The whole pre-training forward pass for one pair: embed both windows, tag
// the past with its matched lineage row and the current with row 0, encode
// both with the shared encoder, decode, project, and score.
template <class S>
PretrainOutput<S> pretrain_forward(Graph<S>& g, SiameseModel<S>& m,
                                   const SiamesePair& pair, LossMode mode) {
  const int lin_past = lineage_matching(pair.distance, m.cfg.window,
                                        m.cfg.sampling_range, m.cfg.lineages);
  TokenSeq<S> z_past = add_lineage(g, embed_window(g, m, pair.past), m.lineages, lin_past);
  TokenSeq<S> z_curr =
      add_lineage(g, embed_window(g, m, pair.current_masked), m.lineages, 0);
  TokenSeq<S> h_past = encode(g, m, z_past);
  TokenSeq<S> h_curr = encode(g, m, z_curr);
  TokenSeq<S> h_dec = decode(g, m, h_curr, h_past);
  PretrainOutput<S> out;
  out.reconstruction = project(g, m, h_dec);
  out.loss = reconstruction_loss(g, pair.current, out.reconstruction, pair.mask, mode);
  return out;
}

// ---------------------------------------------------------------------------
// ModelConfig <-> dotted key/value text (used by config files and checkpoints).

inline std::vector<std::pair<std::string, std::string>> model_config_entries(
    const ModelConfig& c) {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {
      {"model.window", std::to_string(c.window)},
      {"model.channels", std::to_string(c.channels)},
      {"model.d_model", std::to_string(c.d_model)},
      {"model.d_ff", std::to_string(c.d_ff)},
      {"model.n_heads", std::to_string(c.n_heads)},
      {"model.e_layers", std::to_string(c.e_layers)},
      {"model.d_layers", std::to_string(c.d_layers)},
      {"model.lineages", std::to_string(c.lineages)},
      {"model.sampling_range", std::to_string(c.sampling_range)},
      {"model.patch_len", std::to_string(c.patch_len)},
      {"model.backbone", backbone_name(c.backbone)},
      {"model.mask.rule", mask_rule_name(c.mask.rule)},
      {"model.mask.ratio", num(c.mask.ratio)},
      {"model.mask.mean_segment_length", num(c.mask.mean_segment_length)},
      {"model.dropout", num(c.dropout)},
  };
}

namespace detail {

inline int parse_int_value(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse '" + v + "' as an integer");
  }
}

inline double parse_double_value(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse '" + v + "' as a number");
  }
}

}  // namespace detail

// Applies one dotted key to the config; returns false if the key does not
// belong to the model namespace.
inline bool model_config_apply(ModelConfig& c, const std::string& key,
                               const std::string& value) {
  if (key == "model.preset") {
    ModelConfig preset;
    if (value == "base") preset = ModelConfig::base_preset();
    else if (value == "large") preset = ModelConfig::large_preset();
    else throw ConfigError("unknown model preset '" + value + "' (expected base or large)");
    c.e_layers = preset.e_layers;
    c.d_layers = preset.d_layers;
    c.d_model = preset.d_model;
    c.d_ff = preset.d_ff;
    c.n_heads = preset.n_heads;
    return true;
  }
  if (key == "model.window") c.window = detail::parse_int_value(key, value);
  else if (key == "model.channels") c.channels = detail::parse_int_value(key, value);
  else if (key == "model.d_model") c.d_model = detail::parse_int_value(key, value);
  else if (key == "model.d_ff") c.d_ff = detail::parse_int_value(key, value);
  else if (key == "model.n_heads") c.n_heads = detail::parse_int_value(key, value);
  else if (key == "model.e_layers") c.e_layers = detail::parse_int_value(key, value);
  else if (key == "model.d_layers") c.d_layers = detail::parse_int_value(key, value);
  else if (key == "model.lineages") c.lineages = detail::parse_int_value(key, value);
  else if (key == "model.sampling_range") c.sampling_range = detail::parse_int_value(key, value);
  else if (key == "model.patch_len") c.patch_len = detail::parse_int_value(key, value);
  else if (key == "model.backbone") c.backbone = parse_backbone(value);
  else if (key == "model.mask.rule") c.mask.rule = parse_mask_rule(value);
  else if (key == "model.mask.ratio") c.mask.ratio = detail::parse_double_value(key, value);
  else if (key == "model.mask.mean_segment_length")
    c.mask.mean_segment_length = detail::parse_double_value(key, value);
  else if (key == "model.dropout") c.dropout = detail::parse_double_value(key, value);
  else return false;
  return true;
}

// Copies parameter values across scalar types by name (e.g. a float model
// into a double twin for finite-difference checks).
template <class From, class To>
SiameseModel<To> cast_model(SiameseModel<From>& src, uint64_t seed = 0) {
  SiameseModel<To> dst = build_model<To>(src.cfg, seed);
  auto sp = src.named_parameters();
  auto dp = dst.named_parameters();
  if (sp.size() != dp.size()) throw ConfigError("cast_model: parameter lists differ");
  for (size_t i = 0; i < sp.size(); ++i) {
    if (sp[i].second.size() != dp[i].second.size())
      throw ShapeError("cast_model: size mismatch for " + sp[i].first);
    for (size_t j = 0; j < sp[i].second.size(); ++j)
      dp[i].second.values()[j] = static_cast<To>(sp[i].second.values()[j]);
  }
  return dst;
}

}  // namespace timesiam
