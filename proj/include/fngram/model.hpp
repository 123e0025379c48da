#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fngram/tensor.hpp"
#include "fngram/util.hpp"
#include "fngram/vocab.hpp"

namespace fngram {

inline constexpr double kAttnMaskValue = -1e30;  // exp() underflows to exactly 0
inline constexpr double kLayerNormEps = 1e-5;

/// Every hyperparameter of the encoder-decoder. n_future is the number of
/// decoder streams: stream 0 is the ordinary next-token pathway, streams
/// j >= 1 predict the token j steps ahead.
struct ModelConfig {
  int n_future = 2;
  std::vector<double> alpha;   // per-stream loss weights; empty -> gamma^j
  double alpha_gamma = 0.5;
  int layers_enc = 2;
  int layers_dec = 2;
  int hidden = 64;
  int ffn = 256;
  int heads = 4;
  int max_len = 512;
  int vocab_size = 0;
  double dropout = 0.0;

  std::vector<double> alphas() const {
    if (!alpha.empty()) return alpha;
    std::vector<double> a(static_cast<std::size_t>(n_future));
    double w = 1.0;
    for (auto& v : a) {
      v = w;
      w *= alpha_gamma;
    }
    return a;
  }

  void validate() const {
    if (n_future < 1) throw ContractError("config: n_future must be >= 1");
    if (hidden <= 0 || heads <= 0 || hidden % heads != 0)
      throw ContractError("config: hidden (" + std::to_string(hidden) +
                          ") must be a positive multiple of heads (" + std::to_string(heads) +
                          ")");
    if (layers_enc < 1 || layers_dec < 1) throw ContractError("config: layers must be >= 1");
    if (ffn <= 0) throw ContractError("config: ffn must be positive");
    if (max_len < 1) throw ContractError("config: max_len must be >= 1");
    if (vocab_size < kNumSpecials + 1)
      throw ContractError("config: vocab_size must be at least " +
                          std::to_string(kNumSpecials + 1));
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw ContractError("config: dropout must be in [0, 1)");
    const auto a = alphas();
    if (a.size() != static_cast<std::size_t>(n_future))
      throw ContractError("config: alpha has " + std::to_string(a.size()) + " entries for " +
                          std::to_string(n_future) + " streams");
    if (!(a[0] > 0.0)) throw ContractError("config: alpha[0] must be positive");
    for (const double v : a)
      if (v < 0.0) throw ContractError("config: alpha weights must be nonnegative");
  }
};

template <typename T>
struct AttentionWeights {
  Tensor<T> wq, wk, wv, wo;  // each [hidden x hidden]
};

template <typename T>
struct LayerNormWeights {
  Tensor<T> gain, bias;  // each [hidden]
};

template <typename T>
struct FfnWeights {
  Tensor<T> w1, b1, w2, b2;  // [hidden x ffn], [ffn], [ffn x hidden], [hidden]
};

template <typename T>
struct EncoderLayerWeights {
  LayerNormWeights<T> ln1;
  AttentionWeights<T> attn;
  LayerNormWeights<T> ln2;
  FfnWeights<T> ffn;
};

template <typename T>
struct DecoderLayerWeights {
  LayerNormWeights<T> ln1;
  AttentionWeights<T> self_attn;
  LayerNormWeights<T> ln2;
  AttentionWeights<T> cross_attn;
  LayerNormWeights<T> ln3;
  FfnWeights<T> ffn;
};

/// All learned tensors, with a stable name registry for checkpoints and
/// optimizer state. The output projection is the transposed token embedding,
/// shared by every stream.
template <typename T>
struct Parameters {
  Tensor<T> token_emb;   // [vocab x hidden]
  Tensor<T> pos_emb;     // [max_len x hidden]
  Tensor<T> stream_emb;  // [n_future x hidden]; row 0 belongs to the main stream and is unused
  std::vector<EncoderLayerWeights<T>> enc;
  LayerNormWeights<T> enc_final;
  std::vector<DecoderLayerWeights<T>> dec;
  LayerNormWeights<T> dec_final;
  // One shared block realizes every predicting stream; streams differ only
  // through their queries. Present when n_future > 1.
  DecoderLayerWeights<T> stream_block;
  LayerNormWeights<T> stream_final;

  std::vector<std::pair<std::string, Tensor<T>>> named;

  static Parameters init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Parameters p;
    std::mt19937_64 rng(seed);
    const std::size_t h = static_cast<std::size_t>(cfg.hidden);
    const std::size_t f = static_cast<std::size_t>(cfg.ffn);
    const T std_dev = T(0.02);

    const auto weight = [&](std::vector<std::size_t> shape) {
      return Tensor<T>::randn(std::move(shape), std_dev, rng, true);
    };
    const auto norm = [&] {
      return LayerNormWeights<T>{Tensor<T>::full({h}, T(1), true), Tensor<T>::zeros({h}, true)};
    };
    const auto attention = [&] {
      return AttentionWeights<T>{weight({h, h}), weight({h, h}), weight({h, h}), weight({h, h})};
    };
    const auto ffn = [&] {
      return FfnWeights<T>{weight({h, f}), Tensor<T>::zeros({f}, true), weight({f, h}),
                           Tensor<T>::zeros({h}, true)};
    };

    p.token_emb = weight({static_cast<std::size_t>(cfg.vocab_size), h});
    p.pos_emb = weight({static_cast<std::size_t>(cfg.max_len), h});
    p.stream_emb = weight({static_cast<std::size_t>(cfg.n_future), h});
    for (int l = 0; l < cfg.layers_enc; ++l)
      p.enc.push_back({norm(), attention(), norm(), ffn()});
    p.enc_final = norm();
    for (int l = 0; l < cfg.layers_dec; ++l)
      p.dec.push_back({norm(), attention(), norm(), attention(), norm(), ffn()});
    p.dec_final = norm();
    if (cfg.n_future > 1) {
      p.stream_block = {norm(), attention(), norm(), attention(), norm(), ffn()};
      p.stream_final = norm();
    }
    p.register_names(cfg);
    return p;
  }

  void zero_grads() {
    for (auto& [name, t] : named) t.zero_grad();
  }

  const Tensor<T>* find(std::string_view name) const {
    for (const auto& [n, t] : named)
      if (n == name) return &t;
    return nullptr;
  }

 private:
  void register_names(const ModelConfig& cfg) {
    named.clear();
    const auto reg = [this](const std::string& name, Tensor<T>& t) {
      t.set_tag(nullptr);
      named.emplace_back(name, t);
    };
    const auto reg_norm = [&](const std::string& p, LayerNormWeights<T>& n) {
      reg(p + ".gain", n.gain);
      reg(p + ".bias", n.bias);
    };
    const auto reg_attn = [&](const std::string& p, AttentionWeights<T>& a) {
      reg(p + ".wq", a.wq);
      reg(p + ".wk", a.wk);
      reg(p + ".wv", a.wv);
      reg(p + ".wo", a.wo);
    };
    const auto reg_ffn = [&](const std::string& p, FfnWeights<T>& f) {
      reg(p + ".w1", f.w1);
      reg(p + ".b1", f.b1);
      reg(p + ".w2", f.w2);
      reg(p + ".b2", f.b2);
    };
    reg("embed.token", token_emb);
    reg("embed.pos", pos_emb);
    reg("embed.stream", stream_emb);
    for (std::size_t l = 0; l < enc.size(); ++l) {
      const std::string base = "enc." + std::to_string(l);
      reg_norm(base + ".ln1", enc[l].ln1);
      reg_attn(base + ".attn", enc[l].attn);
      reg_norm(base + ".ln2", enc[l].ln2);
      reg_ffn(base + ".ffn", enc[l].ffn);
    }
    reg_norm("enc.final", enc_final);
    for (std::size_t l = 0; l < dec.size(); ++l) {
      const std::string base = "dec." + std::to_string(l);
      reg_norm(base + ".ln1", dec[l].ln1);
      reg_attn(base + ".self", dec[l].self_attn);
      reg_norm(base + ".ln2", dec[l].ln2);
      reg_attn(base + ".cross", dec[l].cross_attn);
      reg_norm(base + ".ln3", dec[l].ln3);
      reg_ffn(base + ".ffn", dec[l].ffn);
    }
    reg_norm("dec.final", dec_final);
    if (cfg.n_future > 1) {
      reg_norm("stream.ln1", stream_block.ln1);
      reg_attn("stream.self", stream_block.self_attn);
      reg_norm("stream.ln2", stream_block.ln2);
      reg_attn("stream.cross", stream_block.cross_attn);
      reg_norm("stream.ln3", stream_block.ln3);
      reg_ffn("stream.ffn", stream_block.ffn);
    }
  }
};

/// Per-step dropout randomness; absent (nullptr) outside training.
struct DropoutCtx {
  double p = 0.0;
  std::mt19937_64 rng;
};

namespace detail {

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, DropoutCtx* drop) {
  if (!drop || drop->p <= 0.0) return x;
  const T keep = static_cast<T>(1.0 - drop->p);
  std::vector<T> mask(x.numel());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& m : mask) m = u(drop->rng) < drop->p ? T(0) : T(1) / keep;
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

/// Multi-head attention over precomputed key/value sources.
/// `bias` is broadcast-added to each score row when rank 1 ([kv_len]) or
/// added elementwise when rank 2 ([q_len x kv_len]); masked entries hold
/// kAttnMaskValue so their softmax weight is exactly zero.
template <typename T>
Tensor<T> multi_head_attention(const AttentionWeights<T>& w, const Tensor<T>& queries_in,
                               const Tensor<T>& keys_in, int heads, const Tensor<T>& bias) {
  const std::size_t h = queries_in.shape()[1];
  const std::size_t dh = h / static_cast<std::size_t>(heads);
  const Tensor<T> q = matmul(queries_in, w.wq);
  const Tensor<T> k = matmul(keys_in, w.wk);
  const Tensor<T> v = matmul(keys_in, w.wv);
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Tensor<T>> head_ctx;
  head_ctx.reserve(static_cast<std::size_t>(heads));
  for (int head = 0; head < heads; ++head) {
    const std::size_t c0 = static_cast<std::size_t>(head) * dh;
    const Tensor<T> qh = slice_cols(q, c0, c0 + dh);
    const Tensor<T> kh = slice_cols(k, c0, c0 + dh);
    const Tensor<T> vh = slice_cols(v, c0, c0 + dh);
    Tensor<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    scores = add(scores, bias);
    head_ctx.push_back(matmul(softmax(scores), vh));
  }
  return matmul(concat_cols(head_ctx), w.wo);
}

template <typename T>
Tensor<T> apply_ffn(const FfnWeights<T>& w, const Tensor<T>& x) {
  return add(matmul(gelu(add(matmul(x, w.w1), w.b1)), w.w2), w.b2);
}

template <typename T>
Tensor<T> apply_norm(const LayerNormWeights<T>& w, const Tensor<T>& x) {
  return layer_norm(x, w.gain, w.bias, static_cast<T>(kLayerNormEps));
}

/// Additive key bias: 0 for real positions, kAttnMaskValue for padding.
template <typename T>
Tensor<T> key_bias(const std::vector<std::uint8_t>& mask) {
  std::vector<T> b(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    b[i] = mask[i] ? T(0) : static_cast<T>(kAttnMaskValue);
  return Tensor<T>({mask.size()}, std::move(b));
}

/// Causal bias: row t may attend to columns <= t.
template <typename T>
Tensor<T> causal_bias(std::size_t n) {
  std::vector<T> b(n * n, T(0));
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t u = t + 1; u < n; ++u) b[t * n + u] = static_cast<T>(kAttnMaskValue);
  return Tensor<T>({n, n}, std::move(b));
}

}  // namespace detail

/// Bidirectional encoding of a source sequence. `x_mask` marks real tokens;
/// padding positions never influence real positions.
template <typename T>
Tensor<T> encode(const Parameters<T>& params, const ModelConfig& cfg,
                 const std::vector<int>& x_ids, const std::vector<std::uint8_t>& x_mask,
                 DropoutCtx* drop = nullptr) {
  const std::size_t m = x_ids.size();
  if (m == 0) throw ContractError("encode: empty input");
  if (m > static_cast<std::size_t>(cfg.max_len))
    throw ShapeError("encode: input length " + std::to_string(m) + " exceeds max_len " +
                     std::to_string(cfg.max_len));
  if (x_mask.size() != m)
    throw ShapeError("encode: mask length " + std::to_string(x_mask.size()) +
                     " does not match input length " + std::to_string(m));

  const Tensor<T> bias = detail::key_bias<T>(x_mask);
  Tensor<T> x = add(embedding(x_ids, params.token_emb), slice_rows(params.pos_emb, 0, m));
  x = detail::maybe_dropout(x, drop);
  for (const auto& layer : params.enc) {
    const Tensor<T> xn = detail::apply_norm(layer.ln1, x);
    const Tensor<T> attn = detail::multi_head_attention(layer.attn, xn, xn, cfg.heads, bias);
    x = add(x, detail::maybe_dropout(attn, drop));
    x = add(x, detail::maybe_dropout(detail::apply_ffn(layer.ffn, detail::apply_norm(layer.ln2, x)), drop));
  }
  Tensor<T> out = detail::apply_norm(params.enc_final, x);
  out.set_tag("encoder_output");
  return out;
}

/// Teacher-forced multi-stream decoding. `y_ids` is the target sequence; the
/// decoder input is [BOS] followed by y_ids[0..T-2], so stream j's logits at
/// position t are a distribution over y_{t+j} conditioned on y_{<t} and x.
/// Returns one [T x vocab] logits tensor per stream.
template <typename T>
std::vector<Tensor<T>> decode_streams(const Parameters<T>& params, const ModelConfig& cfg,
                                      const std::vector<int>& y_ids, const Tensor<T>& h_enc,
                                      const std::vector<std::uint8_t>& enc_mask,
                                      DropoutCtx* drop = nullptr) {
  const std::size_t t_len = y_ids.size();
  if (t_len == 0) throw ContractError("decode_streams: empty target");
  if (t_len > static_cast<std::size_t>(cfg.max_len))
    throw ShapeError("decode_streams: target length " + std::to_string(t_len) +
                     " exceeds max_len " + std::to_string(cfg.max_len));

  std::vector<int> input(t_len);
  input[0] = kBosId;
  for (std::size_t t = 1; t < t_len; ++t) input[t] = y_ids[t - 1];

  const Tensor<T> enc_bias = detail::key_bias<T>(enc_mask);
  const Tensor<T> causal = detail::causal_bias<T>(t_len);

  Tensor<T> x = add(embedding(input, params.token_emb), slice_rows(params.pos_emb, 0, t_len));
  x = detail::maybe_dropout(x, drop);
  for (const auto& layer : params.dec) {
    const Tensor<T> xn = detail::apply_norm(layer.ln1, x);
    const Tensor<T> self =
        detail::multi_head_attention(layer.self_attn, xn, xn, cfg.heads, causal);
    x = add(x, detail::maybe_dropout(self, drop));
    const Tensor<T> cross = detail::multi_head_attention(
        layer.cross_attn, detail::apply_norm(layer.ln2, x), h_enc, cfg.heads, enc_bias);
    x = add(x, detail::maybe_dropout(cross, drop));
    x = add(x, detail::maybe_dropout(detail::apply_ffn(layer.ffn, detail::apply_norm(layer.ln3, x)), drop));
  }
  Tensor<T> main_states = detail::apply_norm(params.dec_final, x);
  main_states.set_tag("decoder_main_states");

  const Tensor<T> projection = transpose(params.token_emb);
  std::vector<Tensor<T>> logits;
  logits.reserve(static_cast<std::size_t>(cfg.n_future));
  logits.push_back(matmul(main_states, projection));
  logits.back().set_tag("stream_logits");

  // Predicting streams: queries are the main states shifted toward their
  // target position; keys/values are the main states at positions <= t.
  for (int j = 1; j < cfg.n_future; ++j) {
    // Position of the token this stream predicts; the clamp only touches
    // trailing positions whose targets fall past the sequence end.
    std::vector<int> target_pos(t_len);
    for (std::size_t t = 0; t < t_len; ++t)
      target_pos[t] = static_cast<int>(
          std::min<std::size_t>(t + static_cast<std::size_t>(j),
                                static_cast<std::size_t>(cfg.max_len) - 1));
    const std::size_t h = static_cast<std::size_t>(cfg.hidden);
    const Tensor<T> stream_vec = reshape(
        slice_rows(params.stream_emb, static_cast<std::size_t>(j), static_cast<std::size_t>(j) + 1),
        {h});
    Tensor<T> q_base =
        add(add(main_states, embedding(target_pos, params.pos_emb)), stream_vec);
    const auto& block = params.stream_block;
    const Tensor<T> self = detail::multi_head_attention(
        block.self_attn, detail::apply_norm(block.ln1, q_base),
        detail::apply_norm(block.ln1, main_states), cfg.heads, causal);
    Tensor<T> g = add(q_base, detail::maybe_dropout(self, drop));
    const Tensor<T> cross = detail::multi_head_attention(
        block.cross_attn, detail::apply_norm(block.ln2, g), h_enc, cfg.heads, enc_bias);
    g = add(g, detail::maybe_dropout(cross, drop));
    g = add(g, detail::maybe_dropout(detail::apply_ffn(block.ffn, detail::apply_norm(block.ln3, g)), drop));
    g = detail::apply_norm(params.stream_final, g);
    logits.push_back(matmul(g, projection));
    logits.back().set_tag("stream_logits");
  }
  return logits;
}

/// Cached stream-0 state for stepwise decoding. Copyable so beam search can
/// fork hypotheses. Produces logits identical to the teacher-forced forward
/// because both paths share the same kernels.
template <typename T>
struct DecodeState {
  struct LayerCache {
    std::vector<T> self_k, self_v;    // grows one hidden-sized row per step
    std::vector<T> cross_k, cross_v;  // [enc_len x hidden], fixed at init
  };
  std::vector<LayerCache> layers;
  std::vector<T> enc_bias;  // additive key bias over encoder positions
  std::size_t pos = 0;      // next decoder input position
};

template <typename T>
DecodeState<T> init_decode_state(const Parameters<T>& params, const ModelConfig& cfg,
                                 const Tensor<T>& h_enc,
                                 const std::vector<std::uint8_t>& enc_mask) {
  const std::size_t h = static_cast<std::size_t>(cfg.hidden);
  const std::size_t m = h_enc.shape()[0];
  DecodeState<T> state;
  state.layers.resize(params.dec.size());
  for (std::size_t l = 0; l < params.dec.size(); ++l) {
    auto& cache = state.layers[l];
    cache.cross_k.assign(m * h, T(0));
    cache.cross_v.assign(m * h, T(0));
    detail::mm_nn(h_enc.values().data(), params.dec[l].cross_attn.wk.values().data(),
                  cache.cross_k.data(), m, h, h);
    detail::mm_nn(h_enc.values().data(), params.dec[l].cross_attn.wv.values().data(),
                  cache.cross_v.data(), m, h, h);
  }
  state.enc_bias.resize(m);
  for (std::size_t i = 0; i < m; ++i)
    state.enc_bias[i] = enc_mask[i] ? T(0) : static_cast<T>(kAttnMaskValue);
  return state;
}

namespace detail {

// One cached attention read: query row against per-head slices of the cached
// key/value rows, with an optional additive key bias.
template <typename T>
void cached_attention(const T* q, const std::vector<T>& k_rows, const std::vector<T>& v_rows,
                      std::size_t kv_len, std::size_t h, int heads, const T* bias, T* ctx_out) {
  const std::size_t dh = h / static_cast<std::size_t>(heads);
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> scores(kv_len), weights(kv_len);
  for (int head = 0; head < heads; ++head) {
    const std::size_t c0 = static_cast<std::size_t>(head) * dh;
    for (std::size_t u = 0; u < kv_len; ++u) {
      T acc = 0;
      const T* krow = k_rows.data() + u * h + c0;
      for (std::size_t c = 0; c < dh; ++c) acc += q[c0 + c] * krow[c];
      scores[u] = acc * inv_sqrt_dh;
      if (bias) scores[u] += bias[u];
    }
    softmax_row(scores.data(), weights.data(), kv_len);
    T* out = ctx_out + c0;
    std::fill(out, out + dh, T(0));
    for (std::size_t u = 0; u < kv_len; ++u) {
      const T w = weights[u];
      const T* vrow = v_rows.data() + u * h + c0;
      for (std::size_t c = 0; c < dh; ++c) out[c] += w * vrow[c];
    }
  }
}

template <typename T>
void row_linear(const T* x, const Tensor<T>& w, T* out, std::size_t in_dim, std::size_t out_dim) {
  std::fill(out, out + out_dim, T(0));
  mm_nn(x, w.values().data(), out, 1, in_dim, out_dim);
}

}  // namespace detail

/// Feeds one decoder input token and returns the stream-0 logits for the
/// next position. The first call must feed [BOS].
template <typename T>
std::vector<T> decode_step(const Parameters<T>& params, const ModelConfig& cfg,
                           DecodeState<T>& state, int input_token) {
  if (state.pos >= static_cast<std::size_t>(cfg.max_len))
    throw ShapeError("decode_step: position " + std::to_string(state.pos) +
                     " exceeds max_len " + std::to_string(cfg.max_len));
  const std::size_t h = static_cast<std::size_t>(cfg.hidden);
  const std::size_t f = static_cast<std::size_t>(cfg.ffn);
  const std::size_t v = static_cast<std::size_t>(cfg.vocab_size);
  if (input_token < 0 || static_cast<std::size_t>(input_token) >= v)
    throw IndexError("decode_step: token " + std::to_string(input_token) + " outside vocab");

  std::vector<T> x(h);
  {
    const T* tok = params.token_emb.values().data() + static_cast<std::size_t>(input_token) * h;
    const T* pos = params.pos_emb.values().data() + state.pos * h;
    for (std::size_t i = 0; i < h; ++i) x[i] = tok[i] + pos[i];
  }

  std::vector<T> xn(h), q(h), ctx(h), tmp(h), ff(f);
  for (std::size_t l = 0; l < params.dec.size(); ++l) {
    const auto& layer = params.dec[l];
    auto& cache = state.layers[l];

    // Causal self-attention over the cached prefix plus this position.
    detail::layernorm_row(x.data(), layer.ln1.gain.values().data(),
                          layer.ln1.bias.values().data(), xn.data(), h,
                          static_cast<T>(kLayerNormEps));
    detail::row_linear(xn.data(), layer.self_attn.wq, q.data(), h, h);
    const std::size_t old = cache.self_k.size();
    cache.self_k.resize(old + h, T(0));
    cache.self_v.resize(old + h, T(0));
    detail::mm_nn(xn.data(), layer.self_attn.wk.values().data(), cache.self_k.data() + old, 1, h, h);
    detail::mm_nn(xn.data(), layer.self_attn.wv.values().data(), cache.self_v.data() + old, 1, h, h);
    const std::size_t kv_len = state.pos + 1;
    detail::cached_attention(q.data(), cache.self_k, cache.self_v, kv_len, h, cfg.heads,
                             static_cast<const T*>(nullptr), ctx.data());
    detail::row_linear(ctx.data(), layer.self_attn.wo, tmp.data(), h, h);
    for (std::size_t i = 0; i < h; ++i) x[i] += tmp[i];

    // Cross-attention against the precomputed encoder keys/values.
    detail::layernorm_row(x.data(), layer.ln2.gain.values().data(),
                          layer.ln2.bias.values().data(), xn.data(), h,
                          static_cast<T>(kLayerNormEps));
    detail::row_linear(xn.data(), layer.cross_attn.wq, q.data(), h, h);
    detail::cached_attention(q.data(), cache.cross_k, cache.cross_v, state.enc_bias.size(), h,
                             cfg.heads, state.enc_bias.data(), ctx.data());
    detail::row_linear(ctx.data(), layer.cross_attn.wo, tmp.data(), h, h);
    for (std::size_t i = 0; i < h; ++i) x[i] += tmp[i];

    detail::layernorm_row(x.data(), layer.ln3.gain.values().data(),
                          layer.ln3.bias.values().data(), xn.data(), h,
                          static_cast<T>(kLayerNormEps));
    detail::row_linear(xn.data(), layer.ffn.w1, ff.data(), h, f);
    for (std::size_t i = 0; i < f; ++i)
      ff[i] = detail::gelu_scalar(ff[i] + layer.ffn.b1.values()[i]);
    detail::row_linear(ff.data(), layer.ffn.w2, tmp.data(), f, h);
    for (std::size_t i = 0; i < h; ++i) x[i] += tmp[i] + layer.ffn.b2.values()[i];
  }

  detail::layernorm_row(x.data(), params.dec_final.gain.values().data(),
                        params.dec_final.bias.values().data(), xn.data(), h,
                        static_cast<T>(kLayerNormEps));
  std::vector<T> logits(v);
  for (std::size_t tok = 0; tok < v; ++tok) {
    const T* row = params.token_emb.values().data() + tok * h;
    T acc = 0;
    for (std::size_t c = 0; c < h; ++c) acc += xn[c] * row[c];
    logits[tok] = acc;
  }
  state.pos += 1;
  return logits;
}

}  // namespace fngram
