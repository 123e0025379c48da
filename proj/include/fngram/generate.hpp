#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fngram/model.hpp"
#include "fngram/util.hpp"
#include "fngram/vocab.hpp"

namespace fngram {

/// A finished beam hypothesis. `ids` exclude [BOS] and the terminal [EOS];
/// `score` is sum-logprob / length^length_norm with length counting every
/// generated token including [EOS].
struct Hypothesis {
  std::vector<int> ids;
  double score = 0.0;
};

namespace detail {

inline std::vector<double> log_softmax_d(const std::vector<double>& logits) {
  double mx = logits[0];
  for (const double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (const double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

inline double hypothesis_score(double sum_logprob, std::size_t length, double length_norm) {
  return sum_logprob / std::pow(static_cast<double>(length), length_norm);
}

}  // namespace detail

/// Decoder interface for the search routines: a State is a prefix position,
/// `start()` is the state after consuming [BOS], and `next_logits`/`advance`
/// inspect and extend it. Any type with this shape works, which lets tests
/// drive the search with hand-set logits.
template <typename T>
struct ModelDecoder {
  const Parameters<T>* params;
  const ModelConfig* cfg;
  Tensor<T> h_enc;
  std::vector<std::uint8_t> enc_mask;

  struct State {
    DecodeState<T> cache;
    std::vector<double> logits;  // distribution over the next token
  };

  State start() const {
    State s;
    s.cache = init_decode_state(*params, *cfg, h_enc, enc_mask);
    s.logits = to_double(decode_step(*params, *cfg, s.cache, kBosId));
    return s;
  }

  State advance(const State& prev, int token) const {
    State s = prev;
    s.logits = to_double(decode_step(*params, *cfg, s.cache, token));
    return s;
  }

  static std::vector<double> to_double(const std::vector<T>& v) {
    return std::vector<double>(v.begin(), v.end());
  }
};

template <typename T>
ModelDecoder<T> make_model_decoder(const Parameters<T>& params, const ModelConfig& cfg,
                                   const std::vector<int>& x_ids) {
  if (x_ids.empty()) throw ContractError("generate: empty source");
  ModelDecoder<T> d;
  d.params = &params;
  d.cfg = &cfg;
  d.enc_mask.assign(x_ids.size(), 1);
  d.h_enc = encode(params, cfg, x_ids, d.enc_mask);
  return d;
}

/// Greedy decoding: repeatedly append the argmax of the next-token
/// distribution, lowest id on ties, until [EOS] or `max_out` tokens.
/// [PAD] and [MASK] are never emitted.
template <typename Decoder>
std::vector<int> greedy_decode(const Decoder& decoder, int max_out) {
  if (max_out < 1) throw ContractError("greedy: max_out must be >= 1");
  auto state = decoder.start();
  std::vector<int> out;
  while (static_cast<int>(out.size()) < max_out) {
    int best = -1;
    double best_lp = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < state.logits.size(); ++v) {
      if (static_cast<int>(v) == kPadId || static_cast<int>(v) == kMaskId) continue;
      if (state.logits[v] > best_lp) {
        best_lp = state.logits[v];
        best = static_cast<int>(v);
      }
    }
    if (best == kEosId) break;
    out.push_back(best);
    if (static_cast<int>(out.size()) >= max_out) break;
    state = decoder.advance(state, best);
  }
  return out;
}

/// Time-synchronous beam search over next-token log-probabilities. Expands
/// every live hypothesis over the full vocabulary, keeps the `beam` best by
/// cumulative log-probability, finishes hypotheses on [EOS] or at `max_out`,
/// and returns up to `beam` finished hypotheses sorted by normalized score.
template <typename Decoder>
std::vector<Hypothesis> beam_decode(const Decoder& decoder, int beam, int max_out,
                                    double length_norm) {
  if (beam < 1) throw ContractError("beam: width must be >= 1, got " + std::to_string(beam));
  if (max_out < 1) throw ContractError("beam: max_out must be >= 1");

  struct Live {
    std::vector<int> ids;
    double sum_lp = 0.0;
    typename std::decay_t<decltype(decoder.start())> state;
  };
  std::vector<Live> live;
  live.push_back({{}, 0.0, decoder.start()});
  std::vector<Hypothesis> finished;

  for (int step = 0; step < max_out && !live.empty(); ++step) {
    struct Candidate {
      std::size_t parent;
      int token;
      double sum_lp;
    };
    std::vector<Candidate> cands;
    for (std::size_t p = 0; p < live.size(); ++p) {
      const auto lp = detail::log_softmax_d(live[p].state.logits);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        if (static_cast<int>(v) == kPadId || static_cast<int>(v) == kMaskId) continue;
        cands.push_back({p, static_cast<int>(v), live[p].sum_lp + lp[v]});
      }
    }
    // Ties break toward the earlier parent, then the lower token id.
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.sum_lp != b.sum_lp) return a.sum_lp > b.sum_lp;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
    if (cands.size() > static_cast<std::size_t>(beam)) cands.resize(static_cast<std::size_t>(beam));

    std::vector<Live> next;
    for (const auto& c : cands) {
      const std::size_t length = live[c.parent].ids.size() + 1;  // counts this token
      if (c.token == kEosId) {
        finished.push_back(
            {live[c.parent].ids, detail::hypothesis_score(c.sum_lp, length, length_norm)});
      } else if (step + 1 == max_out) {
        auto ids = live[c.parent].ids;
        ids.push_back(c.token);
        finished.push_back({std::move(ids), detail::hypothesis_score(c.sum_lp, length, length_norm)});
      } else {
        Live l;
        l.ids = live[c.parent].ids;
        l.ids.push_back(c.token);
        l.sum_lp = c.sum_lp;
        l.state = decoder.advance(live[c.parent].state, c.token);
        next.push_back(std::move(l));
      }
    }
    live = std::move(next);
  }

  std::stable_sort(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.ids < b.ids;
  });
  if (finished.size() > static_cast<std::size_t>(beam))
    finished.resize(static_cast<std::size_t>(beam));
  return finished;
}

/// Greedy generation from a trained model, using stream 0 only.
template <typename T>
std::vector<int> greedy_generate(const Parameters<T>& params, const ModelConfig& cfg,
                                 const std::vector<int>& x_ids, int max_out) {
  if (max_out > cfg.max_len)
    throw ContractError("generate: max_out " + std::to_string(max_out) + " exceeds max_len " +
                        std::to_string(cfg.max_len));
  return greedy_decode(make_model_decoder(params, cfg, x_ids), max_out);
}

/// Beam-search generation from a trained model, best hypothesis first.
template <typename T>
std::vector<Hypothesis> beam_generate(const Parameters<T>& params, const ModelConfig& cfg,
                                      const std::vector<int>& x_ids, int beam, int max_out,
                                      double length_norm) {
  if (max_out > cfg.max_len)
    throw ContractError("generate: max_out " + std::to_string(max_out) + " exceeds max_len " +
                        std::to_string(cfg.max_len));
  return beam_decode(make_model_decoder(params, cfg, x_ids), beam, max_out, length_norm);
}

}  // namespace fngram
