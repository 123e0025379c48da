#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "fngram/generate.hpp"
#include "fngram/training.hpp"
#include "oracles.hpp"

using namespace fngram;

namespace {

ModelConfig tiny_config(int n_future = 2) {
  ModelConfig cfg;
  cfg.n_future = n_future;
  cfg.alpha.assign(static_cast<std::size_t>(n_future), 1.0);
  cfg.layers_enc = 2;
  cfg.layers_dec = 2;
  cfg.hidden = 16;
  cfg.ffn = 32;
  cfg.heads = 2;
  cfg.max_len = 32;
  cfg.vocab_size = 20;
  return cfg;
}

/// Fake decoder with per-step logits fixed in advance (prefix independent).
struct TableDecoder {
  std::vector<std::vector<double>> steps;  // [step][vocab]

  struct State {
    std::size_t step = 0;
    std::vector<double> logits;
  };

  State start() const { return {0, steps.at(0)}; }
  State advance(const State& s, int) const {
    const std::size_t next = std::min(s.step + 1, steps.size() - 1);
    return {next, steps.at(next)};
  }
};

/// Fake decoder whose logits depend on the whole prefix via a hash, so the
/// search problem has genuine interactions.
struct HashDecoder {
  int vocab = 6;
  std::uint64_t seed = 1;

  struct State {
    std::vector<int> prefix;
    std::vector<double> logits;
  };

  std::vector<double> logits_for(const std::vector<int>& prefix) const {
    std::uint64_t h = splitmix64(seed);
    for (const int t : prefix) h = splitmix64(h ^ (static_cast<std::uint64_t>(t) + 17));
    std::vector<double> l(static_cast<std::size_t>(vocab));
    for (std::size_t v = 0; v < l.size(); ++v)
      l[v] = static_cast<double>(splitmix64(h + v) % 10000) / 1000.0 - 5.0;
    return l;
  }

  State start() const { return {{}, logits_for({})}; }
  State advance(const State& s, int tok) const {
    auto p = s.prefix;
    p.push_back(tok);
    return {std::move(p), logits_for(p)};
  }
};

std::vector<int> random_ids(std::size_t len, int vocab, std::mt19937_64& rng) {
  std::vector<int> ids(len);
  for (auto& id : ids) id = kNumSpecials + static_cast<int>(rng() % (vocab - kNumSpecials));
  return ids;
}

}  // namespace

TEST_CASE("beam width below one is a contract error") {
  TableDecoder d{{std::vector<double>(8, 0.0)}};
  CHECK_THROWS_AS(beam_decode(d, 0, 3, 1.0), ContractError);
}

TEST_CASE("max_out of one yields at most one token") {
  const auto cfg = tiny_config();
  const auto params = Parameters<float>::init(cfg, 3);
  std::mt19937_64 rng(4);
  const auto out = greedy_generate(params, cfg, random_ids(4, cfg.vocab_size, rng), 1);
  CHECK(out.size() <= 1);
}

TEST_CASE("beam width one reproduces greedy decoding on a real model") {
  const auto cfg = tiny_config();
  const auto params = Parameters<float>::init(cfg, 5);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_ids(3 + rng() % 5, cfg.vocab_size, rng);
    const auto greedy = greedy_generate(params, cfg, x, 8);
    const auto beamed = beam_generate(params, cfg, x, 1, 8, 1.0);
    REQUIRE(!beamed.empty());
    CHECK(beamed.front().ids == greedy);
  }
}

TEST_CASE("beam 2 with hand-set logits recovers the enumerated top 2") {
  // Three steps, prefix-independent scores. Step-1 margin is large, later
  // margins small, so the true runner-up flips a later step.
  const int vocab = 8;
  std::vector<std::vector<double>> steps(3, std::vector<double>(vocab, -20.0));
  // allowed ids avoiding PAD(0)/MASK(2); EOS(6) stays improbable
  steps[0][3] = 5.0;
  steps[0][4] = 0.0;   // gap 5.0
  steps[1][3] = 2.0;
  steps[1][4] = 1.7;   // gap 0.3
  steps[2][3] = 3.0;
  steps[2][4] = 2.6;   // gap 0.4
  TableDecoder d{steps};

  const auto hyps = beam_decode(d, 2, 3, 0.0);
  const auto all = oracles::exhaustive_search(d, 3, 0.0, kEosId, {kPadId, kMaskId});
  REQUIRE(hyps.size() >= 2);
  REQUIRE(all.size() >= 2);
  CHECK(hyps[0].ids == all[0].ids);
  CHECK(hyps[1].ids == all[1].ids);
  CHECK(hyps[0].score == doctest::Approx(all[0].score).epsilon(1e-12));
  CHECK(hyps[1].score == doctest::Approx(all[1].score).epsilon(1e-12));
  CHECK(hyps[0].ids == std::vector<int>{3, 3, 3});
  CHECK(hyps[1].ids == std::vector<int>{3, 4, 3});
}

TEST_CASE("length_norm zero scores equal the raw log-probability sum") {
  std::vector<std::vector<double>> steps(2, std::vector<double>(8, 0.0));
  steps[0][5] = 4.0;
  steps[1][kEosId] = 6.0;
  TableDecoder d{steps};
  const auto hyps = beam_decode(d, 1, 4, 0.0);
  REQUIRE(!hyps.empty());
  // p(5) at step 0, then p(EOS) at step 1, summed without normalization
  double mx0 = 4.0, sum0 = 0.0;
  for (const double v : steps[0]) sum0 += std::exp(v - mx0);
  double mx1 = 6.0, sum1 = 0.0;
  for (const double v : steps[1]) sum1 += std::exp(v - mx1);
  const double want = (4.0 - (mx0 + std::log(sum0))) + (6.0 - (mx1 + std::log(sum1)));
  CHECK(hyps[0].score == doctest::Approx(want).epsilon(1e-12));
  CHECK(hyps[0].ids == std::vector<int>{5});
}

TEST_CASE("huge beams match exhaustive search on every small instance") {
  for (int vocab = 2; vocab <= 6; ++vocab) {
    for (int max_steps = 1; max_steps <= 4; ++max_steps) {
      for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        HashDecoder d{vocab, seed * 7919 + static_cast<std::uint64_t>(vocab * 131 + max_steps)};
        int beam = 1;
        for (int s = 0; s < max_steps; ++s) beam *= vocab;
        const auto hyps = beam_decode(d, beam, max_steps, 1.0);
        const auto all =
            oracles::exhaustive_search(d, max_steps, 1.0, kEosId, {kPadId, kMaskId});
        REQUIRE(!hyps.empty());
        REQUIRE(!all.empty());
        CHECK(hyps[0].ids == all[0].ids);
        CHECK(hyps[0].score == doctest::Approx(all[0].score).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("beam search with reachable EOS still matches exhaustive search") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    HashDecoder d{8, seed * 104729};
    const auto hyps = beam_decode(d, 4096, 4, 1.0);
    const auto all = oracles::exhaustive_search(d, 4, 1.0, kEosId, {kPadId, kMaskId});
    REQUIRE(!hyps.empty());
    CHECK(hyps[0].ids == all[0].ids);
    CHECK(hyps[0].score == doctest::Approx(all[0].score).epsilon(1e-12));
  }
}

TEST_CASE("generation is deterministic and never emits PAD or MASK") {
  const auto cfg = tiny_config();
  const auto params = Parameters<float>::init(cfg, 7);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_ids(4, cfg.vocab_size, rng);
    const auto a = greedy_generate(params, cfg, x, 12);
    const auto b = greedy_generate(params, cfg, x, 12);
    CHECK(a == b);
    for (const int id : a) {
      CHECK(id != kPadId);
      CHECK(id != kMaskId);
    }
    const auto hyps = beam_generate(params, cfg, x, 3, 12, 1.0);
    for (const auto& h : hyps)
      for (const int id : h.ids) {
        CHECK(id != kPadId);
        CHECK(id != kMaskId);
      }
  }
}

TEST_CASE("greedy ties break toward the lowest token id") {
  // Uniform logits: every allowed token ties; PAD(0) and MASK(2) are banned,
  // so the winner is id 1 every step until max_out.
  TableDecoder d{{std::vector<double>(8, 0.0)}};
  const auto out = greedy_decode(d, 3);
  CHECK(out == std::vector<int>{1, 1, 1});
}

TEST_CASE("a model overfit on one pair generates the memorized target") {
  ModelConfig cfg = tiny_config(2);
  TrainConfig tc;
  tc.model = cfg;
  tc.lr = 3e-3;
  tc.batch_size = 1;
  tc.steps = 150;
  tc.seed = 5;
  tc.log_every = 0;
  const std::vector<int> source = {8, 9, 10, 11};
  std::vector<int> target = {12, 13, 14};
  target.push_back(kEosId);
  const std::vector<ShardRecord> data = {{source, target}};
  auto params = Parameters<float>::init(cfg, 6);
  auto adam = AdamState<float>::init(params);
  train_loop(params, adam, tc, data, 0, nullptr);
  const auto out = greedy_generate(params, cfg, source, 16);
  CHECK(out == std::vector<int>{12, 13, 14});
}
