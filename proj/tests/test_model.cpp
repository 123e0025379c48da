#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fngram/model.hpp"
#include "fngram/vocab.hpp"

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

std::vector<int> random_ids(std::size_t len, int vocab, std::mt19937_64& rng) {
  std::vector<int> ids(len);
  for (auto& id : ids) id = kNumSpecials + static_cast<int>(rng() % (vocab - kNumSpecials));
  return ids;
}

}  // namespace

TEST_CASE("encoder output shape is [M x hidden]") {
  const auto cfg = tiny_config();
  const auto params = Parameters<double>::init(cfg, 1);
  std::mt19937_64 rng(2);
  for (const std::size_t m : {1u, 5u, 32u}) {
    const auto ids = random_ids(m, cfg.vocab_size, rng);
    const auto h = encode(params, cfg, ids, std::vector<std::uint8_t>(m, 1));
    CHECK(h.shape() == std::vector<std::size_t>{m, 16});
  }
}

TEST_CASE("encoder rejects inputs longer than max_len") {
  const auto cfg = tiny_config();
  const auto params = Parameters<double>::init(cfg, 1);
  std::mt19937_64 rng(3);
  const auto ids = random_ids(33, cfg.vocab_size, rng);
  CHECK_THROWS_AS(encode(params, cfg, ids, std::vector<std::uint8_t>(33, 1)), ShapeError);
}

TEST_CASE("appending padding leaves encoder states at real positions unchanged") {
  const auto cfg = tiny_config();
  const auto params = Parameters<double>::init(cfg, 7);
  std::mt19937_64 rng(5);
  const std::size_t m = 9;
  const auto ids = random_ids(m, cfg.vocab_size, rng);
  const auto base = encode(params, cfg, ids, std::vector<std::uint8_t>(m, 1));

  auto padded = ids;
  std::vector<std::uint8_t> mask(m, 1);
  for (int i = 0; i < 4; ++i) {
    padded.push_back(kPadId);
    mask.push_back(0);
  }
  const auto with_pads = encode(params, cfg, padded, mask);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < 16; ++c)
      CHECK(std::abs(with_pads.at(r, c) - base.at(r, c)) < 1e-6);
}

TEST_CASE("permuting two padding ids leaves real positions bitwise identical") {
  const auto cfg = tiny_config();
  const auto params = Parameters<double>::init(cfg, 7);
  std::mt19937_64 rng(6);
  const std::size_t m = 6;
  auto ids = random_ids(m, cfg.vocab_size, rng);
  std::vector<std::uint8_t> mask(m, 1);
  // two masked-out positions carrying different garbage ids
  ids.push_back(9);
  ids.push_back(13);
  mask.push_back(0);
  mask.push_back(0);
  const auto a = encode(params, cfg, ids, mask);
  std::swap(ids[m], ids[m + 1]);
  const auto b = encode(params, cfg, ids, mask);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < 16; ++c) CHECK(a.at(r, c) == b.at(r, c));
}

TEST_CASE("decode_streams produces n_future logit matrices of [T x vocab]") {
  for (const int n : {1, 2, 3}) {
    const auto cfg = tiny_config(n);
    const auto params = Parameters<double>::init(cfg, 11);
    std::mt19937_64 rng(8);
    const auto x = random_ids(5, cfg.vocab_size, rng);
    const auto y = random_ids(7, cfg.vocab_size, rng);
    const std::vector<std::uint8_t> mask(x.size(), 1);
    const auto h = encode(params, cfg, x, mask);
    const auto logits = decode_streams(params, cfg, y, h, mask);
    REQUIRE(logits.size() == static_cast<std::size_t>(n));
    for (const auto& l : logits)
      CHECK(l.shape() == std::vector<std::size_t>{7, 20});
  }
}

TEST_CASE("decode_streams rejects targets longer than max_len") {
  const auto cfg = tiny_config();
  const auto params = Parameters<double>::init(cfg, 11);
  std::mt19937_64 rng(9);
  const auto x = random_ids(4, cfg.vocab_size, rng);
  const std::vector<std::uint8_t> mask(x.size(), 1);
  const auto h = encode(params, cfg, x, mask);
  CHECK_THROWS_AS(decode_streams(params, cfg, random_ids(33, cfg.vocab_size, rng), h, mask),
                  ShapeError);
}

TEST_CASE("future tokens never influence earlier logits in any stream") {
  for (const int n : {1, 2, 3}) {
    const auto cfg = tiny_config(n);
    const auto params = Parameters<double>::init(cfg, 21);
    std::mt19937_64 rng(100 + n);
    const auto x = random_ids(6, cfg.vocab_size, rng);
    const std::vector<std::uint8_t> mask(x.size(), 1);
    const auto h = encode(params, cfg, x, mask);
    const std::size_t t_len = 10;

    for (int trial = 0; trial < 40; ++trial) {
      const auto y = random_ids(t_len, cfg.vocab_size, rng);
      const auto base = decode_streams(params, cfg, y, h, mask);
      const std::size_t cut = rng() % t_len;  // perturb y[cut..]
      auto perturbed = y;
      for (std::size_t i = cut; i < t_len; ++i)
        perturbed[i] = kNumSpecials + static_cast<int>(rng() % (cfg.vocab_size - kNumSpecials));
      if (perturbed == y) continue;
      const auto changed = decode_streams(params, cfg, perturbed, h, mask);
      for (std::size_t j = 0; j < base.size(); ++j)
        for (std::size_t t = 0; t <= cut; ++t)
          for (std::size_t v = 0; v < 20; ++v)
            CHECK(std::abs(base[j].at(t, v) - changed[j].at(t, v)) <= 1e-12);
    }
  }
}

TEST_CASE("trailing decoder pads leave earlier logits unchanged") {
  const auto cfg = tiny_config(2);
  const auto params = Parameters<double>::init(cfg, 31);
  std::mt19937_64 rng(12);
  const auto x = random_ids(5, cfg.vocab_size, rng);
  const std::vector<std::uint8_t> mask(x.size(), 1);
  const auto h = encode(params, cfg, x, mask);
  const auto y = random_ids(6, cfg.vocab_size, rng);
  auto y_padded = y;
  y_padded.push_back(kPadId);
  y_padded.push_back(kPadId);
  const auto base = decode_streams(params, cfg, y, h, mask);
  const auto padded = decode_streams(params, cfg, y_padded, h, mask);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t t = 0; t < y.size(); ++t)
      for (std::size_t v = 0; v < 20; ++v)
        CHECK(std::abs(base[j].at(t, v) - padded[j].at(t, v)) <= 1e-12);
}

TEST_CASE("stepwise decoding with cached state matches teacher forcing (float)") {
  const auto cfg = tiny_config(2);
  const auto params = Parameters<float>::init(cfg, 41);
  std::mt19937_64 rng(14);
  const auto x = random_ids(6, cfg.vocab_size, rng);
  const std::vector<std::uint8_t> mask(x.size(), 1);
  const auto h = encode(params, cfg, x, mask);
  const std::size_t t_len = 9;
  const auto y = random_ids(t_len, cfg.vocab_size, rng);
  const auto full = decode_streams(params, cfg, y, h, mask);

  auto state = init_decode_state(params, cfg, h, mask);
  int input = kBosId;
  for (std::size_t t = 0; t < t_len; ++t) {
    const auto logits = decode_step(params, cfg, state, input);
    for (std::size_t v = 0; v < 20; ++v)
      CHECK(std::abs(logits[v] - full[0].at(t, v)) <= 1e-5f);
    input = y[t];
  }
}

TEST_CASE("stepwise decoding agrees bitwise at 64-bit") {
  const auto cfg = tiny_config(1);
  const auto params = Parameters<double>::init(cfg, 43);
  std::mt19937_64 rng(15);
  const auto x = random_ids(4, cfg.vocab_size, rng);
  const std::vector<std::uint8_t> mask(x.size(), 1);
  const auto h = encode(params, cfg, x, mask);
  const auto y = random_ids(7, cfg.vocab_size, rng);
  const auto full = decode_streams(params, cfg, y, h, mask);

  auto state = init_decode_state(params, cfg, h, mask);
  int input = kBosId;
  for (std::size_t t = 0; t < y.size(); ++t) {
    const auto logits = decode_step(params, cfg, state, input);
    for (std::size_t v = 0; v < 20; ++v) CHECK(logits[v] == full[0].at(t, v));
    input = y[t];
  }
}

TEST_CASE("predicting streams differ from the main stream") {
  // Sanity: stream 1 must not be a copy of stream 0.
  const auto cfg = tiny_config(2);
  const auto params = Parameters<double>::init(cfg, 51);
  std::mt19937_64 rng(16);
  const auto x = random_ids(5, cfg.vocab_size, rng);
  const std::vector<std::uint8_t> mask(x.size(), 1);
  const auto h = encode(params, cfg, x, mask);
  const auto y = random_ids(6, cfg.vocab_size, rng);
  const auto logits = decode_streams(params, cfg, y, h, mask);
  double diff = 0.0;
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t v = 0; v < 20; ++v)
      diff = std::max(diff, std::abs(logits[0].at(t, v) - logits[1].at(t, v)));
  CHECK(diff > 1e-6);
}

TEST_CASE("config validation rejects inconsistent settings") {
  auto cfg = tiny_config();
  cfg.heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = tiny_config();
  cfg.alpha = {0.0, 1.0};  // alpha[0] must be positive
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = tiny_config();
  cfg.alpha = {1.0};  // wrong length for n_future=2
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}
