#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "fngram/vocab.hpp"

using namespace fngram;

namespace {

Vocabulary char_vocab(const std::string& corpus, std::size_t max_size = 64) {
  std::istringstream in(corpus);
  return Vocabulary::build(in, Vocabulary::Mode::kChar, max_size);
}

Vocabulary subword_vocab(const std::string& wordlist, std::size_t max_size = 64) {
  std::istringstream in(wordlist);
  return Vocabulary::build(in, Vocabulary::Mode::kSubword, max_size);
}

}  // namespace

TEST_CASE("char vocabulary from tiny corpus") {
  const auto v = char_vocab("abab", 16);
  CHECK(v.size() == 9);
  CHECK(v.id_of("a") >= kNumSpecials);
  CHECK(v.id_of("b") >= kNumSpecials);
  // a and b tie at count 2; byte order breaks the tie
  CHECK(v.id_of("a") < v.id_of("b"));
}

TEST_CASE("single-character corpus with minimal budget") {
  const auto v = char_vocab("xxxx", 8);
  CHECK(v.size() == 8);
  CHECK(v.id_of("x") == 7);
}

TEST_CASE("max_size below specials+1 is rejected") {
  std::istringstream in("abc");
  CHECK_THROWS_AS(Vocabulary::build(in, Vocabulary::Mode::kChar, 7), ContractError);
}

TEST_CASE("empty corpus is rejected") {
  std::istringstream in("");
  CHECK_THROWS_AS(Vocabulary::build(in, Vocabulary::Mode::kChar, 32), ContractError);
}

TEST_CASE("frequency ranking keeps the most frequent characters") {
  const auto v = char_vocab("aaabbc", 9);  // room for only two chars
  CHECK(v.size() == 9);
  CHECK(v.id_of("a") == 7);
  CHECK(v.id_of("b") == 8);
  CHECK(v.id_of("c") == -1);
}

TEST_CASE("greedy longest match prefers the longer entry") {
  const auto v = subword_vocab("ab\na\nb\n");
  const auto ids = v.encode("abab");
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == v.id_of("ab"));
  CHECK(ids[1] == v.id_of("ab"));
}

TEST_CASE("single-char fallback when no longer entry matches") {
  const auto v = subword_vocab("ab\na\nb\n");
  const auto ids = v.encode("ba");
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == v.id_of("b"));
  CHECK(ids[1] == v.id_of("a"));
}

TEST_CASE("unknown characters advance exactly one codepoint") {
  const auto v = subword_vocab("ab\n");
  const auto ids = v.encode("zab");
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == kUnkId);
  CHECK(ids[1] == v.id_of("ab"));
}

TEST_CASE("unknown char in char mode maps to [UNK]") {
  const auto v = char_vocab("aa");
  const auto ids = v.encode("aq");
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == v.id_of("a"));
  CHECK(ids[1] == kUnkId);
}

TEST_CASE("decode of empty list and round trips") {
  const auto v = char_vocab("abab");
  CHECK(v.decode({}) == "");
  CHECK(v.decode(v.encode("abab")) == "abab");
}

TEST_CASE("decode renders specials verbatim unless stripped") {
  const auto v = char_vocab("ab");
  const std::vector<int> ids = {v.id_of("a"), kXSepId, v.id_of("b")};
  CHECK(v.decode(ids) == "a[X_SEP]b");
  CHECK(v.decode(ids, /*strip_specials=*/true) == "ab");
}

TEST_CASE("decode rejects out-of-range ids") {
  const auto v = char_vocab("ab");
  CHECK_THROWS_AS(v.decode({static_cast<int>(v.size())}), IndexError);
}

TEST_CASE("encode/decode identity on random char lines") {
  const auto v = char_vocab("the quick brown fox jumps over the lazy dog");
  std::mt19937_64 rng(77);
  const std::string alphabet = "thequickbrownfxjmpsvlazydg ";
  for (int trial = 0; trial < 40; ++trial) {
    std::string line;
    const std::size_t len = 1 + rng() % 30;
    for (std::size_t i = 0; i < len; ++i) line += alphabet[rng() % alphabet.size()];
    const auto ids = v.encode(line);
    CHECK(v.decode(ids) == line);
    CHECK(v.encode(v.decode(ids)) == ids);
    for (const int id : ids) CHECK(id < static_cast<int>(v.size()));
  }
}

TEST_CASE("encoding is deterministic") {
  const auto v = subword_vocab("foo\nfo\no\nf\nbar\nba\nr\na\nb\n");
  const auto a = v.encode("foobar fo");
  const auto b = v.encode("foobar fo");
  CHECK(a == b);
}

TEST_CASE("utf-8 aware char handling") {
  const auto v = char_vocab("día día");
  const auto ids = v.encode("íd");
  REQUIRE(ids.size() == 2);
  CHECK(v.decode(ids) == "íd");
}

TEST_CASE("vocabulary file round trip preserves ids and mode") {
  const auto v = subword_vocab("hello\nhel\nlo\nh\ne\nl\no\n");
  const std::string path = "vocab_roundtrip.txt";
  v.save(path);
  const auto loaded = Vocabulary::load(path);
  CHECK(loaded.size() == v.size());
  CHECK(loaded.mode() == Vocabulary::Mode::kSubword);
  CHECK(loaded.encode("hello") == v.encode("hello"));
  std::remove(path.c_str());
}

TEST_CASE("loading rejects a file with reordered specials") {
  const std::string path = "vocab_bad.txt";
  {
    std::ofstream out(path);
    out << "[UNK]\n[PAD]\n[MASK]\n[SEP]\n[X_SEP]\n[BOS]\n[EOS]\na\n";
  }
  CHECK_THROWS_AS(Vocabulary::load(path), IoError);
  std::remove(path.c_str());
}

TEST_CASE("loading rejects duplicate tokens") {
  const std::string path = "vocab_dup.txt";
  {
    std::ofstream out(path);
    out << "[PAD]\n[UNK]\n[MASK]\n[SEP]\n[X_SEP]\n[BOS]\n[EOS]\na\na\n";
  }
  CHECK_THROWS_AS(Vocabulary::load(path), IoError);
  std::remove(path.c_str());
}
