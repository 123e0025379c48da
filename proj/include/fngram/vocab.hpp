#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fngram/util.hpp"

namespace fngram {

// Reserved ids, fixed across every vocabulary.
enum SpecialId : int {
  kPadId = 0,
  kUnkId = 1,
  kMaskId = 2,
  kSepId = 3,
  kXSepId = 4,
  kBosId = 5,
  kEosId = 6,
};
inline constexpr int kNumSpecials = 7;

inline const std::array<std::string, kNumSpecials>& special_tokens() {
  static const std::array<std::string, kNumSpecials> toks = {
      "[PAD]", "[UNK]", "[MASK]", "[SEP]", "[X_SEP]", "[BOS]", "[EOS]"};
  return toks;
}

/// Bidirectional token<->id map with the reserved specials at ids 0..6.
/// Char mode maps one codepoint per token; subword mode encodes by greedy
/// longest match over whitespace-split words.
class Vocabulary {
 public:
  enum class Mode { kChar, kSubword };

  /// Char mode counts codepoint frequencies in `corpus` and keeps the most
  /// frequent max_size-7. Subword mode reads `corpus` as an inventory, one
  /// token per line, capped at max_size total entries.
  static Vocabulary build(std::istream& corpus, Mode mode, std::size_t max_size) {
    if (max_size < kNumSpecials + 1)
      throw ContractError("build_vocab: max_size " + std::to_string(max_size) +
                          " cannot fit " + std::to_string(kNumSpecials) +
                          " specials plus one token");
    Vocabulary v;
    v.mode_ = mode;
    for (const auto& s : special_tokens()) v.push_token(s);

    if (mode == Mode::kChar) {
      std::map<std::string, std::size_t> freq;  // UTF-8 byte order == codepoint order
      std::string line;
      while (std::getline(corpus, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto off = utf8_offsets(line);
        for (std::size_t i = 0; i + 1 < off.size(); ++i)
          ++freq[line.substr(off[i], off[i + 1] - off[i])];
      }
      if (freq.empty()) throw ContractError("build_vocab: empty corpus");
      std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const auto& a, const auto& b) { return a.second > b.second; });
      for (const auto& [tok, n] : ranked) {
        if (v.tokens_.size() >= max_size) break;
        v.push_token(tok);
      }
    } else {
      std::string line;
      while (std::getline(corpus, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (v.index_.count(line)) continue;
        if (v.tokens_.size() >= max_size) break;
        v.push_token(line);
      }
      if (v.tokens_.size() == kNumSpecials)
        throw ContractError("build_vocab: empty subword inventory");
    }
    return v;
  }

  /// One token per line, line number == id, specials on the first seven lines.
  /// Mode is inferred: any multi-codepoint regular token means subword.
  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("vocabulary: cannot open " + path);
    Vocabulary v;
    std::string line;
    std::size_t lineno = 0;
    bool multi_cp = false;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (lineno < kNumSpecials) {
        if (line != special_tokens()[lineno])
          throw IoError("vocabulary: line " + std::to_string(lineno + 1) + " of " + path +
                        " must be " + special_tokens()[lineno] + ", got \"" + line + "\"");
      } else {
        if (line.empty()) throw IoError("vocabulary: empty token at line " +
                                        std::to_string(lineno + 1) + " of " + path);
        if (v.index_.count(line))
          throw IoError("vocabulary: duplicate token \"" + line + "\" in " + path);
        if (utf8_offsets(line).size() > 2) multi_cp = true;
      }
      v.push_token(line);
      ++lineno;
    }
    if (lineno < kNumSpecials) throw IoError("vocabulary: " + path + " has fewer than 7 lines");
    v.mode_ = multi_cp ? Mode::kSubword : Mode::kChar;
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("vocabulary: cannot write " + path);
    for (const auto& t : tokens_) out << t << '\n';
    if (!out) throw IoError("vocabulary: write failed for " + path);
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    if (mode_ == Mode::kChar) {
      const auto off = utf8_offsets(text);
      ids.reserve(off.size());
      for (std::size_t i = 0; i + 1 < off.size(); ++i) {
        const auto it = index_.find(std::string(text.substr(off[i], off[i + 1] - off[i])));
        ids.push_back(it == index_.end() ? kUnkId : it->second);
      }
      return ids;
    }
    // Subword: pre-split on whitespace, then greedy longest match per word.
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      std::size_t j = i;
      while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
      if (j > i) encode_word(text.substr(i, j - i), ids);
      i = j;
    }
    return ids;
  }

  std::string decode(const std::vector<int>& ids, bool strip_specials = false) const {
    std::string out;
    for (const int id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
        throw IndexError("decode: id " + std::to_string(id) + " outside vocabulary of size " +
                         std::to_string(tokens_.size()));
      if (strip_specials && id < kNumSpecials) continue;
      out += tokens_[static_cast<std::size_t>(id)];
    }
    return out;
  }

  std::size_t size() const { return tokens_.size(); }
  Mode mode() const { return mode_; }

  int id_of(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    return it == index_.end() ? -1 : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw IndexError("token: id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(tokens_.size()));
    return tokens_[static_cast<std::size_t>(id)];
  }

 private:
  void push_token(const std::string& tok) {
    index_.emplace(tok, static_cast<int>(tokens_.size()));
    tokens_.push_back(tok);
    max_token_cps_ = std::max(max_token_cps_, utf8_offsets(tok).size() - 1);
  }

  // Longest vocabulary entry prefixing the remainder wins; otherwise emit
  // [UNK] and advance exactly one codepoint.
  void encode_word(std::string_view word, std::vector<int>& ids) const {
    const auto off = utf8_offsets(word);
    const std::size_t n = off.size() - 1;
    std::size_t i = 0;
    while (i < n) {
      int match = -1;
      std::size_t match_end = i;
      const std::size_t max_j = std::min(n, i + max_token_cps_);
      for (std::size_t j = max_j; j > i; --j) {
        const auto it = index_.find(std::string(word.substr(off[i], off[j] - off[i])));
        if (it != index_.end()) {
          match = it->second;
          match_end = j;
          break;
        }
      }
      if (match >= 0) {
        ids.push_back(match);
        i = match_end;
      } else {
        ids.push_back(kUnkId);
        i += 1;
      }
    }
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  Mode mode_ = Mode::kChar;
  std::size_t max_token_cps_ = 0;
};

}  // namespace fngram
