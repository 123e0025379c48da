#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fngram/util.hpp"
#include "fngram/vocab.hpp"

namespace fngram {

inline constexpr std::size_t kMaskBlockLen = 64;   // tokens per masking block
inline constexpr std::size_t kMaskSpanLen = 9;     // masked tokens per full block
inline constexpr double kTailMaskRatio = 0.15;     // tail-block masking ratio

/// One masked-span pre-training pair: the encoder sees the sequence with
/// span positions replaced by [MASK]; the decoder target is the original
/// span tokens concatenated in order.
struct MaskedSpanExample {
  std::vector<int> encoder_ids;
  std::vector<int> decoder_target_ids;
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (start, length), sorted, disjoint
};

/// Masked-token count for a trailing block of length L < 64:
/// max(1, round_half_up(0.15 * L)), in exact integer arithmetic.
inline std::size_t tail_span_length(std::size_t block_len) {
  if (block_len == 0) return 0;
  return std::max<std::size_t>(1, (15 * block_len + 50) / 100);
}

/// Closed-form count of masked tokens for a sequence of length `len`.
inline std::size_t masked_token_count(std::size_t len) {
  return kMaskSpanLen * (len / kMaskBlockLen) + tail_span_length(len % kMaskBlockLen);
}

/// Masks one contiguous 9-token span per full 64-token block and one 15%
/// span in a trailing partial block, at seeded uniform offsets.
inline MaskedSpanExample mask_spans(const std::vector<int>& ids, std::uint64_t rng_seed) {
  if (ids.empty()) throw ContractError("mask_spans: empty input");
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == kMaskId)
      throw ContractError("mask_spans: input already contains [MASK] at position " +
                          std::to_string(i));
  std::mt19937_64 rng(rng_seed);
  // Bounded draw by modulo keeps shard bytes identical across platforms.
  const auto draw = [&rng](std::size_t bound) {
    return static_cast<std::size_t>(rng() % bound);
  };

  MaskedSpanExample ex;
  ex.encoder_ids = ids;
  const std::size_t full_blocks = ids.size() / kMaskBlockLen;
  for (std::size_t b = 0; b < full_blocks; ++b) {
    const std::size_t start =
        b * kMaskBlockLen + draw(kMaskBlockLen - kMaskSpanLen + 1);
    ex.spans.emplace_back(start, kMaskSpanLen);
  }
  const std::size_t tail = ids.size() % kMaskBlockLen;
  if (tail > 0) {
    const std::size_t len = tail_span_length(tail);
    const std::size_t start = full_blocks * kMaskBlockLen + draw(tail - len + 1);
    ex.spans.emplace_back(start, len);
  }
  for (const auto& [start, len] : ex.spans) {
    for (std::size_t i = start; i < start + len; ++i) {
      ex.decoder_target_ids.push_back(ids[i]);
      ex.encoder_ids[i] = kMaskId;
    }
  }
  return ex;
}

/// An ordered multi-turn conversation.
struct DialogSession {
  std::vector<std::string> turns;
};

/// Splits one corpus line into turns on tab characters.
inline DialogSession parse_session_line(std::string_view line) {
  DialogSession s;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    s.turns.emplace_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return s;
}

/// For an n-turn session, produces the n-1 (context, response) pairs:
/// pair k has turns 1..k joined by [X_SEP] as encoder input and turn k+1
/// followed by [EOS] as decoder target. Records are independent; when a
/// caller packs several sessions into one stream, [SEP] separates them.
inline std::vector<std::pair<std::vector<int>, std::vector<int>>> expand_dialog(
    const DialogSession& session, const Vocabulary& vocab) {
  if (session.turns.size() < 2)
    throw ContractError("expand_dialog: session needs at least 2 turns, got " +
                        std::to_string(session.turns.size()));
  for (const auto& turn : session.turns)
    if (turn.empty()) throw ContractError("expand_dialog: empty utterance in session");

  std::vector<std::vector<int>> turn_ids;
  turn_ids.reserve(session.turns.size());
  for (const auto& turn : session.turns) turn_ids.push_back(vocab.encode(turn));

  std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
  std::vector<int> context;
  for (std::size_t k = 0; k + 1 < session.turns.size(); ++k) {
    if (k > 0) context.push_back(kXSepId);
    context.insert(context.end(), turn_ids[k].begin(), turn_ids[k].end());
    std::vector<int> target = turn_ids[k + 1];
    target.push_back(kEosId);
    pairs.emplace_back(context, std::move(target));
  }
  return pairs;
}

enum class TruncateSide {
  kLeft,   // dialog contexts: keep the most recent tokens
  kRight,  // documents: keep the beginning
};

inline std::vector<int> truncate_ids(std::vector<int> ids, std::size_t max_len,
                                     TruncateSide side) {
  if (ids.size() <= max_len) return ids;
  if (side == TruncateSide::kLeft)
    return std::vector<int>(ids.end() - static_cast<std::ptrdiff_t>(max_len), ids.end());
  ids.resize(max_len);
  return ids;
}

/// Right-padded id matrix with a boolean mask marking real tokens.
struct Batch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> ids;        // rows x cols, row-major
  std::vector<std::uint8_t> mask;  // 1 = real token, 0 = padding

  int id_at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
  bool real_at(std::size_t r, std::size_t c) const { return mask[r * cols + c] != 0; }

  /// The r-th sequence without padding.
  std::vector<int> row(std::size_t r) const {
    std::vector<int> out;
    for (std::size_t c = 0; c < cols && real_at(r, c); ++c) out.push_back(id_at(r, c));
    return out;
  }
};

inline Batch make_batch(const std::vector<std::vector<int>>& examples, std::size_t max_len,
                        int pad_id, TruncateSide side) {
  Batch b;
  b.rows = examples.size();
  std::vector<std::vector<int>> trimmed;
  trimmed.reserve(examples.size());
  for (const auto& ex : examples) {
    trimmed.push_back(truncate_ids(ex, max_len, side));
    b.cols = std::max(b.cols, trimmed.back().size());
  }
  b.ids.assign(b.rows * b.cols, pad_id);
  b.mask.assign(b.rows * b.cols, 0);
  for (std::size_t r = 0; r < b.rows; ++r) {
    for (std::size_t c = 0; c < trimmed[r].size(); ++c) {
      b.ids[r * b.cols + c] = trimmed[r][c];
      b.mask[r * b.cols + c] = 1;
    }
  }
  return b;
}

/// One processed training pair.
struct ShardRecord {
  std::vector<int> encoder_ids;
  std::vector<int> decoder_ids;
};

inline constexpr std::string_view kShardMagic = "FNGRAM01";

/// Length-prefixed binary records: per record, two LE u32 lengths followed
/// by the encoder ids then decoder ids as LE u32.
inline void write_shard(const std::string& path, const std::vector<ShardRecord>& records) {
  std::string buf;
  buf.append(kShardMagic);
  for (const auto& rec : records) {
    write_u32(buf, static_cast<std::uint32_t>(rec.encoder_ids.size()));
    write_u32(buf, static_cast<std::uint32_t>(rec.decoder_ids.size()));
    for (const int id : rec.encoder_ids) write_u32(buf, static_cast<std::uint32_t>(id));
    for (const int id : rec.decoder_ids) write_u32(buf, static_cast<std::uint32_t>(id));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("shard: cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("shard: write failed for " + path);
}

inline std::vector<ShardRecord> read_shard(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("shard: cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r(data, "shard " + path);
  if (r.bytes(kShardMagic.size(), "magic") != kShardMagic)
    throw IoError("shard " + path + ": bad magic, expected FNGRAM01");
  std::vector<ShardRecord> records;
  while (r.remaining() > 0) {
    ShardRecord rec;
    const std::uint32_t enc_len = r.u32("record header");
    const std::uint32_t dec_len = r.u32("record header");
    rec.encoder_ids.reserve(enc_len);
    rec.decoder_ids.reserve(dec_len);
    for (std::uint32_t i = 0; i < enc_len; ++i)
      rec.encoder_ids.push_back(static_cast<int>(r.u32("encoder ids")));
    for (std::uint32_t i = 0; i < dec_len; ++i)
      rec.decoder_ids.push_back(static_cast<int>(r.u32("decoder ids")));
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace fngram
