#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "fngram/util.hpp"

namespace fngram {

/// A metric score in [0,1]; `warning` flags degenerate inputs (empty
/// reference, no n-grams) where the value is 0 by definition.
struct MetricValue {
  double value = 0.0;
  bool warning = false;
};

namespace detail {

template <typename Tok>
std::map<std::vector<Tok>, std::size_t> ngram_counts(const std::vector<Tok>& tokens, int n) {
  std::map<std::vector<Tok>, std::size_t> counts;
  if (n < 1 || tokens.size() < static_cast<std::size_t>(n)) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i)
    ++counts[std::vector<Tok>(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

/// Clipped multiset intersection size and candidate total for one order.
template <typename Tok>
std::pair<std::size_t, std::size_t> clipped_matches(const std::vector<Tok>& cand,
                                                    const std::vector<Tok>& ref, int n) {
  const auto cc = ngram_counts(cand, n);
  const auto rc = ngram_counts(ref, n);
  std::size_t matched = 0, total = 0;
  for (const auto& [gram, count] : cc) {
    total += count;
    const auto it = rc.find(gram);
    if (it != rc.end()) matched += std::min(count, it->second);
  }
  return {matched, total};
}

inline double f1(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

}  // namespace detail

/// N-gram overlap F1 between a candidate and a single reference.
template <typename Tok>
MetricValue rouge_n(const std::vector<Tok>& candidate, const std::vector<Tok>& reference,
                    int n) {
  if (n < 1) throw ContractError("rouge_n: n must be >= 1");
  if (reference.empty()) return {0.0, true};
  const auto [matched, cand_total] = detail::clipped_matches(candidate, reference, n);
  const std::size_t ref_total =
      reference.size() >= static_cast<std::size_t>(n) ? reference.size() - n + 1 : 0;
  if (cand_total == 0 || ref_total == 0) return {0.0, false};
  const double p = static_cast<double>(matched) / static_cast<double>(cand_total);
  const double r = static_cast<double>(matched) / static_cast<double>(ref_total);
  return {detail::f1(p, r), false};
}

/// Longest-common-subsequence F1 between a candidate and a single reference.
template <typename Tok>
MetricValue rouge_l(const std::vector<Tok>& candidate, const std::vector<Tok>& reference) {
  if (reference.empty()) return {0.0, true};
  if (candidate.empty()) return {0.0, false};
  const std::size_t m = candidate.size(), n = reference.size();
  // One-row DP over the reference.
  std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1
                                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[n]);
  return {detail::f1(lcs / static_cast<double>(m), lcs / static_cast<double>(n)), false};
}

/// Corpus BLEU with clipped precisions up to max_n and brevity penalty.
/// Unsmoothed: corpus-level pooled counts; any empty precision zeroes the
/// score. Smoothed: add-one on each precision's numerator and denominator,
/// computed per sentence and averaged over the corpus.
template <typename Tok>
MetricValue bleu(const std::vector<std::vector<Tok>>& candidates,
                 const std::vector<std::vector<Tok>>& references, int max_n, bool smoothed) {
  if (max_n < 1) throw ContractError("bleu: max_n must be >= 1");
  if (candidates.size() != references.size())
    throw ContractError("bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                        std::to_string(references.size()) + " references");
  if (candidates.empty()) return {0.0, true};

  if (smoothed) {
    double total = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto& cand = candidates[i];
      const auto& ref = references[i];
      if (cand.empty()) continue;  // contributes a zero sentence score
      double log_prec = 0.0;
      for (int n = 1; n <= max_n; ++n) {
        const auto [matched, tot] = detail::clipped_matches(cand, ref, n);
        log_prec += std::log((static_cast<double>(matched) + 1.0) /
                             (static_cast<double>(tot) + 1.0));
      }
      const double c = static_cast<double>(cand.size());
      const double r = static_cast<double>(ref.size());
      const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
      total += bp * std::exp(log_prec / static_cast<double>(max_n));
    }
    return {total / static_cast<double>(candidates.size()), false};
  }

  std::vector<std::size_t> matched(static_cast<std::size_t>(max_n), 0);
  std::vector<std::size_t> total(static_cast<std::size_t>(max_n), 0);
  std::size_t cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_len += candidates[i].size();
    ref_len += references[i].size();
    for (int n = 1; n <= max_n; ++n) {
      const auto [m, t] = detail::clipped_matches(candidates[i], references[i], n);
      matched[static_cast<std::size_t>(n - 1)] += m;
      total[static_cast<std::size_t>(n - 1)] += t;
    }
  }
  if (cand_len == 0) return {0.0, true};
  double log_prec = 0.0;
  for (int n = 0; n < max_n; ++n) {
    if (matched[static_cast<std::size_t>(n)] == 0) return {0.0, false};
    log_prec += std::log(static_cast<double>(matched[static_cast<std::size_t>(n)]) /
                         static_cast<double>(total[static_cast<std::size_t>(n)]));
  }
  const double bp = cand_len < ref_len
                        ? std::exp(1.0 - static_cast<double>(ref_len) /
                                             static_cast<double>(cand_len))
                        : 1.0;
  return {bp * std::exp(log_prec / static_cast<double>(max_n)), false};
}

/// Unique n-grams across all candidates over total n-gram count.
template <typename Tok>
MetricValue distinct_n(const std::vector<std::vector<Tok>>& candidates, int n) {
  if (n < 1) throw ContractError("distinct_n: n must be >= 1");
  std::set<std::vector<Tok>> unique;
  std::size_t total = 0;
  for (const auto& cand : candidates) {
    for (const auto& [gram, count] : detail::ngram_counts(cand, n)) {
      unique.insert(gram);
      total += count;
    }
  }
  if (total == 0) return {0.0, true};
  return {static_cast<double>(unique.size()) / static_cast<double>(total), false};
}

/// Tab-separated "metric<TAB>value" lines, six decimal places.
inline void write_score_report(std::ostream& out,
                               const std::vector<std::pair<std::string, double>>& rows) {
  for (const auto& [name, value] : rows) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", value);
    out << name << '\t' << buf << '\n';
  }
}

}  // namespace fngram
