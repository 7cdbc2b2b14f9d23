#include "trajpred/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "trajpred/error.hpp"

namespace trajpred {

namespace {

// Exhaustive search over per-token subset choices is bounded by this many
// complete alignments; beyond it a coordinate-wise local search is used.
constexpr std::size_t kExhaustiveLimit = 20000;

using Mapping = std::vector<std::pair<std::size_t, std::size_t>>;

std::map<std::vector<CellId>, std::size_t> ngram_counts(TokenSpan s, int n) {
  std::map<std::vector<CellId>, std::size_t> counts;
  const auto len = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + len <= s.size(); ++i) ++counts[std::vector<CellId>(s.begin() + i, s.begin() + i + len)];
  return counts;
}

// One token type with an ambiguous match: choose `k` of the `options`
// positions on the longer side.
struct Choice {
  std::vector<std::size_t> fixed;    // positions on the shorter side
  std::vector<std::size_t> options;  // positions on the longer side
  bool cand_is_longer = false;
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> subsets;  // lazily enumerated
};

void enumerate_subsets(std::size_t n, std::size_t k, std::vector<std::vector<std::size_t>>& out) {
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  while (true) {
    out.push_back(idx);
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + (i - 1)) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

std::size_t binomial_capped(std::size_t n, std::size_t k, std::size_t cap) {
  k = std::min(k, n - k);
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) {
    r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    if (r > static_cast<double>(cap)) return cap + 1;
  }
  return static_cast<std::size_t>(std::llround(r));
}

void append_choice(const Choice& ch, const std::vector<std::size_t>& subset, Mapping& out) {
  for (std::size_t i = 0; i < ch.k; ++i) {
    const std::size_t chosen = ch.options[subset[i]];
    if (ch.cand_is_longer) {
      out.emplace_back(chosen, ch.fixed[i]);
    } else {
      out.emplace_back(ch.fixed[i], chosen);
    }
  }
}

struct Candidate {
  Mapping mapping;
  std::size_t crossings = 0;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.crossings != b.crossings) return a.crossings < b.crossings;
  return a.mapping < b.mapping;
}

Candidate build(const Mapping& base, const std::vector<Choice>& choices, const std::vector<std::size_t>& pick) {
  Candidate c;
  c.mapping = base;
  for (std::size_t t = 0; t < choices.size(); ++t) append_choice(choices[t], choices[t].subsets[pick[t]], c.mapping);
  std::sort(c.mapping.begin(), c.mapping.end());
  c.crossings = count_crossings(c.mapping);
  return c;
}

}  // namespace

std::vector<CellId> strip_virtual(TokenSpan tokens) {
  std::vector<CellId> out;
  out.reserve(tokens.size());
  for (CellId t : tokens) {
    if (t != kStartToken && t != kEndToken) out.push_back(t);
  }
  return out;
}

double modified_precision(TokenSpan cand, TokenSpan ref, int n) {
  if (n < 1) throw Error("n-gram order must be at least 1");
  if (cand.size() < static_cast<std::size_t>(n)) return 0.0;
  const auto cand_counts = ngram_counts(cand, n);
  const auto ref_counts = ngram_counts(ref, n);
  std::size_t clipped = 0;
  for (const auto& [gram, count] : cand_counts) {
    const auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) clipped += std::min(count, it->second);
  }
  const std::size_t total = cand.size() - static_cast<std::size_t>(n) + 1;
  return static_cast<double>(clipped) / static_cast<double>(total);
}

double bleu_n(TokenSpan cand, TokenSpan ref, int n) {
  if (n < 1 || n > 4) throw Error("bleu order must be in 1..4");
  if (cand.empty() || ref.empty()) return 0.0;
  double product = 1.0;
  for (int i = 1; i <= n; ++i) {
    const double p = modified_precision(cand, ref, i);
    if (p == 0.0) return 0.0;
    product *= p;
  }
  const double brevity = std::min(1.0, static_cast<double>(cand.size()) / static_cast<double>(ref.size()));
  return brevity * std::pow(product, 1.0 / n);
}

std::size_t count_crossings(std::span<const std::pair<std::size_t, std::size_t>> m) {
  std::size_t n = 0;
  for (std::size_t a = 0; a < m.size(); ++a) {
    for (std::size_t b = a + 1; b < m.size(); ++b) {
      const bool cand_less = m[a].first < m[b].first;
      const bool ref_less = m[a].second < m[b].second;
      if (m[a].first != m[b].first && m[a].second != m[b].second && cand_less != ref_less) ++n;
    }
  }
  return n;
}

std::size_t count_chunks(std::span<const std::pair<std::size_t, std::size_t>> m) {
  if (m.empty()) return 0;
  std::size_t chunks = 1;
  for (std::size_t k = 1; k < m.size(); ++k) {
    const auto [ci, rj] = m[k - 1];
    const auto [cn, rn] = m[k];
    const bool adjacent_cand = cn == ci + 1;
    const bool adjacent_ref = rn == rj + 1 || rj == rn + 1;
    if (!(adjacent_cand && adjacent_ref)) ++chunks;
  }
  return chunks;
}

Alignment meteor_align(TokenSpan cand, TokenSpan ref) {
  std::map<CellId, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> positions;
  for (std::size_t i = 0; i < cand.size(); ++i) positions[cand[i]].first.push_back(i);
  for (std::size_t j = 0; j < ref.size(); ++j) positions[ref[j]].second.push_back(j);

  // Within one token type the matched positions are paired in order; any
  // crossing pair of equal tokens can be uncrossed without adding crossings.
  Mapping base;
  std::vector<Choice> choices;
  for (auto& [token, pr] : positions) {
    auto& [cp, rp] = pr;
    const std::size_t k = std::min(cp.size(), rp.size());
    if (k == 0) continue;
    if (cp.size() == rp.size()) {
      for (std::size_t i = 0; i < k; ++i) base.emplace_back(cp[i], rp[i]);
      continue;
    }
    Choice ch;
    ch.cand_is_longer = cp.size() > rp.size();
    ch.fixed = ch.cand_is_longer ? rp : cp;
    ch.options = ch.cand_is_longer ? cp : rp;
    ch.k = k;
    choices.push_back(std::move(ch));
  }

  std::size_t space = 1;
  for (const auto& ch : choices) {
    space *= binomial_capped(ch.options.size(), ch.k, kExhaustiveLimit);
    if (space > kExhaustiveLimit) break;
  }

  Alignment out;
  Candidate best;
  bool have_best = false;
  if (space <= kExhaustiveLimit) {
    for (auto& ch : choices) enumerate_subsets(ch.options.size(), ch.k, ch.subsets);
    std::vector<std::size_t> pick(choices.size(), 0);
    while (true) {
      Candidate c = build(base, choices, pick);
      if (!have_best || better(c, best)) {
        best = std::move(c);
        have_best = true;
      }
      std::size_t t = 0;
      while (t < choices.size() && ++pick[t] == choices[t].subsets.size()) pick[t++] = 0;
      if (t == choices.size()) break;
    }
  } else {
    // Coordinate descent: re-optimize one token type at a time. Token types
    // whose own subset count is too large only consider contiguous windows.
    out.exact = false;
    for (auto& ch : choices) {
      if (binomial_capped(ch.options.size(), ch.k, kExhaustiveLimit) <= kExhaustiveLimit) {
        enumerate_subsets(ch.options.size(), ch.k, ch.subsets);
      } else {
        for (std::size_t s = 0; s + ch.k <= ch.options.size(); ++s) {
          std::vector<std::size_t> window(ch.k);
          for (std::size_t i = 0; i < ch.k; ++i) window[i] = s + i;
          ch.subsets.push_back(std::move(window));
        }
      }
    }
    std::vector<std::size_t> pick(choices.size(), 0);
    best = build(base, choices, pick);
    bool improved = true;
    while (improved) {
      improved = false;
      for (std::size_t t = 0; t < choices.size(); ++t) {
        for (std::size_t s = 0; s < choices[t].subsets.size(); ++s) {
          if (s == pick[t]) continue;
          auto trial = pick;
          trial[t] = s;
          Candidate c = build(base, choices, trial);
          if (better(c, best)) {
            best = std::move(c);
            pick = std::move(trial);
            improved = true;
          }
        }
      }
    }
  }
  out.mappings = std::move(best.mapping);
  out.crossings = best.crossings;
  out.chunks = count_chunks(out.mappings);
  return out;
}

MeteorParts meteor_parts(TokenSpan cand, TokenSpan ref) {
  MeteorParts parts;
  if (cand.empty() || ref.empty()) return parts;
  const Alignment a = meteor_align(cand, ref);
  parts.matched = a.mappings.size();
  parts.chunks = a.chunks;
  if (parts.matched == 0) return parts;
  const double u = static_cast<double>(parts.matched);
  parts.precision = u / static_cast<double>(cand.size());
  parts.recall = u / static_cast<double>(ref.size());
  parts.f_mean = 10.0 * parts.precision * parts.recall / (parts.recall + 9.0 * parts.precision);
  parts.penalty = 0.5 * std::pow(static_cast<double>(parts.chunks) / u, 3.0);
  parts.score = parts.f_mean * (1.0 - parts.penalty);
  return parts;
}

double meteor(TokenSpan cand, TokenSpan ref) { return meteor_parts(cand, ref).score; }

ScoreVector score_sequence(TokenSpan cand, TokenSpan ref) {
  ScoreVector s;
  for (int n = 1; n <= 4; ++n) s.bleu[static_cast<std::size_t>(n - 1)] = bleu_n(cand, ref, n);
  s.meteor = meteor(cand, ref);
  return s;
}

}  // namespace trajpred
