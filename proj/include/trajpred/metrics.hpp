#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "trajpred/cellspace.hpp"

namespace trajpred {

using TokenSpan = std::span<const CellId>;

// Drops #start/#end; only real cells are scored.
std::vector<CellId> strip_virtual(TokenSpan tokens);

/// Clipped n-gram precision of `cand` against `ref`. Zero when `cand` has
/// fewer than n tokens.
double modified_precision(TokenSpan cand, TokenSpan ref, int n);

/// min(1, |cand|/|ref|) * geometric mean of P_1..P_n, unsmoothed.
double bleu_n(TokenSpan cand, TokenSpan ref, int n);

struct Alignment {
  // (candidate index, reference index), ascending by candidate index.
  std::vector<std::pair<std::size_t, std::size_t>> mappings;
  std::size_t crossings = 0;
  std::size_t chunks = 0;
  // False when the choice space exceeded the exhaustive-search limit and a
  // local search was used instead.
  bool exact = true;
};

// Pairs (i, j), (k, l) cross when (i - k) * (j - l) < 0.
std::size_t count_crossings(std::span<const std::pair<std::size_t, std::size_t>> mappings);

/// Maximal runs of mappings that are consecutive in the candidate and whose
/// reference positions step by exactly one (forward or reversed).
std::size_t count_chunks(std::span<const std::pair<std::size_t, std::size_t>> mappings);

/// Maximum-cardinality equal-token alignment with the fewest crossings;
/// ties go to the lexicographically smallest mapping list.
Alignment meteor_align(TokenSpan cand, TokenSpan ref);

struct MeteorParts {
  double precision = 0.0;
  double recall = 0.0;
  double f_mean = 0.0;
  double penalty = 0.0;
  double score = 0.0;
  std::size_t matched = 0;
  std::size_t chunks = 0;
};

MeteorParts meteor_parts(TokenSpan cand, TokenSpan ref);
double meteor(TokenSpan cand, TokenSpan ref);

struct ScoreVector {
  std::array<double, 4> bleu{};  // BLEU_1..BLEU_4
  double meteor = 0.0;

  double get(std::size_t k) const { return k < 4 ? bleu[k] : meteor; }
  double& get(std::size_t k) { return k < 4 ? bleu[k] : meteor; }
};

inline constexpr std::size_t kScoreCount = 5;
inline constexpr std::array<const char*, kScoreCount> kScoreNames = {"bleu1", "bleu2", "bleu3", "bleu4",
                                                                       "meteor"};

// All five scores of one candidate against one reference (virtual tokens
// already removed).
ScoreVector score_sequence(TokenSpan cand, TokenSpan ref);

}  // namespace trajpred
