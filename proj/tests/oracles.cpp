#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace oracle {

namespace {

bool ngram_equal(const Tokens& a, std::size_t i, const Tokens& b, std::size_t j, int n) {
  for (int k = 0; k < n; ++k) {
    if (a[i + k] != b[j + k]) return false;
  }
  return true;
}

std::size_t occurrences(const Tokens& hay, const Tokens& needle, std::size_t at, int n) {
  std::size_t c = 0;
  for (std::size_t j = 0; j + n <= hay.size(); ++j) {
    if (ngram_equal(hay, j, needle, at, n)) ++c;
  }
  return c;
}

std::size_t crossings(const Pairs& p) {
  std::size_t c = 0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    for (std::size_t b = a + 1; b < p.size(); ++b) {
      const long di = static_cast<long>(p[a].first) - static_cast<long>(p[b].first);
      const long dj = static_cast<long>(p[a].second) - static_cast<long>(p[b].second);
      if (di * dj < 0) ++c;
    }
  }
  return c;
}

std::size_t chunks(Pairs p) {
  if (p.empty()) return 0;
  std::sort(p.begin(), p.end());
  std::size_t c = 1;
  for (std::size_t k = 1; k < p.size(); ++k) {
    const bool next_cand = p[k].first == p[k - 1].first + 1;
    const long step = static_cast<long>(p[k].second) - static_cast<long>(p[k - 1].second);
    if (!(next_cand && std::labs(step) == 1)) ++c;
  }
  return c;
}

struct Search {
  const Tokens& cand;
  const Tokens& ref;
  std::vector<bool> used;
  Pairs current;
  Pairs best;
  std::size_t best_cross = 0;
  bool have = false;

  void visit(std::size_t i) {
    if (i == cand.size()) {
      const std::size_t cr = crossings(current);
      if (!have || current.size() > best.size() ||
          (current.size() == best.size() && (cr < best_cross || (cr == best_cross && current < best)))) {
        best = current;
        best_cross = cr;
        have = true;
      }
      return;
    }
    visit(i + 1);
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (used[j] || ref[j] != cand[i]) continue;
      used[j] = true;
      current.emplace_back(i, j);
      visit(i + 1);
      current.pop_back();
      used[j] = false;
    }
  }
};

}  // namespace

double modified_precision(const Tokens& cand, const Tokens& ref, int n) {
  if (static_cast<int>(cand.size()) < n) return 0.0;
  const std::size_t total = cand.size() - n + 1;
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < total; ++i) {
    bool seen = false;
    for (std::size_t k = 0; k < i && !seen; ++k) seen = ngram_equal(cand, k, cand, i, n);
    if (seen) continue;
    clipped += std::min(occurrences(cand, cand, i, n), occurrences(ref, cand, i, n));
  }
  return static_cast<double>(clipped) / static_cast<double>(total);
}

double bleu(const Tokens& cand, const Tokens& ref, int n) {
  if (cand.empty() || ref.empty()) return 0.0;
  double product = 1.0;
  for (int k = 1; k <= n; ++k) product *= modified_precision(cand, ref, k);
  if (product == 0.0) return 0.0;
  const double bp = std::min(1.0, static_cast<double>(cand.size()) / static_cast<double>(ref.size()));
  return bp * std::pow(product, 1.0 / n);
}

Alignment meteor_align(const Tokens& cand, const Tokens& ref) {
  Search s{cand, ref, std::vector<bool>(ref.size(), false), {}, {}, 0, false};
  s.visit(0);
  return {s.best, s.best_cross, chunks(s.best)};
}

double meteor(const Tokens& cand, const Tokens& ref) {
  const Alignment a = meteor_align(cand, ref);
  const double u = static_cast<double>(a.mappings.size());
  if (u == 0.0) return 0.0;
  const double p = u / static_cast<double>(cand.size());
  const double r = u / static_cast<double>(ref.size());
  const double f = 10.0 * p * r / (r + 9.0 * p);
  const double pen = 0.5 * std::pow(static_cast<double>(a.chunks) / u, 3.0);
  return f * (1.0 - pen);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of nothing");
  // Insertion sort keeps this independent of std::sort.
  for (std::size_t i = 1; i < values.size(); ++i) {
    for (std::size_t j = i; j > 0 && values[j - 1] > values[j]; --j) std::swap(values[j - 1], values[j]);
  }
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<double> solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    }
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

}  // namespace oracle
