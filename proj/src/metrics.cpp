#include "smart/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "smart/errors.hpp"

namespace smart {

namespace {

constexpr char kSep = '\x1f';

std::string ngram_key(const Words& words, std::size_t start, std::size_t n) {
  std::string key = words[start];
  for (std::size_t i = 1; i < n; ++i) {
    key.push_back(kSep);
    key += words[start + i];
  }
  return key;
}

void require_references(std::span<const Words> references, const char* metric) {
  if (references.empty()) throw InputError(std::string(metric) + ": at least one reference is required");
}

struct BleuCounts {
  std::vector<double> clipped;
  std::vector<double> total;
  double cand_len = 0.0;
  double ref_len = 0.0;
};

void accumulate_bleu(const Words& candidate, std::span<const Words> references, std::size_t n,
                     BleuCounts& acc) {
  acc.clipped.resize(n, 0.0);
  acc.total.resize(n, 0.0);
  for (std::size_t k = 1; k <= n; ++k) {
    const auto cand = count_ngrams(candidate, k);
    NGramCounts max_ref;
    for (const auto& ref : references) {
      for (const auto& [g, c] : count_ngrams(ref, k)) max_ref[g] = std::max(max_ref[g], c);
    }
    for (const auto& [g, c] : cand) {
      auto it = max_ref.find(g);
      acc.clipped[k - 1] += static_cast<double>(std::min(c, it == max_ref.end() ? 0 : it->second));
      acc.total[k - 1] += static_cast<double>(c);
    }
  }
  const auto c = candidate.size();
  std::size_t best = references[0].size();
  for (const auto& ref : references) {
    const auto diff = [c](std::size_t r) { return r > c ? r - c : c - r; };
    if (diff(ref.size()) < diff(best) || (diff(ref.size()) == diff(best) && ref.size() < best)) {
      best = ref.size();
    }
  }
  acc.cand_len += static_cast<double>(c);
  acc.ref_len += static_cast<double>(best);
}

double finish_bleu(const BleuCounts& acc, std::size_t n) {
  if (acc.cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (acc.total[k] == 0.0 || acc.clipped[k] == 0.0) return 0.0;
    log_sum += std::log(acc.clipped[k] / acc.total[k]);
  }
  const double bp =
      acc.cand_len > acc.ref_len ? 1.0 : std::exp(1.0 - acc.ref_len / acc.cand_len);
  return bp * std::exp(log_sum / static_cast<double>(n));
}

}  // namespace

NGramCounts count_ngrams(const Words& words, std::size_t n) {
  NGramCounts counts;
  if (n == 0 || words.size() < n) return counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) ++counts[ngram_key(words, i, n)];
  return counts;
}

double bleu(const Words& candidate, std::span<const Words> references, std::size_t n) {
  require_references(references, "bleu");
  if (n == 0) throw UsageError("bleu: order must be positive");
  if (candidate.empty()) return 0.0;
  BleuCounts acc;
  accumulate_bleu(candidate, references, n, acc);
  return finish_bleu(acc, n);
}

double corpus_bleu(std::span<const Words> candidates,
                   std::span<const std::vector<Words>> references, std::size_t n) {
  if (candidates.size() != references.size()) {
    throw UsageError("corpus_bleu: candidate and reference counts differ");
  }
  if (n == 0) throw UsageError("bleu: order must be positive");
  BleuCounts acc;
  acc.clipped.assign(n, 0.0);
  acc.total.assign(n, 0.0);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    require_references(references[i], "corpus_bleu");
    accumulate_bleu(candidates[i], references[i], n, acc);
  }
  return finish_bleu(acc, n);
}

std::size_t lcs_length(const Words& a, const Words& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Words& candidate, std::span<const Words> references, double beta) {
  require_references(references, "rouge_l");
  if (candidate.empty()) return 0.0;
  double best = 0.0;
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(candidate, ref));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(candidate.size());
    const double r = lcs / static_cast<double>(ref.size());
    const double b2 = beta * beta;
    best = std::max(best, (1.0 + b2) * p * r / (r + b2 * p));
  }
  return best;
}

DocumentFrequencies DocumentFrequencies::build(std::span<const std::vector<Words>> reference_sets) {
  DocumentFrequencies out;
  out.total_docs_ = reference_sets.size();
  for (const auto& refs : reference_sets) {
    std::unordered_set<std::string> seen;
    for (const auto& ref : refs)
      for (std::size_t n = 1; n <= 4; ++n)
        for (const auto& [g, c] : count_ngrams(ref, n)) seen.insert(g);
    for (const auto& g : seen) ++out.df_[g];
  }
  return out;
}

std::size_t DocumentFrequencies::df(const std::string& ngram) const {
  auto it = df_.find(ngram);
  return it == df_.end() ? 0 : it->second;
}

namespace {

struct TfIdf {
  std::vector<std::unordered_map<std::string, double>> vec;
  std::vector<double> norm;
  std::size_t length = 0;
};

TfIdf tfidf(const Words& words, const DocumentFrequencies& df, std::size_t max_n) {
  TfIdf out;
  out.vec.resize(max_n);
  out.norm.assign(max_n, 0.0);
  out.length = words.size();
  const double log_docs = std::log(static_cast<double>(df.total_docs()));
  for (std::size_t n = 1; n <= max_n; ++n) {
    for (const auto& [g, count] : count_ngrams(words, n)) {
      const double idf =
          log_docs - std::log(std::max(1.0, static_cast<double>(df.df(g))));
      const double w = static_cast<double>(count) * idf;
      out.vec[n - 1][g] = w;
      out.norm[n - 1] += w * w;
    }
    out.norm[n - 1] = std::sqrt(out.norm[n - 1]);
  }
  return out;
}

}  // namespace

double cider_d(const Words& candidate, std::span<const Words> references,
               const DocumentFrequencies& df, const CiderOptions& options) {
  if (df.empty()) throw UsageError("cider_d: document frequencies are empty");
  require_references(references, "cider_d");
  const auto cand = tfidf(candidate, df, options.max_n);
  double total = 0.0;
  for (const auto& ref_words : references) {
    const auto ref = tfidf(ref_words, df, options.max_n);
    const double delta = static_cast<double>(cand.length) - static_cast<double>(ref.length);
    const double penalty = std::exp(-(delta * delta) / (2.0 * options.sigma * options.sigma));
    double score = 0.0;
    for (std::size_t n = 0; n < options.max_n; ++n) {
      if (cand.norm[n] == 0.0 || ref.norm[n] == 0.0) continue;
      double dot = 0.0;
      for (const auto& [g, w] : cand.vec[n]) {
        auto it = ref.vec[n].find(g);
        if (it != ref.vec[n].end()) dot += std::min(w, it->second) * it->second;
      }
      score += dot / (cand.norm[n] * ref.norm[n]) * penalty;
    }
    total += score;
  }
  return 10.0 * total / static_cast<double>(references.size()) / static_cast<double>(options.max_n);
}

Assignment hungarian(std::span<const double> profit, std::size_t rows, std::size_t cols) {
  if (profit.size() != rows * cols) throw ShapeError("hungarian: matrix size does not match dims");
  Assignment result;
  const std::size_t n = std::max(rows, cols);
  if (n == 0) return result;
  auto cost = [&](std::size_t i, std::size_t j) {  // 1-based
    return (i <= rows && j <= cols) ? -profit[(i - 1) * cols + (j - 1)] : 0.0;
  };
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i >= 1 && i <= rows && j <= cols) {
      result.pairs.emplace_back(i - 1, j - 1);
      result.total += profit[(i - 1) * cols + (j - 1)];
    }
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  return result;
}

}  // namespace smart
