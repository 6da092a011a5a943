#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "smart/text.hpp"

namespace smart {

/// n-gram (words joined by a unit separator) → count.
using NGramCounts = std::unordered_map<std::string, std::size_t>;

NGramCounts count_ngrams(const Words& words, std::size_t n);

/// Sentence BLEU-n: geometric mean of clipped 1..n-gram precisions times the
/// brevity penalty against the closest reference length. No smoothing.
double bleu(const Words& candidate, std::span<const Words> references, std::size_t n);

/// Corpus BLEU-n: clipped counts and lengths pooled over all pairs.
double corpus_bleu(std::span<const Words> candidates,
                   std::span<const std::vector<Words>> references, std::size_t n);

std::size_t lcs_length(const Words& a, const Words& b);

/// LCS F-measure with recall weight beta, best over references.
double rouge_l(const Words& candidate, std::span<const Words> references, double beta = 1.2);

/// Number of reference sets containing each 1..4-gram.
class DocumentFrequencies {
 public:
  DocumentFrequencies() = default;

  static DocumentFrequencies build(std::span<const std::vector<Words>> reference_sets);

  std::size_t total_docs() const { return total_docs_; }
  bool empty() const { return total_docs_ == 0; }
  /// 0 for unseen n-grams.
  std::size_t df(const std::string& ngram) const;

 private:
  std::size_t total_docs_ = 0;
  std::unordered_map<std::string, std::size_t> df_;
};

struct CiderOptions {
  std::size_t max_n = 4;
  double sigma = 6.0;
};

/// CIDEr-D: per order n, clipped TF-IDF cosine averaged over references with
/// a Gaussian length penalty; 10 × mean over n. Range [0, 10].
double cider_d(const Words& candidate, std::span<const Words> references,
               const DocumentFrequencies& df, const CiderOptions& options = {});

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col)
  double total = 0.0;
};

/// Maximum-profit one-to-one assignment on an m×n profit matrix (row-major).
/// The matrix is padded to square with zero-profit dummies; pairs involving
/// dummies are dropped.
Assignment hungarian(std::span<const double> profit, std::size_t rows, std::size_t cols);

}  // namespace smart
