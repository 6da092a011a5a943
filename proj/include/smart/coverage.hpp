#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "smart/data.hpp"
#include "smart/text.hpp"

namespace smart {

/// Nouns of `caption` that appear in `lexicon`, in order of first
/// occurrence, without repeats.
std::vector<std::string> extract_nouns(std::string_view caption,
                                       const std::unordered_set<std::string>& lexicon);

struct CoverageResult {
  double value = 1.0;
  bool vacuous = false;  // no class above the threshold; excluded from averages
  std::size_t num_classes = 0;
  double intersection = 0.0;
  std::vector<std::string> nouns;
  std::vector<std::string> classes;
};

/// max(0, cosine) between two words; identical words score exactly 1 and
/// words without vectors score 0.
double word_profit(std::string_view a, std::string_view b, const WordVectorTable& vectors);

/// Optimal noun-to-class assignment profit divided by the number of distinct
/// ground-truth classes whose area fraction exceeds `area_threshold`.
CoverageResult coverage(std::string_view caption, std::span<const ObjectAnnotation> objects,
                        const WordVectorTable& vectors,
                        const std::unordered_set<std::string>& lexicon, double area_threshold);

}  // namespace smart
