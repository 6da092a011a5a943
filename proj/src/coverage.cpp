#include "smart/coverage.hpp"

#include <algorithm>

#include "smart/metrics.hpp"

namespace smart {

std::vector<std::string> extract_nouns(std::string_view caption,
                                       const std::unordered_set<std::string>& lexicon) {
  std::vector<std::string> nouns;
  for (auto& w : tokenize(caption)) {
    if (lexicon.count(w) && std::find(nouns.begin(), nouns.end(), w) == nouns.end()) {
      nouns.push_back(std::move(w));
    }
  }
  return nouns;
}

double word_profit(std::string_view a, std::string_view b, const WordVectorTable& vectors) {
  if (a == b) return 1.0;
  const auto* va = vectors.find(a);
  const auto* vb = vectors.find(b);
  if (!va || !vb) return 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < va->size(); ++i) dot += (*va)[i] * (*vb)[i];
  return std::clamp(dot, 0.0, 1.0);
}

CoverageResult coverage(std::string_view caption, std::span<const ObjectAnnotation> objects,
                        const WordVectorTable& vectors,
                        const std::unordered_set<std::string>& lexicon, double area_threshold) {
  CoverageResult r;
  for (const auto& o : objects) {
    if (o.area_frac > area_threshold &&
        std::find(r.classes.begin(), r.classes.end(), o.cls) == r.classes.end()) {
      r.classes.push_back(o.cls);
    }
  }
  r.nouns = extract_nouns(caption, lexicon);
  r.num_classes = r.classes.size();
  if (r.classes.empty()) {
    r.vacuous = true;
    r.value = 1.0;
    return r;
  }
  if (!r.nouns.empty()) {
    std::vector<double> profit(r.nouns.size() * r.classes.size());
    for (std::size_t i = 0; i < r.nouns.size(); ++i)
      for (std::size_t j = 0; j < r.classes.size(); ++j)
        profit[i * r.classes.size() + j] = word_profit(r.nouns[i], r.classes[j], vectors);
    r.intersection = hungarian(profit, r.nouns.size(), r.classes.size()).total;
  }
  r.value = r.intersection / static_cast<double>(r.num_classes);
  return r;
}

}  // namespace smart
