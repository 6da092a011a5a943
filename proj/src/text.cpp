#include "smart/text.hpp"

#include <cctype>

namespace smart {

Words tokenize(std::string_view text) {
  Words out;
  std::string current;
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c) || std::ispunct(c)) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::string join_words(const Words& words) {
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s.push_back(' ');
    s += w;
  }
  return s;
}

}  // namespace smart
