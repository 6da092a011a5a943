#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace smart {

using Words = std::vector<std::string>;

/// Lowercases, replaces punctuation with spaces and splits on whitespace.
Words tokenize(std::string_view text);

std::string join_words(const Words& words);

}  // namespace smart
