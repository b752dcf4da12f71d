#ifndef ALPROBE_TEXT_HPP
#define ALPROBE_TEXT_HPP

#include <string>
#include <string_view>
#include <vector>

namespace alprobe {

// Lowercase, split on any non-alphanumeric run, drop empty tokens.
std::vector<std::string> tokenize(std::string_view text);

std::string to_lower(std::string_view text);

}  // namespace alprobe

#endif  // ALPROBE_TEXT_HPP
