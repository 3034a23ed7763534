#pragma once

// Text helpers for checkpoint metadata values.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace invlens {

// "512,256"; empty list gives "".
std::string join_sizes(const std::vector<std::size_t>& v);
std::vector<std::size_t> parse_sizes(std::string_view s);

}  // namespace invlens
