#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace orca::csv {

// Shortest representation that parses back to the same double.
std::string format_double(double v);

double parse_double(std::string_view s);
long long parse_int(std::string_view s);

std::vector<std::string_view> split(std::string_view line, char sep = ',');

// Splits text into lines, dropping a trailing '\r' and a final empty line.
std::vector<std::string_view> lines(std::string_view text);

}  // namespace orca::csv
