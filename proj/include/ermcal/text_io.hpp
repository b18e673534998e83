#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ermcal {

// 17 significant digits: enough for a bit-exact double round trip.
std::string format_double(double v);

double parse_double(std::string_view s);
long long parse_int(std::string_view s);

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace ermcal
