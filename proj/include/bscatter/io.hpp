#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace bscatter {

/// Shortest decimal string that reads back to exactly the same double.
std::string format_double(double v);

/// Writes content to path via a temporary sibling file and a rename.
void write_file_atomic(const std::string& path, std::string_view content);
std::string read_file(const std::string& path);

/// Minimal CSV helpers: fields never contain separators in this tool's outputs.
std::vector<std::string> split_csv_line(std::string_view line);
double parse_double(std::string_view s);
long parse_int(std::string_view s);

/// FNV-1a 64-bit hash rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view data);

}  // namespace bscatter
