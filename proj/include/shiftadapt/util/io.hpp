#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace shiftadapt {

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

}  // namespace shiftadapt
