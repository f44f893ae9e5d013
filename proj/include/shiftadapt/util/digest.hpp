#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace shiftadapt {

std::string sha256_hex(std::string_view bytes);

/// Order-independent digest of a set of row identifiers.
std::string digest_row_ids(std::span<const std::string> row_ids);

}  // namespace shiftadapt
