#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace shiftadapt::cli {

struct SchemaViolation {
  std::string path;  // JSON pointer into the instance
  std::string message;
};

/// Validates against the subset of JSON Schema used by the bundled schemas:
/// type, enum, const, properties, required, additionalProperties, items,
/// minItems, maxItems, minimum, maximum, exclusiveMinimum, exclusiveMaximum,
/// minLength, anyOf, oneOf and local "$ref" ("#/$defs/..." or
/// "#/definitions/...").
std::vector<SchemaViolation> validate_json(const nlohmann::json& instance, const nlohmann::json& schema);

/// Throws cli.config_invalid listing every violation.
void require_valid(const nlohmann::json& instance, const nlohmann::json& schema, const std::string& what);

}  // namespace shiftadapt::cli
