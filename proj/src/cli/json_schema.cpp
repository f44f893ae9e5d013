#include "shiftadapt/cli/json_schema.hpp"

#include <cmath>

#include "shiftadapt/util/error.hpp"

namespace shiftadapt::cli {

namespace {

using nlohmann::json;

bool has_type(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  if (t == "number") return v.is_number();
  if (t == "integer") {
    if (v.is_number_integer()) return true;
    return v.is_number_float() && std::floor(v.get<double>()) == v.get<double>();
  }
  throw Error("cli.schema", "unsupported type '" + t + "' in schema");
}

class Validator {
 public:
  explicit Validator(const json& root) : root_(root) {}

  void check(const json& v, const json& s, const std::string& path, std::vector<SchemaViolation>& out) const {
    if (s.is_boolean()) {
      if (!s.get<bool>()) out.push_back({path, "no value is allowed here"});
      return;
    }
    if (s.contains("$ref")) {
      check(v, resolve(s.at("$ref").get<std::string>()), path, out);
      return;
    }
    if (s.contains("type")) {
      const json& t = s.at("type");
      bool ok = false;
      if (t.is_string()) {
        ok = has_type(v, t.get<std::string>());
      } else {
        for (const auto& x : t) ok = ok || has_type(v, x.get<std::string>());
      }
      if (!ok) {
        out.push_back({path, "expected type " + t.dump()});
        return;
      }
    }
    if (s.contains("enum")) {
      bool found = false;
      for (const auto& e : s.at("enum")) found = found || e == v;
      if (!found) out.push_back({path, "value " + v.dump() + " is not one of " + s.at("enum").dump()});
    }
    if (s.contains("const") && s.at("const") != v) out.push_back({path, "expected " + s.at("const").dump()});
    if (v.is_number()) {
      const double x = v.get<double>();
      if (s.contains("minimum") && x < s.at("minimum").get<double>())
        out.push_back({path, "must be >= " + s.at("minimum").dump()});
      if (s.contains("maximum") && x > s.at("maximum").get<double>())
        out.push_back({path, "must be <= " + s.at("maximum").dump()});
      if (s.contains("exclusiveMinimum") && x <= s.at("exclusiveMinimum").get<double>())
        out.push_back({path, "must be > " + s.at("exclusiveMinimum").dump()});
      if (s.contains("exclusiveMaximum") && x >= s.at("exclusiveMaximum").get<double>())
        out.push_back({path, "must be < " + s.at("exclusiveMaximum").dump()});
    }
    if (v.is_string() && s.contains("minLength") && v.get<std::string>().size() < s.at("minLength").get<std::size_t>())
      out.push_back({path, "string is too short"});
    if (v.is_array()) {
      if (s.contains("minItems") && v.size() < s.at("minItems").get<std::size_t>())
        out.push_back({path, "needs at least " + s.at("minItems").dump() + " items"});
      if (s.contains("maxItems") && v.size() > s.at("maxItems").get<std::size_t>())
        out.push_back({path, "allows at most " + s.at("maxItems").dump() + " items"});
      if (s.contains("items"))
        for (std::size_t i = 0; i < v.size(); ++i) check(v[i], s.at("items"), path + "/" + std::to_string(i), out);
    }
    if (v.is_object()) {
      if (s.contains("required"))
        for (const auto& r : s.at("required"))
          if (!v.contains(r.get<std::string>())) out.push_back({path, "missing required property '" + r.get<std::string>() + "'"});
      const json* props = s.contains("properties") ? &s.at("properties") : nullptr;
      for (const auto& [key, val] : v.items()) {
        const std::string child = path + "/" + key;
        if (props && props->contains(key)) {
          check(val, props->at(key), child, out);
        } else if (s.contains("additionalProperties")) {
          const json& ap = s.at("additionalProperties");
          if (ap.is_boolean() && !ap.get<bool>())
            out.push_back({child, "unknown property"});
          else if (ap.is_object())
            check(val, ap, child, out);
        }
      }
    }
    if (s.contains("anyOf")) {
      bool any = false;
      for (const auto& alt : s.at("anyOf")) {
        std::vector<SchemaViolation> tmp;
        check(v, alt, path, tmp);
        any = any || tmp.empty();
      }
      if (!any) out.push_back({path, "matches none of the allowed forms"});
    }
    if (s.contains("oneOf")) {
      int matches = 0;
      std::vector<SchemaViolation> closest;
      for (const auto& alt : s.at("oneOf")) {
        std::vector<SchemaViolation> tmp;
        check(v, alt, path, tmp);
        if (tmp.empty()) {
          ++matches;
        } else if (closest.empty() || tmp.size() < closest.size()) {
          closest = std::move(tmp);
        }
      }
      if (matches == 0) {
        out.push_back({path, "matches none of the allowed forms"});
        out.insert(out.end(), closest.begin(), closest.end());
      } else if (matches > 1) {
        out.push_back({path, "matches more than one allowed form"});
      }
    }
  }

 private:
  const json& resolve(const std::string& ref) const {
    if (ref.rfind("#/", 0) != 0) throw Error("cli.schema", "only local references are supported: " + ref);
    return root_.at(json::json_pointer(ref.substr(1)));
  }

  const json& root_;
};

}  // namespace

std::vector<SchemaViolation> validate_json(const nlohmann::json& instance, const nlohmann::json& schema) {
  std::vector<SchemaViolation> out;
  Validator(schema).check(instance, schema, "", out);
  return out;
}

void require_valid(const nlohmann::json& instance, const nlohmann::json& schema, const std::string& what) {
  const auto violations = validate_json(instance, schema);
  if (violations.empty()) return;
  std::string msg = what + " failed validation:";
  for (const auto& v : violations) msg += "\n  " + (v.path.empty() ? std::string("/") : v.path) + ": " + v.message;
  throw Error("cli.config_invalid", msg);
}

}  // namespace shiftadapt::cli
