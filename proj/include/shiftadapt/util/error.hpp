#pragma once

#include <stdexcept>
#include <string>

namespace shiftadapt {

/// Base error for every module. `code()` is module-qualified, e.g.
/// "data.missing_column" or "models.diverged", and is what the CLI reports.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// A metric that has no value on the given input (single-class AUC, zero
/// variance correlation, ...). Callers exclude such folds with a record.
class UndefinedMetric : public Error {
 public:
  explicit UndefinedMetric(const std::string& message)
      : Error("evaluation.undefined_metric", message) {}
};

}  // namespace shiftadapt
