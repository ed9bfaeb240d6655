#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lshazard {

// Base for every error raised by the library. The CLI maps ConfigError to
// exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  [[nodiscard]] const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& message) : Error("domain_error", message) {}
};

// Malformed or missing configuration / command-line input.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config_error", message) {}
};

// An iterative fit that did not reach its convergence criterion. Carries the
// final iterate (in the optimizer's parameterization) and gradient norm.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, std::vector<double> final_iterate,
                   double gradient_norm)
      : Error("convergence_error", message),
        final_iterate_(std::move(final_iterate)),
        gradient_norm_(gradient_norm) {}

  [[nodiscard]] const std::vector<double>& final_iterate() const noexcept {
    return final_iterate_;
  }
  [[nodiscard]] double gradient_norm() const noexcept { return gradient_norm_; }

 private:
  std::vector<double> final_iterate_;
  double gradient_norm_;
};

// One problem found while validating input data.
struct Issue {
  std::size_t row = 0;  // 1-based data row, 0 when not row-specific
  std::string reason;
};

// Input data that violates a schema or record invariant. All issues found in
// a pass are collected before throwing.
class DataError : public Error {
 public:
  DataError(const std::string& message, std::vector<Issue> issues = {})
      : Error("data_error", compose(message, issues)), issues_(std::move(issues)) {}

  [[nodiscard]] const std::vector<Issue>& issues() const noexcept { return issues_; }

 private:
  static std::string compose(const std::string& message, const std::vector<Issue>& issues) {
    std::string out = message;
    for (const auto& issue : issues) {
      out += "\n  ";
      if (issue.row != 0) out += "row " + std::to_string(issue.row) + ": ";
      out += issue.reason;
    }
    return out;
  }

  std::vector<Issue> issues_;
};

// Numerical failure during training or inference (non-finite values).
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& message) : Error("numerical_error", message) {}
};

}  // namespace lshazard
