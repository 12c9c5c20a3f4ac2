#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mlpmmh {

/// Base of every error raised by the library. `kind()` is a stable,
/// machine-readable tag used in CLI error records.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  [[nodiscard]] virtual std::string_view kind() const noexcept { return "error"; }
};

/// Non-finite or otherwise invalid numeric input.
class DomainError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] std::string_view kind() const noexcept override { return "domain_error"; }
};

/// Invalid run configuration (grid mismatch, bad counts, infeasible budgets).
class ConfigError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] std::string_view kind() const noexcept override { return "config_error"; }
};

/// Caller broke a documented precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
  [[nodiscard]] std::string_view kind() const noexcept override { return "contract_violation"; }
};

/// Every particle carries zero weight at some step.
class FilterCollapse : public Error {
 public:
  using Error::Error;
  [[nodiscard]] std::string_view kind() const noexcept override { return "filter_collapse"; }
};

class EstimationError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] std::string_view kind() const noexcept override { return "estimation_error"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] std::string_view kind() const noexcept override { return "io_error"; }
};

}  // namespace mlpmmh
