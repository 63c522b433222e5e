#pragma once

#include <stdexcept>
#include <string>

namespace mambarain {

// Base of every error the library throws. kind() is a stable short tag used
// by the CLI for its single-line error output.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error("dimension", w) {}
};
struct DomainError : Error {
  explicit DomainError(const std::string& w) : Error("domain", w) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& w) : Error("contract", w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error("format", w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io", w) {}
};

}  // namespace mambarain
