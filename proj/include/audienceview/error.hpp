#pragma once

#include <stdexcept>
#include <string>

namespace audienceview {

/// Base error carrying a stable machine-readable code (e.g. "quota_exhausted").
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message) : Error("invalid_record", message) {}
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : Error("config_invalid", field + ": " + message), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace audienceview
