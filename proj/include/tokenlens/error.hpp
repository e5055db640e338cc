#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace tokenlens {

// Error classes map one-to-one onto CLI exit codes (see cli.hpp).
enum class ErrorKind {
  invalid_argument,
  missing_input,
  io,
  format,
  degenerate,
  numerical,
  contract,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message),
        kind_(kind),
        module_(std::move(module)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorKind kind_;
  std::string module_;
};

}  // namespace tokenlens
