#pragma once

#include <stdexcept>
#include <string>

namespace tactwin {

enum class ErrorCode {
  InvalidArgument,
  OutOfRange,
  Config,
  Parse,
  Io,
  Precondition,
  Validation,
  Encoding,
  State,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tactwin
