#pragma once

#include <stdexcept>
#include <string>

namespace dragopt {

enum class ErrorCode {
  kInvalidArgument,
  kInvalidShape,
  kSelfIntersecting,
  kBorderContact,
  kEmptyImage,
  kMultipleComponents,
  kOpenBoundary,
  kClearance,
  kDegenerate,
  kDiverged,
  kNotConverged,
  kFactorization,
  kNonFinite,
  kIo,
  kFormat,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; the code lets callers branch
// (e.g. resample a shape on kSelfIntersecting) without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  // Usage-type problems map to CLI exit code 1, numerical ones to 2.
  bool is_numerical() const noexcept;

 private:
  ErrorCode code_;
};

}  // namespace dragopt
