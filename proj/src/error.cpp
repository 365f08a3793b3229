#include "dragopt/error.hpp"

namespace dragopt {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kInvalidShape: return "invalid shape";
    case ErrorCode::kSelfIntersecting: return "self-intersecting contour";
    case ErrorCode::kBorderContact: return "border contact";
    case ErrorCode::kEmptyImage: return "empty";
    case ErrorCode::kMultipleComponents: return "multiple components";
    case ErrorCode::kOpenBoundary: return "open boundary";
    case ErrorCode::kClearance: return "clearance violation";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kDiverged: return "diverged";
    case ErrorCode::kNotConverged: return "not converged";
    case ErrorCode::kFactorization: return "factorization failure";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kFormat: return "format error";
  }
  return "unknown";
}

bool Error::is_numerical() const noexcept {
  switch (code_) {
    case ErrorCode::kDiverged:
    case ErrorCode::kNotConverged:
    case ErrorCode::kFactorization:
    case ErrorCode::kNonFinite:
      return true;
    default:
      return false;
  }
}

}  // namespace dragopt
