#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bnnw {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  MissingColumn,
  UnparseableCell,
  EmptyData,
  NonBinaryTreatment,
  DomainError,
  TooFewObservations,
  EmptyArm,
  SingularDesign,
  SingularHessian,
  Divergence,
  ZeroInstrument,
  Io,
  Config,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace bnnw
