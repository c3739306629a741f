#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cslam {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define CSLAM_DEFINE_ERROR(Name)         \
  class Name : public Error {            \
  public:                                \
    using Error::Error;                  \
  };

CSLAM_DEFINE_ERROR(SingularBlock)
CSLAM_DEFINE_ERROR(DimensionMismatch)
CSLAM_DEFINE_ERROR(MissingEstimate)
CSLAM_DEFINE_ERROR(GaugeFree)
CSLAM_DEFINE_ERROR(LinearSolveFailed)
CSLAM_DEFINE_ERROR(UnknownVariable)
CSLAM_DEFINE_ERROR(DuplicateVariable)
CSLAM_DEFINE_ERROR(SummaryRejected)
CSLAM_DEFINE_ERROR(TimeTravel)
CSLAM_DEFINE_ERROR(MissingKey)
CSLAM_DEFINE_ERROR(ConfigError)

#undef CSLAM_DEFINE_ERROR

/// Malformed g2o input. `line()` is 1-based.
class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

}  // namespace cslam
