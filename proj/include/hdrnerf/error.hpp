#pragma once

#include <stdexcept>
#include <string>

namespace hdrnerf {

// Base of every failure raised by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define HDRNERF_DECLARE_ERROR(Name)              \
  class Name : public Error {                    \
   public:                                       \
    explicit Name(const std::string& what_arg)   \
        : Error(#Name ": " + what_arg) {}        \
  };

HDRNERF_DECLARE_ERROR(ShapeError)
HDRNERF_DECLARE_ERROR(NumericError)
HDRNERF_DECLARE_ERROR(DomainError)
HDRNERF_DECLARE_ERROR(InputError)
HDRNERF_DECLARE_ERROR(DeterminismError)
HDRNERF_DECLARE_ERROR(DegenerateError)
HDRNERF_DECLARE_ERROR(SolveError)
HDRNERF_DECLARE_ERROR(FormatError)

#undef HDRNERF_DECLARE_ERROR

}  // namespace hdrnerf
