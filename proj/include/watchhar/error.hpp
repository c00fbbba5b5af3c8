#pragma once

#include <stdexcept>
#include <string>

namespace watchhar {

// Every failure raised by the engine derives from Error, so callers that only
// care about "did it work" can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define WATCHHAR_DEFINE_ERROR(Name)          \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  }

WATCHHAR_DEFINE_ERROR(OverflowError);
WATCHHAR_DEFINE_ERROR(IoError);
WATCHHAR_DEFINE_ERROR(FormatError);
WATCHHAR_DEFINE_ERROR(CorruptionError);
WATCHHAR_DEFINE_ERROR(VersionError);
WATCHHAR_DEFINE_ERROR(ShapeError);
WATCHHAR_DEFINE_ERROR(ConfigError);
WATCHHAR_DEFINE_ERROR(DomainError);
WATCHHAR_DEFINE_ERROR(StreamError);
WATCHHAR_DEFINE_ERROR(RateError);
WATCHHAR_DEFINE_ERROR(NotReadyError);
WATCHHAR_DEFINE_ERROR(ParseError);
WATCHHAR_DEFINE_ERROR(ValidationError);

#undef WATCHHAR_DEFINE_ERROR

}  // namespace watchhar
