#ifndef SFATTACK_ERROR_HPP
#define SFATTACK_ERROR_HPP

#include <stdexcept>
#include <string>

namespace sfattack {

/// Base of every error the library throws. The category drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept { return "error"; }
};

#define SFATTACK_DEFINE_ERROR(Name, tag)                 \
  class Name : public Error {                            \
   public:                                               \
    using Error::Error;                                  \
    const char* category() const noexcept override {     \
      return tag;                                        \
    }                                                    \
  };

SFATTACK_DEFINE_ERROR(DimensionError, "dimension")
SFATTACK_DEFINE_ERROR(DomainError, "domain")
SFATTACK_DEFINE_ERROR(ContractError, "contract")
SFATTACK_DEFINE_ERROR(FormatError, "format")
SFATTACK_DEFINE_ERROR(LengthError, "length")
SFATTACK_DEFINE_ERROR(ValidationError, "validation")
SFATTACK_DEFINE_ERROR(NumericError, "numeric")
SFATTACK_DEFINE_ERROR(ParseError, "parse")
SFATTACK_DEFINE_ERROR(FileError, "file")

#undef SFATTACK_DEFINE_ERROR

}  // namespace sfattack

#endif  // SFATTACK_ERROR_HPP
