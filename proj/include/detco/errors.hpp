#pragma once

#include <stdexcept>
#include <string>

namespace detco {

/// Base of every error raised by the library. `kind()` is the short class
/// name the CLI prints on failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define DETCO_DEFINE_ERROR(Name, Base)                         \
  class Name : public Base {                                   \
   public:                                                     \
    using Base::Base;                                          \
    const char* kind() const noexcept override { return #Name; } \
  };

DETCO_DEFINE_ERROR(ConfigError, Error)
DETCO_DEFINE_ERROR(InputError, Error)
DETCO_DEFINE_ERROR(ValidationError, Error)
DETCO_DEFINE_ERROR(StateError, Error)
DETCO_DEFINE_ERROR(StructuralError, Error)
DETCO_DEFINE_ERROR(DegenerateEmbeddingError, Error)
DETCO_DEFINE_ERROR(NonFiniteLossError, Error)
DETCO_DEFINE_ERROR(IoError, Error)
DETCO_DEFINE_ERROR(FileNotFoundError, IoError)
DETCO_DEFINE_ERROR(FormatError, Error)

#undef DETCO_DEFINE_ERROR

}  // namespace detco
