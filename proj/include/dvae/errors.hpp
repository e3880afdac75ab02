#pragma once

#include <stdexcept>
#include <string>

namespace dvae {

// Every failure raised by the library derives from dvae::Error so callers
// (the CLI in particular) can separate library errors from foreign ones.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DVAE_DEFINE_ERROR(Name)              \
  class Name : public Error {                \
   public:                                   \
    explicit Name(const std::string& what)   \
        : Error(#Name ": " + what) {}        \
  }

DVAE_DEFINE_ERROR(DimensionError);
DVAE_DEFINE_ERROR(NumericError);
DVAE_DEFINE_ERROR(LookupError);
DVAE_DEFINE_ERROR(ConfigError);
DVAE_DEFINE_ERROR(DegeneratePoseError);
DVAE_DEFINE_ERROR(InvariantError);
DVAE_DEFINE_ERROR(GenerationError);
DVAE_DEFINE_ERROR(IoError);
DVAE_DEFINE_ERROR(ParseError);
DVAE_DEFINE_ERROR(FormatError);
DVAE_DEFINE_ERROR(SupervisionError);
DVAE_DEFINE_ERROR(CompatibilityError);

#undef DVAE_DEFINE_ERROR

// Raised when a training loss stops being finite. Carries the path of the
// most recent checkpoint written before the failure (empty if none).
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string last_good)
      : Error("DivergenceError: " + what), last_good_(std::move(last_good)) {}
  const std::string& last_good_checkpoint() const { return last_good_; }

 private:
  std::string last_good_;
};

}  // namespace dvae
