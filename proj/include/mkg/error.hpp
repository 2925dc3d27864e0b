#pragma once

#include <stdexcept>
#include <string>

namespace mkg {

// Base class for every error raised by the library. Callers that only need to
// report failures can catch this; tests match the concrete subclasses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MKG_DEFINE_ERROR(Name)                 \
  class Name : public Error {                  \
   public:                                     \
    explicit Name(const std::string& what)     \
        : Error(#Name ": " + what) {}          \
  }

MKG_DEFINE_ERROR(InvalidIdentifier);
MKG_DEFINE_ERROR(InvalidBom);
MKG_DEFINE_ERROR(CycleError);
MKG_DEFINE_ERROR(SelfLoopError);
MKG_DEFINE_ERROR(UnknownPart);
MKG_DEFINE_ERROR(ConfigError);
MKG_DEFINE_ERROR(ShapeError);
MKG_DEFINE_ERROR(IndexError);
MKG_DEFINE_ERROR(DivergenceError);
MKG_DEFINE_ERROR(ConsistencyError);
MKG_DEFINE_ERROR(FormatError);
MKG_DEFINE_ERROR(MissingArtifact);
MKG_DEFINE_ERROR(UndefinedDirection);

#undef MKG_DEFINE_ERROR

}  // namespace mkg
