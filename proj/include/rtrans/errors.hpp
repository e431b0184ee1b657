#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace rtrans {

// Base for all typed errors; `name()` is stable and machine-parsable,
// what() is "<name>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& detail)
      : std::runtime_error(name + ": " + detail), name_(std::move(name)) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

#define RTRANS_ERROR_TYPE(NAME)                                   \
  struct NAME : Error {                                           \
    explicit NAME(const std::string& detail) : Error(#NAME, detail) {} \
  }

// dataset
RTRANS_ERROR_TYPE(RowWidthError);
RTRANS_ERROR_TYPE(NonFiniteError);
RTRANS_ERROR_TYPE(EmptyFileError);
RTRANS_ERROR_TYPE(ScoreRangeError);
RTRANS_ERROR_TYPE(MissingTrialError);
RTRANS_ERROR_TYPE(MetaFormatError);
RTRANS_ERROR_TYPE(DegenerateTrialError);
RTRANS_ERROR_TYPE(TooShortError);
RTRANS_ERROR_TYPE(InsufficientGroupsError);
RTRANS_ERROR_TYPE(LayoutError);

// autodiff
RTRANS_ERROR_TYPE(ShapeMismatchError);
RTRANS_ERROR_TYPE(NonScalarLossError);

// model / training
RTRANS_ERROR_TYPE(ConfigError);
RTRANS_ERROR_TYPE(EmptySequenceError);
RTRANS_ERROR_TYPE(RangeError);
RTRANS_ERROR_TYPE(EmptyFoldError);
RTRANS_ERROR_TYPE(CheckpointError);

// evaluation / feedback
RTRANS_ERROR_TYPE(UndefinedCorrelationError);
RTRANS_ERROR_TYPE(MissingDescriptorError);

#undef RTRANS_ERROR_TYPE

}  // namespace rtrans
