#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace npseg {

enum class ErrorCode {
  MalformedXml,
  SchemaViolation,
  OutOfBounds,
  DegeneratePolygon,
  UnknownLevel,
  InvalidRecord,
  UnreadableImage,
  RoiLargerThanPatch,
  BBoxTooLarge,
  AlreadyAugmented,
  EmptyMask,
  InsufficientTissue,
  DegenerateStains,
  MethodMismatch,
  IndivisibleCohort,
  EmptyCohort,
  ShapeMismatch,
  EmptyInput,
  RaggedColumns,
  IoFailure,
  ParseError,
  ConfigInvalid,
  StageFailure,
};

std::string_view to_string(ErrorCode code);

// All toolkit failures carry a code so callers (CLI exit codes, tests) can
// dispatch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace npseg
