#include "npseg/error.hpp"

namespace npseg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedXml: return "MalformedXml";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::DegeneratePolygon: return "DegeneratePolygon";
    case ErrorCode::UnknownLevel: return "UnknownLevel";
    case ErrorCode::InvalidRecord: return "InvalidRecord";
    case ErrorCode::UnreadableImage: return "UnreadableImage";
    case ErrorCode::RoiLargerThanPatch: return "RoiLargerThanPatch";
    case ErrorCode::BBoxTooLarge: return "BBoxTooLarge";
    case ErrorCode::AlreadyAugmented: return "AlreadyAugmented";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::InsufficientTissue: return "InsufficientTissue";
    case ErrorCode::DegenerateStains: return "DegenerateStains";
    case ErrorCode::MethodMismatch: return "MethodMismatch";
    case ErrorCode::IndivisibleCohort: return "IndivisibleCohort";
    case ErrorCode::EmptyCohort: return "EmptyCohort";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::RaggedColumns: return "RaggedColumns";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::StageFailure: return "StageFailure";
  }
  return "Unknown";
}

}  // namespace npseg
