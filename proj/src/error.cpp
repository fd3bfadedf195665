#include "bnnw/error.hpp"

namespace bnnw {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::UnparseableCell: return "UnparseableCell";
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::NonBinaryTreatment: return "NonBinaryTreatment";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::TooFewObservations: return "TooFewObservations";
    case ErrorCode::EmptyArm: return "EmptyArm";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::SingularHessian: return "SingularHessian";
    case ErrorCode::Divergence: return "Divergence";
    case ErrorCode::ZeroInstrument: return "ZeroInstrument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

}  // namespace bnnw
