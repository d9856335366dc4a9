#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace patchal {

enum class ErrorCode {
    BadMagic,
    HeaderMismatch,
    NonFiniteData,
    IoFailure,
    OutOfBounds,
    InvalidArgument,
    DegenerateStack,
    PatchLargerThanImage,
    EmptyField,
    InsufficientCandidates,
    ClassUncoverable,
    SpecInfeasible,
    NoAnnotation,
    ShapeMismatch,
    DegenerateCurve,
    DegenerateFit,
    TooFewSamples,
    RaggedResults,
    MismatchedItems,
    TooFewImages,
    OutputExists,
};

constexpr std::string_view to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::HeaderMismatch: return "HeaderMismatch";
    case ErrorCode::NonFiniteData: return "NonFiniteData";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DegenerateStack: return "DegenerateStack";
    case ErrorCode::PatchLargerThanImage: return "PatchLargerThanImage";
    case ErrorCode::EmptyField: return "EmptyField";
    case ErrorCode::InsufficientCandidates: return "InsufficientCandidates";
    case ErrorCode::ClassUncoverable: return "ClassUncoverable";
    case ErrorCode::SpecInfeasible: return "SpecInfeasible";
    case ErrorCode::NoAnnotation: return "NoAnnotation";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateCurve: return "DegenerateCurve";
    case ErrorCode::DegenerateFit: return "DegenerateFit";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::RaggedResults: return "RaggedResults";
    case ErrorCode::MismatchedItems: return "MismatchedItems";
    case ErrorCode::TooFewImages: return "TooFewImages";
    case ErrorCode::OutputExists: return "OutputExists";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can dispatch on the kind rather than the message.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
    {
    }

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace patchal
