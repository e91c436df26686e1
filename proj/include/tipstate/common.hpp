// Shared error type and small helpers used across the library.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tipstate {

enum class ErrorCode {
    NonFiniteInput,
    TooSmall,
    UnsupportedSize,
    HoldoutTooLarge,
    EmptyClass,
    DuplicateSourceId,
    SigmaOutOfRange,
    BoxOutOfBounds,
    BoxTooSmall,
    PolicyMismatch,
    ShapeMismatch,
    BatchTooSmall,
    EmptyTrainSet,
    LabelOutOfRange,
    ModeError,
    ClassSetMismatch,
    UnmappedClass,
    LengthMismatch,
    DegenerateLabels,
    NoPositives,
    EmptyClassSupport,
    VersionMismatch,
    CorruptFile,
    IoError,
    InvalidLabelForSurface,
    BadConfig,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::TooSmall: return "TooSmall";
        case ErrorCode::UnsupportedSize: return "UnsupportedSize";
        case ErrorCode::HoldoutTooLarge: return "HoldoutTooLarge";
        case ErrorCode::EmptyClass: return "EmptyClass";
        case ErrorCode::DuplicateSourceId: return "DuplicateSourceId";
        case ErrorCode::SigmaOutOfRange: return "SigmaOutOfRange";
        case ErrorCode::BoxOutOfBounds: return "BoxOutOfBounds";
        case ErrorCode::BoxTooSmall: return "BoxTooSmall";
        case ErrorCode::PolicyMismatch: return "PolicyMismatch";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::BatchTooSmall: return "BatchTooSmall";
        case ErrorCode::EmptyTrainSet: return "EmptyTrainSet";
        case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
        case ErrorCode::ModeError: return "ModeError";
        case ErrorCode::ClassSetMismatch: return "ClassSetMismatch";
        case ErrorCode::UnmappedClass: return "UnmappedClass";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::DegenerateLabels: return "DegenerateLabels";
        case ErrorCode::NoPositives: return "NoPositives";
        case ErrorCode::EmptyClassSupport: return "EmptyClassSupport";
        case ErrorCode::VersionMismatch: return "VersionMismatch";
        case ErrorCode::CorruptFile: return "CorruptFile";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::InvalidLabelForSurface: return "InvalidLabelForSurface";
        case ErrorCode::BadConfig: return "BadConfig";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

}  // namespace tipstate
