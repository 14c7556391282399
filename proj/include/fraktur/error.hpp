#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fraktur {

/// Machine-readable error classes shared by the library, CLI and HTTP service.
enum class ErrorCode {
    MalformedPayload,
    SchemaViolation,
    XmlSyntax,
    SubsetViolation,
    DegenerateGeometry,
    OutOfBounds,
    MissingPromptAsset,
    ProviderError,
    AuthError,
    RefusalDetected,
    UnknownModel,
    EmptyFragmentSet,
    EmptyReference,
    SchemaMismatch,
    EmptyInput,
    InvalidConfig,
    UnreadableScan,
    IllegalTransition,
    NothingToExport,
    NotFound,
    ValidationFailed,
    InvalidArgument,
    IoError,
};

inline std::string_view code_name(ErrorCode code) {
    switch (code) {
    case ErrorCode::MalformedPayload: return "MalformedPayload";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::XmlSyntax: return "XmlSyntax";
    case ErrorCode::SubsetViolation: return "SubsetViolation";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::MissingPromptAsset: return "MissingPromptAsset";
    case ErrorCode::ProviderError: return "ProviderError";
    case ErrorCode::AuthError: return "AuthError";
    case ErrorCode::RefusalDetected: return "RefusalDetected";
    case ErrorCode::UnknownModel: return "UnknownModel";
    case ErrorCode::EmptyFragmentSet: return "EmptyFragmentSet";
    case ErrorCode::EmptyReference: return "EmptyReference";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnreadableScan: return "UnreadableScan";
    case ErrorCode::IllegalTransition: return "IllegalTransition";
    case ErrorCode::NothingToExport: return "NothingToExport";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::ValidationFailed: return "ValidationFailed";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

/// Every failure raised by the library. `offset` is a byte offset into the
/// offending input, `index` an entry/row index, when known.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message,
          std::optional<std::size_t> offset = std::nullopt,
          std::optional<std::size_t> index = std::nullopt)
        : std::runtime_error(message), code_(code), offset_(offset), index_(index) {}

    ErrorCode code() const noexcept { return code_; }
    std::optional<std::size_t> offset() const noexcept { return offset_; }
    std::optional<std::size_t> index() const noexcept { return index_; }

    /// Itemised problems, e.g. the violations behind a ValidationFailed.
    const std::vector<std::string>& details() const noexcept { return details_; }
    Error& with_details(std::vector<std::string> details) {
        details_ = std::move(details);
        return *this;
    }

private:
    ErrorCode code_;
    std::optional<std::size_t> offset_;
    std::optional<std::size_t> index_;
    std::vector<std::string> details_;
};

} // namespace fraktur
