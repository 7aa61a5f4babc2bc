#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tsselect {

enum class ErrorCode {
	// core_data
	FileNotFound,
	ParseError,
	EmptySeries,
	WindowTooLong,
	// model_space
	DuplicateValue,
	EmptyGrid,
	// meta_features
	WindowTooShort,
	EmptyInput,
	CatalogMismatch,
	// forecasters
	TooShort,
	// performance_matrix
	FormatError,
	SpaceMismatch,
	DimensionError,
	UnknownDataset,
	AllMissing,
	// prompting
	TemplateMissing,
	MetaFeaturesRequired,
	// llm_client
	MissingCredential,
	EndpointUnreachable,
	FixtureMiss,
	ProviderError,
	StoreUnwritable,
	HashCollisionGuard,
	// selectors
	EmptySpace,
	NotInSpace,
	AllMissingForFamily,
	TooFewDatasets,
	ShapeMismatch,
	// harness
	KExceedsSpace,
	MissingEntry,
	Unwritable,
	ConfigError,
};

inline std::string_view to_string(ErrorCode code) {
	switch (code) {
	case ErrorCode::FileNotFound: return "FileNotFound";
	case ErrorCode::ParseError: return "ParseError";
	case ErrorCode::EmptySeries: return "EmptySeries";
	case ErrorCode::WindowTooLong: return "WindowTooLong";
	case ErrorCode::DuplicateValue: return "DuplicateValue";
	case ErrorCode::EmptyGrid: return "EmptyGrid";
	case ErrorCode::WindowTooShort: return "WindowTooShort";
	case ErrorCode::EmptyInput: return "EmptyInput";
	case ErrorCode::CatalogMismatch: return "CatalogMismatch";
	case ErrorCode::TooShort: return "TooShort";
	case ErrorCode::FormatError: return "FormatError";
	case ErrorCode::SpaceMismatch: return "SpaceMismatch";
	case ErrorCode::DimensionError: return "DimensionError";
	case ErrorCode::UnknownDataset: return "UnknownDataset";
	case ErrorCode::AllMissing: return "AllMissing";
	case ErrorCode::TemplateMissing: return "TemplateMissing";
	case ErrorCode::MetaFeaturesRequired: return "MetaFeaturesRequired";
	case ErrorCode::MissingCredential: return "MissingCredential";
	case ErrorCode::EndpointUnreachable: return "EndpointUnreachable";
	case ErrorCode::FixtureMiss: return "FixtureMiss";
	case ErrorCode::ProviderError: return "ProviderError";
	case ErrorCode::StoreUnwritable: return "StoreUnwritable";
	case ErrorCode::HashCollisionGuard: return "HashCollisionGuard";
	case ErrorCode::EmptySpace: return "EmptySpace";
	case ErrorCode::NotInSpace: return "NotInSpace";
	case ErrorCode::AllMissingForFamily: return "AllMissingForFamily";
	case ErrorCode::TooFewDatasets: return "TooFewDatasets";
	case ErrorCode::ShapeMismatch: return "ShapeMismatch";
	case ErrorCode::KExceedsSpace: return "KExceedsSpace";
	case ErrorCode::MissingEntry: return "MissingEntry";
	case ErrorCode::Unwritable: return "Unwritable";
	case ErrorCode::ConfigError: return "ConfigError";
	}
	return "Unknown";
}

/**
 * @brief Single exception type carrying a machine-readable code.
 *
 * ParseError additionally carries the 1-based line number of the offending
 * record when one is known.
 */
class Error : public std::runtime_error {
public:
	Error(ErrorCode code, const std::string& message, std::optional<std::size_t> line = std::nullopt)
	    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), line_(line) {}

	ErrorCode code() const noexcept { return code_; }
	std::optional<std::size_t> line() const noexcept { return line_; }

private:
	ErrorCode code_;
	std::optional<std::size_t> line_;
};

/// Process exit codes used by the CLI.
enum class ExitCode : int { Success = 0, Usage = 1, Data = 2, Provider = 3 };

inline ExitCode exit_code_for(ErrorCode code) {
	switch (code) {
	case ErrorCode::MissingCredential:
	case ErrorCode::EndpointUnreachable:
	case ErrorCode::FixtureMiss:
	case ErrorCode::ProviderError:
		return ExitCode::Provider;
	case ErrorCode::ConfigError:
		return ExitCode::Usage;
	default:
		return ExitCode::Data;
	}
}

} // namespace tsselect
