#pragma once

#include "tsselect/error.hpp"
#include "tsselect/random.hpp"
#include "tsselect/text.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace tsselect {

struct Normalization {
	double min = 0.0;
	double max = 0.0;

	bool degenerate() const { return !(max > min); }
	double normalize(double x) const { return degenerate() ? 0.0 : (x - min) / (max - min); }
	double denormalize(double y) const { return degenerate() ? min : min + y * (max - min); }
};

/**
 * @brief A univariate series with its min-max normalized copy.
 *
 * values are in [0, 1] (all zeros for a constant series); raw_values keep
 * the source units.
 */
struct TimeSeriesDataset {
	std::string id;
	std::string name;
	std::vector<double> values;
	std::vector<double> raw_values;
	Normalization normalization;

	std::size_t size() const { return values.size(); }
};

/// Contiguous slice [start, start + length) of a dataset's normalized values.
struct Window {
	std::string dataset_id;
	std::size_t start = 0;
	std::vector<double> values;

	std::size_t length() const { return values.size(); }
	std::span<const double> view() const { return values; }
};

inline constexpr std::size_t kDefaultWindowLength = 16;
inline constexpr std::size_t kDefaultWindowsPerDataset = 10;

/// Build a dataset from raw observations; throws EmptySeries / ParseError on bad input.
inline TimeSeriesDataset make_dataset(std::string id, std::vector<double> raw, std::string name = {}) {
	if (raw.empty()) {
		throw Error(ErrorCode::EmptySeries, "dataset '" + id + "' has no observations");
	}
	TimeSeriesDataset d;
	d.id = std::move(id);
	d.name = name.empty() ? d.id : std::move(name);
	d.normalization.min = raw.front();
	d.normalization.max = raw.front();
	for (double x : raw) {
		if (!std::isfinite(x)) {
			throw Error(ErrorCode::ParseError, "dataset '" + d.id + "' contains a non-finite value");
		}
		d.normalization.min = std::min(d.normalization.min, x);
		d.normalization.max = std::max(d.normalization.max, x);
	}
	d.values.reserve(raw.size());
	for (double x : raw) {
		d.values.push_back(d.normalization.normalize(x));
	}
	d.raw_values = std::move(raw);
	return d;
}

/**
 * @brief Parse a one- or two-column delimited series file.
 *
 * Columns may be comma- or tab-separated; the value is the last column. A
 * non-numeric first line is treated as a header. Blank lines are skipped.
 */
inline TimeSeriesDataset load_dataset(const std::filesystem::path& path, std::string id) {
	std::ifstream in(path);
	if (!in) {
		throw Error(ErrorCode::FileNotFound, path.string());
	}
	std::vector<double> raw;
	std::string line;
	std::size_t line_no = 0;
	while (std::getline(in, line)) {
		++line_no;
		const auto trimmed = text::trim(line);
		if (trimmed.empty()) {
			continue;
		}
		const char delim = trimmed.find('\t') != std::string_view::npos ? '\t' : ',';
		const auto fields = text::split(trimmed, delim);
		const auto value = text::parse_double(fields.back());
		if (!value || !std::isfinite(*value)) {
			if (line_no == 1) {
				continue; // header
			}
			throw Error(ErrorCode::ParseError,
			            path.string() + ": non-numeric value '" + std::string(text::trim(fields.back())) +
			                "' at line " + std::to_string(line_no),
			            line_no);
		}
		raw.push_back(*value);
	}
	if (raw.empty()) {
		throw Error(ErrorCode::EmptySeries, path.string());
	}
	return make_dataset(std::move(id), std::move(raw), path.stem().string());
}

struct ManifestEntry {
	std::string id;
	std::filesystem::path path;
};

/// Manifest lines are "id,path" (or tab-separated); '#' starts a comment. Paths are relative to the manifest.
inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
	std::ifstream in(path);
	if (!in) {
		throw Error(ErrorCode::FileNotFound, path.string());
	}
	std::vector<ManifestEntry> entries;
	std::string line;
	std::size_t line_no = 0;
	while (std::getline(in, line)) {
		++line_no;
		const auto trimmed = text::trim(line);
		if (trimmed.empty() || trimmed.front() == '#') {
			continue;
		}
		const char delim = trimmed.find('\t') != std::string_view::npos ? '\t' : ',';
		const auto fields = text::split(trimmed, delim);
		if (fields.size() != 2) {
			throw Error(ErrorCode::ParseError, path.string() + ": expected 'id,path' at line " + std::to_string(line_no),
			            line_no);
		}
		std::filesystem::path p(std::string(text::trim(fields[1])));
		if (p.is_relative()) {
			p = path.parent_path() / p;
		}
		entries.push_back({std::string(text::trim(fields[0])), p});
	}
	return entries;
}

inline std::vector<TimeSeriesDataset> load_corpus(const std::filesystem::path& manifest) {
	std::vector<TimeSeriesDataset> out;
	for (const auto& e : load_manifest(manifest)) {
		out.push_back(load_dataset(e.path, e.id));
	}
	return out;
}

inline Window make_window(const TimeSeriesDataset& d, std::size_t start, std::size_t length) {
	if (length == 0 || length > d.size() || start > d.size() - length) {
		throw Error(ErrorCode::WindowTooLong, "window [" + std::to_string(start) + ", " +
		                                          std::to_string(start + length) + ") exceeds dataset '" + d.id +
		                                          "' of length " + std::to_string(d.size()));
	}
	Window w;
	w.dataset_id = d.id;
	w.start = start;
	w.values.assign(d.values.begin() + static_cast<std::ptrdiff_t>(start),
	                d.values.begin() + static_cast<std::ptrdiff_t>(start + length));
	return w;
}

/// Uniform starts in [0, n - length], drawn with replacement from a seeded stream.
inline std::vector<Window> sample_windows(const TimeSeriesDataset& d, std::size_t count, std::size_t length,
                                          std::uint64_t seed) {
	if (length == 0 || count == 0) {
		throw Error(ErrorCode::WindowTooLong, "window length and count must be positive");
	}
	if (length > d.size()) {
		throw Error(ErrorCode::WindowTooLong, "window length " + std::to_string(length) + " exceeds dataset '" + d.id +
		                                          "' of length " + std::to_string(d.size()));
	}
	Rng rng(seed);
	const std::uint64_t starts = d.size() - length + 1;
	std::vector<Window> out;
	out.reserve(count);
	for (std::size_t i = 0; i < count; ++i) {
		out.push_back(make_window(d, static_cast<std::size_t>(rng.uniform_index(starts)), length));
	}
	return out;
}

/// Per-dataset window seed: independent of corpus order.
inline std::uint64_t window_seed(std::uint64_t base_seed, const std::string& dataset_id) {
	return mix_seed(base_seed, fnv1a64(dataset_id));
}

} // namespace tsselect
