#pragma once

#include "tsselect/core_data.hpp"
#include "tsselect/error.hpp"
#include "tsselect/forecasters.hpp"
#include "tsselect/hashing.hpp"
#include "tsselect/model_space.hpp"
#include "tsselect/parallel.hpp"
#include "tsselect/random.hpp"
#include "tsselect/text.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace tsselect {

/**
 * @brief Dense per-window, per-dataset, per-model one-step MSE.
 *
 * Missing entries hold NaN, never 0. Each entry also carries the
 * wall-clock seconds spent producing it (the naive-selection cost).
 */
class PerformanceTensor {
public:
	PerformanceTensor() = default;
	PerformanceTensor(std::size_t windows, std::vector<std::string> dataset_ids, std::size_t models,
	                  std::string space_checksum)
	    : windows_(windows), models_(models), dataset_ids_(std::move(dataset_ids)),
	      space_checksum_(std::move(space_checksum)),
	      mse_(windows_ * dataset_ids_.size() * models_, std::numeric_limits<double>::quiet_NaN()),
	      fit_seconds_(mse_.size(), 0.0), window_starts_(dataset_ids_.size()) {
		for (std::size_t i = 0; i < dataset_ids_.size(); ++i) {
			if (!index_.emplace(dataset_ids_[i], i).second) {
				throw Error(ErrorCode::DimensionError, "duplicate dataset id '" + dataset_ids_[i] + "'");
			}
		}
	}

	std::size_t windows() const { return windows_; }
	std::size_t datasets() const { return dataset_ids_.size(); }
	std::size_t models() const { return models_; }
	const std::vector<std::string>& dataset_ids() const { return dataset_ids_; }
	const std::string& space_checksum() const { return space_checksum_; }

	std::optional<std::size_t> dataset_index(const std::string& id) const {
		const auto it = index_.find(id);
		if (it == index_.end()) return std::nullopt;
		return it->second;
	}

	std::size_t require_dataset(const std::string& id) const {
		const auto idx = dataset_index(id);
		if (!idx) throw Error(ErrorCode::UnknownDataset, "dataset '" + id + "' is not in the tensor");
		return *idx;
	}

	bool present(std::size_t w, std::size_t d, ModelId m) const { return !std::isnan(mse_[offset(w, d, m)]); }
	double mse(std::size_t w, std::size_t d, ModelId m) const { return mse_[offset(w, d, m)]; }
	double fit_seconds(std::size_t w, std::size_t d, ModelId m) const { return fit_seconds_[offset(w, d, m)]; }

	void set(std::size_t w, std::size_t d, ModelId m, double mse, double fit_seconds) {
		if (!(mse >= 0.0) || !std::isfinite(mse)) {
			throw Error(ErrorCode::FormatError, "MSE entries must be finite and non-negative");
		}
		mse_[offset(w, d, m)] = mse;
		fit_seconds_[offset(w, d, m)] = fit_seconds;
	}

	void set_missing(std::size_t w, std::size_t d, ModelId m) {
		mse_[offset(w, d, m)] = std::numeric_limits<double>::quiet_NaN();
		fit_seconds_[offset(w, d, m)] = 0.0;
	}

	/// Window start indices per dataset (provenance only).
	const std::vector<std::size_t>& window_starts(std::size_t d) const { return window_starts_.at(d); }
	void set_window_starts(std::size_t d, std::vector<std::size_t> starts) { window_starts_.at(d) = std::move(starts); }

	std::string window_manifest_hash() const {
		std::string text;
		for (std::size_t d = 0; d < datasets(); ++d) {
			text += dataset_ids_[d] + ':';
			for (auto s : window_starts_[d]) text += std::to_string(s) + ' ';
			text += '\n';
		}
		return sha256_hex(text);
	}

	/// Per-model mean MSE over the dataset's present windows; NaN for all-missing models.
	std::vector<double> aggregate(std::size_t d) const {
		std::vector<double> out(models_, std::numeric_limits<double>::quiet_NaN());
		for (ModelId m = 0; m < models_; ++m) {
			double sum = 0.0;
			std::size_t count = 0;
			for (std::size_t w = 0; w < windows_; ++w) {
				if (present(w, d, m)) {
					sum += mse(w, d, m);
					++count;
				}
			}
			if (count) out[m] = sum / static_cast<double>(count);
		}
		return out;
	}

	bool operator==(const PerformanceTensor& o) const {
		auto same_bits = [](const std::vector<double>& a, const std::vector<double>& b) {
			if (a.size() != b.size()) return false;
			for (std::size_t i = 0; i < a.size(); ++i) {
				if (std::isnan(a[i]) != std::isnan(b[i]) || (!std::isnan(a[i]) && a[i] != b[i])) return false;
			}
			return true;
		};
		return windows_ == o.windows_ && models_ == o.models_ && dataset_ids_ == o.dataset_ids_ &&
		       space_checksum_ == o.space_checksum_ && window_starts_ == o.window_starts_ && same_bits(mse_, o.mse_) &&
		       same_bits(fit_seconds_, o.fit_seconds_);
	}

private:
	std::size_t offset(std::size_t w, std::size_t d, ModelId m) const {
		if (w >= windows_ || d >= dataset_ids_.size() || m >= models_) {
			throw Error(ErrorCode::DimensionError, "tensor index out of range");
		}
		return (w * dataset_ids_.size() + d) * models_ + m;
	}

	std::size_t windows_ = 0;
	std::size_t models_ = 0;
	std::vector<std::string> dataset_ids_;
	std::map<std::string, std::size_t> index_;
	std::string space_checksum_;
	std::vector<double> mse_;
	std::vector<double> fit_seconds_;
	std::vector<std::vector<std::size_t>> window_starts_;
};

struct MatrixBuildOptions {
	ForecasterOptions forecaster;
	/// Fill non-native columns with the synthetic recipe instead of leaving them missing.
	bool synthesize_non_native = false;
	std::uint64_t synthesis_seed = 0;
	std::size_t threads = 1;
	/// Store 0 instead of the measured fit time, for reproducible tensors.
	bool record_fit_times = true;
	/// Receives one line per entry that could not be produced.
	std::vector<std::string>* log = nullptr;
};

/**
 * @brief Synthetic one-step forecast for algorithms without a native implementation.
 *
 * Recipe: an AR(1)-with-constant forecast on the represented history, plus
 * Gaussian noise. The noise scale is a per-family base (DeepAR 0.03,
 * DeepFactor 0.05, Prophet 0.04, GaussianProcess 0.12) times a per-model
 * quality factor in [0.5, 1.5) drawn from (seed, model id); the noise
 * itself is drawn from (seed, dataset, window, model id).
 */
inline double synthetic_forecast(const ModelSpec& spec, ModelId model, std::span<const double> history,
                                 const std::string& dataset_id, std::size_t window_index, std::uint64_t seed,
                                 double smoothing_alpha) {
	double base_scale = 0.05;
	switch (spec.algorithm) {
	case Algorithm::DeepAR: base_scale = 0.03; break;
	case Algorithm::DeepFactor: base_scale = 0.05; break;
	case Algorithm::Prophet: base_scale = 0.04; break;
	case Algorithm::GaussianProcess: base_scale = 0.12; break;
	default: break;
	}
	const auto series = apply_representation(history, RepresentationTransform::of(spec.representation, smoothing_alpha));
	const double base = series.size() >= 5 ? ar_ols(series, 1, Trend::Constant).prediction : series.back();
	Rng quality(mix_seed(seed, model));
	const double scale = base_scale * (0.5 + quality.uniform01());
	Rng noise(mix_seed(mix_seed(seed, fnv1a64(dataset_id)), window_index * 1000003ULL + model));
	return base + scale * noise.normal();
}

/**
 * @brief Fill the tensor by holding out each window's final value.
 *
 * Entry (k, i, j) is the squared error of spec j's one-step forecast of
 * window k's last value from the preceding values of dataset i. Every
 * dataset must have the same number of windows.
 */
inline PerformanceTensor build_matrix(const std::vector<TimeSeriesDataset>& datasets,
                                      const std::vector<std::vector<Window>>& windows, const ModelSpace& space,
                                      const MatrixBuildOptions& options = {}) {
	if (windows.size() != datasets.size()) {
		throw Error(ErrorCode::DimensionError, "need one window list per dataset");
	}
	const std::size_t T = datasets.empty() ? 0 : windows.front().size();
	std::vector<std::string> ids;
	for (std::size_t d = 0; d < datasets.size(); ++d) {
		ids.push_back(datasets[d].id);
		if (windows[d].size() != T) {
			throw Error(ErrorCode::DimensionError, "dataset '" + datasets[d].id + "' has a different window count");
		}
		for (const auto& w : windows[d]) {
			if (w.length() < 2) {
				throw Error(ErrorCode::WindowTooShort, "matrix windows need at least 2 values");
			}
		}
	}
	PerformanceTensor P(T, ids, space.size(), space.checksum());
	for (std::size_t d = 0; d < datasets.size(); ++d) {
		std::vector<std::size_t> starts;
		for (const auto& w : windows[d]) starts.push_back(w.start);
		P.set_window_starts(d, std::move(starts));
	}
	std::mutex log_mutex;
	const std::size_t cells = T * datasets.size();
	parallel_for(
	    cells,
	    [&](std::size_t cell) {
		    const std::size_t k = cell % (T ? T : 1);
		    const std::size_t d = cell / (T ? T : 1);
		    const auto& w = windows[d][k];
		    const std::span<const double> history(w.values.data(), w.values.size() - 1);
		    const double target = w.values.back();
		    for (ModelId j = 0; j < space.size(); ++j) {
			    const auto& spec = space[j];
			    try {
				    Stopwatch sw;
				    std::optional<double> prediction;
				    if (auto r = forecast_spec(spec, history, options.forecaster)) {
					    prediction = r->prediction;
				    } else if (options.synthesize_non_native) {
					    prediction = synthetic_forecast(spec, j, history, ids[d], k, options.synthesis_seed,
					                                    options.forecaster.smoothing_alpha);
				    }
				    if (prediction && std::isfinite(*prediction)) {
					    const double e = *prediction - target;
					    P.set(k, d, j, e * e, options.record_fit_times ? sw.seconds() : 0.0);
				    } else if (options.log) {
					    std::lock_guard lock(log_mutex);
					    options.log->push_back(ids[d] + " window " + std::to_string(k) + " model " + std::to_string(j) +
					                           ": " + (prediction ? "non-finite forecast" : "no native implementation"));
				    }
			    } catch (const Error& e) {
				    if (options.log) {
					    std::lock_guard lock(log_mutex);
					    options.log->push_back(ids[d] + " window " + std::to_string(k) + " model " + std::to_string(j) +
					                           ": " + e.what());
				    }
			    }
		    }
	    },
	    options.threads);
	return P;
}

inline constexpr int kMatrixFormatVersion = 1;

/// Header block of key=value lines, a "records" marker, then one CSV record per present entry.
inline void export_matrix(const PerformanceTensor& P, std::ostream& os) {
	os << "# tsselect performance matrix\n";
	os << "format_version=" << kMatrixFormatVersion << '\n';
	os << "T=" << P.windows() << '\n';
	os << "n=" << P.datasets() << '\n';
	os << "m=" << P.models() << '\n';
	os << "space_checksum=" << P.space_checksum() << '\n';
	os << "window_manifest_hash=" << P.window_manifest_hash() << '\n';
	for (std::size_t d = 0; d < P.datasets(); ++d) {
		os << "dataset=" << P.dataset_ids()[d] << ':';
		const auto& starts = P.window_starts(d);
		for (std::size_t i = 0; i < starts.size(); ++i) os << (i ? " " : "") << starts[i];
		os << '\n';
	}
	os << "records\n";
	os << "window_index,dataset_id,model_id,mse,fit_seconds\n";
	for (std::size_t w = 0; w < P.windows(); ++w) {
		for (std::size_t d = 0; d < P.datasets(); ++d) {
			for (ModelId m = 0; m < P.models(); ++m) {
				if (!P.present(w, d, m)) continue;
				os << w << ',' << P.dataset_ids()[d] << ',' << m << ',' << text::format_exact(P.mse(w, d, m)) << ','
				   << text::format_exact(P.fit_seconds(w, d, m)) << '\n';
			}
		}
	}
}

inline void export_matrix(const PerformanceTensor& P, const std::filesystem::path& path) {
	std::ofstream out(path);
	if (!out) throw Error(ErrorCode::Unwritable, path.string());
	export_matrix(P, out);
	if (!out) throw Error(ErrorCode::Unwritable, path.string());
}

inline PerformanceTensor import_matrix(std::istream& in, const ModelSpace& space, const std::string& source = "<stream>") {
	std::map<std::string, std::string> header;
	std::vector<std::pair<std::string, std::vector<std::size_t>>> manifest;
	std::string line;
	std::size_t line_no = 0;
	auto format_error = [&](const std::string& what) {
		return Error(ErrorCode::FormatError, source + ":" + std::to_string(line_no) + ": " + what, line_no);
	};
	bool in_records = false;
	while (std::getline(in, line)) {
		++line_no;
		const auto t = text::trim(line);
		if (t.empty() || t.front() == '#') continue;
		if (t == "records") {
			in_records = true;
			break;
		}
		const auto eq = t.find('=');
		if (eq == std::string_view::npos) throw format_error("expected key=value");
		const std::string key(t.substr(0, eq));
		const std::string value(t.substr(eq + 1));
		if (key == "dataset") {
			const auto colon = value.rfind(':');
			if (colon == std::string::npos) throw format_error("dataset line needs 'id:starts'");
			std::vector<std::size_t> starts;
			std::istringstream ss(value.substr(colon + 1));
			std::string tok;
			while (ss >> tok) {
				const auto v = text::parse_int(tok);
				if (!v || *v < 0) throw format_error("bad window start '" + tok + "'");
				starts.push_back(static_cast<std::size_t>(*v));
			}
			manifest.emplace_back(value.substr(0, colon), std::move(starts));
		} else {
			header[key] = value;
		}
	}
	if (!in_records) throw format_error("missing 'records' section");
	for (const char* key : {"format_version", "T", "n", "m", "space_checksum"}) {
		if (!header.count(key)) throw format_error(std::string("missing header key '") + key + "'");
	}
	if (header["format_version"] != std::to_string(kMatrixFormatVersion)) {
		throw format_error("unsupported format_version " + header["format_version"]);
	}
	if (header["space_checksum"] != space.checksum()) {
		throw Error(ErrorCode::SpaceMismatch, source + ": matrix was built for model space " + header["space_checksum"] +
		                                          ", active space is " + space.checksum());
	}
	auto dim = [&](const char* key) {
		const auto v = text::parse_int(header[key]);
		if (!v || *v < 0) throw format_error(std::string("bad dimension ") + key);
		return static_cast<std::size_t>(*v);
	};
	const std::size_t T = dim("T"), n = dim("n"), m = dim("m");
	if (m != space.size()) {
		throw Error(ErrorCode::DimensionError, source + ": m=" + std::to_string(m) + " but the active space has " +
		                                           std::to_string(space.size()) + " models");
	}
	if (manifest.size() != n) {
		throw Error(ErrorCode::DimensionError, source + ": n=" + std::to_string(n) + " but " +
		                                           std::to_string(manifest.size()) + " dataset lines");
	}
	std::vector<std::string> ids;
	for (const auto& [id, starts] : manifest) ids.push_back(id);
	PerformanceTensor P(T, ids, m, space.checksum());
	for (std::size_t d = 0; d < n; ++d) P.set_window_starts(d, manifest[d].second);
	if (header.count("window_manifest_hash") && header["window_manifest_hash"] != P.window_manifest_hash()) {
		throw format_error("window manifest hash does not match the dataset lines");
	}

	if (!std::getline(in, line)) throw format_error("missing record header");
	++line_no;
	std::vector<bool> seen(T * n * m, false);
	while (std::getline(in, line)) {
		++line_no;
		const auto t = text::trim(line);
		if (t.empty()) continue;
		const auto f = text::split(t, ',');
		if (f.size() != 5) throw format_error("expected 5 fields");
		const auto w = text::parse_int(f[0]);
		const auto model = text::parse_int(f[2]);
		const auto mse = text::parse_double(f[3]);
		const auto secs = text::parse_double(f[4]);
		if (!w || !model || !mse || !secs) throw format_error("non-numeric field");
		const auto d = P.dataset_index(f[1]);
		if (*w < 0 || static_cast<std::size_t>(*w) >= T || *model < 0 || static_cast<std::size_t>(*model) >= m || !d) {
			throw Error(ErrorCode::DimensionError,
			            source + ":" + std::to_string(line_no) + ": record index out of range", line_no);
		}
		if (!(*mse >= 0.0) || !std::isfinite(*mse)) throw format_error("MSE must be finite and non-negative");
		const auto flat = (static_cast<std::size_t>(*w) * n + *d) * m + static_cast<std::size_t>(*model);
		if (seen[flat]) throw format_error("duplicate record");
		seen[flat] = true;
		P.set(static_cast<std::size_t>(*w), *d, static_cast<ModelId>(*model), *mse, *secs);
	}
	return P;
}

inline PerformanceTensor import_matrix(const std::filesystem::path& path, const ModelSpace& space) {
	std::ifstream in(path);
	if (!in) throw Error(ErrorCode::FileNotFound, path.string());
	return import_matrix(in, space, path.string());
}

/// Copy of P restricted to the given datasets, in the given order.
inline PerformanceTensor restrict_datasets(const PerformanceTensor& P, const std::vector<std::string>& ids) {
	PerformanceTensor out(P.windows(), ids, P.models(), P.space_checksum());
	for (std::size_t d = 0; d < ids.size(); ++d) {
		const auto src = P.require_dataset(ids[d]);
		out.set_window_starts(d, P.window_starts(src));
		for (std::size_t w = 0; w < P.windows(); ++w) {
			for (ModelId m = 0; m < P.models(); ++m) {
				if (P.present(w, src, m)) out.set(w, d, m, P.mse(w, src, m), P.fit_seconds(w, src, m));
			}
		}
	}
	return out;
}

/// Models ordered by aggregate MSE ascending; all-missing models last; ties by id.
struct RankedModels {
	std::string dataset_id;
	std::vector<ModelId> ordering;
	std::vector<double> aggregate;

	/// Position of a model in the ordering.
	std::size_t position_of(ModelId id) const {
		return static_cast<std::size_t>(std::find(ordering.begin(), ordering.end(), id) - ordering.begin());
	}
};

inline RankedModels rank_aggregate(std::string dataset_id, std::vector<double> aggregate) {
	RankedModels r;
	r.dataset_id = std::move(dataset_id);
	r.ordering.resize(aggregate.size());
	std::iota(r.ordering.begin(), r.ordering.end(), ModelId{0});
	if (std::all_of(aggregate.begin(), aggregate.end(), [](double v) { return std::isnan(v); })) {
		throw Error(ErrorCode::AllMissing, "dataset '" + r.dataset_id + "' has no scored model");
	}
	std::stable_sort(r.ordering.begin(), r.ordering.end(), [&](ModelId a, ModelId b) {
		const bool ma = std::isnan(aggregate[a]);
		const bool mb = std::isnan(aggregate[b]);
		if (ma != mb) return mb;
		if (ma) return false;
		return aggregate[a] < aggregate[b];
	});
	r.aggregate = std::move(aggregate);
	return r;
}

inline RankedModels rank(const PerformanceTensor& P, const std::string& dataset_id) {
	return rank_aggregate(dataset_id, P.aggregate(P.require_dataset(dataset_id)));
}

struct NaiveSelection {
	ModelId model = 0;
	/// Sum of every entry's fit time for the dataset.
	double total_seconds = 0.0;
};

/// Evaluate-everything baseline: the top-ranked model and the cost of scoring all of them.
inline NaiveSelection naive_select(const PerformanceTensor& P, const std::string& dataset_id) {
	const auto d = P.require_dataset(dataset_id);
	NaiveSelection s;
	s.model = rank(P, dataset_id).ordering.front();
	for (std::size_t w = 0; w < P.windows(); ++w) {
		for (ModelId m = 0; m < P.models(); ++m) {
			if (P.present(w, d, m)) s.total_seconds += P.fit_seconds(w, d, m);
		}
	}
	return s;
}

} // namespace tsselect
