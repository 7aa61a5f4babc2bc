#pragma once

#include "tsselect/error.hpp"
#include "tsselect/forecasters.hpp"
#include "tsselect/text.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tsselect {

enum class FeatureCategory { Simple, Statistical, InfoTheoretic, Spectral, Landmarker };

inline std::string_view to_string(FeatureCategory c) {
	switch (c) {
	case FeatureCategory::Simple: return "simple";
	case FeatureCategory::Statistical: return "statistical";
	case FeatureCategory::InfoTheoretic: return "info_theoretic";
	case FeatureCategory::Spectral: return "spectral";
	case FeatureCategory::Landmarker: return "landmarker";
	}
	return "?";
}

struct FeatureEntry {
	std::string name;
	FeatureCategory category;
	/// Adding a constant to the window leaves this feature unchanged.
	bool shift_invariant;
};

/**
 * @brief Ordered, named list of meta-features.
 *
 * The standard catalog holds 32 features over the five categories. Custom
 * catalogs may reorder or subset the standard names.
 */
class MetaFeatureCatalog {
public:
	MetaFeatureCatalog(std::string id, std::vector<FeatureEntry> entries) : id_(std::move(id)), entries_(std::move(entries)) {
		for (std::size_t i = 0; i < entries_.size(); ++i) {
			for (std::size_t j = 0; j < i; ++j) {
				if (entries_[i].name == entries_[j].name) {
					throw Error(ErrorCode::DuplicateValue, "feature '" + entries_[i].name + "' listed twice");
				}
			}
		}
	}

	static const MetaFeatureCatalog& standard() {
		using C = FeatureCategory;
		static const MetaFeatureCatalog catalog("tsselect-mf32-v1", {
		    {"length", C::Simple, true},
		    {"min", C::Simple, false},
		    {"max", C::Simple, false},
		    {"range", C::Simple, true},
		    {"last_value", C::Simple, false},
		    {"mean_abs_diff", C::Simple, true},
		    {"mean", C::Statistical, false},
		    {"std", C::Statistical, true},
		    {"skewness", C::Statistical, true},
		    {"kurtosis", C::Statistical, true},
		    {"median", C::Statistical, false},
		    {"iqr", C::Statistical, true},
		    {"acf_lag1", C::Statistical, true},
		    {"acf_lag2", C::Statistical, true},
		    {"trend_slope", C::Statistical, true},
		    {"turning_point_fraction", C::Statistical, true},
		    {"histogram_entropy", C::InfoTheoretic, true},
		    {"permutation_entropy", C::InfoTheoretic, true},
		    {"unique_ratio", C::InfoTheoretic, true},
		    {"lag1_mutual_information", C::InfoTheoretic, true},
		    {"dominant_bin", C::Spectral, true},
		    {"dominant_power_fraction", C::Spectral, true},
		    {"spectral_entropy", C::Spectral, true},
		    {"low_quartile_power_ratio", C::Spectral, true},
		    {"spectral_centroid", C::Spectral, true},
		    {"high_quartile_power_ratio", C::Spectral, true},
		    {"snaive_mse_m1", C::Landmarker, true},
		    {"snaive_mse_m5", C::Landmarker, true},
		    {"ar1_coefficient", C::Landmarker, true},
		    {"ar1_residual_variance", C::Landmarker, true},
		    {"mean_forecast_mse", C::Landmarker, true},
		    {"drift_forecast_mse", C::Landmarker, true},
		});
		return catalog;
	}

	const std::string& id() const { return id_; }
	std::size_t d() const { return entries_.size(); }
	const std::vector<FeatureEntry>& entries() const { return entries_; }

	std::vector<std::string> names() const {
		std::vector<std::string> out;
		for (const auto& e : entries_) out.push_back(e.name);
		return out;
	}

	/// "name,category,shift_invariant" lines under a "# catalog <id>" header.
	void write(std::ostream& os) const {
		os << "# catalog " << id_ << "\n";
		os << "name,category,shift_invariant\n";
		for (const auto& e : entries_) {
			os << e.name << ',' << to_string(e.category) << ',' << (e.shift_invariant ? 1 : 0) << '\n';
		}
	}

private:
	std::string id_;
	std::vector<FeatureEntry> entries_;
};

struct MetaFeatureVector {
	std::vector<double> values;
	/// True where a non-finite intermediate was replaced by 0.
	std::vector<bool> imputed;
	std::string catalog_id;

	std::size_t size() const { return values.size(); }
};

inline constexpr std::size_t kMinFeatureWindow = 4;

namespace detail {

inline double quantile_sorted(const std::vector<double>& s, double p) {
	const double h = (static_cast<double>(s.size()) - 1.0) * p;
	const auto lo = static_cast<std::size_t>(std::floor(h));
	const auto hi = std::min(lo + 1, s.size() - 1);
	return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline double entropy_bits(const std::vector<double>& counts) {
	double total = 0.0;
	for (double c : counts) total += c;
	double h = 0.0;
	for (double c : counts) {
		if (c > 0.0) {
			const double p = c / total;
			h -= p * std::log2(p);
		}
	}
	return h;
}

inline std::size_t equal_width_bin(double x, double lo, double range, std::size_t bins) {
	if (!(range > 0.0)) return 0;
	const auto b = static_cast<std::size_t>(std::floor((x - lo) / range * static_cast<double>(bins)));
	return std::min(b, bins - 1);
}

/// One-step rolling-origin MSE of a forecaster over targets t = first..n-1.
template <typename Forecast>
double rolling_mse(std::span<const double> x, std::size_t first, Forecast&& forecast) {
	double sse = 0.0;
	std::size_t count = 0;
	for (std::size_t t = first; t < x.size(); ++t) {
		const double e = x[t] - forecast(x.first(t));
		sse += e * e;
		++count;
	}
	return count ? sse / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

inline std::map<std::string, double, std::less<>> compute_all(std::span<const double> x) {
	constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
	const std::size_t n = x.size();
	const double dn = static_cast<double>(n);
	std::map<std::string, double, std::less<>> f;

	std::vector<double> sorted(x.begin(), x.end());
	std::sort(sorted.begin(), sorted.end());
	const double lo = sorted.front();
	const double hi = sorted.back();
	const double range = hi - lo;
	const bool flat = range == 0.0;

	double abs_diff = 0.0;
	for (std::size_t i = 1; i < n; ++i) abs_diff += std::abs(x[i] - x[i - 1]);

	f["length"] = dn;
	f["min"] = lo;
	f["max"] = hi;
	f["range"] = range;
	f["last_value"] = x.back();
	f["mean_abs_diff"] = abs_diff / (dn - 1.0);

	double mean = 0.0;
	for (double v : x) mean += v;
	mean /= dn;
	double m2 = 0.0, m3 = 0.0, m4 = 0.0;
	for (double v : x) {
		const double c = v - mean;
		m2 += c * c;
		m3 += c * c * c;
		m4 += c * c * c * c;
	}
	m2 /= dn;
	m3 /= dn;
	m4 /= dn;
	f["mean"] = mean;
	f["std"] = flat ? 0.0 : std::sqrt(m2);
	f["skewness"] = flat ? kNaN : m3 / std::pow(m2, 1.5);
	f["kurtosis"] = flat ? kNaN : m4 / (m2 * m2) - 3.0;
	f["median"] = quantile_sorted(sorted, 0.5);
	f["iqr"] = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);

	auto acf = [&](std::size_t lag) {
		if (flat) return kNaN;
		double num = 0.0;
		for (std::size_t t = 0; t + lag < n; ++t) num += (x[t] - mean) * (x[t + lag] - mean);
		return num / (m2 * dn);
	};
	f["acf_lag1"] = acf(1);
	f["acf_lag2"] = acf(2);

	const double tbar = (dn - 1.0) / 2.0;
	double sxy = 0.0, sxx = 0.0;
	for (std::size_t t = 0; t < n; ++t) {
		const double dt = static_cast<double>(t) - tbar;
		sxy += dt * (x[t] - mean);
		sxx += dt * dt;
	}
	f["trend_slope"] = sxy / sxx;

	std::size_t turning = 0;
	for (std::size_t i = 1; i + 1 < n; ++i) {
		if ((x[i] > x[i - 1] && x[i] > x[i + 1]) || (x[i] < x[i - 1] && x[i] < x[i + 1])) ++turning;
	}
	f["turning_point_fraction"] = static_cast<double>(turning) / (dn - 2.0);

	// Information-theoretic
	{
		std::vector<double> hist(8, 0.0);
		for (double v : x) hist[equal_width_bin(v, lo, range, 8)] += 1.0;
		f["histogram_entropy"] = entropy_bits(hist);

		std::vector<double> patterns(6, 0.0);
		for (std::size_t i = 0; i + 2 < n; ++i) {
			std::array<std::size_t, 3> idx{0, 1, 2};
			std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[i + a] < x[i + b]; });
			// Lehmer code of the ordinal pattern
			const std::size_t code = idx[0] * 2 + (idx[1] > idx[2] ? 1 : 0);
			patterns[code] += 1.0;
		}
		f["permutation_entropy"] = entropy_bits(patterns) / std::log2(6.0);

		std::vector<double> uniq = sorted;
		uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
		f["unique_ratio"] = static_cast<double>(uniq.size()) / dn;

		constexpr std::size_t kBins = 4;
		std::vector<double> joint(kBins * kBins, 0.0), left(kBins, 0.0), right(kBins, 0.0);
		for (std::size_t t = 0; t + 1 < n; ++t) {
			const auto a = equal_width_bin(x[t], lo, range, kBins);
			const auto b = equal_width_bin(x[t + 1], lo, range, kBins);
			joint[a * kBins + b] += 1.0;
			left[a] += 1.0;
			right[b] += 1.0;
		}
		f["lag1_mutual_information"] = entropy_bits(left) + entropy_bits(right) - entropy_bits(joint);
	}

	// Spectral: power of the mean-removed n-point DFT, bins 1..n/2.
	{
		const std::size_t bins = n / 2;
		std::vector<double> power(bins + 1, 0.0);
		double total = 0.0;
		for (std::size_t k = 1; k <= bins; ++k) {
			double re = 0.0, im = 0.0;
			for (std::size_t t = 0; t < n; ++t) {
				const double angle = 2.0 * std::numbers::pi * static_cast<double>(k * t % n) / dn;
				re += (x[t] - mean) * std::cos(angle);
				im -= (x[t] - mean) * std::sin(angle);
			}
			power[k] = re * re + im * im;
			total += power[k];
		}
		if (flat || !(total > 0.0)) {
			for (auto name : {"dominant_bin", "dominant_power_fraction", "spectral_entropy", "low_quartile_power_ratio",
			                  "spectral_centroid", "high_quartile_power_ratio"}) {
				f[name] = kNaN;
			}
		} else {
			std::size_t dominant = 1;
			double centroid = 0.0;
			std::vector<double> share;
			for (std::size_t k = 1; k <= bins; ++k) {
				if (power[k] > power[dominant]) dominant = k;
				centroid += static_cast<double>(k) * power[k];
				share.push_back(power[k]);
			}
			const std::size_t q = std::max<std::size_t>(1, bins / 4);
			double low = 0.0, high = 0.0;
			for (std::size_t k = 1; k <= q; ++k) low += power[k];
			for (std::size_t k = bins - q + 1; k <= bins; ++k) high += power[k];
			f["dominant_bin"] = static_cast<double>(dominant);
			f["dominant_power_fraction"] = power[dominant] / total;
			f["spectral_entropy"] = bins > 1 ? entropy_bits(share) / std::log2(static_cast<double>(bins)) : 0.0;
			f["low_quartile_power_ratio"] = low / total;
			f["spectral_centroid"] = centroid / total / static_cast<double>(bins);
			f["high_quartile_power_ratio"] = high / total;
		}
	}

	// Landmarkers
	for (std::size_t m : {std::size_t{1}, std::size_t{5}}) {
		f["snaive_mse_m" + std::to_string(m)] = rolling_mse(x, std::max<std::size_t>(2, m), [m](std::span<const double> h) {
			return seasonal_naive(h, m).prediction;
		});
	}
	if (n >= 5) {
		const auto ar = fit_ar_ols(x, 1, Trend::Constant);
		f["ar1_coefficient"] = ar.coefficients[0];
		f["ar1_residual_variance"] = ar.residual_variance;
	} else {
		f["ar1_coefficient"] = kNaN;
		f["ar1_residual_variance"] = kNaN;
	}
	f["mean_forecast_mse"] = rolling_mse(x, 2, [](std::span<const double> h) {
		return mean_drift_forecast(h, BaselineKind::Mean).prediction;
	});
	f["drift_forecast_mse"] = rolling_mse(x, 2, [](std::span<const double> h) {
		return mean_drift_forecast(h, BaselineKind::Drift).prediction;
	});
	return f;
}

} // namespace detail

/// Feature vector in catalog order; non-finite values are imputed to 0 and flagged.
inline MetaFeatureVector extract(std::span<const double> window,
                                 const MetaFeatureCatalog& catalog = MetaFeatureCatalog::standard()) {
	if (window.size() < kMinFeatureWindow) {
		throw Error(ErrorCode::WindowTooShort, "meta-features need at least " + std::to_string(kMinFeatureWindow) +
		                                           " observations, got " + std::to_string(window.size()));
	}
	const auto all = detail::compute_all(window);
	MetaFeatureVector v;
	v.catalog_id = catalog.id();
	for (const auto& e : catalog.entries()) {
		const auto it = all.find(e.name);
		if (it == all.end()) {
			throw Error(ErrorCode::CatalogMismatch, "no extractor for feature '" + e.name + "'");
		}
		const bool bad = !std::isfinite(it->second);
		v.values.push_back(bad ? 0.0 : it->second);
		v.imputed.push_back(bad);
	}
	return v;
}

inline MetaFeatureVector extract(const Window& w, const MetaFeatureCatalog& catalog = MetaFeatureCatalog::standard()) {
	return extract(w.view(), catalog);
}

/// Element-wise mean over a dataset's window vectors.
inline MetaFeatureVector dataset_profile(std::span<const MetaFeatureVector> windows) {
	if (windows.empty()) {
		throw Error(ErrorCode::EmptyInput, "dataset_profile needs at least one window");
	}
	MetaFeatureVector out;
	out.catalog_id = windows.front().catalog_id;
	out.values.assign(windows.front().size(), 0.0);
	out.imputed.assign(windows.front().size(), false);
	for (const auto& w : windows) {
		if (w.catalog_id != out.catalog_id || w.size() != out.size()) {
			throw Error(ErrorCode::CatalogMismatch, "window vectors come from different catalogs");
		}
		for (std::size_t i = 0; i < w.size(); ++i) {
			out.values[i] += w.values[i];
			out.imputed[i] = out.imputed[i] || w.imputed[i];
		}
	}
	for (auto& v : out.values) v /= static_cast<double>(windows.size());
	return out;
}

struct FeatureRow {
	std::string dataset_id;
	std::size_t window_start = 0;
	MetaFeatureVector features;
};

/// Delimited feature matrix: header "dataset_id,window_start,<catalog names>".
inline void write_feature_matrix(std::ostream& os, const MetaFeatureCatalog& catalog, std::span<const FeatureRow> rows) {
	os << "dataset_id,window_start";
	for (const auto& e : catalog.entries()) os << ',' << e.name;
	os << '\n';
	for (const auto& r : rows) {
		if (r.features.catalog_id != catalog.id()) {
			throw Error(ErrorCode::CatalogMismatch, "row for '" + r.dataset_id + "' uses another catalog");
		}
		os << r.dataset_id << ',' << r.window_start;
		for (double v : r.features.values) os << ',' << text::format_exact(v);
		os << '\n';
	}
}

} // namespace tsselect
