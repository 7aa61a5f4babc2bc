#pragma once

#include "tsselect/core_data.hpp"
#include "tsselect/error.hpp"
#include "tsselect/model_space.hpp"
#include "tsselect/random.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tsselect {

class Stopwatch {
public:
	Stopwatch() : start_(std::chrono::steady_clock::now()) {}
	double seconds() const {
		return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
	}

private:
	std::chrono::steady_clock::time_point start_;
};

struct RepresentationTransform {
	Representation kind = Representation::Raw;
	double alpha = 0.3;

	static RepresentationTransform raw() { return {Representation::Raw, 1.0}; }
	static RepresentationTransform exp_smoothing(double alpha = 0.3) {
		if (!(alpha > 0.0 && alpha <= 1.0)) {
			throw Error(ErrorCode::ConfigError, "smoothing alpha must lie in (0, 1]");
		}
		return {Representation::ExpSmoothing, alpha};
	}
	static RepresentationTransform of(Representation kind, double alpha) {
		return kind == Representation::Raw ? raw() : exp_smoothing(alpha);
	}
};

/// Raw: identity. ExpSmoothing: s_0 = x_0, s_t = alpha*x_t + (1 - alpha)*s_{t-1}.
inline std::vector<double> apply_representation(std::span<const double> x, const RepresentationTransform& t) {
	std::vector<double> out(x.begin(), x.end());
	if (t.kind == Representation::Raw || out.empty()) {
		return out;
	}
	for (std::size_t i = 1; i < out.size(); ++i) {
		out[i] = t.alpha * x[i] + (1.0 - t.alpha) * out[i - 1];
	}
	return out;
}

inline Window apply_representation(const Window& w, const RepresentationTransform& t) {
	Window out = w;
	out.values = apply_representation(w.view(), t);
	return out;
}

struct ForecastResult {
	double prediction = 0.0;
	double fit_time = 0.0;
	ModelId model_id = 0;
};

/// Value one season before the forecast point; first value when the season exceeds the history.
inline ForecastResult seasonal_naive(std::span<const double> x, std::size_t season_length) {
	Stopwatch sw;
	if (x.empty() || season_length == 0) {
		throw Error(ErrorCode::TooShort, "seasonal naive needs a non-empty window and season_length >= 1");
	}
	const double pred = season_length <= x.size() ? x[x.size() - season_length] : x.front();
	return {pred, sw.seconds(), 0};
}

enum class Trend { None, Constant, Time, ConstantTime };

inline std::optional<Trend> parse_trend(std::string_view s) {
	if (s == "n") return Trend::None;
	if (s == "c") return Trend::Constant;
	if (s == "t") return Trend::Time;
	if (s == "ct") return Trend::ConstantTime;
	return std::nullopt;
}

struct ArFit {
	/// Lag coefficients (lag 1 first), then the constant, then the time slope, as present.
	std::vector<double> coefficients;
	double prediction = 0.0;
	/// Mean squared in-sample residual.
	double residual_variance = 0.0;
	double fit_time = 0.0;
};

/**
 * @brief Least-squares autoregression with optional deterministic terms.
 *
 * Regresses x_t on (x_{t-1}, ..., x_{t-order}), plus 1 and/or t for the
 * requested trend, over t = order..n-1; the forecast evaluates the fitted
 * equation at t = n. Rank-deficient designs get the minimum-norm solution.
 */
inline ArFit fit_ar_ols(std::span<const double> x, std::size_t order, Trend trend) {
	Stopwatch sw;
	if (order == 0 || x.size() < order + 4) {
		throw Error(ErrorCode::TooShort, "AR(" + std::to_string(order) + ") needs at least " +
		                                     std::to_string(order + 4) + " observations");
	}
	const bool constant = trend == Trend::Constant || trend == Trend::ConstantTime;
	const bool time = trend == Trend::Time || trend == Trend::ConstantTime;
	const auto rows = static_cast<Eigen::Index>(x.size() - order);
	const auto cols = static_cast<Eigen::Index>(order + (constant ? 1 : 0) + (time ? 1 : 0));

	auto regressors = [&](std::size_t t, auto&& row) {
		Eigen::Index c = 0;
		for (std::size_t lag = 1; lag <= order; ++lag) {
			row(c++) = x[t - lag];
		}
		if (constant) row(c++) = 1.0;
		if (time) row(c++) = static_cast<double>(t);
	};

	Eigen::MatrixXd design(rows, cols);
	Eigen::VectorXd target(rows);
	for (Eigen::Index r = 0; r < rows; ++r) {
		const auto t = order + static_cast<std::size_t>(r);
		regressors(t, design.row(r));
		target(r) = x[t];
	}
	const Eigen::VectorXd beta = design.completeOrthogonalDecomposition().solve(target);
	Eigen::RowVectorXd next(cols);
	regressors(x.size(), next);

	ArFit fit;
	fit.coefficients.assign(beta.data(), beta.data() + beta.size());
	fit.prediction = next.dot(beta);
	fit.residual_variance = (target - design * beta).squaredNorm() / static_cast<double>(rows);
	fit.fit_time = sw.seconds();
	return fit;
}

inline ForecastResult ar_ols(std::span<const double> x, std::size_t order, Trend trend) {
	const auto fit = fit_ar_ols(x, order, trend);
	return {fit.prediction, fit.fit_time, 0};
}

enum class BaselineKind { Mean, Drift };

inline ForecastResult mean_drift_forecast(std::span<const double> x, BaselineKind kind) {
	Stopwatch sw;
	if (x.size() < 2) {
		throw Error(ErrorCode::TooShort, "mean/drift forecast needs at least 2 observations");
	}
	double pred = 0.0;
	if (kind == BaselineKind::Mean) {
		pred = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
	} else {
		pred = x.back() + (x.back() - x.front()) / static_cast<double>(x.size() - 1);
	}
	return {pred, sw.seconds(), 0};
}

struct RandomForestOptions {
	std::size_t n_estimators = 100;
	/// nullopt grows trees until leaves are pure or hold a single sample.
	std::optional<std::size_t> max_depth;
	std::uint64_t seed = 0;
	std::size_t lags = 3;
	/// Resample the training rows per tree. Off trains every tree on the full lag embedding.
	bool bootstrap = true;
};

namespace detail {

struct LagDataset {
	std::vector<std::vector<double>> features; // row-major, one row per target
	std::vector<double> targets;
};

inline LagDataset lag_embed(std::span<const double> x, std::size_t lags) {
	LagDataset d;
	for (std::size_t t = lags; t < x.size(); ++t) {
		std::vector<double> row(lags);
		for (std::size_t j = 0; j < lags; ++j) {
			row[j] = x[t - lags + j];
		}
		d.features.push_back(std::move(row));
		d.targets.push_back(x[t]);
	}
	return d;
}

class RegressionTree {
public:
	RegressionTree(const LagDataset& data, std::vector<std::size_t> rows, std::optional<std::size_t> max_depth) {
		root_ = grow(data, rows, 0, max_depth);
	}

	double predict(std::span<const double> features) const {
		const Node* node = root_.get();
		while (node->left) {
			node = features[node->feature] <= node->threshold ? node->left.get() : node->right.get();
		}
		return node->value;
	}

private:
	struct Node {
		double value = 0.0;
		std::size_t feature = 0;
		double threshold = 0.0;
		std::unique_ptr<Node> left;
		std::unique_ptr<Node> right;
	};

	static double mean_of(const LagDataset& d, const std::vector<std::size_t>& rows) {
		double s = 0.0;
		for (auto r : rows) s += d.targets[r];
		return s / static_cast<double>(rows.size());
	}

	static double sse_of(const LagDataset& d, const std::vector<std::size_t>& rows) {
		if (rows.empty()) return 0.0;
		const double m = mean_of(d, rows);
		double s = 0.0;
		for (auto r : rows) s += (d.targets[r] - m) * (d.targets[r] - m);
		return s;
	}

	static std::unique_ptr<Node> grow(const LagDataset& d, const std::vector<std::size_t>& rows, std::size_t depth,
	                                  std::optional<std::size_t> max_depth) {
		auto node = std::make_unique<Node>();
		node->value = mean_of(d, rows);
		if (rows.size() < 2 || (max_depth && depth >= *max_depth)) {
			return node;
		}
		const double parent = sse_of(d, rows);
		double best = parent;
		std::vector<std::size_t> best_left, best_right;
		const std::size_t nfeat = d.features[rows.front()].size();
		for (std::size_t f = 0; f < nfeat; ++f) {
			std::vector<double> values;
			for (auto r : rows) values.push_back(d.features[r][f]);
			std::sort(values.begin(), values.end());
			values.erase(std::unique(values.begin(), values.end()), values.end());
			for (std::size_t i = 0; i + 1 < values.size(); ++i) {
				const double threshold = 0.5 * (values[i] + values[i + 1]);
				std::vector<std::size_t> left, right;
				for (auto r : rows) (d.features[r][f] <= threshold ? left : right).push_back(r);
				const double sse = sse_of(d, left) + sse_of(d, right);
				if (sse < best) {
					best = sse;
					node->feature = f;
					node->threshold = threshold;
					best_left = std::move(left);
					best_right = std::move(right);
				}
			}
		}
		if (best_left.empty()) {
			return node;
		}
		node->left = grow(d, best_left, depth + 1, max_depth);
		node->right = grow(d, best_right, depth + 1, max_depth);
		return node;
	}

	std::unique_ptr<Node> root_;
};

} // namespace detail

/**
 * @brief Bagged variance-reduction regression trees on a lag embedding.
 *
 * Each tree sees rows (x_{t-lags}, ..., x_{t-1}) -> x_t; the forecast is the
 * ensemble mean evaluated at the final lag vector.
 */
inline ForecastResult random_forest_lite(std::span<const double> x, const RandomForestOptions& opt) {
	Stopwatch sw;
	if (x.size() < 6 || x.size() <= opt.lags || opt.n_estimators == 0) {
		throw Error(ErrorCode::TooShort, "random forest needs at least 6 observations");
	}
	const auto data = detail::lag_embed(x, opt.lags);
	const std::vector<double> query(x.end() - static_cast<std::ptrdiff_t>(opt.lags), x.end());
	const std::size_t n = data.targets.size();
	Rng rng(opt.seed);
	double sum = 0.0;
	for (std::size_t tree = 0; tree < opt.n_estimators; ++tree) {
		std::vector<std::size_t> rows(n);
		if (opt.bootstrap) {
			for (auto& r : rows) r = static_cast<std::size_t>(rng.uniform_index(n));
		} else {
			std::iota(rows.begin(), rows.end(), std::size_t{0});
		}
		sum += detail::RegressionTree(data, std::move(rows), opt.max_depth).predict(query);
	}
	return {sum / static_cast<double>(opt.n_estimators), sw.seconds(), 0};
}

struct ForecasterOptions {
	double smoothing_alpha = 0.3;
	std::size_t ar_order = 1;
	std::uint64_t forest_seed = 0;
	std::size_t forest_lags = 3;
};

inline bool is_native(Algorithm a) {
	return a == Algorithm::SeasonalNaive || a == Algorithm::VAR || a == Algorithm::RandomForest;
}

/**
 * @brief One-step forecast of a spec on a history, or nullopt for algorithms
 * without a native implementation (DeepAR, DeepFactor, Prophet, GaussianProcess).
 *
 * The representation is applied to the history before fitting. VAR's
 * cov_type only changes inference statistics, so it does not affect the
 * point forecast here.
 */
inline std::optional<ForecastResult> forecast_spec(const ModelSpec& spec, std::span<const double> history,
                                                   const ForecasterOptions& opt = {}) {
	if (!is_native(spec.algorithm)) {
		return std::nullopt;
	}
	Stopwatch sw;
	const auto series = apply_representation(history, RepresentationTransform::of(spec.representation, opt.smoothing_alpha));
	auto int_param = [&](std::string_view name) -> std::optional<std::size_t> {
		const auto* v = spec.find(name);
		if (!v || !v->numeric()) return std::nullopt;
		return static_cast<std::size_t>(v->number());
	};
	ForecastResult r;
	switch (spec.algorithm) {
	case Algorithm::SeasonalNaive:
		r = seasonal_naive(series, int_param("season_length").value_or(1));
		break;
	case Algorithm::VAR: {
		const auto* trend = spec.find("trend");
		r = ar_ols(series, opt.ar_order, trend ? parse_trend(trend->text()).value_or(Trend::Constant) : Trend::Constant);
		break;
	}
	case Algorithm::RandomForest: {
		RandomForestOptions rf;
		rf.n_estimators = int_param("n_estimators").value_or(100);
		rf.max_depth = int_param("max_depth");
		rf.seed = opt.forest_seed;
		rf.lags = opt.forest_lags;
		r = random_forest_lite(series, rf);
		break;
	}
	default:
		return std::nullopt;
	}
	r.fit_time = sw.seconds();
	return r;
}

} // namespace tsselect
