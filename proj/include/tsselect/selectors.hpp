#pragma once

#include "tsselect/error.hpp"
#include "tsselect/forecasters.hpp"
#include "tsselect/llm_client.hpp"
#include "tsselect/meta_features.hpp"
#include "tsselect/model_space.hpp"
#include "tsselect/performance_matrix.hpp"
#include "tsselect/prompting.hpp"
#include "tsselect/random.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace tsselect {

enum class StrategyKind { Random, Popular, SotaVariant, Isac, MlpMeta, Llm };

inline std::string_view to_string(StrategyKind k) {
	switch (k) {
	case StrategyKind::Random: return "random";
	case StrategyKind::Popular: return "popular";
	case StrategyKind::SotaVariant: return "sota";
	case StrategyKind::Isac: return "isac";
	case StrategyKind::MlpMeta: return "mlp";
	case StrategyKind::Llm: return "llm";
	}
	return "?";
}

/// Outcome of one strategy on one dataset.
struct SelectionResult {
	std::string dataset_id;
	std::optional<ModelId> model_id;
	/// Set when model_id is empty.
	InvalidReason reason = InvalidReason::ParseError;
	std::string detail;
	StrategyKind kind = StrategyKind::Random;
	double latency_seconds = 0.0;
	long long input_tokens = 0;
	long long output_tokens = 0;
	bool tokens_estimated = false;
	int attempts = 1;
	bool snapped = false;
	std::string reasoning_text;
	/// Provider error behind an Invalid(Transport) outcome.
	std::optional<ErrorCode> transport_error;

	bool valid() const { return model_id.has_value(); }
};

inline SelectionResult valid_selection(StrategyKind kind, ModelId id, double latency = 0.0) {
	SelectionResult r;
	r.kind = kind;
	r.model_id = id;
	r.latency_seconds = latency;
	return r;
}

/// Uniform draw over [0, m).
inline ModelId random_model(std::size_t m, std::uint64_t seed) {
	if (m == 0) throw Error(ErrorCode::EmptySpace, "cannot select from an empty model space");
	Rng rng(seed);
	return static_cast<ModelId>(rng.uniform_index(m));
}

inline SelectionResult select_random(const ModelSpace& space, std::uint64_t seed) {
	Stopwatch clock;
	const auto id = random_model(space.size(), seed);
	return valid_selection(StrategyKind::Random, id, clock.seconds());
}

/// Fixed configuration for the popular-model baseline.
struct PopularConfig {
	Algorithm algorithm = Algorithm::Prophet;
	std::vector<Hyperparameter> hyperparameters = {{"changepoint_prior_scale", HyperValue("0.1")},
	                                               {"seasonality_prior_scale", HyperValue("10.0")}};
	Representation representation = Representation::Raw;
};

inline SelectionResult select_popular(const ModelSpace& space, const PopularConfig& config = {}) {
	Stopwatch clock;
	const auto id = space.lookup(config.algorithm, config.hyperparameters, config.representation);
	if (!id) {
		ModelSpec spec{config.algorithm, config.hyperparameters, config.representation};
		throw Error(ErrorCode::NotInSpace, spec.describe() + " is not in the model space");
	}
	return valid_selection(StrategyKind::Popular, *id, clock.seconds());
}

/**
 * @brief Best variant of one algorithm family on the training tensor.
 *
 * Only complete columns (every window of every training dataset present)
 * compete; the score is the mean MSE over all their entries, ties to the
 * lowest id.
 */
inline ModelId select_sota_variant(const PerformanceTensor& train, const ModelSpace& space, Algorithm family) {
	std::optional<ModelId> best;
	double best_score = 0.0;
	for (const auto id : space.ids_of(family)) {
		double sum = 0.0;
		bool complete = train.datasets() > 0 && train.windows() > 0;
		for (std::size_t w = 0; w < train.windows() && complete; ++w) {
			for (std::size_t d = 0; d < train.datasets(); ++d) {
				if (!train.present(w, d, id)) {
					complete = false;
					break;
				}
				sum += train.mse(w, d, id);
			}
		}
		if (!complete) continue;
		const double score = sum / static_cast<double>(train.windows() * train.datasets());
		if (!best || score < best_score) {
			best = id;
			best_score = score;
		}
	}
	if (!best) {
		throw Error(ErrorCode::AllMissingForFamily,
		            std::string(to_string(family)) + " has no complete column in the training tensor");
	}
	return *best;
}

/// Per-feature z-scoring with statistics from a training set; zero-variance features map to 0.
struct Standardizer {
	std::vector<double> mean;
	std::vector<double> scale;

	static Standardizer fit(const std::vector<std::vector<double>>& rows) {
		Standardizer s;
		if (rows.empty()) return s;
		const auto d = rows.front().size();
		s.mean.assign(d, 0.0);
		s.scale.assign(d, 0.0);
		for (const auto& r : rows) {
			for (std::size_t i = 0; i < d; ++i) s.mean[i] += r[i];
		}
		for (auto& m : s.mean) m /= static_cast<double>(rows.size());
		for (const auto& r : rows) {
			for (std::size_t i = 0; i < d; ++i) s.scale[i] += (r[i] - s.mean[i]) * (r[i] - s.mean[i]);
		}
		for (auto& v : s.scale) v = std::sqrt(v / static_cast<double>(rows.size()));
		return s;
	}

	std::vector<double> apply(const std::vector<double>& x) const {
		if (x.size() != mean.size()) {
			throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(mean.size()) + " features, got " +
			                                          std::to_string(x.size()));
		}
		std::vector<double> out(x.size(), 0.0);
		for (std::size_t i = 0; i < x.size(); ++i) {
			if (scale[i] > 0.0) out[i] = (x[i] - mean[i]) / scale[i];
		}
		return out;
	}
};

namespace detail {

inline std::vector<std::vector<double>> feature_rows(const std::vector<MetaFeatureVector>& profiles) {
	std::vector<std::vector<double>> rows;
	for (const auto& p : profiles) {
		if (!rows.empty() && p.size() != rows.front().size()) {
			throw Error(ErrorCode::ShapeMismatch, "profiles have different dimensions");
		}
		rows.push_back(p.values);
	}
	return rows;
}

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
	double s = 0.0;
	for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
	return s;
}

/// Lowest index with the minimal non-NaN value.
inline std::optional<std::size_t> argmin(const std::vector<double>& v) {
	std::optional<std::size_t> best;
	for (std::size_t i = 0; i < v.size(); ++i) {
		if (std::isnan(v[i])) continue;
		if (!best || v[i] < v[*best]) best = i;
	}
	return best;
}

inline std::size_t nearest(const std::vector<std::vector<double>>& centroids, const std::vector<double>& x) {
	std::size_t best = 0;
	double best_d = std::numeric_limits<double>::infinity();
	for (std::size_t c = 0; c < centroids.size(); ++c) {
		const double d = squared_distance(centroids[c], x);
		if (d < best_d) {
			best = c;
			best_d = d;
		}
	}
	return best;
}

inline nlohmann::json vector_json(const std::vector<double>& v) { return nlohmann::json(v); }

} // namespace detail

/**
 * @brief Clustering meta-learner: k-means over standardized training profiles,
 * one best model per cluster.
 */
struct IsacModel {
	std::size_t k = 0;
	std::vector<std::vector<double>> centroids;
	std::vector<ModelId> cluster_best;
	/// Cluster of each training dataset, in training order.
	std::vector<std::size_t> assignments;
	std::size_t iterations = 0;
	Standardizer standardizer;
	std::string catalog_id;
	std::string space_checksum;
};

struct IsacOptions {
	std::size_t k = 5;
	std::uint64_t seed = 0;
	std::size_t max_iterations = 100;
};

/**
 * @brief Fit ISAC on per-dataset profiles aligned with train's dataset order.
 *
 * k-means++ seeding, Lloyd iterations to an assignment fixpoint (at most
 * max_iterations). An empty cluster is reseeded with the point farthest
 * from its current centroid. Cluster best = argmin over models of the mean
 * of member datasets' aggregate MSE.
 */
inline IsacModel isac_fit(const std::vector<MetaFeatureVector>& profiles, const PerformanceTensor& train,
                          const IsacOptions& opt = {}) {
	const auto n = profiles.size();
	if (opt.k < 1 || n < opt.k) {
		throw Error(ErrorCode::TooFewDatasets,
		            "ISAC needs at least k=" + std::to_string(opt.k) + " datasets, got " + std::to_string(n));
	}
	if (train.datasets() != n) throw Error(ErrorCode::ShapeMismatch, "one profile per training dataset required");

	IsacModel model;
	model.k = opt.k;
	model.catalog_id = profiles.front().catalog_id;
	model.space_checksum = train.space_checksum();
	const auto raw = detail::feature_rows(profiles);
	model.standardizer = Standardizer::fit(raw);
	std::vector<std::vector<double>> x;
	for (const auto& r : raw) x.push_back(model.standardizer.apply(r));

	Rng rng(opt.seed);
	std::vector<std::size_t> chosen = {static_cast<std::size_t>(rng.uniform_index(n))};
	while (chosen.size() < opt.k) {
		std::vector<double> weight(n);
		double total = 0.0;
		for (std::size_t i = 0; i < n; ++i) {
			double best = std::numeric_limits<double>::infinity();
			for (auto c : chosen) best = std::min(best, detail::squared_distance(x[i], x[c]));
			weight[i] = best;
			total += best;
		}
		std::size_t pick = n;
		if (total > 0.0) {
			double u = rng.uniform01() * total;
			for (std::size_t i = 0; i < n; ++i) {
				if (weight[i] <= 0.0) continue;
				pick = i;
				if (u < weight[i]) break;
				u -= weight[i];
			}
		} else {
			for (std::size_t i = 0; i < n && pick == n; ++i) {
				if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) pick = i;
			}
		}
		chosen.push_back(pick);
	}
	for (auto c : chosen) model.centroids.push_back(x[c]);

	const auto d = x.front().size();
	model.assignments.assign(n, opt.k);
	for (model.iterations = 0; model.iterations < opt.max_iterations; ++model.iterations) {
		std::vector<std::size_t> next(n);
		for (std::size_t i = 0; i < n; ++i) next[i] = detail::nearest(model.centroids, x[i]);
		for (std::size_t c = 0; c < opt.k; ++c) {
			if (std::find(next.begin(), next.end(), c) != next.end()) continue;
			std::size_t far = 0;
			double far_d = -1.0;
			for (std::size_t i = 0; i < n; ++i) {
				const double dist = detail::squared_distance(x[i], model.centroids[next[i]]);
				const bool singleton = std::count(next.begin(), next.end(), next[i]) == 1;
				if (!singleton && dist > far_d) {
					far = i;
					far_d = dist;
				}
			}
			next[far] = c;
			model.centroids[c] = x[far];
		}
		if (next == model.assignments) break;
		model.assignments = std::move(next);
		for (std::size_t c = 0; c < opt.k; ++c) {
			std::vector<double> sum(d, 0.0);
			std::size_t count = 0;
			for (std::size_t i = 0; i < n; ++i) {
				if (model.assignments[i] != c) continue;
				for (std::size_t j = 0; j < d; ++j) sum[j] += x[i][j];
				++count;
			}
			for (auto& v : sum) v /= static_cast<double>(count);
			model.centroids[c] = std::move(sum);
		}
	}

	std::vector<std::vector<double>> aggregates;
	for (std::size_t i = 0; i < n; ++i) aggregates.push_back(train.aggregate(i));
	const auto m = train.models();
	for (std::size_t c = 0; c < opt.k; ++c) {
		std::vector<double> score(m, std::numeric_limits<double>::quiet_NaN());
		for (ModelId j = 0; j < m; ++j) {
			double sum = 0.0;
			std::size_t count = 0;
			for (std::size_t i = 0; i < n; ++i) {
				if (model.assignments[i] == c && !std::isnan(aggregates[i][j])) {
					sum += aggregates[i][j];
					++count;
				}
			}
			if (count) score[j] = sum / static_cast<double>(count);
		}
		const auto best = detail::argmin(score);
		if (!best) throw Error(ErrorCode::AllMissing, "cluster " + std::to_string(c) + " has no scored model");
		model.cluster_best.push_back(*best);
	}
	return model;
}

/// Nearest centroid (ties to the lowest cluster index) of the standardized profile.
inline std::size_t isac_cluster(const IsacModel& model, const std::vector<double>& profile) {
	return detail::nearest(model.centroids, model.standardizer.apply(profile));
}

inline SelectionResult isac_select(const IsacModel& model, const MetaFeatureVector& profile) {
	Stopwatch clock;
	const auto c = isac_cluster(model, profile.values);
	return valid_selection(StrategyKind::Isac, model.cluster_best[c], clock.seconds());
}

struct MlpLayer {
	Eigen::MatrixXd weights; ///< out x in
	Eigen::VectorXd bias;
};

struct MlpOptions {
	std::vector<std::size_t> hidden = {64, 32};
	double learning_rate = 1e-3;
	std::size_t epochs = 200;
	std::size_t batch_size = 16;
	std::uint64_t seed = 0;
};

/**
 * @brief Fully connected regressor, ReLU on hidden layers, identity output.
 */
class MlpMetaModel {
public:
	MlpMetaModel() = default;

	/// Weights drawn N(0, 1) / sqrt(fan_in), zero biases.
	static MlpMetaModel init(const std::vector<std::size_t>& sizes, std::uint64_t seed) {
		if (sizes.size() < 2 || std::find(sizes.begin(), sizes.end(), 0u) != sizes.end()) {
			throw Error(ErrorCode::ShapeMismatch, "layer sizes need at least two positive entries");
		}
		MlpMetaModel net;
		net.sizes_ = sizes;
		Rng rng(seed);
		for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
			MlpLayer layer;
			layer.weights.resize(static_cast<Eigen::Index>(sizes[l + 1]), static_cast<Eigen::Index>(sizes[l]));
			const double scale = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
			for (Eigen::Index i = 0; i < layer.weights.rows(); ++i) {
				for (Eigen::Index j = 0; j < layer.weights.cols(); ++j) layer.weights(i, j) = rng.normal() * scale;
			}
			layer.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sizes[l + 1]));
			net.layers_.push_back(std::move(layer));
		}
		return net;
	}

	const std::vector<std::size_t>& sizes() const { return sizes_; }
	std::vector<MlpLayer>& layers() { return layers_; }
	const std::vector<MlpLayer>& layers() const { return layers_; }
	std::size_t input_size() const { return sizes_.front(); }
	std::size_t output_size() const { return sizes_.back(); }

	/// Forward pass on already standardized inputs, one row per sample.
	Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const {
		Eigen::MatrixXd a = x;
		for (std::size_t l = 0; l < layers_.size(); ++l) {
			Eigen::MatrixXd z = (a * layers_[l].weights.transpose()).rowwise() + layers_[l].bias.transpose();
			a = l + 1 < layers_.size() ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
		}
		return a;
	}

	/// Mean over samples and outputs of the squared error.
	double loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const {
		return (forward(x) - y).squaredNorm() / static_cast<double>(y.size());
	}

	/// Analytic gradient of loss(), flattened in parameters() order.
	Eigen::VectorXd gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const {
		std::vector<Eigen::MatrixXd> acts = {x};
		std::vector<Eigen::MatrixXd> pre;
		for (std::size_t l = 0; l < layers_.size(); ++l) {
			pre.push_back((acts.back() * layers_[l].weights.transpose()).rowwise() + layers_[l].bias.transpose());
			acts.push_back(l + 1 < layers_.size() ? Eigen::MatrixXd(pre.back().cwiseMax(0.0)) : pre.back());
		}
		Eigen::MatrixXd delta = 2.0 * (acts.back() - y) / static_cast<double>(y.size());
		std::vector<Eigen::MatrixXd> grad_w(layers_.size());
		std::vector<Eigen::VectorXd> grad_b(layers_.size());
		for (std::size_t l = layers_.size(); l-- > 0;) {
			grad_w[l] = delta.transpose() * acts[l];
			grad_b[l] = delta.colwise().sum().transpose();
			if (l > 0) {
				delta = (delta * layers_[l].weights).cwiseProduct(
				    pre[l - 1].unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
			}
		}
		Eigen::VectorXd out(parameter_count());
		Eigen::Index at = 0;
		for (std::size_t l = 0; l < layers_.size(); ++l) {
			out.segment(at, grad_w[l].size()) = Eigen::Map<const Eigen::VectorXd>(grad_w[l].data(), grad_w[l].size());
			at += grad_w[l].size();
			out.segment(at, grad_b[l].size()) = grad_b[l];
			at += grad_b[l].size();
		}
		return out;
	}

	Eigen::Index parameter_count() const {
		Eigen::Index n = 0;
		for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
		return n;
	}

	/// Layer by layer: weights (column-major), then bias.
	Eigen::VectorXd parameters() const {
		Eigen::VectorXd out(parameter_count());
		Eigen::Index at = 0;
		for (const auto& l : layers_) {
			out.segment(at, l.weights.size()) = Eigen::Map<const Eigen::VectorXd>(l.weights.data(), l.weights.size());
			at += l.weights.size();
			out.segment(at, l.bias.size()) = l.bias;
			at += l.bias.size();
		}
		return out;
	}

	void set_parameters(const Eigen::VectorXd& p) {
		if (p.size() != parameter_count()) throw Error(ErrorCode::ShapeMismatch, "parameter vector size");
		Eigen::Index at = 0;
		for (auto& l : layers_) {
			Eigen::Map<Eigen::VectorXd>(l.weights.data(), l.weights.size()) = p.segment(at, l.weights.size());
			at += l.weights.size();
			l.bias = p.segment(at, l.bias.size());
			at += l.bias.size();
		}
	}

	Standardizer standardizer;
	std::vector<double> loss_history;
	std::string catalog_id;
	std::string space_checksum;

private:
	std::vector<std::size_t> sizes_;
	std::vector<MlpLayer> layers_;
};

/**
 * @brief Per-dataset regression targets: aggregate MSE per model, with
 * missing entries replaced by the dataset's worst present aggregate.
 */
inline Eigen::MatrixXd mlp_targets(const PerformanceTensor& train) {
	Eigen::MatrixXd y(static_cast<Eigen::Index>(train.datasets()), static_cast<Eigen::Index>(train.models()));
	for (std::size_t d = 0; d < train.datasets(); ++d) {
		const auto agg = train.aggregate(d);
		double worst = -1.0;
		for (double v : agg) {
			if (!std::isnan(v)) worst = std::max(worst, v);
		}
		if (worst < 0.0) {
			throw Error(ErrorCode::AllMissing, "dataset '" + train.dataset_ids()[d] + "' has no scored model");
		}
		for (std::size_t j = 0; j < agg.size(); ++j) {
			y(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(j)) = std::isnan(agg[j]) ? worst : agg[j];
		}
	}
	return y;
}

/// Plain mini-batch gradient descent on standardized inputs; records the full-data loss after each epoch.
inline void mlp_train(MlpMetaModel& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const MlpOptions& opt) {
	if (x.rows() != y.rows() || x.cols() != static_cast<Eigen::Index>(net.input_size()) ||
	    y.cols() != static_cast<Eigen::Index>(net.output_size())) {
		throw Error(ErrorCode::ShapeMismatch, "training data does not match the network shape");
	}
	if (opt.batch_size == 0) throw Error(ErrorCode::ConfigError, "batch size must be positive");
	Rng rng(mix_seed(opt.seed, 1));
	std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
	std::iota(order.begin(), order.end(), Eigen::Index{0});
	for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
		for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
		for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
			const auto end = std::min(order.size(), start + opt.batch_size);
			const auto rows = static_cast<Eigen::Index>(end - start);
			Eigen::MatrixXd bx(rows, x.cols());
			Eigen::MatrixXd by(rows, y.cols());
			for (Eigen::Index r = 0; r < rows; ++r) {
				bx.row(r) = x.row(order[start + static_cast<std::size_t>(r)]);
				by.row(r) = y.row(order[start + static_cast<std::size_t>(r)]);
			}
			net.set_parameters(net.parameters() - opt.learning_rate * net.gradient(bx, by));
		}
		net.loss_history.push_back(net.loss(x, y));
	}
}

/**
 * @brief Fit the regression meta-learner: standardized profiles to per-model aggregate MSE.
 */
inline MlpMetaModel mlp_fit(const std::vector<MetaFeatureVector>& profiles, const PerformanceTensor& train,
                            const MlpOptions& opt = {}) {
	if (profiles.empty() || profiles.size() != train.datasets()) {
		throw Error(ErrorCode::ShapeMismatch, "one profile per training dataset required");
	}
	const auto raw = detail::feature_rows(profiles);
	std::vector<std::size_t> sizes = {raw.front().size()};
	sizes.insert(sizes.end(), opt.hidden.begin(), opt.hidden.end());
	sizes.push_back(train.models());
	auto net = MlpMetaModel::init(sizes, opt.seed);
	net.standardizer = Standardizer::fit(raw);
	net.catalog_id = profiles.front().catalog_id;
	net.space_checksum = train.space_checksum();
	Eigen::MatrixXd x(static_cast<Eigen::Index>(raw.size()), static_cast<Eigen::Index>(raw.front().size()));
	for (std::size_t i = 0; i < raw.size(); ++i) {
		const auto z = net.standardizer.apply(raw[i]);
		for (std::size_t j = 0; j < z.size(); ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = z[j];
	}
	mlp_train(net, x, mlp_targets(train), opt);
	return net;
}

/// Predicted aggregate MSE per model for a raw profile.
inline std::vector<double> mlp_predict(const MlpMetaModel& net, const std::vector<double>& profile) {
	const auto z = net.standardizer.mean.empty() ? profile : net.standardizer.apply(profile);
	Eigen::MatrixXd x(1, static_cast<Eigen::Index>(z.size()));
	for (std::size_t j = 0; j < z.size(); ++j) x(0, static_cast<Eigen::Index>(j)) = z[j];
	const Eigen::MatrixXd y = net.forward(x);
	return {y.data(), y.data() + y.size()};
}

inline SelectionResult mlp_select(const MlpMetaModel& net, const MetaFeatureVector& profile) {
	Stopwatch clock;
	const auto predicted = mlp_predict(net, profile.values);
	const auto best = detail::argmin(predicted);
	if (!best) throw Error(ErrorCode::AllMissing, "network produced no finite prediction");
	return valid_selection(StrategyKind::MlpMeta, *best, clock.seconds());
}

inline constexpr int kFittedModelFormatVersion = 1;

inline nlohmann::ordered_json to_json(const Standardizer& s) {
	return {{"mean", s.mean}, {"scale", s.scale}};
}

inline nlohmann::ordered_json to_json(const IsacModel& m) {
	nlohmann::ordered_json j;
	j["format_version"] = kFittedModelFormatVersion;
	j["kind"] = "isac";
	j["space_checksum"] = m.space_checksum;
	j["catalog_id"] = m.catalog_id;
	j["k"] = m.k;
	j["centroids"] = m.centroids;
	j["cluster_best"] = m.cluster_best;
	j["assignments"] = m.assignments;
	j["iterations"] = m.iterations;
	j["standardizer"] = to_json(m.standardizer);
	return j;
}

inline nlohmann::ordered_json to_json(const MlpMetaModel& m) {
	nlohmann::ordered_json j;
	j["format_version"] = kFittedModelFormatVersion;
	j["kind"] = "mlp";
	j["space_checksum"] = m.space_checksum;
	j["catalog_id"] = m.catalog_id;
	j["sizes"] = m.sizes();
	const auto p = m.parameters();
	j["parameters"] = std::vector<double>(p.data(), p.data() + p.size());
	j["standardizer"] = to_json(m.standardizer);
	j["loss_history"] = m.loss_history;
	return j;
}

namespace detail {

inline void check_fitted_header(const nlohmann::json& j, std::string_view kind) {
	if (!j.is_object() || j.value("kind", "") != kind || j.value("format_version", 0) != kFittedModelFormatVersion) {
		throw Error(ErrorCode::FormatError, "not a version " + std::to_string(kFittedModelFormatVersion) + " " +
		                                        std::string(kind) + " model file");
	}
}

inline Standardizer standardizer_from_json(const nlohmann::json& j) {
	return {j.at("mean").get<std::vector<double>>(), j.at("scale").get<std::vector<double>>()};
}

} // namespace detail

inline IsacModel isac_from_json(const nlohmann::json& j) {
	detail::check_fitted_header(j, "isac");
	try {
		IsacModel m;
		m.space_checksum = j.at("space_checksum").get<std::string>();
		m.catalog_id = j.at("catalog_id").get<std::string>();
		m.k = j.at("k").get<std::size_t>();
		m.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
		m.cluster_best = j.at("cluster_best").get<std::vector<ModelId>>();
		m.assignments = j.at("assignments").get<std::vector<std::size_t>>();
		m.iterations = j.at("iterations").get<std::size_t>();
		m.standardizer = detail::standardizer_from_json(j.at("standardizer"));
		if (m.centroids.size() != m.k || m.cluster_best.size() != m.k) {
			throw Error(ErrorCode::FormatError, "ISAC model has inconsistent cluster count");
		}
		return m;
	} catch (const nlohmann::json::exception& e) {
		throw Error(ErrorCode::FormatError, std::string("ISAC model: ") + e.what());
	}
}

inline MlpMetaModel mlp_from_json(const nlohmann::json& j) {
	detail::check_fitted_header(j, "mlp");
	try {
		auto m = MlpMetaModel::init(j.at("sizes").get<std::vector<std::size_t>>(), 0);
		const auto p = j.at("parameters").get<std::vector<double>>();
		m.set_parameters(Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size())));
		m.standardizer = detail::standardizer_from_json(j.at("standardizer"));
		m.loss_history = j.at("loss_history").get<std::vector<double>>();
		m.space_checksum = j.at("space_checksum").get<std::string>();
		m.catalog_id = j.at("catalog_id").get<std::string>();
		return m;
	} catch (const nlohmann::json::exception& e) {
		throw Error(ErrorCode::FormatError, std::string("MLP model: ") + e.what());
	}
}

struct LlmSelectOptions {
	OffGridPolicy policy = OffGridPolicy::Strict;
	/// Extra attempts after a ParseError or MissingField outcome.
	int retries = 2;
	PromptOptions prompt;
};

inline bool is_provider_error(ErrorCode c) { return exit_code_for(c) == ExitCode::Provider; }

/**
 * @brief Prompt, query and parse, retrying the same prompt on ParseError or
 * MissingField. Latency and tokens are summed over attempts; provider
 * failures become Invalid(Transport).
 */
inline SelectionResult llm_select(const Window& window, const MetaFeatureVector* features, const PromptVariant& variant,
                                  const ModelSpace& space, LlmClient& client, const LlmSelectOptions& opt = {},
                                  const TemplateSet& templates = TemplateSet::defaults()) {
	const auto prompt = build_prompt(window, features, space, variant, templates, opt.prompt);
	SelectionResult out;
	out.kind = StrategyKind::Llm;
	out.dataset_id = window.dataset_id;
	out.attempts = 0;
	for (int attempt = 0; attempt <= opt.retries; ++attempt) {
		++out.attempts;
		CompletionResult reply;
		try {
			reply = client.complete(prompt.text);
		} catch (const Error& e) {
			if (!is_provider_error(e.code())) throw;
			out.model_id.reset();
			out.reason = InvalidReason::Transport;
			out.transport_error = e.code();
			out.detail = e.what();
			return out;
		}
		out.latency_seconds += reply.latency_seconds;
		out.input_tokens += reply.input_tokens;
		out.output_tokens += reply.output_tokens;
		out.tokens_estimated = out.tokens_estimated || reply.tokens_estimated;
		const auto parsed = parse_response(reply.text, space, opt.policy, opt.prompt.fixed_representation);
		out.model_id = parsed.model_id;
		out.reason = parsed.reason;
		out.detail = parsed.detail;
		out.snapped = parsed.snapped;
		out.reasoning_text = parsed.reasoning_text;
		if (parsed.valid() ||
		    (parsed.reason != InvalidReason::ParseError && parsed.reason != InvalidReason::MissingField)) {
			break;
		}
	}
	return out;
}

} // namespace tsselect
