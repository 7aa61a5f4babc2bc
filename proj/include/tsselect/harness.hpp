#pragma once

#include "tsselect/core_data.hpp"
#include "tsselect/error.hpp"
#include "tsselect/llm_client.hpp"
#include "tsselect/meta_features.hpp"
#include "tsselect/model_space.hpp"
#include "tsselect/parallel.hpp"
#include "tsselect/performance_matrix.hpp"
#include "tsselect/prompting.hpp"
#include "tsselect/selectors.hpp"
#include "tsselect/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace tsselect {

inline constexpr int kReportFormatVersion = 1;

// ---------------------------------------------------------------- metrics

/**
 * @brief Percentage of datasets whose valid selection lies in the top k of its ranking.
 *
 * Invalid selections are misses. Selections and rankings are aligned by position.
 */
inline double hit_at_k(const std::vector<std::optional<ModelId>>& selections, const std::vector<RankedModels>& rankings,
                       std::size_t k) {
	if (selections.size() != rankings.size()) {
		throw Error(ErrorCode::ShapeMismatch, "one ranking per selection required");
	}
	if (k == 0) throw Error(ErrorCode::ConfigError, "k must be positive");
	std::size_t hits = 0;
	for (std::size_t i = 0; i < selections.size(); ++i) {
		if (k > rankings[i].ordering.size()) {
			throw Error(ErrorCode::KExceedsSpace, "k=" + std::to_string(k) + " exceeds the " +
			                                          std::to_string(rankings[i].ordering.size()) + " ranked models");
		}
		if (selections[i] && rankings[i].position_of(*selections[i]) < k) ++hits;
	}
	if (selections.empty()) return 0.0;
	return 100.0 * static_cast<double>(hits) / static_cast<double>(selections.size());
}

inline double hit_at_k(const std::vector<SelectionResult>& selections, const std::vector<RankedModels>& rankings,
                       std::size_t k) {
	std::vector<std::optional<ModelId>> ids;
	for (std::size_t i = 0; i < selections.size(); ++i) {
		if (i < rankings.size() && selections[i].dataset_id != rankings[i].dataset_id) {
			throw Error(ErrorCode::ShapeMismatch, "selection for '" + selections[i].dataset_id +
			                                          "' aligned with ranking of '" + rankings[i].dataset_id + "'");
		}
		ids.push_back(selections[i].model_id);
	}
	return hit_at_k(ids, rankings, k);
}

/// Streaming hit@k for corpora too large to hold at once.
class HitCounter {
public:
	explicit HitCounter(std::vector<std::size_t> ks) : ks_(std::move(ks)), hits_(ks_.size(), 0) {}

	void add(std::optional<ModelId> selection, const RankedModels& ranking) {
		++n_;
		if (!selection) return;
		const auto pos = ranking.position_of(*selection);
		for (std::size_t i = 0; i < ks_.size(); ++i) {
			if (ks_[i] > ranking.ordering.size()) {
				throw Error(ErrorCode::KExceedsSpace, "k=" + std::to_string(ks_[i]) + " exceeds the model count");
			}
			if (pos < ks_[i]) ++hits_[i];
		}
	}

	std::size_t count() const { return n_; }
	double percentage(std::size_t i) const {
		return n_ ? 100.0 * static_cast<double>(hits_[i]) / static_cast<double>(n_) : 0.0;
	}
	const std::vector<std::size_t>& ks() const { return ks_; }

private:
	std::vector<std::size_t> ks_;
	std::vector<std::size_t> hits_;
	std::size_t n_ = 0;
};

/// Mean and population standard deviation; nullopt for an empty sample.
struct Moments {
	std::optional<double> mean;
	std::optional<double> std;

	bool operator==(const Moments&) const = default;
};

inline Moments moments(const std::vector<double>& xs) {
	if (xs.empty()) return {};
	double sum = 0.0;
	for (double x : xs) sum += x;
	const double mean = sum / static_cast<double>(xs.size());
	double ss = 0.0;
	for (double x : xs) ss += (x - mean) * (x - mean);
	return {mean, std::sqrt(ss / static_cast<double>(xs.size()))};
}

inline std::optional<double> median(std::vector<double> xs) {
	if (xs.empty()) return std::nullopt;
	std::sort(xs.begin(), xs.end());
	const auto n = xs.size();
	return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

struct MseSummary {
	std::optional<double> mean;
	std::optional<double> std;
	double coverage = 0.0;

	bool operator==(const MseSummary&) const = default;
};

/**
 * @brief MSE of the selected models: per dataset the selected column's mean
 * over windows, then mean and population std over datasets with a valid selection.
 */
inline MseSummary mse_of_selections(const std::vector<SelectionResult>& selections, const PerformanceTensor& P) {
	std::vector<double> values;
	for (const auto& s : selections) {
		if (!s.valid()) continue;
		const auto agg = P.aggregate(P.require_dataset(s.dataset_id));
		if (*s.model_id >= agg.size() || std::isnan(agg[*s.model_id])) {
			throw Error(ErrorCode::MissingEntry,
			            "no MSE for model " + std::to_string(*s.model_id) + " on dataset '" + s.dataset_id + "'");
		}
		values.push_back(agg[*s.model_id]);
	}
	const auto m = moments(values);
	MseSummary out{m.mean, m.std, 0.0};
	if (!selections.empty()) out.coverage = static_cast<double>(values.size()) / static_cast<double>(selections.size());
	return out;
}

struct Speedup {
	std::optional<double> median;
	std::optional<double> ratio_of_means;

	bool operator==(const Speedup&) const = default;
};

/// Per-dataset naive time / strategy latency. Undefined (nullopt) when any time is zero.
inline Speedup speedup(const std::vector<double>& naive_seconds, const std::vector<double>& latency_seconds) {
	if (naive_seconds.size() != latency_seconds.size()) throw Error(ErrorCode::ShapeMismatch, "speedup inputs differ");
	if (naive_seconds.empty()) return {};
	const auto zero = [](double v) { return !(v > 0.0); };
	if (std::any_of(latency_seconds.begin(), latency_seconds.end(), zero) ||
	    std::any_of(naive_seconds.begin(), naive_seconds.end(), zero)) {
		return {};
	}
	std::vector<double> ratios;
	for (std::size_t i = 0; i < naive_seconds.size(); ++i) ratios.push_back(naive_seconds[i] / latency_seconds[i]);
	return {median(ratios), *moments(naive_seconds).mean / *moments(latency_seconds).mean};
}

// ---------------------------------------------------------------- configuration

enum class WindowPolicy { Last, Majority };

struct StrategySpec {
	StrategyKind kind = StrategyKind::Random;
	std::string label;
	Algorithm family = Algorithm::DeepAR;
	PopularConfig popular;
	IsacOptions isac;
	MlpOptions mlp;
	std::string profile;
	PromptVariant variant;
	LlmSelectOptions llm;
};

/**
 * @brief Experiment settings read from a JSON config file.
 *
 * Relative paths resolve against the config file's directory.
 */
struct ExperimentConfig {
	std::filesystem::path corpus;
	std::optional<std::filesystem::path> model_space;
	bool import_matrix = false;
	std::filesystem::path matrix_path;
	bool synthesize_non_native = true;
	std::uint64_t synthesis_seed = 0;
	std::size_t window_length = kDefaultWindowLength;
	std::size_t windows_per_dataset = kDefaultWindowsPerDataset;
	std::uint64_t seed = 0;
	std::vector<std::size_t> ks = {1, 5, 10, 50};
	/// 0 means one fold per dataset.
	std::size_t folds = 0;
	WindowPolicy window_policy = WindowPolicy::Last;
	/// When false, fit times and non-LLM latencies are recorded as 0 so reports are reproducible.
	bool measure_timing = true;
	std::size_t threads = 1;
	std::vector<StrategySpec> strategies;
	ClientMode llm_mode = ClientMode::Replay;
	std::filesystem::path fixtures;
	std::filesystem::path profiles;
	std::optional<std::filesystem::path> templates;
	std::filesystem::path output = "out";

	static ExperimentConfig load(const std::filesystem::path& path) {
		std::ifstream in(path);
		if (!in) throw Error(ErrorCode::FileNotFound, path.string());
		const auto j = nlohmann::json::parse(in, nullptr, false, true);
		if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::ConfigError, path.string() + " is not a JSON object");
		return from_json(j, path.parent_path());
	}

	static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base) {
		auto resolve = [&](const std::string& p) {
			std::filesystem::path out(p);
			return out.is_relative() ? (base / out).lexically_normal() : out;
		};
		ExperimentConfig c;
		try {
			if (!j.contains("corpus")) throw Error(ErrorCode::ConfigError, "config needs 'corpus'");
			c.corpus = resolve(j.at("corpus").get<std::string>());
			if (j.contains("model_space")) c.model_space = resolve(j["model_space"].get<std::string>());
			if (j.contains("matrix")) {
				const auto& m = j["matrix"];
				const auto source = m.value("source", "build");
				if (source == "import") {
					c.import_matrix = true;
					c.matrix_path = resolve(m.at("path").get<std::string>());
				} else if (source != "build") {
					throw Error(ErrorCode::ConfigError, "matrix.source must be 'build' or 'import'");
				}
				c.synthesize_non_native = m.value("synthesize_non_native", c.synthesize_non_native);
				c.synthesis_seed = m.value("synthesis_seed", c.synthesis_seed);
			}
			c.window_length = j.value("window_length", c.window_length);
			c.windows_per_dataset = j.value("windows_per_dataset", c.windows_per_dataset);
			c.seed = j.value("seed", c.seed);
			c.ks = j.value("k", c.ks);
			c.folds = j.value("folds", c.folds);
			c.threads = j.value("threads", c.threads);
			const auto wp = j.value("window_policy", std::string("last"));
			if (wp == "last") c.window_policy = WindowPolicy::Last;
			else if (wp == "majority") c.window_policy = WindowPolicy::Majority;
			else throw Error(ErrorCode::ConfigError, "window_policy must be 'last' or 'majority'");
			const auto timing = j.value("timing", std::string("measured"));
			if (timing != "measured" && timing != "omitted") {
				throw Error(ErrorCode::ConfigError, "timing must be 'measured' or 'omitted'");
			}
			c.measure_timing = timing == "measured";
			if (j.contains("llm")) {
				const auto& l = j["llm"];
				const auto mode = parse_client_mode(l.value("mode", std::string("replay")));
				if (!mode) throw Error(ErrorCode::ConfigError, "llm.mode must be live, replay or record");
				c.llm_mode = *mode;
				if (l.contains("fixtures")) c.fixtures = resolve(l["fixtures"].get<std::string>());
				if (l.contains("profiles")) c.profiles = resolve(l["profiles"].get<std::string>());
				if (l.contains("templates")) c.templates = resolve(l["templates"].get<std::string>());
			}
			if (j.contains("output")) c.output = resolve(j["output"].get<std::string>());
			c.strategies = parse_strategies(j.value("strategies", nlohmann::json::array({{{"kind", "random"}}})));
		} catch (const nlohmann::json::exception& e) {
			throw Error(ErrorCode::ConfigError, e.what());
		}
		c.validate();
		return c;
	}

	void validate() const {
		if (strategies.empty()) throw Error(ErrorCode::ConfigError, "no strategies configured");
		if (ks.empty() || std::find(ks.begin(), ks.end(), 0u) != ks.end()) {
			throw Error(ErrorCode::ConfigError, "k values must be positive");
		}
		if (folds == 1) throw Error(ErrorCode::ConfigError, "folds must be 0 (one per dataset) or at least 2");
		if (window_length < 2 || windows_per_dataset < 1) {
			throw Error(ErrorCode::ConfigError, "window_length >= 2 and windows_per_dataset >= 1 required");
		}
	}

	/// Expands llm entries with a "variants" list into one strategy per variant.
	static std::vector<StrategySpec> parse_strategies(const nlohmann::json& list) {
		if (!list.is_array()) throw Error(ErrorCode::ConfigError, "strategies must be a list");
		std::vector<StrategySpec> out;
		for (const auto& s : list) {
			const auto kind = s.is_string() ? s.get<std::string>() : s.value("kind", std::string{});
			const auto obj = s.is_object() ? s : nlohmann::json::object();
			StrategySpec spec;
			if (kind == "random") {
				spec.kind = StrategyKind::Random;
				spec.label = "random";
			} else if (kind == "popular") {
				spec.kind = StrategyKind::Popular;
				spec.label = "popular";
				if (obj.contains("algorithm")) {
					const auto a = parse_algorithm(obj["algorithm"].get<std::string>());
					if (!a) throw Error(ErrorCode::ConfigError, "popular: unknown algorithm");
					spec.popular.algorithm = *a;
				}
				if (obj.contains("hyperparameters")) {
					spec.popular.hyperparameters.clear();
					for (auto it = obj["hyperparameters"].begin(); it != obj["hyperparameters"].end(); ++it) {
						spec.popular.hyperparameters.push_back({it.key(), HyperValue::from_json(it.value())});
					}
				}
				if (obj.contains("representation")) {
					const auto r = parse_representation(obj["representation"].get<std::string>());
					if (!r) throw Error(ErrorCode::ConfigError, "popular: unknown representation");
					spec.popular.representation = *r;
				}
			} else if (kind == "sota") {
				std::vector<Algorithm> families(kAllAlgorithms.begin(), kAllAlgorithms.end());
				if (obj.contains("families") || obj.contains("family")) {
					families.clear();
					auto names = obj.contains("families") ? obj["families"] : nlohmann::json::array({obj["family"]});
					for (const auto& n : names) {
						const auto a = parse_algorithm(n.get<std::string>());
						if (!a) throw Error(ErrorCode::ConfigError, "sota: unknown family " + n.dump());
						families.push_back(*a);
					}
				}
				for (auto f : families) {
					StrategySpec fs;
					fs.kind = StrategyKind::SotaVariant;
					fs.family = f;
					fs.label = "sota:" + std::string(to_string(f));
					out.push_back(fs);
				}
				continue;
			} else if (kind == "isac") {
				spec.kind = StrategyKind::Isac;
				spec.label = "isac";
				spec.isac.k = obj.value("k", spec.isac.k);
				spec.isac.seed = obj.value("seed", spec.isac.seed);
			} else if (kind == "mlp") {
				spec.kind = StrategyKind::MlpMeta;
				spec.label = "mlp";
				spec.mlp.hidden = obj.value("hidden", spec.mlp.hidden);
				spec.mlp.learning_rate = obj.value("learning_rate", spec.mlp.learning_rate);
				spec.mlp.epochs = obj.value("epochs", spec.mlp.epochs);
				spec.mlp.batch_size = obj.value("batch_size", spec.mlp.batch_size);
				spec.mlp.seed = obj.value("seed", spec.mlp.seed);
			} else if (kind == "llm") {
				spec.kind = StrategyKind::Llm;
				spec.profile = obj.value("profile", std::string{});
				if (spec.profile.empty()) throw Error(ErrorCode::ConfigError, "llm strategy needs a profile");
				const auto policy = parse_policy(obj.value("policy", std::string("strict")));
				if (!policy) throw Error(ErrorCode::ConfigError, "policy must be 'strict' or 'snap'");
				spec.llm.policy = *policy;
				spec.llm.retries = obj.value("retries", spec.llm.retries);
				if (obj.contains("fixed_representation") && !obj["fixed_representation"].is_null()) {
					const auto r = parse_representation(obj["fixed_representation"].get<std::string>());
					if (!r) throw Error(ErrorCode::ConfigError, "unknown fixed_representation");
					spec.llm.prompt.fixed_representation = r;
				}
				std::vector<std::string> variants = {"data"};
				if (obj.contains("variants")) variants = obj["variants"].get<std::vector<std::string>>();
				else if (obj.contains("variant")) variants = {obj["variant"].get<std::string>()};
				for (const auto& v : variants) {
					const auto parsed = PromptVariant::parse(v);
					if (!parsed) throw Error(ErrorCode::ConfigError, "unknown prompt variant " + v);
					StrategySpec vs = spec;
					vs.variant = *parsed;
					vs.label = "llm:" + spec.profile + ":" + parsed->name();
					if (spec.llm.policy == OffGridPolicy::Snap) vs.label += ":snap";
					if (spec.llm.prompt.fixed_representation) {
						vs.label += ":fixed-" + std::string(to_string(*spec.llm.prompt.fixed_representation));
					}
					out.push_back(vs);
				}
				continue;
			} else {
				throw Error(ErrorCode::ConfigError, "unknown strategy kind '" + kind + "'");
			}
			out.push_back(spec);
		}
		return out;
	}
};

// ---------------------------------------------------------------- experiment data

/**
 * @brief Everything the strategies and metrics read: corpus, windows,
 * tensor, meta-features and ground-truth rankings. Datasets are sorted by id.
 */
struct ExperimentData {
	ModelSpace space;
	std::vector<TimeSeriesDataset> datasets;
	std::vector<std::vector<Window>> windows;
	PerformanceTensor tensor;
	std::vector<std::vector<MetaFeatureVector>> window_features;
	std::vector<MetaFeatureVector> profiles;
	std::vector<RankedModels> rankings;
	std::vector<double> naive_seconds;

	std::size_t index_of(const std::string& id) const {
		for (std::size_t i = 0; i < datasets.size(); ++i) {
			if (datasets[i].id == id) return i;
		}
		throw Error(ErrorCode::UnknownDataset, "dataset '" + id + "' is not in the corpus");
	}
};

inline ModelSpace load_space(const ExperimentConfig& c) {
	return c.model_space ? ModelSpace::enumerate(ModelSpaceConfig::load(*c.model_space)) : ModelSpace::canonical();
}

inline std::vector<TimeSeriesDataset> load_sorted_corpus(const std::filesystem::path& manifest) {
	auto datasets = load_corpus(manifest);
	std::sort(datasets.begin(), datasets.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
	for (std::size_t i = 1; i < datasets.size(); ++i) {
		if (datasets[i].id == datasets[i - 1].id) throw Error(ErrorCode::DuplicateValue, "dataset id " + datasets[i].id);
	}
	if (datasets.empty()) throw Error(ErrorCode::EmptyInput, manifest.string() + " lists no datasets");
	return datasets;
}

inline std::vector<std::vector<Window>> sample_corpus_windows(const std::vector<TimeSeriesDataset>& datasets,
                                                              const ExperimentConfig& c) {
	std::vector<std::vector<Window>> out;
	for (const auto& d : datasets) {
		out.push_back(sample_windows(d, c.windows_per_dataset, c.window_length, window_seed(c.seed, d.id)));
	}
	return out;
}

/// Loads or builds everything a run needs. Imported matrices define the windows.
inline ExperimentData prepare_experiment(const ExperimentConfig& c, std::vector<std::string>* log = nullptr) {
	ExperimentData data;
	data.space = load_space(c);
	data.datasets = load_sorted_corpus(c.corpus);
	std::vector<std::string> ids;
	for (const auto& d : data.datasets) ids.push_back(d.id);
	if (c.import_matrix) {
		const auto full = import_matrix(c.matrix_path, data.space);
		data.tensor = restrict_datasets(full, ids);
		for (std::size_t d = 0; d < data.datasets.size(); ++d) {
			std::vector<Window> ws;
			for (auto start : data.tensor.window_starts(d)) ws.push_back(make_window(data.datasets[d], start, c.window_length));
			if (ws.size() != data.tensor.windows()) {
				throw Error(ErrorCode::DimensionError, "window list of '" + ids[d] + "' does not match T");
			}
			data.windows.push_back(std::move(ws));
		}
	} else {
		data.windows = sample_corpus_windows(data.datasets, c);
		MatrixBuildOptions opt;
		opt.synthesize_non_native = c.synthesize_non_native;
		opt.synthesis_seed = c.synthesis_seed;
		opt.threads = c.threads;
		opt.record_fit_times = c.measure_timing;
		opt.log = log;
		data.tensor = build_matrix(data.datasets, data.windows, data.space, opt);
	}
	data.window_features.resize(data.datasets.size());
	parallel_for(
	    data.datasets.size(),
	    [&](std::size_t d) {
		    for (const auto& w : data.windows[d]) data.window_features[d].push_back(extract(w));
	    },
	    c.threads);
	for (std::size_t d = 0; d < data.datasets.size(); ++d) {
		data.profiles.push_back(dataset_profile(data.window_features[d]));
		data.rankings.push_back(rank(data.tensor, ids[d]));
		data.naive_seconds.push_back(naive_select(data.tensor, ids[d]).total_seconds);
	}
	return data;
}

// ---------------------------------------------------------------- report

struct SelectionRecord {
	std::string strategy;
	std::string dataset_id;
	std::size_t fold = 0;
	std::optional<ModelId> model_id;
	std::string model;
	/// "Valid" or the invalid reason.
	std::string outcome;
	std::string detail;
	double latency_seconds = 0.0;
	long long input_tokens = 0;
	long long output_tokens = 0;
	int attempts = 1;
	/// 1-based position in the ground-truth ranking.
	std::optional<std::size_t> rank;
	std::optional<double> mse;

	bool operator==(const SelectionRecord&) const = default;
};

struct FailureRecord {
	std::string strategy;
	std::string dataset_id;
	std::string code;
	std::string message;

	bool operator==(const FailureRecord&) const = default;
};

struct StrategySummary {
	std::string label;
	std::string kind;
	std::size_t datasets = 0;
	std::size_t valid = 0;
	std::size_t failed = 0;
	std::size_t snapped = 0;
	std::vector<std::pair<std::size_t, double>> hit_at_k;
	MseSummary mse;
	Moments latency;
	double latency_total = 0.0;
	long long input_tokens = 0;
	long long output_tokens = 0;
	Moments tokens_per_dataset;
	bool tokens_estimated = false;
	std::vector<std::pair<std::string, std::size_t>> invalid;
	Speedup speedup;

	bool operator==(const StrategySummary&) const = default;
};

struct EvaluationReport {
	nlohmann::ordered_json metadata;
	Moments naive_seconds;
	double naive_total_seconds = 0.0;
	std::vector<StrategySummary> strategies;
	std::vector<SelectionRecord> records;
	std::vector<FailureRecord> failures;

	bool operator==(const EvaluationReport& o) const {
		return metadata == o.metadata && naive_seconds == o.naive_seconds &&
		       naive_total_seconds == o.naive_total_seconds && strategies == o.strategies && records == o.records &&
		       failures == o.failures;
	}
};

inline const std::vector<std::string>& invalid_reason_keys() {
	static const std::vector<std::string> keys = {"ParseError", "MissingField",          "UnknownAlgorithm",
	                                              "OutOfSpace", "UnknownRepresentation", "Transport",
	                                              "Error"};
	return keys;
}

/**
 * @brief Metrics for one strategy. selections[i] belongs to data.datasets[i];
 * an empty entry is a failure (counted as a miss and under "Error").
 */
inline StrategySummary summarize_strategy(const std::string& label, StrategyKind kind,
                                          const std::vector<std::optional<SelectionResult>>& selections,
                                          const PerformanceTensor& P, const std::vector<RankedModels>& rankings,
                                          const std::vector<double>& naive_seconds, const std::vector<std::size_t>& ks) {
	StrategySummary s;
	s.label = label;
	s.kind = std::string(to_string(kind));
	s.datasets = selections.size();
	std::vector<std::optional<ModelId>> ids;
	std::vector<SelectionResult> completed;
	std::vector<double> latencies;
	std::vector<double> tokens;
	std::vector<double> naive_completed;
	std::map<std::string, std::size_t> invalid;
	for (const auto& key : invalid_reason_keys()) invalid[key] = 0;
	for (std::size_t i = 0; i < selections.size(); ++i) {
		const auto& sel = selections[i];
		if (!sel) {
			ids.emplace_back();
			++s.failed;
			++invalid["Error"];
			continue;
		}
		ids.push_back(sel->model_id);
		completed.push_back(*sel);
		latencies.push_back(sel->latency_seconds);
		naive_completed.push_back(naive_seconds.at(i));
		tokens.push_back(static_cast<double>(sel->input_tokens + sel->output_tokens));
		s.input_tokens += sel->input_tokens;
		s.output_tokens += sel->output_tokens;
		s.tokens_estimated = s.tokens_estimated || sel->tokens_estimated;
		s.latency_total += sel->latency_seconds;
		if (sel->valid()) ++s.valid;
		else ++invalid[std::string(to_string(sel->reason))];
		s.snapped += sel->valid() && sel->snapped;
	}
	for (auto k : ks) s.hit_at_k.emplace_back(k, hit_at_k(ids, rankings, k));
	s.mse = mse_of_selections(completed, P);
	if (!selections.empty()) s.mse.coverage = static_cast<double>(s.valid) / static_cast<double>(selections.size());
	s.latency = moments(latencies);
	s.tokens_per_dataset = moments(tokens);
	for (const auto& key : invalid_reason_keys()) s.invalid.emplace_back(key, invalid[key]);
	s.speedup = speedup(naive_completed, latencies);
	return s;
}

namespace detail {

inline nlohmann::ordered_json opt_json(const std::optional<double>& v) {
	return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline std::optional<double> opt_double(const nlohmann::json& j) {
	return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

inline nlohmann::ordered_json moments_json(const Moments& m) { return {{"mean", opt_json(m.mean)}, {"std", opt_json(m.std)}}; }

inline Moments moments_from(const nlohmann::json& j) { return {opt_double(j.at("mean")), opt_double(j.at("std"))}; }

} // namespace detail

inline nlohmann::ordered_json to_json(const EvaluationReport& r) {
	using detail::opt_json;
	nlohmann::ordered_json j;
	j["format_version"] = kReportFormatVersion;
	j["metadata"] = r.metadata;
	j["naive"] = {{"per_dataset_seconds", detail::moments_json(r.naive_seconds)},
	              {"total_seconds", r.naive_total_seconds}};
	auto& strategies = j["strategies"] = nlohmann::ordered_json::array();
	for (const auto& s : r.strategies) {
		nlohmann::ordered_json e;
		e["label"] = s.label;
		e["kind"] = s.kind;
		e["datasets"] = s.datasets;
		e["valid"] = s.valid;
		e["failed"] = s.failed;
		e["snapped"] = s.snapped;
		auto& hits = e["hit_at_k"] = nlohmann::ordered_json::object();
		for (const auto& [k, v] : s.hit_at_k) hits[std::to_string(k)] = v;
		e["mse"] = {{"mean", opt_json(s.mse.mean)}, {"std", opt_json(s.mse.std)}, {"coverage", s.mse.coverage}};
		e["latency_seconds"] = detail::moments_json(s.latency);
		e["latency_seconds"]["total"] = s.latency_total;
		e["tokens"] = {{"input_total", s.input_tokens},
		               {"output_total", s.output_tokens},
		               {"per_dataset", detail::moments_json(s.tokens_per_dataset)},
		               {"estimated", s.tokens_estimated}};
		auto& invalid = e["invalid"] = nlohmann::ordered_json::object();
		for (const auto& [reason, count] : s.invalid) invalid[reason] = count;
		e["speedup"] = {{"median", opt_json(s.speedup.median)}, {"ratio_of_means", opt_json(s.speedup.ratio_of_means)}};
		strategies.push_back(std::move(e));
	}
	auto& records = j["records"] = nlohmann::ordered_json::array();
	for (const auto& rec : r.records) {
		nlohmann::ordered_json e;
		e["strategy"] = rec.strategy;
		e["dataset_id"] = rec.dataset_id;
		e["fold"] = rec.fold;
		e["model_id"] = rec.model_id ? nlohmann::ordered_json(*rec.model_id) : nlohmann::ordered_json(nullptr);
		e["model"] = rec.model;
		e["outcome"] = rec.outcome;
		e["detail"] = rec.detail;
		e["latency_seconds"] = rec.latency_seconds;
		e["input_tokens"] = rec.input_tokens;
		e["output_tokens"] = rec.output_tokens;
		e["attempts"] = rec.attempts;
		e["rank"] = rec.rank ? nlohmann::ordered_json(*rec.rank) : nlohmann::ordered_json(nullptr);
		e["mse"] = opt_json(rec.mse);
		records.push_back(std::move(e));
	}
	auto& failures = j["failures"] = nlohmann::ordered_json::array();
	for (const auto& f : r.failures) {
		failures.push_back({{"strategy", f.strategy}, {"dataset_id", f.dataset_id}, {"code", f.code}, {"message", f.message}});
	}
	return j;
}

inline EvaluationReport report_from_json(const nlohmann::ordered_json& j) {
	if (!j.is_object() || j.value("format_version", 0) != kReportFormatVersion) {
		throw Error(ErrorCode::FormatError, "not a version " + std::to_string(kReportFormatVersion) + " report");
	}
	try {
		EvaluationReport r;
		r.metadata = j.at("metadata");
		r.naive_seconds = detail::moments_from(j.at("naive").at("per_dataset_seconds"));
		r.naive_total_seconds = j.at("naive").at("total_seconds").get<double>();
		for (const auto& e : j.at("strategies")) {
			StrategySummary s;
			s.label = e.at("label").get<std::string>();
			s.kind = e.at("kind").get<std::string>();
			s.datasets = e.at("datasets").get<std::size_t>();
			s.valid = e.at("valid").get<std::size_t>();
			s.failed = e.at("failed").get<std::size_t>();
			s.snapped = e.at("snapped").get<std::size_t>();
			for (auto it = e.at("hit_at_k").begin(); it != e.at("hit_at_k").end(); ++it) {
				s.hit_at_k.emplace_back(std::stoul(it.key()), it.value().get<double>());
			}
			s.mse = {detail::opt_double(e.at("mse").at("mean")), detail::opt_double(e.at("mse").at("std")),
			         e.at("mse").at("coverage").get<double>()};
			s.latency = detail::moments_from(e.at("latency_seconds"));
			s.latency_total = e.at("latency_seconds").at("total").get<double>();
			s.input_tokens = e.at("tokens").at("input_total").get<long long>();
			s.output_tokens = e.at("tokens").at("output_total").get<long long>();
			s.tokens_per_dataset = detail::moments_from(e.at("tokens").at("per_dataset"));
			s.tokens_estimated = e.at("tokens").at("estimated").get<bool>();
			for (auto it = e.at("invalid").begin(); it != e.at("invalid").end(); ++it) {
				s.invalid.emplace_back(it.key(), it.value().get<std::size_t>());
			}
			s.speedup = {detail::opt_double(e.at("speedup").at("median")),
			             detail::opt_double(e.at("speedup").at("ratio_of_means"))};
			r.strategies.push_back(std::move(s));
		}
		for (const auto& e : j.at("records")) {
			SelectionRecord rec;
			rec.strategy = e.at("strategy").get<std::string>();
			rec.dataset_id = e.at("dataset_id").get<std::string>();
			rec.fold = e.at("fold").get<std::size_t>();
			if (!e.at("model_id").is_null()) rec.model_id = e.at("model_id").get<ModelId>();
			rec.model = e.at("model").get<std::string>();
			rec.outcome = e.at("outcome").get<std::string>();
			rec.detail = e.at("detail").get<std::string>();
			rec.latency_seconds = e.at("latency_seconds").get<double>();
			rec.input_tokens = e.at("input_tokens").get<long long>();
			rec.output_tokens = e.at("output_tokens").get<long long>();
			rec.attempts = e.at("attempts").get<int>();
			if (!e.at("rank").is_null()) rec.rank = e.at("rank").get<std::size_t>();
			rec.mse = detail::opt_double(e.at("mse"));
			r.records.push_back(std::move(rec));
		}
		for (const auto& e : j.at("failures")) {
			r.failures.push_back({e.at("strategy").get<std::string>(), e.at("dataset_id").get<std::string>(),
			                      e.at("code").get<std::string>(), e.at("message").get<std::string>()});
		}
		return r;
	} catch (const nlohmann::json::exception& e) {
		throw Error(ErrorCode::FormatError, std::string("report: ") + e.what());
	}
}

inline EvaluationReport load_report(const std::filesystem::path& path) {
	std::ifstream in(path);
	if (!in) throw Error(ErrorCode::FileNotFound, path.string());
	const auto j = nlohmann::ordered_json::parse(in, nullptr, false);
	if (j.is_discarded()) throw Error(ErrorCode::FormatError, path.string() + " is not JSON");
	return report_from_json(j);
}

namespace detail {

inline std::string cell(const std::optional<double>& v) { return v ? text::format_significant(*v, 6) : "-"; }

} // namespace detail

/// Strategies x hit@k, one row per strategy.
inline std::string render_summary_csv(const EvaluationReport& r) {
	std::ostringstream os;
	os << "strategy";
	if (!r.strategies.empty()) {
		for (const auto& [k, v] : r.strategies.front().hit_at_k) os << ",hit@" << k;
	}
	os << '\n';
	for (const auto& s : r.strategies) {
		os << s.label;
		for (const auto& [k, v] : s.hit_at_k) os << ',' << text::format_significant(v, 6);
		os << '\n';
	}
	return os.str();
}

inline std::string render_text(const EvaluationReport& r) {
	std::ostringstream os;
	os << "tsselect evaluation report\n";
	os << "datasets: " << r.metadata.value("datasets", 0) << "  models: " << r.metadata.value("models", 0)
	   << "  windows per dataset: " << r.metadata.value("windows_per_dataset", 0) << '\n';
	os << "naive approach: " << detail::cell(r.naive_seconds.mean) << " s per dataset, "
	   << text::format_significant(r.naive_total_seconds, 6) << " s total\n\n";
	os << "hit@k (%)\n";
	for (const auto& s : r.strategies) {
		os << "  " << s.label << ':';
		for (const auto& [k, v] : s.hit_at_k) os << "  @" << k << '=' << text::format_significant(v, 6);
		os << '\n';
	}
	os << "\nMSE of selections (mean +- population std, coverage)\n";
	for (const auto& s : r.strategies) {
		os << "  " << s.label << ": " << detail::cell(s.mse.mean) << " +- " << detail::cell(s.mse.std) << "  coverage "
		   << text::format_significant(s.mse.coverage, 6) << '\n';
	}
	os << "\nselection latency (s), tokens, speedup over naive\n";
	for (const auto& s : r.strategies) {
		os << "  " << s.label << ": latency " << detail::cell(s.latency.mean) << " +- " << detail::cell(s.latency.std)
		   << "  tokens in/out " << s.input_tokens << '/' << s.output_tokens << (s.tokens_estimated ? " (estimated)" : "")
		   << "  speedup median " << detail::cell(s.speedup.median) << " ratio of means "
		   << detail::cell(s.speedup.ratio_of_means) << '\n';
	}
	os << "\ninvalid outputs\n";
	for (const auto& s : r.strategies) {
		os << "  " << s.label << ':';
		for (const auto& [reason, count] : s.invalid) {
			if (count) os << ' ' << reason << '=' << count;
		}
		if (s.valid == s.datasets) os << " none";
		os << '\n';
	}
	if (!r.failures.empty()) {
		os << "\nfailures\n";
		for (const auto& f : r.failures) os << "  " << f.strategy << ' ' << f.dataset_id << ": " << f.message << '\n';
	}
	return os.str();
}

/// Writes report.json, summary.csv and report.txt into dir.
inline void emit_report(const EvaluationReport& r, const std::filesystem::path& dir) {
	std::error_code ec;
	std::filesystem::create_directories(dir, ec);
	auto write = [&](const std::string& name, const std::string& content) {
		std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
		if (!out) throw Error(ErrorCode::Unwritable, (dir / name).string());
		out << content;
		if (!out) throw Error(ErrorCode::Unwritable, (dir / name).string());
	};
	write("report.json", to_json(r).dump(2) + "\n");
	write("summary.csv", render_summary_csv(r));
	write("report.txt", render_text(r));
}

// ---------------------------------------------------------------- running

/// Fitted state of one strategy for one fold.
struct FittedStrategy {
	std::optional<ModelId> fixed;
	std::optional<IsacModel> isac;
	std::optional<MlpMetaModel> mlp;
};

inline FittedStrategy fit_strategy(const StrategySpec& s, const ExperimentData& data,
                                   const std::vector<std::size_t>& train) {
	FittedStrategy f;
	if (s.kind == StrategyKind::Popular) {
		f.fixed = *select_popular(data.space, s.popular).model_id;
		return f;
	}
	if (s.kind != StrategyKind::SotaVariant && s.kind != StrategyKind::Isac && s.kind != StrategyKind::MlpMeta) return f;
	std::vector<std::string> ids;
	std::vector<MetaFeatureVector> profiles;
	for (auto i : train) {
		ids.push_back(data.datasets[i].id);
		profiles.push_back(data.profiles[i]);
	}
	const auto P = restrict_datasets(data.tensor, ids);
	if (s.kind == StrategyKind::SotaVariant) f.fixed = select_sota_variant(P, data.space, s.family);
	if (s.kind == StrategyKind::Isac) f.isac = isac_fit(profiles, P, s.isac);
	if (s.kind == StrategyKind::MlpMeta) f.mlp = mlp_fit(profiles, P, s.mlp);
	return f;
}

/// Most frequent valid id (ties to the lowest id); the first invalid outcome when none is valid.
inline SelectionResult majority_vote(const std::vector<SelectionResult>& votes) {
	std::map<ModelId, std::size_t> counts;
	for (const auto& v : votes) {
		if (v.valid()) ++counts[*v.model_id];
	}
	SelectionResult out = votes.front();
	out.latency_seconds = 0.0;
	out.input_tokens = out.output_tokens = 0;
	out.attempts = 0;
	for (const auto& v : votes) {
		out.latency_seconds += v.latency_seconds;
		out.input_tokens += v.input_tokens;
		out.output_tokens += v.output_tokens;
		out.attempts += v.attempts;
		out.tokens_estimated = out.tokens_estimated || v.tokens_estimated;
	}
	if (counts.empty()) return out;
	ModelId best = counts.begin()->first;
	for (const auto& [id, n] : counts) {
		if (n > counts[best]) best = id;
	}
	out.model_id = best;
	out.snapped = std::any_of(votes.begin(), votes.end(), [&](const auto& v) { return v.model_id == best && v.snapped; });
	out.detail.clear();
	return out;
}

/**
 * @brief Run a fitted strategy on one dataset.
 *
 * Per-window strategies (ISAC, MLP, LLM) use the last window, or every
 * window with a majority vote.
 */
inline SelectionResult run_selection(const StrategySpec& s, const FittedStrategy& fitted, const ExperimentData& data,
                                     std::size_t d, std::uint64_t seed, WindowPolicy policy, LlmClient* client,
                                     const TemplateSet& templates) {
	const auto& id = data.datasets[d].id;
	SelectionResult r;
	switch (s.kind) {
	case StrategyKind::Random:
		r = select_random(data.space, mix_seed(seed, fnv1a64(id)));
		break;
	case StrategyKind::Popular:
	case StrategyKind::SotaVariant:
		r = valid_selection(s.kind, *fitted.fixed);
		break;
	case StrategyKind::Isac:
	case StrategyKind::MlpMeta:
	case StrategyKind::Llm: {
		std::vector<std::size_t> windows;
		if (policy == WindowPolicy::Last) windows = {data.windows[d].size() - 1};
		else for (std::size_t w = 0; w < data.windows[d].size(); ++w) windows.push_back(w);
		std::vector<SelectionResult> votes;
		for (auto w : windows) {
			const auto& features = data.window_features[d][w];
			if (s.kind == StrategyKind::Isac) votes.push_back(isac_select(*fitted.isac, features));
			else if (s.kind == StrategyKind::MlpMeta) votes.push_back(mlp_select(*fitted.mlp, features));
			else {
				if (!client) throw Error(ErrorCode::ConfigError, "no client for " + s.label);
				votes.push_back(llm_select(data.windows[d][w], s.variant.include_meta_features ? &features : nullptr,
				                           s.variant, data.space, *client, s.llm, templates));
			}
		}
		r = votes.size() == 1 ? votes.front() : majority_vote(votes);
		break;
	}
	}
	r.dataset_id = id;
	return r;
}

/// Fold of each dataset: index modulo the fold count; 0 folds means one per dataset.
inline std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t folds) {
	const auto k = folds == 0 ? n : std::min(folds, n);
	std::vector<std::size_t> out(n);
	for (std::size_t i = 0; i < n; ++i) out[i] = i % k;
	return out;
}

struct RunOptions {
	/// Live/replay clients by profile name; built from the config when absent.
	std::map<std::string, std::shared_ptr<LlmClient>> clients;
};

/// Creates a client for every LLM profile the config uses that is not in clients yet.
inline void add_missing_clients(const ExperimentConfig& c, std::map<std::string, std::shared_ptr<LlmClient>>& clients) {
	std::vector<ProviderProfile> profiles;
	for (const auto& s : c.strategies) {
		if (s.kind != StrategyKind::Llm || clients.count(s.profile)) continue;
		if (profiles.empty()) profiles = load_profiles(c.profiles);
		std::optional<FixtureStore> store;
		if (c.llm_mode != ClientMode::Live) store = FixtureStore(c.fixtures);
		clients[s.profile] = std::make_shared<LlmClient>(find_profile(profiles, s.profile), c.llm_mode, store);
	}
}

/**
 * @brief k-fold evaluation of every configured strategy.
 *
 * Meta-learners and SOTA variants are fitted on the other folds only.
 * Per-dataset errors land in the failure list instead of aborting.
 */
inline EvaluationReport run_experiment(const ExperimentConfig& c, const ExperimentData& data, RunOptions run = {}) {
	const auto n = data.datasets.size();
	const auto folds = fold_assignment(n, c.folds);
	const auto fold_count = n ? *std::max_element(folds.begin(), folds.end()) + 1 : 0;
	const auto templates = c.templates ? TemplateSet::load(*c.templates) : TemplateSet::defaults();

	add_missing_clients(c, run.clients);

	EvaluationReport report;
	for (const auto& s : c.strategies) {
		std::vector<std::optional<SelectionResult>> selections(n);
		std::vector<std::optional<FailureRecord>> failures(n);
		for (std::size_t f = 0; f < fold_count; ++f) {
			std::vector<std::size_t> train, test;
			for (std::size_t i = 0; i < n; ++i) (folds[i] == f ? test : train).push_back(i);
			FittedStrategy fitted;
			try {
				fitted = fit_strategy(s, data, train);
			} catch (const Error& e) {
				for (auto i : test) failures[i] = FailureRecord{s.label, data.datasets[i].id, std::string(to_string(e.code())), e.what()};
				continue;
			}
			LlmClient* client = s.kind == StrategyKind::Llm ? run.clients.at(s.profile).get() : nullptr;
			parallel_for(
			    test.size(),
			    [&](std::size_t t) {
				    const auto i = test[t];
				    try {
					    auto r = run_selection(s, fitted, data, i, c.seed, c.window_policy, client, templates);
					    if (!c.measure_timing && s.kind != StrategyKind::Llm) r.latency_seconds = 0.0;
					    selections[i] = std::move(r);
				    } catch (const Error& e) {
					    failures[i] = FailureRecord{s.label, data.datasets[i].id, std::string(to_string(e.code())), e.what()};
				    }
			    },
			    s.kind == StrategyKind::Llm ? c.threads : 1);
		}
		report.strategies.push_back(
		    summarize_strategy(s.label, s.kind, selections, data.tensor, data.rankings, data.naive_seconds, c.ks));
		for (std::size_t i = 0; i < n; ++i) {
			if (failures[i]) {
				report.failures.push_back(*failures[i]);
				continue;
			}
			const auto& sel = *selections[i];
			SelectionRecord rec;
			rec.strategy = s.label;
			rec.dataset_id = data.datasets[i].id;
			rec.fold = folds[i];
			rec.model_id = sel.model_id;
			rec.outcome = sel.valid() ? "Valid" : std::string(to_string(sel.reason));
			rec.detail = sel.valid() ? "" : sel.detail;
			rec.latency_seconds = sel.latency_seconds;
			rec.input_tokens = sel.input_tokens;
			rec.output_tokens = sel.output_tokens;
			rec.attempts = sel.attempts;
			if (sel.valid()) {
				rec.model = data.space[*sel.model_id].describe();
				rec.rank = data.rankings[i].position_of(*sel.model_id) + 1;
				rec.mse = data.rankings[i].aggregate[*sel.model_id];
			}
			report.records.push_back(std::move(rec));
		}
	}

	std::vector<std::string> ids;
	for (const auto& d : data.datasets) ids.push_back(d.id);
	report.metadata["tool"] = "tsselect";
	report.metadata["datasets"] = n;
	report.metadata["dataset_ids"] = ids;
	report.metadata["models"] = data.space.size();
	report.metadata["windows_per_dataset"] = data.tensor.windows();
	report.metadata["window_length"] = c.window_length;
	report.metadata["seed"] = c.seed;
	report.metadata["folds"] = fold_count;
	report.metadata["window_policy"] = c.window_policy == WindowPolicy::Last ? "last" : "majority";
	report.metadata["k"] = c.ks;
	report.metadata["space_checksum"] = data.space.checksum();
	report.metadata["window_manifest_hash"] = data.tensor.window_manifest_hash();
	report.metadata["meta_feature_catalog"] = MetaFeatureCatalog::standard().id();
	report.metadata["std_convention"] = "population";
	report.metadata["invalid_selection_rule"] = "miss for hit@k, excluded from MSE";
	report.metadata["timing"] = c.measure_timing ? "measured" : "omitted";
	report.metadata["token_estimate"] = "ceil(characters / 4) when the provider reports no usage";
	report.naive_seconds = moments(data.naive_seconds);
	for (double v : data.naive_seconds) report.naive_total_seconds += v;
	return report;
}

inline EvaluationReport run_experiment(const ExperimentConfig& c, RunOptions run = {}) {
	return run_experiment(c, prepare_experiment(c), std::move(run));
}

} // namespace tsselect
