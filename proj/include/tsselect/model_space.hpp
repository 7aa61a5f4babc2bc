#pragma once

#include "tsselect/error.hpp"
#include "tsselect/hashing.hpp"
#include "tsselect/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace tsselect {

enum class Algorithm { DeepAR, DeepFactor, Prophet, SeasonalNaive, GaussianProcess, VAR, RandomForest };
enum class Representation { Raw, ExpSmoothing };

inline constexpr std::array kAllAlgorithms = {Algorithm::DeepAR,          Algorithm::DeepFactor, Algorithm::Prophet,
                                              Algorithm::SeasonalNaive,   Algorithm::GaussianProcess,
                                              Algorithm::VAR,             Algorithm::RandomForest};

inline std::string_view to_string(Algorithm a) {
	switch (a) {
	case Algorithm::DeepAR: return "DeepAR";
	case Algorithm::DeepFactor: return "DeepFactor";
	case Algorithm::Prophet: return "Prophet";
	case Algorithm::SeasonalNaive: return "SeasonalNaive";
	case Algorithm::GaussianProcess: return "GaussianProcess";
	case Algorithm::VAR: return "VAR";
	case Algorithm::RandomForest: return "RandomForest";
	}
	return "?";
}

inline std::string_view to_string(Representation r) {
	return r == Representation::Raw ? "Raw" : "ExpSmoothing";
}

namespace detail {
inline std::string alnum_lower(std::string_view s) {
	std::string out;
	for (unsigned char c : s) {
		if (std::isalnum(c)) {
			out.push_back(static_cast<char>(std::tolower(c)));
		}
	}
	return out;
}
} // namespace detail

/// Accepts the canonical names plus the common spellings ("Seasonal Naive", "Random Forest Regressor", ...).
inline std::optional<Algorithm> parse_algorithm(std::string_view name) {
	static const std::unordered_map<std::string, Algorithm> kAliases = {
	    {"deepar", Algorithm::DeepAR},
	    {"deepfactor", Algorithm::DeepFactor},
	    {"deepfactors", Algorithm::DeepFactor},
	    {"prophet", Algorithm::Prophet},
	    {"seasonalnaive", Algorithm::SeasonalNaive},
	    {"gaussianprocess", Algorithm::GaussianProcess},
	    {"var", Algorithm::VAR},
	    {"vectorautoregression", Algorithm::VAR},
	    {"randomforest", Algorithm::RandomForest},
	    {"randomforestregressor", Algorithm::RandomForest},
	};
	const auto it = kAliases.find(detail::alnum_lower(name));
	if (it == kAliases.end()) {
		return std::nullopt;
	}
	return it->second;
}

inline std::optional<Representation> parse_representation(std::string_view name) {
	const auto key = detail::alnum_lower(name);
	if (key == "raw") {
		return Representation::Raw;
	}
	if (key == "expsmoothing" || key == "exponentialsmoothing") {
		return Representation::ExpSmoothing;
	}
	return std::nullopt;
}

/**
 * @brief A hyperparameter value as written in a grid or a response.
 *
 * Numeric values compare by their canonical decimal form ("10" == "10.0");
 * everything else compares as a case-sensitive string ("None", "HC0").
 */
class HyperValue {
public:
	HyperValue() = default;
	explicit HyperValue(std::string text) : text_(std::move(text)), decimal_(text::canonical_decimal(text_)) {}

	static HyperValue from_json(const nlohmann::json& j) {
		if (j.is_string()) {
			return HyperValue(j.get<std::string>());
		}
		if (j.is_null()) {
			return HyperValue("None");
		}
		return HyperValue(j.dump());
	}

	const std::string& text() const { return text_; }
	bool numeric() const { return decimal_.has_value(); }
	double number() const { return text::parse_double(text_).value_or(0.0); }
	std::string key() const { return decimal_ ? "d:" + *decimal_ : "s:" + text_; }

	bool operator==(const HyperValue& o) const { return key() == o.key(); }

private:
	std::string text_;
	std::optional<std::string> decimal_;
};

struct Hyperparameter {
	std::string name;
	HyperValue value;
};

/// One candidate model: algorithm, hyperparameter assignment, data representation.
struct ModelSpec {
	Algorithm algorithm = Algorithm::SeasonalNaive;
	std::vector<Hyperparameter> hyperparameters;
	Representation representation = Representation::Raw;

	const HyperValue* find(std::string_view name) const {
		for (const auto& h : hyperparameters) {
			if (h.name == name) {
				return &h.value;
			}
		}
		return nullptr;
	}

	std::string key() const {
		std::string k(to_string(algorithm));
		k += '|';
		for (std::size_t i = 0; i < hyperparameters.size(); ++i) {
			if (i) {
				k += ',';
			}
			k += hyperparameters[i].name + "=" + hyperparameters[i].value.key();
		}
		k += '|';
		k += to_string(representation);
		return k;
	}

	/// Human-readable form, e.g. "DeepAR(num_cells=10, num_rnn_layers=1) [Raw]".
	std::string describe() const {
		std::string s(to_string(algorithm));
		s += '(';
		for (std::size_t i = 0; i < hyperparameters.size(); ++i) {
			if (i) {
				s += ", ";
			}
			s += hyperparameters[i].name + "=" + hyperparameters[i].value.text();
		}
		s += ") [";
		s += to_string(representation);
		s += ']';
		return s;
	}
};

struct HyperparameterGrid {
	std::string name;
	std::vector<HyperValue> values;
};

struct AlgorithmGrid {
	Algorithm algorithm = Algorithm::SeasonalNaive;
	std::vector<HyperparameterGrid> hyperparameters;
	std::vector<Representation> representations;

	std::size_t size() const {
		std::size_t n = representations.size();
		for (const auto& h : hyperparameters) {
			n *= h.values.size();
		}
		return n;
	}
};

/// Per-algorithm grids in enumeration order.
struct ModelSpaceConfig {
	std::vector<AlgorithmGrid> algorithms;

	/**
	 * @brief Parse the JSON form:
	 * {"algorithms": [{"name": "DeepAR",
	 *                  "hyperparameters": [{"name": "num_cells", "values": [10, 20]}],
	 *                  "representations": ["ExpSmoothing", "Raw"]}]}
	 */
	static ModelSpaceConfig from_json(const nlohmann::json& j) {
		ModelSpaceConfig cfg;
		if (!j.is_object() || !j.contains("algorithms") || !j["algorithms"].is_array()) {
			throw Error(ErrorCode::ConfigError, "model space config needs an 'algorithms' array");
		}
		std::set<Algorithm> seen;
		for (const auto& a : j["algorithms"]) {
			AlgorithmGrid grid;
			const auto name = a.value("name", std::string{});
			const auto algorithm = parse_algorithm(name);
			if (!algorithm) {
				throw Error(ErrorCode::ConfigError, "unknown algorithm '" + name + "'");
			}
			if (!seen.insert(*algorithm).second) {
				throw Error(ErrorCode::DuplicateValue, "algorithm '" + name + "' listed twice");
			}
			grid.algorithm = *algorithm;
			for (const auto& h : a.value("hyperparameters", nlohmann::json::array())) {
				HyperparameterGrid hg;
				hg.name = h.at("name").get<std::string>();
				std::set<std::string> keys;
				for (const auto& v : h.value("values", nlohmann::json::array())) {
					hg.values.push_back(HyperValue::from_json(v));
					if (!keys.insert(hg.values.back().key()).second) {
						throw Error(ErrorCode::DuplicateValue,
						            name + "." + hg.name + " repeats value " + hg.values.back().text());
					}
				}
				if (hg.values.empty()) {
					throw Error(ErrorCode::EmptyGrid, name + "." + hg.name + " has no values");
				}
				grid.hyperparameters.push_back(std::move(hg));
			}
			std::set<Representation> reps;
			for (const auto& r : a.value("representations", nlohmann::json::array())) {
				const auto rep = parse_representation(r.get<std::string>());
				if (!rep) {
					throw Error(ErrorCode::ConfigError, "unknown representation '" + r.get<std::string>() + "'");
				}
				if (!reps.insert(*rep).second) {
					throw Error(ErrorCode::DuplicateValue, name + " repeats representation " + r.get<std::string>());
				}
				grid.representations.push_back(*rep);
			}
			if (grid.representations.empty()) {
				throw Error(ErrorCode::EmptyGrid, name + " has no representations");
			}
			cfg.algorithms.push_back(std::move(grid));
		}
		return cfg;
	}

	static ModelSpaceConfig load(const std::filesystem::path& path) {
		std::ifstream in(path);
		if (!in) {
			throw Error(ErrorCode::FileNotFound, path.string());
		}
		nlohmann::json j;
		try {
			j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
		} catch (const nlohmann::json::parse_error& e) {
			throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
		}
		return from_json(j);
	}

	/// The seven-algorithm, 322-model grid.
	static ModelSpaceConfig canonical() { return from_json(nlohmann::json::parse(canonical_text())); }

	static std::string_view canonical_text() {
		return R"({
  "algorithms": [
    {"name": "DeepAR",
     "hyperparameters": [{"name": "num_cells", "values": [10, 20, 30, 40, 50]},
                         {"name": "num_rnn_layers", "values": [1, 2, 3, 4, 5]}],
     "representations": ["ExpSmoothing", "Raw"]},
    {"name": "DeepFactor",
     "hyperparameters": [{"name": "num_hidden_global", "values": [10, 20, 30, 40, 50]},
                         {"name": "num_global_factors", "values": [1, 5, 10, 15, 20]}],
     "representations": ["ExpSmoothing", "Raw"]},
    {"name": "Prophet",
     "hyperparameters": [{"name": "changepoint_prior_scale", "values": [0.001, 0.01, 0.1, 0.2, 0.5]},
                         {"name": "seasonality_prior_scale", "values": [0.01, 0.1, 1.0, 5.0, 10.0]}],
     "representations": ["ExpSmoothing", "Raw"]},
    {"name": "SeasonalNaive",
     "hyperparameters": [{"name": "season_length", "values": [1, 5, 7, 10, 30]}],
     "representations": ["ExpSmoothing", "Raw"]},
    {"name": "GaussianProcess",
     "hyperparameters": [{"name": "cardinality", "values": [2, 4, 6, 8, 10]},
                         {"name": "max_iter_jitter", "values": [5, 10, 15, 20, 25]}],
     "representations": ["ExpSmoothing", "Raw"]},
    {"name": "VAR",
     "hyperparameters": [{"name": "cov_type", "values": ["HC0", "HC1", "HC2", "HC3", "nonrobust"]},
                         {"name": "trend", "values": ["n", "c", "t", "ct"]}],
     "representations": ["ExpSmoothing", "Raw"]},
    {"name": "RandomForest",
     "hyperparameters": [{"name": "n_estimators", "values": [10, 50, 100, 250, 500, 1000]},
                         {"name": "max_depth", "values": [2, 5, 10, 25, 50, "None"]}],
     "representations": ["ExpSmoothing", "Raw"]}
  ]
})";
	}
};

using ModelId = std::size_t;

/**
 * @brief Enumerated model space with a bijective spec <-> id index.
 *
 * Immutable after construction.
 */
class ModelSpace {
public:
	ModelSpace() = default;

	/// Cartesian product per algorithm (first hyperparameter varies slowest, representation fastest).
	static ModelSpace enumerate(const ModelSpaceConfig& config) {
		ModelSpace space;
		space.config_ = config;
		for (const auto& grid : config.algorithms) {
			std::vector<std::size_t> odometer(grid.hyperparameters.size(), 0);
			bool done = false;
			while (!done) {
				for (const auto rep : grid.representations) {
					ModelSpec spec;
					spec.algorithm = grid.algorithm;
					spec.representation = rep;
					for (std::size_t h = 0; h < grid.hyperparameters.size(); ++h) {
						spec.hyperparameters.push_back(
						    {grid.hyperparameters[h].name, grid.hyperparameters[h].values[odometer[h]]});
					}
					space.add(std::move(spec));
				}
				done = true;
				for (std::size_t pos = odometer.size(); pos-- > 0;) {
					if (++odometer[pos] < grid.hyperparameters[pos].values.size()) {
						done = false;
						break;
					}
					odometer[pos] = 0;
				}
			}
		}
		std::string digest;
		for (std::size_t i = 0; i < space.specs_.size(); ++i) {
			digest += std::to_string(i) + '\t' + space.specs_[i].key() + '\n';
		}
		space.checksum_ = sha256_hex(digest);
		return space;
	}

	static ModelSpace canonical() { return enumerate(ModelSpaceConfig::canonical()); }

	std::size_t size() const { return specs_.size(); }
	bool empty() const { return specs_.empty(); }
	const ModelSpec& operator[](ModelId id) const { return specs_.at(id); }
	const std::vector<ModelSpec>& specs() const { return specs_; }
	const ModelSpaceConfig& config() const { return config_; }
	const std::string& checksum() const { return checksum_; }

	const AlgorithmGrid* grid(Algorithm a) const {
		for (const auto& g : config_.algorithms) {
			if (g.algorithm == a) {
				return &g;
			}
		}
		return nullptr;
	}

	std::vector<ModelId> ids_of(Algorithm a) const {
		std::vector<ModelId> out;
		for (ModelId i = 0; i < specs_.size(); ++i) {
			if (specs_[i].algorithm == a) {
				out.push_back(i);
			}
		}
		return out;
	}

	/// Exact match on the tuple; hyperparameter order in the query does not matter.
	std::optional<ModelId> lookup(Algorithm algorithm, const std::vector<Hyperparameter>& hyperparameters,
	                              Representation representation) const {
		const auto* g = grid(algorithm);
		if (!g || g->hyperparameters.size() != hyperparameters.size()) {
			return std::nullopt;
		}
		ModelSpec probe;
		probe.algorithm = algorithm;
		probe.representation = representation;
		for (const auto& schema : g->hyperparameters) {
			const auto it = std::find_if(hyperparameters.begin(), hyperparameters.end(),
			                             [&](const Hyperparameter& h) { return h.name == schema.name; });
			if (it == hyperparameters.end()) {
				return std::nullopt;
			}
			probe.hyperparameters.push_back(*it);
		}
		return lookup(probe);
	}

	std::optional<ModelId> lookup(const ModelSpec& spec) const {
		const auto it = index_.find(spec.key());
		if (it == index_.end()) {
			return std::nullopt;
		}
		return it->second;
	}

private:
	void add(ModelSpec spec) {
		index_.emplace(spec.key(), specs_.size());
		specs_.push_back(std::move(spec));
	}

	ModelSpaceConfig config_;
	std::vector<ModelSpec> specs_;
	std::unordered_map<std::string, ModelId> index_;
	std::string checksum_;
};

} // namespace tsselect
