#pragma once

#include "tsselect/core_data.hpp"
#include "tsselect/error.hpp"
#include "tsselect/meta_features.hpp"
#include "tsselect/model_space.hpp"
#include "tsselect/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace tsselect {

/// Which optional blocks a prompt carries.
struct PromptVariant {
	bool include_meta_features = false;
	bool include_cot = false;

	bool operator==(const PromptVariant&) const = default;

	/// "data", "data+cot", "data+meta", "data+meta+cot".
	std::string name() const {
		std::string s = "data";
		if (include_meta_features) s += "+meta";
		if (include_cot) s += "+cot";
		return s;
	}

	static std::optional<PromptVariant> parse(std::string_view s) {
		if (s == "data") return PromptVariant{false, false};
		if (s == "data+cot") return PromptVariant{false, true};
		if (s == "data+meta") return PromptVariant{true, false};
		if (s == "data+meta+cot" || s == "data+cot+meta") return PromptVariant{true, true};
		return std::nullopt;
	}

	static std::vector<PromptVariant> all() { return {{false, false}, {false, true}, {true, false}, {true, true}}; }
};

inline constexpr std::string_view kSectionRole = "Role and Objective";
inline constexpr std::string_view kSectionModelSpace = "Model Space";
inline constexpr std::string_view kSectionCot = "CoT Reasoning";
inline constexpr std::string_view kSectionInput = "Input";
inline constexpr std::string_view kSectionOutputFormat = "Output Format";
inline constexpr std::string_view kSectionRules = "Rules";

struct Prompt {
	std::string text;
	PromptVariant variant;
	std::vector<std::string> sections;
	std::size_t approx_input_tokens = 0;
};

/// ceil(characters / 4), the usage estimate when a provider reports none.
inline std::size_t approx_tokens(std::string_view s) { return (s.size() + 3) / 4; }

/// Bracketed labels that open a line, in order of appearance.
inline std::vector<std::string> section_labels(std::string_view text) {
	std::vector<std::string> out;
	std::istringstream in{std::string(text)};
	std::string line;
	while (std::getline(in, line)) {
		if (line.size() > 2 && line.front() == '[') {
			const auto close = line.find(']');
			if (close != std::string::npos && close + 1 == line.size()) out.push_back(line.substr(1, close - 1));
		}
	}
	return out;
}

/**
 * @brief Prompt section templates with {{placeholder}} substitution.
 *
 * Required files: role, model_space, cot, input, meta_features,
 * output_format, rules (each "<name>.txt"). Placeholders:
 * {{model_space}}, {{window_length}}, {{window_values}}, {{meta_features}},
 * {{meta_feature_list}}, {{representation_rule}}.
 */
class TemplateSet {
public:
	static constexpr std::array<std::string_view, 7> kNames = {"role",          "model_space", "cot",  "input",
	                                                          "meta_features", "output_format", "rules"};

	static TemplateSet defaults() {
		TemplateSet t;
		t.templates_ = {
		    {"role", R"tpl([Role and Objective]
You are an expert in time-series forecasting and automated model selection. Given a univariate time series, choose the single forecasting model (algorithm, hyperparameter values, and data representation) from the model space below that will give the lowest one-step-ahead mean squared error on this series.
)tpl"},
		    {"model_space", R"tpl([Model Space]
Each model is a forecasting algorithm, one value for each of its hyperparameters, and a data representation.
{{model_space}}
)tpl"},
		    {"cot", R"tpl([CoT Reasoning]
Think step by step before answering:
1. Describe the series: level, trend, seasonality, noise and irregularities.
2. Choose the forecasting algorithm that suits these characteristics best.
3. Choose a value for each hyperparameter of that algorithm from its grid.
4. Choose the data representation.
Write these steps in the "reasoning" field.
)tpl"},
		    {"input", R"tpl([Input]
Dataset Values ({{window_length}} observations, min-max normalized to [0, 1]):
{{window_values}}
{{meta_features}}
)tpl"},
		    {"meta_features", R"tpl(Meta Features:
{{meta_feature_list}}
)tpl"},
		    {"output_format", R"tpl([Output Format]
Respond with a single JSON object using exactly this structure:
{"reasoning": "...",
 "result": {
   "forecasting algorithm": "...",
   "hyperparameters": [
     {"name": "...", "value": "..."},
     {"name": "...", "value": "..."}
   ],
   "data representation": "..."
 }}
)tpl"},
		    {"rules", R"tpl([Rules]
- Choose exactly one model from the model space above. Use algorithm names, hyperparameter names and values exactly as listed.
- Give a value for every hyperparameter of the chosen algorithm.
- {{representation_rule}}
- Respond with the JSON object only.
)tpl"},
		};
		return t;
	}

	static TemplateSet load(const std::filesystem::path& dir) {
		TemplateSet t;
		for (auto name : kNames) {
			const auto path = dir / (std::string(name) + ".txt");
			std::ifstream in(path);
			if (!in) throw Error(ErrorCode::TemplateMissing, path.string());
			std::ostringstream ss;
			ss << in.rdbuf();
			t.templates_[std::string(name)] = ss.str();
		}
		return t;
	}

	const std::string& get(std::string_view name) const {
		const auto it = templates_.find(std::string(name));
		if (it == templates_.end()) throw Error(ErrorCode::TemplateMissing, std::string(name));
		return it->second;
	}

	void set(std::string name, std::string text) { templates_[std::move(name)] = std::move(text); }
	void erase(const std::string& name) { templates_.erase(name); }

	static std::string substitute(std::string text, const std::map<std::string, std::string>& values) {
		for (const auto& [key, value] : values) {
			const std::string token = "{{" + key + "}}";
			for (auto pos = text.find(token); pos != std::string::npos; pos = text.find(token, pos + value.size())) {
				text.replace(pos, token.size(), value);
			}
		}
		return text;
	}

private:
	std::map<std::string, std::string> templates_;
};

/// One line per algorithm: "- Name: p in [v, ...]; q in [...]; data representation in [..]".
inline std::string render_model_space(const ModelSpace& space, std::optional<Representation> fixed = std::nullopt) {
	std::string out;
	for (const auto& grid : space.config().algorithms) {
		out += "- ";
		out += to_string(grid.algorithm);
		out += ": ";
		std::vector<std::string> parts;
		for (const auto& h : grid.hyperparameters) {
			std::vector<std::string> values;
			for (const auto& v : h.values) values.push_back(v.text());
			parts.push_back(h.name + " in [" + text::join(values, ", ") + "]");
		}
		if (!fixed) {
			std::vector<std::string> reps;
			for (auto r : grid.representations) reps.emplace_back(to_string(r));
			parts.push_back("data representation in [" + text::join(reps, ", ") + "]");
		}
		out += text::join(parts, "; ");
		out += '\n';
	}
	return out;
}

struct PromptOptions {
	/// Representation ablation: the model picks algorithm and hyperparameters only.
	std::optional<Representation> fixed_representation;
	const MetaFeatureCatalog* catalog = &MetaFeatureCatalog::standard();
};

/**
 * @brief Render the sections in order: role, model space, optional CoT,
 * input (values and optional meta-features), output format, rules.
 *
 * Numbers are printed with 6 significant digits. Output is a pure
 * function of the inputs.
 */
inline Prompt build_prompt(const Window& window, const MetaFeatureVector* features, const ModelSpace& space,
                           const PromptVariant& variant, const TemplateSet& templates = TemplateSet::defaults(),
                           const PromptOptions& options = {}) {
	if (variant.include_meta_features && !features) {
		throw Error(ErrorCode::MetaFeaturesRequired, "variant " + variant.name() + " needs a meta-feature vector");
	}
	std::vector<std::string> values;
	for (double v : window.values) values.push_back(text::format_significant(v, 6));

	std::string meta_block;
	if (variant.include_meta_features) {
		const auto& names = options.catalog->entries();
		if (features->size() != names.size()) {
			throw Error(ErrorCode::CatalogMismatch, "meta-feature vector does not match the catalog");
		}
		std::string list;
		for (std::size_t i = 0; i < names.size(); ++i) {
			list += names[i].name + ": " + text::format_significant(features->values[i], 6) + '\n';
		}
		meta_block = TemplateSet::substitute(templates.get("meta_features"), {{"meta_feature_list", list}});
	}

	std::string representation_rule;
	if (options.fixed_representation) {
		representation_rule = "The data representation is fixed to " +
		                      std::string(to_string(*options.fixed_representation)) + "; report it as such.";
	} else {
		std::vector<std::string> reps;
		for (auto r : {Representation::ExpSmoothing, Representation::Raw}) reps.emplace_back(to_string(r));
		representation_rule = "The data representation must be one of: " + text::join(reps, ", ") + ".";
	}

	const std::map<std::string, std::string> vars = {
	    {"model_space", render_model_space(space, options.fixed_representation)},
	    {"window_length", std::to_string(window.length())},
	    {"window_values", text::join(values, ", ")},
	    {"meta_features", meta_block},
	    {"representation_rule", representation_rule},
	};

	Prompt p;
	p.variant = variant;
	std::vector<std::pair<std::string_view, std::string_view>> order = {
	    {"role", kSectionRole}, {"model_space", kSectionModelSpace}};
	if (variant.include_cot) order.emplace_back("cot", kSectionCot);
	order.insert(order.end(), {{"input", kSectionInput}, {"output_format", kSectionOutputFormat}, {"rules", kSectionRules}});
	for (const auto& [name, label] : order) {
		auto block = TemplateSet::substitute(templates.get(name), vars);
		while (!block.empty() && (block.back() == '\n' || block.back() == ' ')) block.pop_back();
		if (!p.text.empty()) p.text += "\n\n";
		p.text += block;
		p.sections.emplace_back(label);
	}
	p.text += '\n';
	p.approx_input_tokens = approx_tokens(p.text);
	return p;
}

enum class InvalidReason { ParseError, MissingField, UnknownAlgorithm, OutOfSpace, UnknownRepresentation, Transport };

inline std::string_view to_string(InvalidReason r) {
	switch (r) {
	case InvalidReason::ParseError: return "ParseError";
	case InvalidReason::MissingField: return "MissingField";
	case InvalidReason::UnknownAlgorithm: return "UnknownAlgorithm";
	case InvalidReason::OutOfSpace: return "OutOfSpace";
	case InvalidReason::UnknownRepresentation: return "UnknownRepresentation";
	case InvalidReason::Transport: return "Transport";
	}
	return "?";
}

inline std::optional<InvalidReason> parse_invalid_reason(std::string_view s) {
	for (auto r : {InvalidReason::ParseError, InvalidReason::MissingField, InvalidReason::UnknownAlgorithm,
	               InvalidReason::OutOfSpace, InvalidReason::UnknownRepresentation, InvalidReason::Transport}) {
		if (to_string(r) == s) return r;
	}
	return std::nullopt;
}

enum class OffGridPolicy { Strict, Snap };

inline std::optional<OffGridPolicy> parse_policy(std::string_view s) {
	if (s == "strict") return OffGridPolicy::Strict;
	if (s == "snap") return OffGridPolicy::Snap;
	return std::nullopt;
}

inline std::string_view to_string(OffGridPolicy p) { return p == OffGridPolicy::Strict ? "strict" : "snap"; }

/// Valid(model_id, spec) or Invalid(reason), plus any reasoning text the model gave.
struct ParsedSelection {
	std::optional<ModelId> model_id;
	InvalidReason reason = InvalidReason::ParseError;
	ModelSpec spec;
	std::string reasoning_text;
	/// At least one hyperparameter was moved onto the grid.
	bool snapped = false;
	std::string detail;

	bool valid() const { return model_id.has_value(); }
};

/**
 * @brief First balanced top-level {...} in the text that parses as a JSON object.
 *
 * Objects nested inside a candidate that does not parse are not tried, and
 * an unterminated candidate (truncated output) yields nullopt.
 */
inline std::optional<nlohmann::json> extract_json_object(std::string_view raw) {
	for (std::size_t open = raw.find('{'); open != std::string_view::npos; open = raw.find('{', open + 1)) {
		int depth = 0;
		bool in_string = false;
		bool escaped = false;
		bool closed = false;
		for (std::size_t i = open; i < raw.size(); ++i) {
			const char c = raw[i];
			if (in_string) {
				if (escaped) escaped = false;
				else if (c == '\\') escaped = true;
				else if (c == '"') in_string = false;
				continue;
			}
			if (c == '"') in_string = true;
			else if (c == '{') ++depth;
			else if (c == '}' && --depth == 0) {
				auto j = nlohmann::json::parse(raw.substr(open, i - open + 1), nullptr, false);
				if (!j.is_discarded() && j.is_object()) return j;
				open = i;
				closed = true;
				break;
			}
		}
		if (!closed) return std::nullopt;
	}
	return std::nullopt;
}

namespace detail {

inline const nlohmann::json* find_key(const nlohmann::json& obj, std::string_view key) {
	const auto want = alnum_lower(key);
	for (auto it = obj.begin(); it != obj.end(); ++it) {
		if (alnum_lower(it.key()) == want) return &it.value();
	}
	return nullptr;
}

inline std::optional<HyperValue> snap_to_grid(const HyperValue& v, const HyperparameterGrid& grid) {
	if (!v.numeric()) return std::nullopt;
	const double x = v.number();
	const HyperValue* best = nullptr;
	double best_dist = 0.0;
	for (const auto& g : grid.values) {
		if (!g.numeric()) continue;
		const double dist = std::abs(g.number() - x);
		if (!best || dist < best_dist || (dist == best_dist && g.number() < best->number())) {
			best = &g;
			best_dist = dist;
		}
	}
	if (!best) return std::nullopt;
	return *best;
}

} // namespace detail

/**
 * @brief Map raw model output onto a member of the space.
 *
 * Tolerates prose and code fences around the object. Keys are matched
 * ignoring case and punctuation. Under Snap, off-grid numeric values move
 * to the nearest numeric grid value (ties to the smaller one); Strict
 * reports them as OutOfSpace.
 */
inline ParsedSelection parse_response(std::string_view raw, const ModelSpace& space, OffGridPolicy policy,
                                      std::optional<Representation> fixed_representation = std::nullopt) {
	ParsedSelection out;
	auto invalid = [&](InvalidReason r, std::string detail) {
		out.model_id.reset();
		out.reason = r;
		out.detail = std::move(detail);
		return out;
	};
	const auto doc = extract_json_object(raw);
	if (!doc) return invalid(InvalidReason::ParseError, "no JSON object found");
	if (const auto* reasoning = detail::find_key(*doc, "reasoning")) {
		out.reasoning_text = reasoning->is_string() ? reasoning->get<std::string>() : reasoning->dump();
	}
	const auto* result = detail::find_key(*doc, "result");
	if (!result) return invalid(InvalidReason::MissingField, "result");
	if (!result->is_object()) return invalid(InvalidReason::ParseError, "result is not an object");

	const auto* algorithm_field = detail::find_key(*result, "forecasting algorithm");
	const auto* hyper_field = detail::find_key(*result, "hyperparameters");
	const auto* rep_field = detail::find_key(*result, "data representation");
	if (!algorithm_field) return invalid(InvalidReason::MissingField, "forecasting algorithm");
	if (!hyper_field) return invalid(InvalidReason::MissingField, "hyperparameters");
	if (!rep_field && !fixed_representation) return invalid(InvalidReason::MissingField, "data representation");
	if (!algorithm_field->is_string()) return invalid(InvalidReason::ParseError, "forecasting algorithm is not a string");
	if (rep_field && !rep_field->is_string() && !fixed_representation) {
		return invalid(InvalidReason::ParseError, "data representation is not a string");
	}

	std::vector<std::pair<std::string, HyperValue>> given;
	if (hyper_field->is_array()) {
		for (const auto& entry : *hyper_field) {
			if (!entry.is_object()) return invalid(InvalidReason::ParseError, "hyperparameter entry is not an object");
			const auto* name = detail::find_key(entry, "name");
			const auto* value = detail::find_key(entry, "value");
			if (!name || !value) return invalid(InvalidReason::MissingField, "hyperparameter name/value");
			if (!name->is_string()) return invalid(InvalidReason::ParseError, "hyperparameter name is not a string");
			given.emplace_back(name->get<std::string>(), HyperValue::from_json(*value));
		}
	} else if (hyper_field->is_object()) {
		for (auto it = hyper_field->begin(); it != hyper_field->end(); ++it) {
			given.emplace_back(it.key(), HyperValue::from_json(it.value()));
		}
	} else {
		return invalid(InvalidReason::ParseError, "hyperparameters is neither a list nor an object");
	}

	const auto algorithm_name = algorithm_field->get<std::string>();
	const auto algorithm = parse_algorithm(algorithm_name);
	const AlgorithmGrid* grid = algorithm ? space.grid(*algorithm) : nullptr;
	if (!grid) return invalid(InvalidReason::UnknownAlgorithm, algorithm_name);
	out.spec.algorithm = *algorithm;

	if (fixed_representation) {
		out.spec.representation = *fixed_representation;
	} else {
		const auto rep = parse_representation(rep_field->get<std::string>());
		if (!rep) return invalid(InvalidReason::UnknownRepresentation, rep_field->get<std::string>());
		out.spec.representation = *rep;
	}
	if (std::find(grid->representations.begin(), grid->representations.end(), out.spec.representation) ==
	    grid->representations.end()) {
		return invalid(InvalidReason::OutOfSpace, "representation not offered for this algorithm");
	}

	std::vector<bool> used(given.size(), false);
	for (const auto& schema : grid->hyperparameters) {
		std::optional<std::size_t> match;
		for (std::size_t i = 0; i < given.size(); ++i) {
			if (detail::alnum_lower(given[i].first) == detail::alnum_lower(schema.name)) {
				if (match) return invalid(InvalidReason::ParseError, "hyperparameter " + schema.name + " given twice");
				match = i;
			}
		}
		if (!match) return invalid(InvalidReason::MissingField, "hyperparameter " + schema.name);
		used[*match] = true;
		HyperValue value = given[*match].second;
		const bool on_grid = std::find(schema.values.begin(), schema.values.end(), value) != schema.values.end();
		if (!on_grid) {
			if (policy == OffGridPolicy::Strict) {
				return invalid(InvalidReason::OutOfSpace, schema.name + "=" + value.text());
			}
			const auto snapped = detail::snap_to_grid(value, schema);
			if (!snapped) return invalid(InvalidReason::OutOfSpace, schema.name + "=" + value.text());
			value = *snapped;
			out.snapped = true;
		}
		out.spec.hyperparameters.push_back({schema.name, value});
	}
	for (std::size_t i = 0; i < given.size(); ++i) {
		if (!used[i]) return invalid(InvalidReason::OutOfSpace, "unknown hyperparameter " + given[i].first);
	}
	out.model_id = space.lookup(out.spec);
	if (!out.model_id) return invalid(InvalidReason::OutOfSpace, out.spec.describe());
	return out;
}

} // namespace tsselect
