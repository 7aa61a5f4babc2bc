// Generates the desk-scale replay pack: 12 synthetic series, a natively built
// 322-column matrix, scripted LLM fixtures for every prompt variant and the
// golden report produced by `tsselect evaluate` on that pack.

#include "tsselect/harness.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace tsselect;

namespace {

constexpr std::uint64_t kPackSeed = 20240917;
constexpr std::size_t kSeriesLength = 96;
constexpr const char* kProfile = "desk-scripted";

struct SeriesRecipe {
	std::string id;
	std::string shape;
};

const std::vector<SeriesRecipe>& recipes() {
	static const std::vector<SeriesRecipe> r = {
	    {"ds01", "sine period 8"},           {"ds02", "sine period 12 plus trend"}, {"ds03", "random walk"},
	    {"ds04", "AR(1) phi 0.7"},           {"ds05", "white noise"},               {"ds06", "linear trend plus noise"},
	    {"ds07", "level shifts"},            {"ds08", "damped seasonal period 6"},  {"ds09", "exponential growth"},
	    {"ds10", "sawtooth period 10"},      {"ds11", "AR(2) oscillating"},         {"ds12", "spiky seasonal period 4"},
	};
	return r;
}

std::vector<double> generate(std::size_t index) {
	Rng rng(mix_seed(kPackSeed, index));
	std::vector<double> y(kSeriesLength);
	const double pi = std::numbers::pi;
	double level = 0.0, a1 = 0.0, a2 = 0.0;
	for (std::size_t t = 0; t < kSeriesLength; ++t) {
		const double e = rng.normal();
		const double tt = static_cast<double>(t);
		switch (index) {
		case 0: y[t] = 10.0 + 3.0 * std::sin(2.0 * pi * tt / 8.0) + 0.2 * e; break;
		case 1: y[t] = 5.0 + 0.05 * tt + 2.0 * std::sin(2.0 * pi * tt / 12.0) + 0.3 * e; break;
		case 2: level += e; y[t] = 50.0 + level; break;
		case 3: a1 = 0.7 * a1 + e; y[t] = 20.0 + a1; break;
		case 4: y[t] = 3.0 + e; break;
		case 5: y[t] = 1.0 + 0.2 * tt + 1.5 * e; break;
		case 6: y[t] = (t < 30 ? 4.0 : t < 65 ? 9.0 : 6.0) + 0.4 * e; break;
		case 7: y[t] = 8.0 + 4.0 * std::exp(-tt / 60.0) * std::cos(2.0 * pi * tt / 6.0) + 0.2 * e; break;
		case 8: y[t] = std::exp(0.03 * tt) * (1.0 + 0.02 * e); break;
		case 9: y[t] = static_cast<double>(t % 10) + 0.3 * e; break;
		case 10: {
			const double next = 1.2 * a1 - 0.6 * a2 + e;
			a2 = a1;
			a1 = next;
			y[t] = 15.0 + a1;
			break;
		}
		default: y[t] = 2.0 + (t % 4 == 0 ? 5.0 : 0.0) + 0.3 * e; break;
		}
	}
	return y;
}

void write_text(const fs::path& path, const std::string& text) {
	fs::create_directories(path.parent_path());
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out) throw Error(ErrorCode::Unwritable, path.string());
	out << text;
}

nlohmann::ordered_json pack_config(bool import) {
	nlohmann::ordered_json j;
	j["corpus"] = "manifest.csv";
	if (import) j["matrix"] = {{"source", "import"}, {"path", "matrix.txt"}};
	else j["matrix"] = {{"source", "build"}, {"synthesize_non_native", true}, {"synthesis_seed", kPackSeed}};
	j["window_length"] = 16;
	j["windows_per_dataset"] = 5;
	j["seed"] = 7;
	j["k"] = {1, 5, 10, 50};
	j["folds"] = 0;
	j["window_policy"] = "last";
	j["timing"] = "omitted";
	j["llm"] = {{"mode", "replay"}, {"fixtures", "fixtures"}, {"profiles", "profiles.json"}};
	j["output"] = "out";
	j["strategies"] = nlohmann::ordered_json::array(
	    {{{"kind", "random"}},
	     {{"kind", "popular"}},
	     {{"kind", "sota"}},
	     {{"kind", "isac"}, {"k", 3}, {"seed", 11}},
	     {{"kind", "mlp"}, {"epochs", 100}, {"seed", 13}},
	     {{"kind", "llm"}, {"profile", kProfile}, {"variants", {"data", "data+cot", "data+meta", "data+meta+cot"}}},
	     {{"kind", "llm"}, {"profile", kProfile}, {"policy", "snap"}, {"variants", {"data+meta+cot"}}}});
	return j;
}

nlohmann::ordered_json hyper_list(const ModelSpec& spec) {
	auto list = nlohmann::ordered_json::array();
	for (const auto& h : spec.hyperparameters) list.push_back({{"name", h.name}, {"value", h.value.text()}});
	return list;
}

std::string selection_json(const std::string& algorithm, const nlohmann::ordered_json& hypers, const std::string& rep,
                           const std::string& reasoning) {
	nlohmann::ordered_json j;
	j["reasoning"] = reasoning;
	j["result"] = {{"forecasting algorithm", algorithm}, {"hyperparameters", hypers}, {"data representation", rep}};
	return j.dump(1);
}

/**
 * @brief Scripted stand-in for a provider reply.
 *
 * Valid picks come from the top 10 of the dataset's ranking with a
 * probability that grows with the prompt's richness, otherwise uniformly
 * from the space. A fixed share of replies is prose, names an unknown
 * algorithm, or uses an off-grid numeric value.
 */
std::string scripted_reply(const ExperimentData& data, std::size_t d, const PromptVariant& variant) {
	const auto& id = data.datasets[d].id;
	Rng rng(mix_seed(kPackSeed, fnv1a64(id + "/" + variant.name())));
	const double u = rng.uniform01();
	const std::string reasoning = variant.include_cot
	    ? "The series of " + id + " has been inspected for level, trend and seasonality before choosing."
	    : "";
	if (u < 0.08) return "I would recommend a seasonal model for this series because it shows a repeating pattern.";
	if (u < 0.14) {
		return selection_json("ARIMA", nlohmann::ordered_json::array({{{"name", "order"}, {"value", "(1,1,1)"}}}), "Raw",
		                      reasoning);
	}
	if (u < 0.24) {
		const auto& spec = data.space[data.space.ids_of(Algorithm::DeepAR)[rng.uniform_index(50)]];
		auto hypers = hyper_list(spec);
		hypers[0]["value"] = "15";
		return "```json\n" + selection_json("DeepAR", hypers, std::string(to_string(spec.representation)), reasoning) +
		       "\n```";
	}
	double p_top = 0.3;
	if (variant.include_meta_features) p_top += 0.2;
	if (variant.include_cot) p_top += 0.1;
	const ModelId pick = rng.uniform01() < p_top ? data.rankings[d].ordering[rng.uniform_index(10)]
	                                             : static_cast<ModelId>(rng.uniform_index(data.space.size()));
	const auto& spec = data.space[pick];
	return selection_json(std::string(to_string(spec.algorithm)), hyper_list(spec), std::string(to_string(spec.representation)),
	                      reasoning);
}

void record_fixtures(const ExperimentConfig& c, const ExperimentData& data) {
	FixtureStore store(c.fixtures);
	const auto templates = TemplateSet::defaults();
	for (std::size_t d = 0; d < data.datasets.size(); ++d) {
		const auto& window = data.windows[d].back();
		const auto& features = data.window_features[d].back();
		for (const auto& variant : PromptVariant::all()) {
			const auto prompt =
			    build_prompt(window, variant.include_meta_features ? &features : nullptr, data.space, variant, templates);
			CompletionResult reply;
			reply.text = scripted_reply(data, d, variant);
			reply.input_tokens = static_cast<long long>(approx_tokens(prompt.text));
			reply.output_tokens = static_cast<long long>(approx_tokens(reply.text));
			reply.tokens_estimated = true;
			Rng lat(mix_seed(kPackSeed, fnv1a64("latency/" + data.datasets[d].id + "/" + variant.name())));
			reply.latency_seconds = std::round((0.6 + 0.002 * static_cast<double>(reply.output_tokens) + 0.4 * lat.uniform01()) * 1e3) / 1e3;
			store.record(kProfile, {prompt.text}, reply, true, "2024-09-17T00:00:00Z");
		}
	}
}

} // namespace

int main(int argc, char** argv) {
	const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("fixtures/desk");
	try {
		fs::remove_all(out / "fixtures");
		fs::remove_all(out / "data");
		std::string manifest = "# id,path\n";
		for (std::size_t i = 0; i < recipes().size(); ++i) {
			std::string csv = "t,value\n";
			const auto y = generate(i);
			for (std::size_t t = 0; t < y.size(); ++t) csv += std::to_string(t) + "," + text::format_exact(y[t]) + "\n";
			write_text(out / "data" / (recipes()[i].id + ".csv"), csv);
			manifest += recipes()[i].id + ",data/" + recipes()[i].id + ".csv\n";
		}
		write_text(out / "manifest.csv", manifest);
		nlohmann::ordered_json profiles;
		profiles["profiles"] = {{{"name", kProfile},
		                         {"endpoint", "http://127.0.0.1:9/v1/chat/completions"},
		                         {"model", "scripted"},
		                         {"credential_env", ""}}};
		write_text(out / "profiles.json", profiles.dump(2) + "\n");

		// Native build with measured fit times; the frozen file keeps them reproducible.
		auto build_json = pack_config(false);
		build_json["timing"] = "measured";
		const auto build_cfg = ExperimentConfig::from_json(build_json, out);
		std::vector<std::string> log;
		const auto built = prepare_experiment(build_cfg, &log);
		export_matrix(built.tensor, out / "matrix.txt");
		std::cerr << "matrix: " << log.size() << " missing entries\n";

		const auto config_json = pack_config(true);
		write_text(out / "config.json", config_json.dump(2) + "\n");
		auto cfg = ExperimentConfig::from_json(config_json, out);
		const auto data = prepare_experiment(cfg);
		record_fixtures(cfg, data);
		std::cerr << "fixtures: " << FixtureStore(cfg.fixtures).size() << '\n';

		const auto report = run_experiment(cfg, data);
		emit_report(report, out / "golden");
		std::cout << render_text(report);
	} catch (const Error& e) {
		std::cerr << "error: " << e.what() << '\n';
		return static_cast<int>(exit_code_for(e.code()));
	}
	return 0;
}
