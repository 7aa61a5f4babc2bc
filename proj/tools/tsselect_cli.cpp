#include "tsselect/harness.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace tsselect;

namespace {

struct Flags {
	std::string config;
	std::string strategy;
	std::string variant;
	std::string policy;
	std::string replay;
	std::optional<std::uint64_t> seed;
	std::string k;
	std::string out;
	std::string space;
	std::string dataset;
	std::optional<std::size_t> threads;
};

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

nlohmann::json read_config_json(const Flags& f) {
	if (f.config.empty()) return nlohmann::json::object();
	std::ifstream in(f.config);
	if (!in) throw Error(ErrorCode::FileNotFound, f.config);
	auto j = nlohmann::json::parse(in, nullptr, false, true);
	if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::ConfigError, f.config + " is not a JSON object");
	return j;
}

/// "random", "popular", "sota[:Family]", "isac", "mlp", "llm:<profile>".
nlohmann::json strategy_entry(const std::string& spec) {
	const auto colon = spec.find(':');
	const auto kind = spec.substr(0, colon);
	const auto arg = colon == std::string::npos ? std::string{} : spec.substr(colon + 1);
	nlohmann::json e = {{"kind", kind}};
	if (kind == "sota" && !arg.empty()) e["family"] = arg;
	if (kind == "llm") {
		if (arg.empty()) throw Error(ErrorCode::ConfigError, "--strategy llm needs a profile, e.g. llm:gpt-4o");
		e["profile"] = arg;
	}
	return e;
}

/// Applies command-line overrides on top of the config file.
ExperimentConfig make_config(const Flags& f, bool needs_corpus = true) {
	auto j = read_config_json(f);
	const fs::path base = f.config.empty() ? fs::current_path() : fs::absolute(f.config).parent_path();
	if (!f.strategy.empty()) {
		auto list = nlohmann::json::array();
		for (const auto& s : text::split(f.strategy, ',')) list.push_back(strategy_entry(std::string(text::trim(s))));
		j["strategies"] = list;
	}
	if (j.contains("strategies")) {
		for (auto& s : j["strategies"]) {
			if (!s.is_object() || s.value("kind", "") != "llm") continue;
			if (!f.variant.empty()) {
				s.erase("variant");
				s["variants"] = {f.variant};
			}
			if (!f.policy.empty()) s["policy"] = f.policy;
		}
	}
	if (!f.variant.empty() && !PromptVariant::parse(f.variant)) {
		throw Error(ErrorCode::ConfigError, "--variant must be data, data+cot, data+meta or data+meta+cot");
	}
	if (!f.policy.empty() && !parse_policy(f.policy)) throw Error(ErrorCode::ConfigError, "--policy must be strict or snap");
	if (!f.replay.empty()) {
		j["llm"]["mode"] = "replay";
		j["llm"]["fixtures"] = absolute(f.replay);
	}
	if (f.seed) j["seed"] = *f.seed;
	if (!f.k.empty()) {
		auto ks = nlohmann::json::array();
		for (const auto& part : text::split(f.k, ',')) {
			const auto v = text::parse_int(text::trim(part));
			if (!v || *v <= 0) throw Error(ErrorCode::ConfigError, "--k expects positive integers, e.g. 1,5,10,50");
			ks.push_back(*v);
		}
		j["k"] = ks;
	}
	if (!f.out.empty()) j["output"] = absolute(f.out);
	if (!f.space.empty()) j["model_space"] = absolute(f.space);
	if (f.threads) j["threads"] = *f.threads;
	if (!j.contains("corpus")) {
		if (needs_corpus) throw Error(ErrorCode::ConfigError, "a config file with a 'corpus' entry is required");
		j["corpus"] = "";
	}
	return ExperimentConfig::from_json(j, base);
}

std::ostream& output_stream(const Flags& f, const std::string& name, std::ofstream& file) {
	if (f.out.empty()) return std::cout;
	fs::create_directories(f.out);
	file.open(fs::path(f.out) / name, std::ios::binary | std::ios::trunc);
	if (!file) throw Error(ErrorCode::Unwritable, (fs::path(f.out) / name).string());
	return file;
}

int cmd_space_enumerate(const Flags& f) {
	const auto c = make_config(f, false);
	const auto space = load_space(c);
	std::ofstream file;
	auto& os = output_stream(f, "space.tsv", file);
	os << "model_id\talgorithm\tmodel\n";
	for (ModelId i = 0; i < space.size(); ++i) {
		os << i << '\t' << to_string(space[i].algorithm) << '\t' << space[i].describe() << '\n';
	}
	std::cerr << space.size() << " models";
	for (auto a : kAllAlgorithms) {
		if (space.grid(a)) std::cerr << "  " << to_string(a) << '=' << space.ids_of(a).size();
	}
	std::cerr << "\nchecksum " << space.checksum() << '\n';
	return 0;
}

/// Windows of every dataset: the imported matrix's windows when the config imports one, else freshly sampled.
std::vector<std::vector<Window>> config_windows(const ExperimentConfig& c, const std::vector<TimeSeriesDataset>& datasets) {
	if (!c.import_matrix) return sample_corpus_windows(datasets, c);
	const auto P = import_matrix(c.matrix_path, load_space(c));
	std::vector<std::vector<Window>> out;
	for (const auto& d : datasets) {
		std::vector<Window> ws;
		for (auto start : P.window_starts(P.require_dataset(d.id))) ws.push_back(make_window(d, start, c.window_length));
		out.push_back(std::move(ws));
	}
	return out;
}

int cmd_data_windows(const Flags& f) {
	const auto c = make_config(f);
	const auto datasets = load_sorted_corpus(c.corpus);
	const auto windows = config_windows(c, datasets);
	std::ofstream file;
	auto& os = output_stream(f, "windows.csv", file);
	os << "dataset_id,window_index,start,values\n";
	for (std::size_t d = 0; d < datasets.size(); ++d) {
		for (std::size_t w = 0; w < windows[d].size(); ++w) {
			std::vector<std::string> values;
			for (double v : windows[d][w].values) values.push_back(text::format_exact(v));
			os << datasets[d].id << ',' << w << ',' << windows[d][w].start << ",\"" << text::join(values, " ") << "\"\n";
		}
	}
	return 0;
}

int cmd_features_extract(const Flags& f) {
	const auto c = make_config(f);
	const auto datasets = load_sorted_corpus(c.corpus);
	const auto windows = config_windows(c, datasets);
	std::vector<FeatureRow> rows;
	for (std::size_t d = 0; d < datasets.size(); ++d) {
		for (const auto& w : windows[d]) rows.push_back({w.dataset_id, w.start, extract(w)});
	}
	std::ofstream file;
	auto& os = output_stream(f, "features.csv", file);
	write_feature_matrix(os, MetaFeatureCatalog::standard(), rows);
	if (!f.out.empty()) {
		std::ofstream catalog(fs::path(f.out) / "catalog.csv");
		MetaFeatureCatalog::standard().write(catalog);
	}
	return 0;
}

void print_matrix_summary(const PerformanceTensor& P) {
	std::size_t present = 0;
	for (std::size_t w = 0; w < P.windows(); ++w)
		for (std::size_t d = 0; d < P.datasets(); ++d)
			for (ModelId m = 0; m < P.models(); ++m) present += P.present(w, d, m);
	std::cout << "T=" << P.windows() << " n=" << P.datasets() << " m=" << P.models() << " entries=" << present << '/'
	          << P.windows() * P.datasets() * P.models() << "\nspace_checksum=" << P.space_checksum()
	          << "\nwindow_manifest_hash=" << P.window_manifest_hash() << '\n';
}

int cmd_matrix(const std::string& action, const Flags& f, const std::string& file) {
	auto c = make_config(f, action != "import");
	if (action == "import") {
		const auto path = file.empty() ? c.matrix_path : fs::path(file);
		if (path.empty()) throw Error(ErrorCode::ConfigError, "matrix import needs a file or a config with matrix.path");
		print_matrix_summary(import_matrix(path, load_space(c)));
		return 0;
	}
	if (action == "build") c.import_matrix = false;
	std::vector<std::string> log;
	const auto data = prepare_experiment(c, &log);
	const auto out = f.out.empty() ? c.output : fs::path(f.out);
	fs::create_directories(out);
	const auto target = file.empty() ? out / "matrix.txt" : fs::path(file);
	export_matrix(data.tensor, target);
	if (!log.empty()) {
		std::ofstream missing(out / "matrix_missing.log");
		for (const auto& line : log) missing << line << '\n';
		std::cerr << log.size() << " entries missing, see " << (out / "matrix_missing.log").string() << '\n';
	}
	print_matrix_summary(data.tensor);
	std::cout << "wrote " << target.string() << '\n';
	return 0;
}

int cmd_select(const Flags& f) {
	const auto c = make_config(f);
	if (c.strategies.size() != 1) throw Error(ErrorCode::ConfigError, "select runs exactly one strategy; use --strategy");
	if (f.dataset.empty()) throw Error(ErrorCode::ConfigError, "select needs --dataset");
	const auto& s = c.strategies.front();
	const auto data = prepare_experiment(c);
	const auto d = data.index_of(f.dataset);
	std::vector<std::size_t> train;
	for (std::size_t i = 0; i < data.datasets.size(); ++i) {
		if (i != d) train.push_back(i);
	}
	std::map<std::string, std::shared_ptr<LlmClient>> clients;
	add_missing_clients(c, clients);
	const auto templates = c.templates ? TemplateSet::load(*c.templates) : TemplateSet::defaults();
	const auto fitted = fit_strategy(s, data, train);
	const auto r = run_selection(s, fitted, data, d, c.seed, c.window_policy,
	                             s.kind == StrategyKind::Llm ? clients.at(s.profile).get() : nullptr, templates);
	nlohmann::ordered_json j;
	j["dataset_id"] = r.dataset_id;
	j["strategy"] = s.label;
	j["outcome"] = r.valid() ? "Valid" : std::string(to_string(r.reason));
	j["model_id"] = r.model_id ? nlohmann::ordered_json(*r.model_id) : nlohmann::ordered_json(nullptr);
	j["model"] = r.model_id ? data.space[*r.model_id].describe() : "";
	j["detail"] = r.detail;
	j["latency_seconds"] = r.latency_seconds;
	j["input_tokens"] = r.input_tokens;
	j["output_tokens"] = r.output_tokens;
	j["attempts"] = r.attempts;
	if (r.model_id) j["rank"] = data.rankings[d].position_of(*r.model_id) + 1;
	if (!r.reasoning_text.empty()) j["reasoning"] = r.reasoning_text;
	std::cout << j.dump(2) << '\n';
	if (r.transport_error) {
		std::cerr << r.detail << '\n';
		return static_cast<int>(exit_code_for(*r.transport_error));
	}
	return 0;
}

int cmd_evaluate(const Flags& f) {
	const auto c = make_config(f);
	const auto report = run_experiment(c);
	emit_report(report, c.output);
	std::cout << render_text(report);
	std::cerr << "wrote " << (c.output / "report.json").string() << '\n';
	for (const auto& fail : report.failures) {
		if (fail.code == "MissingCredential" || fail.code == "EndpointUnreachable" || fail.code == "ProviderError" ||
		    fail.code == "FixtureMiss") {
			return static_cast<int>(ExitCode::Provider);
		}
	}
	for (const auto& rec : report.records) {
		if (rec.outcome == "Transport") return static_cast<int>(ExitCode::Provider);
	}
	return 0;
}

int cmd_report(const Flags& f, const std::string& file) {
	fs::path path = file;
	if (path.empty()) {
		if (f.out.empty()) throw Error(ErrorCode::ConfigError, "report needs a report.json path or --out");
		path = fs::path(f.out) / "report.json";
	}
	const auto report = load_report(path);
	if (!f.out.empty()) emit_report(report, f.out);
	std::cout << render_text(report);
	return 0;
}

} // namespace

int main(int argc, char** argv) {
	CLI::App app{"Time-series forecasting model selection benchmark"};
	app.require_subcommand(1);
	Flags flags;
	std::string file;

	auto add_common = [&](CLI::App* cmd) {
		cmd->add_option("--config", flags.config, "Experiment config (JSON)");
		cmd->add_option("--strategy", flags.strategy, "random, popular, sota[:Family], isac, mlp, llm:<profile>; comma separated");
		cmd->add_option("--variant", flags.variant, "data | data+cot | data+meta | data+meta+cot");
		cmd->add_option("--policy", flags.policy, "strict | snap");
		cmd->add_option("--replay", flags.replay, "Fixture directory for replayed LLM responses");
		cmd->add_option("--seed", flags.seed, "Base seed");
		cmd->add_option("--k", flags.k, "hit@k cut-offs, e.g. 1,5,10,50");
		cmd->add_option("--out", flags.out, "Output directory");
		cmd->add_option("--space", flags.space, "Model-space config (defaults to the canonical space)");
		cmd->add_option("--threads", flags.threads, "Worker threads");
	};

	auto* space = app.add_subcommand("space", "Model space");
	space->require_subcommand(1);
	auto* enumerate = space->add_subcommand("enumerate", "List every model with its id");
	add_common(enumerate);

	auto* data = app.add_subcommand("data", "Datasets");
	data->require_subcommand(1);
	auto* windows = data->add_subcommand("windows", "Sample windows from the corpus");
	add_common(windows);

	auto* features = app.add_subcommand("features", "Meta-features");
	features->require_subcommand(1);
	auto* extract_cmd = features->add_subcommand("extract", "Meta-features of every sampled window");
	add_common(extract_cmd);

	auto* matrix = app.add_subcommand("matrix", "Performance matrix");
	matrix->require_subcommand(1);
	std::map<std::string, CLI::App*> matrix_cmds;
	for (const auto* name : {"build", "import", "export"}) {
		auto* cmd = matrix->add_subcommand(name, std::string(name) + " a performance matrix");
		add_common(cmd);
		cmd->add_option("file", file, "Matrix file");
		matrix_cmds[name] = cmd;
	}

	auto* select = app.add_subcommand("select", "Select a model for one dataset");
	add_common(select);
	select->add_option("--dataset", flags.dataset, "Dataset id")->required();

	auto* evaluate = app.add_subcommand("evaluate", "Run the configured experiment and write a report");
	add_common(evaluate);

	auto* report = app.add_subcommand("report", "Re-render a report.json");
	add_common(report);
	report->add_option("file", file, "report.json");

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError& e) {
		const int rc = app.exit(e);
		return rc == 0 ? 0 : static_cast<int>(ExitCode::Usage);
	}

	try {
		if (*enumerate) return cmd_space_enumerate(flags);
		if (*windows) return cmd_data_windows(flags);
		if (*extract_cmd) return cmd_features_extract(flags);
		for (const auto& [name, cmd] : matrix_cmds) {
			if (*cmd) return cmd_matrix(name, flags, file);
		}
		if (*select) return cmd_select(flags);
		if (*evaluate) return cmd_evaluate(flags);
		if (*report) return cmd_report(flags, file);
	} catch (const Error& e) {
		std::cerr << "error: " << e.what() << '\n';
		return static_cast<int>(exit_code_for(e.code()));
	} catch (const std::exception& e) {
		std::cerr << "error: " << e.what() << '\n';
		return static_cast<int>(ExitCode::Data);
	}
	return static_cast<int>(ExitCode::Usage);
}
