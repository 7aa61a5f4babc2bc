// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include "tsselect/harness.hpp"

#include "../unit/test_support.hpp"

#include <array>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace fs = std::filesystem;
using namespace tsselect;

namespace {

struct Outcome {
	bool pass = false;
	std::string detail;
};

std::string fmt(double v) { return text::format_significant(v, 6); }

std::string slurp(const fs::path& p) {
	std::ifstream in(p, std::ios::binary);
	std::stringstream ss;
	ss << in.rdbuf();
	return ss.str();
}

struct Run {
	int code = -1;
	std::string out;
};

Run cli(const std::string& args) {
	const std::string cmd = "'" + std::string(TSSELECT_CLI_PATH) + "' " + args + " 2>/dev/null";
	Run r;
	FILE* pipe = popen(cmd.c_str(), "r");
	if (!pipe) return r;
	std::array<char, 4096> buf{};
	std::size_t n = 0;
	while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
	const int status = pclose(pipe);
	r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
	return r;
}

fs::path pack_dir() { return fs::path(TSSELECT_SOURCE_DIR) / "fixtures" / "desk"; }

// ---------------------------------------------------------------- 1

Outcome model_space_fidelity() {
	const auto r = cli("space enumerate");
	if (r.code != 0) return {false, "exit code " + std::to_string(r.code)};
	std::istringstream lines(r.out);
	std::string line;
	std::getline(lines, line);
	std::map<std::string, int> counts;
	int total = 0;
	while (std::getline(lines, line)) {
		const auto a = line.find('\t');
		const auto b = line.find('\t', a + 1);
		++counts[line.substr(a + 1, b - a - 1)];
		++total;
	}
	const std::vector<std::pair<std::string, int>> table = {{"DeepAR", 50},         {"DeepFactor", 50}, {"Prophet", 50},
	                                                        {"SeasonalNaive", 10},  {"GaussianProcess", 50},
	                                                        {"VAR", 40},            {"RandomForest", 72}};
	bool ok = total == 322 && counts.size() == table.size();
	std::string per;
	for (const auto& [name, n] : table) {
		ok = ok && counts[name] == n;
		per += " " + std::to_string(counts[name]);
	}
	return {ok, std::to_string(total) + " specs, per algorithm" + per};
}

// ---------------------------------------------------------------- 2

Outcome random_calibration() {
	constexpr std::size_t kDatasets = 100000;
	constexpr std::size_t kBatch = 10000;
	constexpr std::size_t kModels = 322;
	HitCounter counter({1, 5, 10, 50});
	Rng values(mix_seed(2, 1));
	for (std::size_t start = 0; start < kDatasets; start += kBatch) {
		std::vector<std::string> ids;
		for (std::size_t i = 0; i < kBatch; ++i) ids.push_back("s" + std::to_string(start + i));
		PerformanceTensor P(1, ids, kModels, "synthetic");
		for (std::size_t d = 0; d < kBatch; ++d)
			for (ModelId m = 0; m < kModels; ++m) P.set(0, d, m, values.uniform01(), 0.0);
		for (std::size_t d = 0; d < kBatch; ++d) {
			counter.add(random_model(kModels, mix_seed(2, start + d)), rank(P, ids[d]));
		}
	}
	const double h1 = counter.percentage(0);
	const double h50 = counter.percentage(3);
	const bool ok = counter.count() == kDatasets && h1 >= 0.21 && h1 <= 0.41 && h50 >= 15.0 && h50 <= 16.1;
	return {ok, "hit@1 " + fmt(h1) + " in [0.21, 0.41], hit@5 " + fmt(counter.percentage(1)) + ", hit@10 " +
	                fmt(counter.percentage(2)) + ", hit@50 " + fmt(h50) + " in [15.0, 16.1]"};
}

// ---------------------------------------------------------------- 3

Outcome hit_at_k_oracle() {
	Rng rng(3);
	std::size_t checks = 0, mismatches = 0;
	for (int trial = 0; trial < 200; ++trial) {
		const std::size_t n = 1 + rng.uniform_index(5);
		const std::size_t m = 1 + rng.uniform_index(10);
		const std::size_t T = 1 + rng.uniform_index(3);
		std::vector<std::string> ids;
		for (std::size_t d = 0; d < n; ++d) ids.push_back("d" + std::to_string(d));
		PerformanceTensor P(T, ids, m, "oracle");
		// Multiples of 1/8 keep sums exact and produce ties.
		std::vector<std::vector<double>> sum(n, std::vector<double>(m, 0.0));
		for (std::size_t w = 0; w < T; ++w)
			for (std::size_t d = 0; d < n; ++d)
				for (ModelId j = 0; j < m; ++j) {
					const double v = 0.125 * static_cast<double>(rng.uniform_index(8));
					P.set(w, d, j, v, 0.0);
					sum[d][j] += v;
				}
		std::vector<std::optional<ModelId>> selections;
		std::vector<RankedModels> rankings;
		for (std::size_t d = 0; d < n; ++d) {
			rankings.push_back(rank(P, ids[d]));
			if (rng.uniform_index(10) == 0) selections.push_back(std::nullopt);
			else selections.push_back(static_cast<ModelId>(rng.uniform_index(m)));
		}
		for (std::size_t k = 1; k <= m; ++k) {
			std::size_t hits = 0;
			for (std::size_t d = 0; d < n; ++d) {
				if (!selections[d]) continue;
				const ModelId s = *selections[d];
				std::size_t better = 0;
				for (ModelId j = 0; j < m; ++j) {
					if (sum[d][j] < sum[d][s] || (sum[d][j] == sum[d][s] && j < s)) ++better;
				}
				if (better < k) ++hits;
			}
			const double expected = 100.0 * static_cast<double>(hits) / static_cast<double>(n);
			++checks;
			if (hit_at_k(selections, rankings, k) != expected) ++mismatches;
		}
	}
	return {mismatches == 0, std::to_string(checks) + " (tensor, k) checks, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------- 4

Outcome forecaster_exactness() {
	Rng rng(4);
	std::size_t naive_bad = 0;
	for (int i = 0; i < 1000; ++i) {
		const std::size_t len = 2 + rng.uniform_index(30);
		std::vector<double> x(len);
		for (auto& v : x) v = rng.normal();
		const std::size_t season = 1 + rng.uniform_index(len);
		// Forecast of y_{t+1} with t = len - 1 is y_{t+1-m}.
		if (seasonal_naive(x, season).prediction != x[len - season]) ++naive_bad;
	}
	double ar_err = 0.0;
	for (double phi : {-0.9, -0.3, 0.25, 0.8, 0.95}) {
		std::vector<double> x = {1.0};
		for (int t = 1; t < 40; ++t) x.push_back(phi * x.back());
		ar_err = std::max(ar_err, std::abs(fit_ar_ols(x, 1, Trend::None).coefficients[0] - phi));
		std::vector<double> y = {2.0};
		for (int t = 1; t < 15; ++t) y.push_back(0.5 + phi * y.back());
		ar_err = std::max(ar_err, std::abs(fit_ar_ols(y, 1, Trend::Constant).coefficients[0] - phi));
	}
	std::size_t smooth_bad = 0;
	for (int i = 0; i < 100; ++i) {
		std::vector<double> x(1 + rng.uniform_index(40));
		for (auto& v : x) v = rng.normal();
		if (apply_representation(x, RepresentationTransform::exp_smoothing(1.0)) != x) ++smooth_bad;
	}
	const bool ok = naive_bad == 0 && ar_err <= 1e-8 && smooth_bad == 0;
	return {ok, "seasonal naive mismatches " + std::to_string(naive_bad) + "/1000, AR(1) max coefficient error " +
	                fmt(ar_err) + ", alpha=1 smoothing mismatches " + std::to_string(smooth_bad) + "/100"};
}

// ---------------------------------------------------------------- 5

Outcome mlp_gradient_check() {
	Rng rng(5);
	double worst = 0.0;
	for (int draw = 0; draw < 100; ++draw) {
		auto net = MlpMetaModel::init({6, 4, 3}, static_cast<std::uint64_t>(draw));
		Eigen::VectorXd p = net.parameters();
		for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = rng.normal();
		net.set_parameters(p);
		Eigen::MatrixXd x(8, 6), y(8, 3);
		for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
		for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal();
		const auto g = net.gradient(x, y);
		for (Eigen::Index i = 0; i < p.size(); ++i) {
			auto hi = p, lo = p;
			hi(i) += 1e-5;
			lo(i) -= 1e-5;
			net.set_parameters(hi);
			const double fh = net.loss(x, y);
			net.set_parameters(lo);
			const double fl = net.loss(x, y);
			const double numeric = (fh - fl) / 2e-5;
			worst = std::max(worst, std::abs(g(i) - numeric) / std::max({std::abs(g(i)), std::abs(numeric), 1e-6}));
		}
		net.set_parameters(p);
	}
	return {worst <= 1e-4, "max relative error " + fmt(worst) + " over 100 draws of a [6,4,3] net"};
}

// ---------------------------------------------------------------- 6

Outcome isac_blobs() {
	std::size_t correct = 0;
	for (unsigned trial = 0; trial < 50; ++trial) {
		Rng rng(mix_seed(6, trial));
		constexpr std::size_t kPer = 8, kModels = 6;
		const ModelId best[2] = {static_cast<ModelId>(rng.uniform_index(kModels)), 0};
		ModelId other = static_cast<ModelId>(rng.uniform_index(kModels - 1));
		if (other >= best[0]) ++other;
		const ModelId blob_best_model[2] = {best[0], other};
		std::vector<std::string> ids;
		for (std::size_t i = 0; i < 2 * kPer; ++i) ids.push_back("b" + std::to_string(i));
		PerformanceTensor P(3, ids, kModels, "blobs");
		std::vector<MetaFeatureVector> profiles;
		std::vector<int> blob;
		for (std::size_t i = 0; i < 2 * kPer; ++i) {
			const int which = i < kPer ? 0 : 1;
			blob.push_back(which);
			const double c = which == 0 ? -4.0 : 4.0;
			std::vector<double> f;
			for (int k = 0; k < 4; ++k) f.push_back(c * (k + 1) + 0.1 * rng.normal());
			profiles.push_back({f, std::vector<bool>(f.size(), false), "blobs"});
			for (std::size_t w = 0; w < 3; ++w)
				for (ModelId j = 0; j < kModels; ++j) {
					const double u = 0.2 + 0.8 * rng.uniform01();
					P.set(w, i, j, j == blob_best_model[which] ? 0.01 * u : u, 0.0);
				}
		}
		// Brute force: per blob, argmin of the summed member aggregates.
		ModelId expected[2];
		for (int which : {0, 1}) {
			std::vector<double> score(kModels, 0.0);
			for (std::size_t i = 0; i < blob.size(); ++i) {
				if (blob[i] != which) continue;
				const auto agg = P.aggregate(i);
				for (std::size_t j = 0; j < kModels; ++j) score[j] += agg[j];
			}
			expected[which] = static_cast<ModelId>(std::min_element(score.begin(), score.end()) - score.begin());
		}
		IsacOptions opt;
		opt.k = 2;
		opt.seed = trial;
		const auto model = isac_fit(profiles, P, opt);
		bool all = true;
		for (std::size_t i = 0; i < profiles.size(); ++i) {
			const auto r = isac_select(model, profiles[i]);
			all = all && r.model_id && *r.model_id == expected[blob[i]];
		}
		correct += all;
	}
	return {correct == 50, std::to_string(correct) + "/50 trials reproduce the per-blob best model"};
}

// ---------------------------------------------------------------- 7

struct ParseCase {
	std::string category;
	std::string text;
	std::optional<ModelId> strict_id;
	InvalidReason strict_reason = InvalidReason::ParseError;
	/// Expected snap outcome when it differs from the strict one.
	std::optional<ModelId> snap_id;
};

nlohmann::ordered_json hyper_array(const ModelSpec& s) {
	auto a = nlohmann::ordered_json::array();
	for (const auto& h : s.hyperparameters) a.push_back({{"name", h.name}, {"value", h.value.text()}});
	return a;
}

std::string response(const std::string& algorithm, const nlohmann::ordered_json& hypers, const std::string& rep) {
	nlohmann::ordered_json j;
	j["reasoning"] = "short";
	j["result"] = {{"forecasting algorithm", algorithm}, {"hyperparameters", hypers}, {"data representation", rep}};
	return j.dump();
}

std::string response(const ModelSpec& s) {
	return response(std::string(to_string(s.algorithm)), hyper_array(s), std::string(to_string(s.representation)));
}

std::vector<ParseCase> parser_corpus(const ModelSpace& space) {
	std::vector<ParseCase> cases;
	auto invalid = [&](std::string cat, std::string text, InvalidReason r) {
		cases.push_back({std::move(cat), std::move(text), std::nullopt, r, std::nullopt});
	};
	// 70 valid: 10 per algorithm in three layouts.
	for (auto a : kAllAlgorithms) {
		const auto ids = space.ids_of(a);
		for (std::size_t i = 0; i < 10; ++i) {
			const ModelId id = ids[i * ids.size() / 10];
			const auto& s = space[id];
			std::string text;
			if (i % 3 == 0) {
				nlohmann::ordered_json obj = nlohmann::ordered_json::object();
				for (const auto& h : s.hyperparameters) obj[h.name] = h.value.text();
				text = response(std::string(to_string(a)), obj, std::string(to_string(s.representation)));
			} else if (i % 3 == 1) {
				text = response(s);
			} else {
				text = "Here is my choice.\n" + response(s) + "\nThanks.";
			}
			cases.push_back({"valid", text, id, InvalidReason::ParseError, std::nullopt});
		}
	}
	// 20 fenced.
	for (std::size_t i = 0; i < 20; ++i) {
		const ModelId id = static_cast<ModelId>((i * 17 + 3) % space.size());
		cases.push_back({"fenced", "```json\n" + response(space[id]) + "\n```", id, InvalidReason::ParseError, std::nullopt});
	}
	// 30 off-grid numeric: strict OutOfSpace, snap to the nearest numeric grid value (ties to the smaller).
	for (ModelId id = 0, made = 0; made < 30 && id < space.size(); id += 7) {
		auto s = space[id];
		const auto* grid = space.grid(s.algorithm);
		for (std::size_t h = 0; h < grid->hyperparameters.size(); ++h) {
			std::vector<double> numeric;
			for (const auto& v : grid->hyperparameters[h].values) {
				if (v.numeric()) numeric.push_back(v.number());
			}
			if (numeric.size() < 2) continue;
			std::sort(numeric.begin(), numeric.end());
			const double off = made % 2 ? numeric.back() * 2.0 + 1.0 : numeric[0] + 0.3 * (numeric[1] - numeric[0]);
			double nearest = numeric[0];
			for (double v : numeric) {
				if (std::abs(v - off) < std::abs(nearest - off)) nearest = v;
			}
			auto snapped = s;
			for (const auto& v : grid->hyperparameters[h].values) {
				if (v.numeric() && v.number() == nearest) snapped.hyperparameters[h].value = v;
			}
			s.hyperparameters[h].value = HyperValue(text::format_exact(off));
			cases.push_back({"off-grid numeric", response(s), std::nullopt, InvalidReason::OutOfSpace, space.lookup(snapped)});
			++made;
			break;
		}
	}
	// 10 off-grid non-numeric.
	const auto var_ids = space.ids_of(Algorithm::VAR);
	for (std::size_t i = 0; i < 10; ++i) {
		auto s = space[var_ids[i * 4]];
		s.hyperparameters[i % 2].value = HyperValue(i % 2 ? "quadratic" : "HC9");
		invalid("off-grid text", response(s), InvalidReason::OutOfSpace);
	}
	// 25 malformed.
	const auto& sample = space[42];
	const auto full = response(sample);
	const std::vector<std::string> malformed = {
	    "",
	    "I recommend DeepAR with 40 cells.",
	    "The best model is Prophet.",
	    full.substr(0, full.size() / 2),
	    full.substr(0, full.size() - 1),
	    "[1, 2, 3]",
	    "{not json at all}",
	    "```json\n{\"result\": \n```",
	    "{'result': {'forecasting algorithm': 'DeepAR'}}",
	    R"j({"result": "DeepAR(num_cells=40)"})j",
	    R"({"result": ["DeepAR"]})",
	    R"({"result": {"forecasting algorithm": 7, "hyperparameters": [], "data representation": "Raw"}})",
	    R"({"result": {"forecasting algorithm": "DeepAR", "hyperparameters": 3, "data representation": "Raw"}})",
	    R"({"result": {"forecasting algorithm": "DeepAR", "hyperparameters": "none", "data representation": "Raw"}})",
	    R"({"result": {"forecasting algorithm": "DeepAR", "hyperparameters": [], "data representation": 1}})",
	    R"({"result": {"forecasting algorithm": "DeepAR", "hyperparameters": [5], "data representation": "Raw"}})",
	    R"({"result": {"forecasting algorithm": "DeepAR", "hyperparameters": [{"name": 1, "value": 2}], "data representation": "Raw"}})",
	    R"({"result": {"forecasting algorithm": "DeepAR", "hyperparameters": [{"name": "num_cells", "value": "40"}, {"name": "num_cells", "value": "40"}, {"name": "num_rnn_layers", "value": "2"}], "data representation": "Raw"}})",
	    "null",
	    "true",
	    "42",
	    "{\"result\": }",
	    "{{}",
	    "<json>none</json>",
	    "Sorry, I cannot help with that request.",
	};
	for (const auto& m : malformed) invalid("malformed", m, InvalidReason::ParseError);
	// 25 missing fields.
	const auto algo = std::string(to_string(sample.algorithm));
	const auto rep = std::string(to_string(sample.representation));
	for (int i = 0; i < 25; ++i) {
		nlohmann::ordered_json result = {{"forecasting algorithm", algo}, {"hyperparameters", hyper_array(sample)},
		                                 {"data representation", rep}};
		nlohmann::ordered_json doc;
		switch (i % 5) {
		case 0: doc = {{"reasoning", "no result"}, {"choice", result}}; break;
		case 1: result.erase("forecasting algorithm"); doc["result"] = result; break;
		case 2: result.erase("hyperparameters"); doc["result"] = result; break;
		case 3: result.erase("data representation"); doc["result"] = result; break;
		default: {
			auto hypers = hyper_array(sample);
			hypers.erase(static_cast<std::size_t>(i / 5) % hypers.size());
			result["hyperparameters"] = hypers;
			doc["result"] = result;
		}
		}
		invalid("missing field", doc.dump(), InvalidReason::MissingField);
	}
	// 10 unknown algorithms.
	for (const auto* name : {"ARIMA", "LSTM", "XGBoost", "Theta", "TBATS", "NBEATS", "Croston", "ETS", "TFT", "Holt"}) {
		invalid("unknown algorithm", response(name, hyper_array(sample), rep), InvalidReason::UnknownAlgorithm);
	}
	// 10 unknown representations.
	for (const auto* name : {"Log", "Differenced", "BoxCox", "Scaled", "Fourier", "Wavelet", "Lagged", "Standardized",
	                         "Detrended", "Seasonal"}) {
		invalid("unknown representation", response(algo, hyper_array(sample), name), InvalidReason::UnknownRepresentation);
	}
	return cases;
}

Outcome parser_robustness() {
	const auto space = ModelSpace::canonical();
	const auto cases = parser_corpus(space);
	std::size_t strict_ok = 0, snap_ok = 0, off_grid = 0, snapped_valid = 0;
	std::string first_failure;
	for (std::size_t i = 0; i < cases.size(); ++i) {
		const auto& c = cases[i];
		const auto strict = parse_response(c.text, space, OffGridPolicy::Strict);
		const bool s_ok = c.strict_id ? (strict.model_id == c.strict_id) : (!strict.valid() && strict.reason == c.strict_reason);
		strict_ok += s_ok;
		const auto snap = parse_response(c.text, space, OffGridPolicy::Snap);
		bool p_ok;
		if (c.category == "off-grid numeric") {
			++off_grid;
			p_ok = c.snap_id && snap.model_id == c.snap_id;
			snapped_valid += p_ok;
		} else {
			p_ok = snap.model_id == strict.model_id && snap.reason == strict.reason;
		}
		snap_ok += p_ok;
		if ((!s_ok || !p_ok) && first_failure.empty()) first_failure = "; first failure: case " + std::to_string(i) + " (" + c.category + ")";
	}
	const bool ok = cases.size() == 200 && strict_ok == cases.size() && snap_ok == cases.size() && off_grid == 30;
	return {ok, std::to_string(cases.size()) + " cases, strict " + std::to_string(strict_ok) + " expected, snap turned " +
	                std::to_string(snapped_valid) + "/" + std::to_string(off_grid) +
	                " off-grid numeric cases Valid and left the rest unchanged (" + std::to_string(snap_ok) + " agree)" +
	                first_failure};
}

// ---------------------------------------------------------------- 8

Outcome prompt_structure() {
	const auto config = ExperimentConfig::load(pack_dir() / "config.json");
	const auto data = prepare_experiment(config);
	const auto& space = data.space;
	std::size_t windows = 0, bad_sections = 0, not_larger = 0;
	double min_ratio = std::numeric_limits<double>::infinity();
	for (std::size_t d = 0; d < data.datasets.size(); ++d) {
		for (std::size_t w = 0; w < data.windows[d].size(); ++w) {
			++windows;
			std::map<std::string, std::size_t> tokens;
			for (const auto& v : PromptVariant::all()) {
				const auto p = build_prompt(data.windows[d][w], &data.window_features[d][w], space, v);
				std::vector<std::string> expected = {std::string(kSectionRole), std::string(kSectionModelSpace)};
				if (v.include_cot) expected.emplace_back(kSectionCot);
				for (auto s : {kSectionInput, kSectionOutputFormat, kSectionRules}) expected.emplace_back(s);
				if (section_labels(p.text) != expected) ++bad_sections;
				tokens[v.name()] = p.approx_input_tokens;
			}
			if (tokens["data+meta"] <= tokens["data"] || tokens["data+meta+cot"] <= tokens["data+cot"]) ++not_larger;
			min_ratio = std::min(min_ratio, static_cast<double>(tokens["data+meta"]) / static_cast<double>(tokens["data"]));
		}
	}
	return {bad_sections == 0 && not_larger == 0 && windows > 0,
	        std::to_string(windows) + " windows x 4 variants, section mismatches " + std::to_string(bad_sections) +
	            ", meta not larger " + std::to_string(not_larger) + ", min meta/data token ratio " + fmt(min_ratio)};
}

// ---------------------------------------------------------------- 9

Outcome replay_determinism() {
	testing::TempDir dir;
	const auto r = cli("evaluate --config '" + (pack_dir() / "config.json").string() + "' --out '" + dir.path().string() + "'");
	bool same = r.code == 0;
	for (const auto* name : {"report.json", "summary.csv", "report.txt"}) {
		same = same && slurp(dir / name) == slurp(pack_dir() / "golden" / name);
	}
	// In process, with the client exposed, to count network calls.
	auto config = ExperimentConfig::load(pack_dir() / "config.json");
	RunOptions run;
	const auto profiles = load_profiles(config.profiles);
	run.clients["desk-scripted"] =
	    std::make_shared<LlmClient>(find_profile(profiles, "desk-scripted"), ClientMode::Replay, FixtureStore(config.fixtures));
	const auto report = run_experiment(config, run);
	const auto calls = run.clients["desk-scripted"]->network_calls();
	const bool equal = to_json(report).dump(2) + "\n" == slurp(pack_dir() / "golden" / "report.json");
	return {same && equal && calls == 0, std::string("CLI report ") + (same ? "identical" : "differs") +
	                                         " to golden, in-process report " + (equal ? "identical" : "differs") +
	                                         ", network calls " + std::to_string(calls)};
}

// ---------------------------------------------------------------- 10

Outcome matrix_round_trip() {
	std::vector<TimeSeriesDataset> datasets;
	for (unsigned i = 0; i < 10; ++i) {
		datasets.push_back(make_dataset("rt" + std::to_string(i), testing::random_series(40, 100 + i, -5.0, 5.0)));
	}
	std::vector<std::vector<Window>> windows;
	for (const auto& d : datasets) windows.push_back(sample_windows(d, 5, 16, window_seed(10, d.id)));
	const auto space = ModelSpace::canonical();
	MatrixBuildOptions opt;
	opt.synthesize_non_native = true;
	opt.synthesis_seed = 10;
	const auto built = build_matrix(datasets, windows, space, opt);
	testing::TempDir dir;
	export_matrix(built, dir / "matrix.txt");
	const auto back = import_matrix(dir / "matrix.txt", space);
	std::size_t present = 0, differ = 0;
	for (std::size_t w = 0; w < built.windows(); ++w)
		for (std::size_t d = 0; d < built.datasets(); ++d)
			for (ModelId m = 0; m < built.models(); ++m) {
				present += built.present(w, d, m);
				const bool same = built.present(w, d, m) == back.present(w, d, m) &&
				                  (!built.present(w, d, m) || (built.mse(w, d, m) == back.mse(w, d, m) &&
				                                               built.fit_seconds(w, d, m) == back.fit_seconds(w, d, m)));
				differ += !same;
			}
	const bool ok = built == back && differ == 0 && present == 10u * 322u * 5u;
	return {ok, std::to_string(present) + " entries (10 x 322 x 5), " + std::to_string(differ) + " differ after the round trip"};
}

// ---------------------------------------------------------------- 11

Outcome speedup_accounting() {
	double worst = 0.0;
	std::string shown;
	struct Case {
		std::size_t T;
		double fit;
		double latency;
	};
	for (const auto c : {Case{1, 0.1, 0.5}, Case{3, 0.02, 0.25}, Case{2, 0.7, 3.0}}) {
		std::vector<std::string> ids = {"a", "b", "c"};
		PerformanceTensor P(c.T, ids, 322, "speedup");
		Rng rng(11);
		for (std::size_t w = 0; w < c.T; ++w)
			for (std::size_t d = 0; d < ids.size(); ++d)
				for (ModelId m = 0; m < 322; ++m) P.set(w, d, m, rng.uniform01(), c.fit);
		std::vector<double> naive;
		std::vector<RankedModels> rankings;
		std::vector<std::optional<SelectionResult>> selections;
		for (const auto& id : ids) {
			naive.push_back(naive_select(P, id).total_seconds);
			rankings.push_back(rank(P, id));
			auto s = valid_selection(StrategyKind::Llm, 0, c.latency);
			s.dataset_id = id;
			selections.push_back(s);
		}
		const auto summary = summarize_strategy("s", StrategyKind::Llm, selections, P, rankings, naive, {1});
		const double closed = 322.0 * static_cast<double>(c.T) * c.fit / c.latency;
		if (!summary.speedup.median || !summary.speedup.ratio_of_means) return {false, "speedup missing"};
		worst = std::max({worst, std::abs(*summary.speedup.median - closed), std::abs(*summary.speedup.ratio_of_means - closed)});
		if (shown.empty()) shown = fmt(*summary.speedup.median) + " (closed form " + fmt(closed) + ")";
	}
	return {worst <= 1e-9, "0.1 s entries, 0.5 s latency, 322 models: speedup " + shown + ", max deviation " +
	                           fmt(worst) + " over 3 constructions"};
}

} // namespace

int main() {
	struct Criterion {
		int id;
		const char* name;
		double budget_seconds;
		std::function<Outcome()> run;
	};
	const std::vector<Criterion> criteria = {
	    {1, "model-space fidelity", 1.0, model_space_fidelity},
	    {2, "random-baseline calibration", 30.0, random_calibration},
	    {3, "hit@k oracle equivalence", 0.0, hit_at_k_oracle},
	    {4, "forecaster exactness", 0.0, forecaster_exactness},
	    {5, "MLP gradient check", 10.0, mlp_gradient_check},
	    {6, "ISAC brute-force equivalence", 0.0, isac_blobs},
	    {7, "parser robustness", 0.0, parser_robustness},
	    {8, "prompt-structure fidelity", 0.0, prompt_structure},
	    {9, "end-to-end replay determinism", 60.0, replay_determinism},
	    {10, "matrix round-trip", 0.0, matrix_round_trip},
	    {11, "speedup accounting", 0.0, speedup_accounting},
	};
	int failed = 0;
	for (const auto& c : criteria) {
		const auto start = std::chrono::steady_clock::now();
		Outcome o;
		try {
			o = c.run();
		} catch (const std::exception& e) {
			o = {false, std::string("exception: ") + e.what()};
		}
		const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
		const bool in_time = c.budget_seconds <= 0.0 || secs < c.budget_seconds;
		const bool pass = o.pass && in_time;
		failed += !pass;
		std::string timing = fmt(secs) + " s";
		if (c.budget_seconds > 0.0) timing += " < " + fmt(c.budget_seconds) + " s" + (in_time ? "" : " EXCEEDED");
		std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << c.id << "  " << c.name << ": " << o.detail << " ["
		          << timing << "]\n";
	}
	std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed\n";
	return failed == 0 ? 0 : 1;
}
