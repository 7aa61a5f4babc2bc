#include "tsselect/harness.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace tsselect {
namespace {

ErrorCode code_of(const std::function<void()>& fn) {
	try {
		fn();
	} catch (const Error& e) {
		return e.code();
	}
	ADD_FAILURE() << "no error thrown";
	return ErrorCode::ConfigError;
}

SelectionResult chosen(const std::string& id, std::optional<ModelId> m) {
	SelectionResult r;
	r.dataset_id = id;
	r.model_id = m;
	if (!m) r.reason = InvalidReason::OutOfSpace;
	return r;
}

/// Exhaustive: a selection hits at k when fewer than k models beat it (ties broken by id).
double brute_hit(const PerformanceTensor& P, const std::vector<std::optional<ModelId>>& sel, std::size_t k) {
	std::size_t hits = 0;
	for (std::size_t d = 0; d < P.datasets(); ++d) {
		if (!sel[d]) continue;
		std::vector<double> agg(P.models());
		for (ModelId j = 0; j < P.models(); ++j) {
			double sum = 0;
			std::size_t cnt = 0;
			for (std::size_t w = 0; w < P.windows(); ++w)
				if (P.present(w, d, j)) {
					sum += P.mse(w, d, j);
					++cnt;
				}
			agg[j] = cnt ? sum / cnt : std::numeric_limits<double>::infinity();
		}
		std::size_t better = 0;
		const auto s = *sel[d];
		for (ModelId j = 0; j < P.models(); ++j) {
			if (j == s) continue;
			const bool missing_j = std::isinf(agg[j]), missing_s = std::isinf(agg[s]);
			if (missing_j && missing_s) better += j < s;
			else if (!missing_j && (missing_s || agg[j] < agg[s] || (agg[j] == agg[s] && j < s))) ++better;
		}
		hits += better < k;
	}
	return 100.0 * hits / P.datasets();
}

class SmallCorpus {
public:
	explicit SmallCorpus(std::size_t n = 6) {
		std::string manifest = "# id,path\n";
		for (std::size_t i = 0; i < n; ++i) {
			const auto id = "series_" + std::to_string(i);
			std::string csv = "timestamp,value\n";
			const auto v = testing::random_series(48, static_cast<unsigned>(i + 1), 0.0, 1.0);
			for (std::size_t t = 0; t < v.size(); ++t) {
				csv += std::to_string(t) + "," +
				       std::to_string(std::sin(0.4 * t * (1.0 + 0.1 * i)) + 0.3 * v[t] + 0.02 * t * (i % 3)) + "\n";
			}
			dir.write("data/" + id + ".csv", csv);
			manifest += id + ",data/" + id + ".csv\n";
		}
		dir.write("manifest.csv", manifest);
	}

	ExperimentConfig config(const std::string& strategies_json) const {
		auto j = nlohmann::json::parse(R"({"corpus": "manifest.csv", "windows_per_dataset": 3, "seed": 5,
		    "k": [1, 5, 10, 50], "folds": 3, "timing": "omitted"})");
		j["strategies"] = nlohmann::json::parse(strategies_json);
		return ExperimentConfig::from_json(j, dir.path());
	}

	testing::TempDir dir;
};

const std::string kBaselines = R"(["random", "popular", {"kind": "sota", "families": ["SeasonalNaive", "VAR"]},
    {"kind": "isac", "k": 2}, {"kind": "mlp", "hidden": [8], "epochs": 5, "batch_size": 4}])";

} // namespace

TEST(HitAtK, TopOneAndAllInvalid) {
	PerformanceTensor P(1, {"a", "b"}, 4, "t");
	for (ModelId j = 0; j < 4; ++j) {
		P.set(0, 0, j, 0.1 * (4 - j), 0);
		P.set(0, 1, j, 0.1 * (j + 1), 0);
	}
	const std::vector<RankedModels> rankings = {rank(P, "a"), rank(P, "b")};
	EXPECT_EQ(hit_at_k(std::vector<SelectionResult>{chosen("a", 3), chosen("b", 0)}, rankings, 1), 100.0);
	EXPECT_EQ(hit_at_k(std::vector<SelectionResult>{chosen("a", 2), chosen("b", 0)}, rankings, 1), 50.0);
	EXPECT_EQ(hit_at_k(std::vector<SelectionResult>{chosen("a", 2), chosen("b", 0)}, rankings, 2), 100.0);
	for (std::size_t k = 1; k <= 4; ++k) {
		EXPECT_EQ(hit_at_k(std::vector<SelectionResult>{chosen("a", std::nullopt), chosen("b", std::nullopt)}, rankings, k),
		          0.0);
	}
	EXPECT_EQ(code_of([&] { hit_at_k(std::vector<SelectionResult>{chosen("a", 0), chosen("b", 0)}, rankings, 5); }),
	          ErrorCode::KExceedsSpace);
	EXPECT_EQ(code_of([&] { hit_at_k(std::vector<SelectionResult>{chosen("b", 0), chosen("a", 0)}, rankings, 1); }),
	          ErrorCode::ShapeMismatch);
}

TEST(HitAtK, MatchesExhaustiveRecomputation) {
	std::mt19937 gen(17);
	for (int trial = 0; trial < 200; ++trial) {
		const std::size_t n = 1 + gen() % 5, m = 1 + gen() % 10, T = 1 + gen() % 3;
		std::vector<std::string> ids;
		for (std::size_t d = 0; d < n; ++d) ids.push_back("d" + std::to_string(d));
		PerformanceTensor P(T, ids, m, "t");
		for (std::size_t w = 0; w < T; ++w)
			for (std::size_t d = 0; d < n; ++d)
				for (ModelId j = 0; j < m; ++j)
					if (gen() % 6) P.set(w, d, j, static_cast<double>(gen() % 4) / 4.0, 0);
		std::vector<RankedModels> rankings;
		std::vector<std::optional<ModelId>> sel;
		bool ok = true;
		for (std::size_t d = 0; d < n; ++d) {
			try {
				rankings.push_back(rank(P, ids[d]));
			} catch (const Error&) {
				ok = false;
			}
			sel.push_back(gen() % 5 ? std::optional<ModelId>(gen() % m) : std::nullopt);
		}
		if (!ok) continue;
		for (std::size_t k = 1; k <= m; ++k) EXPECT_EQ(hit_at_k(sel, rankings, k), brute_hit(P, sel, k));
	}
}

TEST(HitAtK, CounterMatchesBatch) {
	std::mt19937 gen(3);
	std::vector<RankedModels> rankings;
	std::vector<std::optional<ModelId>> sel;
	HitCounter counter({1, 3, 8});
	for (int d = 0; d < 50; ++d) {
		std::vector<double> agg(8);
		for (auto& v : agg) v = (gen() % 100) / 100.0;
		rankings.push_back(rank_aggregate("d", agg));
		sel.push_back(gen() % 7 ? std::optional<ModelId>(gen() % 8) : std::nullopt);
		counter.add(sel.back(), rankings.back());
	}
	EXPECT_EQ(counter.count(), 50u);
	EXPECT_EQ(counter.percentage(0), hit_at_k(sel, rankings, 1));
	EXPECT_EQ(counter.percentage(1), hit_at_k(sel, rankings, 3));
	EXPECT_EQ(counter.percentage(2), hit_at_k(sel, rankings, 8));
}

TEST(MseOfSelections, HandArithmetic) {
	PerformanceTensor P(1, {"a", "b", "c"}, 2, "t");
	P.set(0, 0, 0, 0.01, 0);
	P.set(0, 1, 1, 0.03, 0);
	P.set(0, 2, 0, 0.5, 0);
	const auto s = mse_of_selections({chosen("a", 0), chosen("b", 1), chosen("c", std::nullopt)}, P);
	EXPECT_DOUBLE_EQ(*s.mean, 0.02);
	EXPECT_DOUBLE_EQ(*s.std, 0.01);
	EXPECT_DOUBLE_EQ(s.coverage, 2.0 / 3.0);
	EXPECT_EQ(code_of([&] { mse_of_selections({chosen("a", 1)}, P); }), ErrorCode::MissingEntry);
	EXPECT_FALSE(mse_of_selections({chosen("a", std::nullopt)}, P).mean);
}

TEST(MseOfSelections, TopOneIsMeanOfMinima) {
	PerformanceTensor P(2, {"a", "b"}, 3, "t");
	std::mt19937 gen(1);
	for (std::size_t w = 0; w < 2; ++w)
		for (std::size_t d = 0; d < 2; ++d)
			for (ModelId j = 0; j < 3; ++j) P.set(w, d, j, (gen() % 1000) / 1000.0, 0);
	std::vector<SelectionResult> top;
	double sum = 0;
	for (const auto* id : {"a", "b"}) {
		const auto r = rank(P, id);
		top.push_back(chosen(id, r.ordering[0]));
		sum += *std::min_element(r.aggregate.begin(), r.aggregate.end());
	}
	EXPECT_DOUBLE_EQ(*mse_of_selections(top, P).mean, sum / 2);
}

TEST(Speedup, ClosedForm) {
	PerformanceTensor P(1, {"a", "b", "c"}, 322, "t");
	for (std::size_t d = 0; d < 3; ++d)
		for (ModelId j = 0; j < 322; ++j) P.set(0, d, j, 0.5, 0.1);
	std::vector<double> naive;
	for (const auto* id : {"a", "b", "c"}) naive.push_back(naive_select(P, id).total_seconds);
	const auto s = speedup(naive, {0.5, 0.5, 0.5});
	EXPECT_NEAR(*s.median, 64.4, 1e-9);
	EXPECT_NEAR(*s.ratio_of_means, 64.4, 1e-9);
	EXPECT_FALSE(speedup(naive, {0.5, 0.0, 0.5}).median);
}

TEST(Moments, PopulationConvention) {
	const auto m = moments({1.0, 2.0, 3.0, 4.0});
	EXPECT_DOUBLE_EQ(*m.mean, 2.5);
	EXPECT_DOUBLE_EQ(*m.std, std::sqrt(1.25));
	EXPECT_FALSE(moments({}).mean);
	EXPECT_EQ(*median({3.0, 1.0, 2.0, 10.0}), 2.5);
}

TEST(ExperimentConfig, ParsesAndExpands) {
	testing::TempDir dir;
	const auto path = dir.write("exp/config.json", R"({
	  // comments are allowed
	  "corpus": "../data/manifest.csv",
	  "matrix": {"source": "import", "path": "matrix.txt"},
	  "k": [1, 5],
	  "strategies": ["random", {"kind": "sota"},
	                 {"kind": "llm", "profile": "gpt-4o", "variants": ["data", "data+meta+cot"], "policy": "snap"}],
	  "llm": {"mode": "replay", "fixtures": "fx", "profiles": "p.json"},
	  "window_policy": "majority", "timing": "omitted"})");
	const auto c = ExperimentConfig::load(path);
	EXPECT_EQ(c.corpus, (dir.path() / "data/manifest.csv").lexically_normal());
	EXPECT_TRUE(c.import_matrix);
	EXPECT_EQ(c.matrix_path, dir.path() / "exp/matrix.txt");
	EXPECT_EQ(c.ks, (std::vector<std::size_t>{1, 5}));
	EXPECT_EQ(c.window_policy, WindowPolicy::Majority);
	EXPECT_FALSE(c.measure_timing);
	std::vector<std::string> labels;
	for (const auto& s : c.strategies) labels.push_back(s.label);
	EXPECT_EQ(labels, (std::vector<std::string>{"random", "sota:DeepAR", "sota:DeepFactor", "sota:Prophet",
	                                            "sota:SeasonalNaive", "sota:GaussianProcess", "sota:VAR",
	                                            "sota:RandomForest", "llm:gpt-4o:data:snap",
	                                            "llm:gpt-4o:data+meta+cot:snap"}));
	EXPECT_TRUE(c.strategies.back().variant.include_cot);
}

TEST(ExperimentConfig, Errors) {
	const auto base = std::filesystem::path("/tmp");
	auto bad = [&](const char* text) {
		return code_of([&] { ExperimentConfig::from_json(nlohmann::json::parse(text), base); });
	};
	EXPECT_EQ(bad(R"({"strategies": ["random"]})"), ErrorCode::ConfigError);
	EXPECT_EQ(bad(R"({"corpus": "m", "strategies": []})"), ErrorCode::ConfigError);
	EXPECT_EQ(bad(R"({"corpus": "m", "strategies": ["oracle"]})"), ErrorCode::ConfigError);
	EXPECT_EQ(bad(R"({"corpus": "m", "k": [0]})"), ErrorCode::ConfigError);
	EXPECT_EQ(bad(R"({"corpus": "m", "folds": 1})"), ErrorCode::ConfigError);
	EXPECT_EQ(bad(R"({"corpus": "m", "strategies": [{"kind": "llm", "profile": "x", "variants": ["meta"]}]})"),
	          ErrorCode::ConfigError);
	EXPECT_EQ(code_of([&] { ExperimentConfig::load("/nonexistent/config.json"); }), ErrorCode::FileNotFound);
}

TEST(Folds, AssignmentCoversEveryDataset) {
	EXPECT_EQ(fold_assignment(5, 0), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
	EXPECT_EQ(fold_assignment(5, 2), (std::vector<std::size_t>{0, 1, 0, 1, 0}));
	EXPECT_EQ(fold_assignment(3, 10), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(MajorityVote, MostFrequentLowestIdOnTie) {
	auto v = [](std::optional<ModelId> m) { auto r = chosen("a", m); r.latency_seconds = 1; r.input_tokens = 2; return r; };
	const auto r = majority_vote({v(5), v(3), v(std::nullopt), v(5), v(3)});
	EXPECT_EQ(*r.model_id, 3u);
	EXPECT_EQ(r.latency_seconds, 5.0);
	EXPECT_EQ(r.input_tokens, 10);
	EXPECT_FALSE(majority_vote({v(std::nullopt), v(std::nullopt)}).valid());
}

TEST(RunExperiment, BaselinesDeterministicAndConsistent) {
	SmallCorpus corpus;
	const auto config = corpus.config(kBaselines);
	const auto data = prepare_experiment(config);
	ASSERT_EQ(data.tensor.datasets(), 6u);
	const auto r1 = run_experiment(config, data);
	const auto r2 = run_experiment(config, prepare_experiment(config));
	EXPECT_EQ(to_json(r1).dump(), to_json(r2).dump());
	EXPECT_TRUE(r1.failures.empty());
	ASSERT_EQ(r1.strategies.size(), 6u);
	EXPECT_EQ(r1.records.size(), 6u * 6u);
	for (const auto& s : r1.strategies) {
		std::size_t invalid = 0;
		for (const auto& [reason, count] : s.invalid) invalid += count;
		EXPECT_EQ(s.valid + invalid, s.datasets) << s.label;
		for (std::size_t i = 1; i < s.hit_at_k.size(); ++i) EXPECT_LE(s.hit_at_k[i - 1].second, s.hit_at_k[i].second);
		for (const auto& [k, v] : s.hit_at_k) {
			EXPECT_GE(v, 0.0);
			EXPECT_LE(v, 100.0);
		}
		EXPECT_EQ(s.input_tokens, 0);
		EXPECT_EQ(*s.latency.mean, 0.0);
		EXPECT_FALSE(s.speedup.median);
	}
	for (const auto& rec : r1.records) {
		ASSERT_TRUE(rec.model_id);
		EXPECT_EQ(*rec.rank, data.rankings[data.index_of(rec.dataset_id)].position_of(*rec.model_id) + 1);
	}
}

TEST(RunExperiment, HitAtMEqualsCoverage) {
	SmallCorpus corpus(4);
	auto config = corpus.config(R"(["random", "popular"])");
	config.ks = {1, 322};
	const auto r = run_experiment(config);
	for (const auto& s : r.strategies) EXPECT_DOUBLE_EQ(s.hit_at_k.back().second, 100.0 * s.mse.coverage);
}

TEST(RunExperiment, FoldErrorsGoToFailureList) {
	SmallCorpus corpus(4);
	auto config = corpus.config(R"([{"kind": "isac", "k": 4}])");
	config.folds = 2;
	const auto r = run_experiment(config);
	EXPECT_EQ(r.failures.size(), 4u);
	EXPECT_EQ(r.failures.front().code, "TooFewDatasets");
	EXPECT_EQ(r.strategies.front().failed, 4u);
	EXPECT_EQ(r.strategies.front().hit_at_k.front().second, 0.0);
}

TEST(RunExperiment, LlmReplayWithoutNetwork) {
	SmallCorpus corpus(4);
	auto config = corpus.config(R"([{"kind": "llm", "profile": "unit", "variants": ["data", "data+meta"]}])");
	config.measure_timing = true;
	const auto data = prepare_experiment(config);
	FixtureStore store(corpus.dir / "fixtures");
	const auto& snaive = data.space[data.space.ids_of(Algorithm::SeasonalNaive).front()];
	for (const auto& variant : {PromptVariant{false, false}, PromptVariant{true, false}}) {
		for (std::size_t d = 0; d < data.datasets.size(); ++d) {
			const auto& w = data.windows[d].back();
			const auto prompt = build_prompt(w, &data.window_features[d].back(), data.space, variant);
			CompletionResult reply;
			reply.text = d == 0 && variant.include_meta_features
			                 ? "no idea"
			                 : R"({"result": {"forecasting algorithm": "SeasonalNaive", "hyperparameters": [{"name": "season_length", "value": )" +
			                       snaive.hyperparameters[0].value.text() + R"(}], "data representation": ")" +
			                       std::string(to_string(snaive.representation)) + R"("}})";
			reply.input_tokens = static_cast<long long>(prompt.approx_input_tokens);
			reply.output_tokens = 30;
			reply.latency_seconds = 0.5;
			store.record("unit", {prompt.text}, reply);
		}
	}
	ProviderProfile profile;
	profile.name = "unit";
	profile.endpoint = "http://127.0.0.1:9/";
	RunOptions run;
	auto client = std::make_shared<LlmClient>(profile, ClientMode::Replay, store);
	run.clients["unit"] = client;
	const auto r = run_experiment(config, data, run);
	EXPECT_EQ(client->network_calls(), 0u);
	ASSERT_EQ(r.strategies.size(), 2u);
	EXPECT_EQ(r.strategies[0].valid, 4u);
	EXPECT_EQ(r.strategies[1].valid, 3u);
	EXPECT_EQ(r.strategies[1].invalid.front(), (std::pair<std::string, std::size_t>{"ParseError", 1}));
	EXPECT_GT(r.strategies[1].input_tokens, r.strategies[0].input_tokens);
	long long tokens = 0;
	for (const auto& rec : r.records) tokens += rec.input_tokens + rec.output_tokens;
	EXPECT_EQ(tokens, r.strategies[0].input_tokens + r.strategies[0].output_tokens + r.strategies[1].input_tokens +
	                      r.strategies[1].output_tokens);
	ASSERT_TRUE(r.strategies[0].speedup.median);
	EXPECT_NEAR(*r.strategies[0].speedup.ratio_of_means, *r.naive_seconds.mean / 0.5, 1e-12);
}

TEST(EmitReport, ShapeRoundTripAndDeterminism) {
	SmallCorpus corpus(4);
	auto config = corpus.config(R"(["random", "popular"])");
	config.ks = {1, 5};
	const auto report = run_experiment(config);
	testing::TempDir out;
	emit_report(report, out.path());
	std::ifstream csv(out / "summary.csv");
	std::vector<std::string> lines;
	for (std::string line; std::getline(csv, line);) lines.push_back(line);
	ASSERT_EQ(lines.size(), 3u);
	EXPECT_EQ(lines[0], "strategy,hit@1,hit@5");
	EXPECT_EQ(text::split(lines[1], ',').size(), 3u);
	EXPECT_EQ(load_report(out / "report.json"), report);
	auto read = [](const std::filesystem::path& p) {
		std::ifstream in(p, std::ios::binary);
		return std::string(std::istreambuf_iterator<char>(in), {});
	};
	const auto first = read(out / "report.json") + read(out / "report.txt");
	emit_report(report, out.path());
	EXPECT_EQ(read(out / "report.json") + read(out / "report.txt"), first);
	out.write("blocker", "x");
	EXPECT_EQ(code_of([&] { emit_report(report, out / "blocker"); }), ErrorCode::Unwritable);
}

TEST(RunExperiment, ImportedMatrixDefinesWindows) {
	SmallCorpus corpus(4);
	auto config = corpus.config(R"(["popular"])");
	const auto built = prepare_experiment(config);
	export_matrix(built.tensor, corpus.dir / "matrix.txt");
	config.import_matrix = true;
	config.matrix_path = corpus.dir / "matrix.txt";
	config.seed = 999;
	const auto imported = prepare_experiment(config);
	EXPECT_EQ(imported.tensor, built.tensor);
	for (std::size_t d = 0; d < 4; ++d) EXPECT_EQ(imported.windows[d].back().start, built.windows[d].back().start);
}

} // namespace tsselect
