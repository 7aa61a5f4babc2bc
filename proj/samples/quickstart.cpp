// Library walk-through on the desk pack: load the experiment, fit ISAC on
// all but one dataset, select for the held-out one and print its prompt.

#include "tsselect/tsselect.hpp"

#include <iostream>

int main(int argc, char** argv) {
	using namespace tsselect;
	const std::filesystem::path config_path = argc > 1 ? argv[1] : "fixtures/desk/config.json";
	try {
		const auto config = ExperimentConfig::load(config_path);
		const auto data = prepare_experiment(config);
		const std::size_t held_out = 0;

		std::vector<std::string> train_ids;
		std::vector<MetaFeatureVector> train_profiles;
		for (std::size_t d = 1; d < data.datasets.size(); ++d) {
			train_ids.push_back(data.datasets[d].id);
			train_profiles.push_back(data.profiles[d]);
		}
		IsacOptions opt;
		opt.k = 3;
		const auto model = isac_fit(train_profiles, restrict_datasets(data.tensor, train_ids), opt);
		const auto pick = isac_select(model, data.window_features[held_out].back());

		const auto& ranking = data.rankings[held_out];
		std::cout << data.datasets[held_out].id << ": ISAC picks " << data.space[*pick.model_id].describe() << ", rank "
		          << ranking.position_of(*pick.model_id) + 1 << " of " << data.space.size() << "; best is "
		          << data.space[ranking.ordering.front()].describe() << "\n\n";

		const auto prompt = build_prompt(data.windows[held_out].back(), &data.window_features[held_out].back(), data.space,
		                                 *PromptVariant::parse("data+meta+cot"));
		std::cout << "prompt: " << prompt.approx_input_tokens << " tokens (approx.), sections:";
		for (const auto& s : prompt.sections) std::cout << " [" << s << "]";
		std::cout << '\n';
	} catch (const Error& e) {
		std::cerr << "error: " << e.what() << '\n';
		return static_cast<int>(exit_code_for(e.code()));
	}
	return 0;
}
