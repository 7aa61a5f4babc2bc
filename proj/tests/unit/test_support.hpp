#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace tsselect::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
	TempDir() {
		std::random_device rd;
		path_ = std::filesystem::temp_directory_path() / ("tsselect-test-" + std::to_string(rd()) + std::to_string(rd()));
		std::filesystem::create_directories(path_);
	}
	~TempDir() {
		std::error_code ec;
		std::filesystem::remove_all(path_, ec);
	}
	TempDir(const TempDir&) = delete;
	TempDir& operator=(const TempDir&) = delete;

	const std::filesystem::path& path() const { return path_; }
	std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

	std::filesystem::path write(const std::string& name, const std::string& contents) const {
		const auto p = path_ / name;
		std::filesystem::create_directories(p.parent_path());
		std::ofstream(p) << contents;
		return p;
	}

private:
	std::filesystem::path path_;
};

inline std::vector<double> random_series(std::size_t n, unsigned seed, double lo = 0.0, double hi = 1.0) {
	std::mt19937 gen(seed);
	std::uniform_real_distribution<double> dist(lo, hi);
	std::vector<double> out(n);
	for (auto& v : out) v = dist(gen);
	return out;
}

inline std::string source_dir() { return TSSELECT_SOURCE_DIR; }

} // namespace tsselect::testing
