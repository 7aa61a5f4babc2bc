#include "tsselect/core_data.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <set>

namespace tsselect {
namespace {

using testing::TempDir;

TEST(LoadDataset, MinMaxNormalizes) {
	TempDir dir;
	const auto path = dir.write("a.csv", "2\n4\n6\n");
	const auto d = load_dataset(path, "a");
	EXPECT_EQ(d.id, "a");
	EXPECT_EQ(d.raw_values, (std::vector<double>{2, 4, 6}));
	EXPECT_EQ(d.values, (std::vector<double>{0.0, 0.5, 1.0}));
	EXPECT_EQ(d.normalization.min, 2.0);
	EXPECT_EQ(d.normalization.max, 6.0);
}

TEST(LoadDataset, ConstantSeriesMapsToZero) {
	TempDir dir;
	const auto d = load_dataset(dir.write("c.csv", "7\n7\n7\n"), "c");
	EXPECT_EQ(d.values, (std::vector<double>{0, 0, 0}));
}

TEST(LoadDataset, TwoColumnWithHeaderAndTabs) {
	TempDir dir;
	const auto d = load_dataset(dir.write("t.tsv", "timestamp\tvalue\n2020-01-01\t1\n2020-01-02\t3\n"), "t");
	EXPECT_EQ(d.raw_values, (std::vector<double>{1, 3}));
	const auto c = load_dataset(dir.write("c.csv", "ts,value\n1,10\n2,20\n\n3,30\n"), "c");
	EXPECT_EQ(c.raw_values, (std::vector<double>{10, 20, 30}));
}

TEST(LoadDataset, ReportsLineOfBadValue) {
	TempDir dir;
	const auto path = dir.write("bad.csv", "1\n2\nabc\n4\n");
	try {
		load_dataset(path, "bad");
		FAIL() << "expected ParseError";
	} catch (const Error& e) {
		EXPECT_EQ(e.code(), ErrorCode::ParseError);
		ASSERT_TRUE(e.line().has_value());
		EXPECT_EQ(*e.line(), 3u);
	}
}

TEST(LoadDataset, MissingAndEmptyFiles) {
	TempDir dir;
	try {
		load_dataset(dir / "nope.csv", "x");
		FAIL();
	} catch (const Error& e) {
		EXPECT_EQ(e.code(), ErrorCode::FileNotFound);
	}
	try {
		load_dataset(dir.write("empty.csv", "value\n\n"), "x");
		FAIL();
	} catch (const Error& e) {
		EXPECT_EQ(e.code(), ErrorCode::EmptySeries);
	}
}

TEST(Normalization, RoundTripsRawValues) {
	for (unsigned seed = 0; seed < 50; ++seed) {
		const auto raw = testing::random_series(40, seed, -1e3, 1e4);
		const auto d = make_dataset("r", raw);
		for (std::size_t i = 0; i < raw.size(); ++i) {
			EXPECT_GE(d.values[i], 0.0);
			EXPECT_LE(d.values[i], 1.0);
			const double back = d.normalization.denormalize(d.values[i]);
			EXPECT_LE(std::abs(back - raw[i]), 1e-12 * std::max(1.0, std::abs(raw[i])));
		}
	}
}

TEST(Manifest, ResolvesRelativePaths) {
	TempDir dir;
	dir.write("data/a.csv", "1\n2\n");
	dir.write("data/b.csv", "5\n6\n7\n");
	const auto m = dir.write("manifest.txt", "# corpus\na,data/a.csv\nb\tdata/b.csv\n");
	const auto corpus = load_corpus(m);
	ASSERT_EQ(corpus.size(), 2u);
	EXPECT_EQ(corpus[1].id, "b");
	EXPECT_EQ(corpus[1].size(), 3u);
}

TEST(SampleWindows, SingleValidStart) {
	const auto d = make_dataset("s", testing::random_series(16, 1));
	for (const auto& w : sample_windows(d, 7, 16, 99)) {
		EXPECT_EQ(w.start, 0u);
		EXPECT_EQ(w.values, d.values);
	}
}

TEST(SampleWindows, DeterministicForSeed) {
	const auto d = make_dataset("s", testing::random_series(100, 2));
	const auto a = sample_windows(d, 5, 16, 42);
	const auto b = sample_windows(d, 5, 16, 42);
	ASSERT_EQ(a.size(), 5u);
	for (std::size_t i = 0; i < a.size(); ++i) {
		EXPECT_EQ(a[i].start, b[i].start);
		EXPECT_EQ(a[i].values, b[i].values);
	}
}

TEST(SampleWindows, StartsCoverExactlyTheValidRange) {
	const auto d = make_dataset("s", testing::random_series(20, 3));
	std::set<std::size_t> starts;
	for (const auto& w : sample_windows(d, 1000, 16, 7)) {
		ASSERT_LE(w.start, 4u);
		ASSERT_EQ(w.length(), 16u);
		for (std::size_t i = 0; i < 16; ++i) ASSERT_EQ(w.values[i], d.values[w.start + i]);
		starts.insert(w.start);
	}
	EXPECT_EQ(starts, (std::set<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(SampleWindows, FrozenStartsForSeed) {
	// Guards the platform-independent draw: these starts must never change.
	const auto d = make_dataset("s", testing::random_series(100, 2));
	std::vector<std::size_t> starts;
	for (const auto& w : sample_windows(d, 5, 16, 42)) starts.push_back(w.start);
	EXPECT_EQ(starts, (std::vector<std::size_t>{41, 14, 0, 37, 71}));
}

TEST(SampleWindows, RejectsTooLong) {
	const auto d = make_dataset("s", {1, 2, 3});
	try {
		sample_windows(d, 1, 4, 0);
		FAIL();
	} catch (const Error& e) {
		EXPECT_EQ(e.code(), ErrorCode::WindowTooLong);
	}
}

TEST(Window, IsACopy) {
	const auto d = make_dataset("s", {1, 2, 3, 4});
	auto w = make_window(d, 1, 2);
	w.values[0] = 42.0;
	EXPECT_EQ(d.values[1], 1.0 / 3.0);
}

} // namespace
} // namespace tsselect
