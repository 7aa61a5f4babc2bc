#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string_view>

namespace tsselect {

/// 64-bit FNV-1a. Used for seed derivation, not for integrity checks.
inline std::uint64_t fnv1a64(std::string_view text, std::uint64_t hash = 0xcbf29ce484222325ULL) {
	for (unsigned char c : text) {
		hash ^= c;
		hash *= 0x100000001b3ULL;
	}
	return hash;
}

/// SplitMix64 finalizer; combines seeds without correlation between streams.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
	std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
	z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
	z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
	return z ^ (z >> 31);
}

/**
 * @brief Seeded generator with platform-independent draws.
 *
 * std::mt19937_64's raw output is fully specified by the standard, but the
 * std:: distributions are not, so the draws are built here on top of the raw
 * engine output.
 */
class Rng {
public:
	explicit Rng(std::uint64_t seed) : engine_(seed) {}

	std::uint64_t next() { return engine_(); }

	/// Uniform integer in [0, n) by rejection sampling. n must be > 0.
	std::uint64_t uniform_index(std::uint64_t n) {
		const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
		                            std::numeric_limits<std::uint64_t>::max() % n;
		std::uint64_t x = engine_();
		while (x >= limit) {
			x = engine_();
		}
		return x % n;
	}

	/// Uniform real in [0, 1) with 53 random bits.
	double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

	/// Standard normal via Box-Muller (one value per call).
	double normal() {
		double u1 = uniform01();
		while (u1 <= 0.0) {
			u1 = uniform01();
		}
		const double u2 = uniform01();
		return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
	}

private:
	std::mt19937_64 engine_;
};

} // namespace tsselect
