#pragma once

#include <charconv>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace tsselect::text {

inline std::string_view trim(std::string_view s) {
	const auto first = s.find_first_not_of(" \t\r\n");
	if (first == std::string_view::npos) {
		return {};
	}
	const auto last = s.find_last_not_of(" \t\r\n");
	return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split(std::string_view s, char delim) {
	std::vector<std::string> out;
	std::size_t pos = 0;
	while (true) {
		const auto next = s.find(delim, pos);
		out.emplace_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
		if (next == std::string_view::npos) {
			break;
		}
		pos = next + 1;
	}
	return out;
}

/// Strict full-field parse; rejects trailing garbage and empty input.
inline std::optional<double> parse_double(std::string_view s) {
	s = trim(s);
	if (!s.empty() && s.front() == '+') {
		s.remove_prefix(1);
	}
	if (s.empty()) {
		return std::nullopt;
	}
	double value = 0.0;
	const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
	if (ec != std::errc() || ptr != s.data() + s.size()) {
		return std::nullopt;
	}
	return value;
}

inline std::optional<long long> parse_int(std::string_view s) {
	s = trim(s);
	long long value = 0;
	const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
	if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
		return std::nullopt;
	}
	return value;
}

/// Shortest text that parses back to the identical double.
inline std::string format_exact(double value) {
	char buf[64];
	const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
	return std::string(buf, ptr);
}

/// Fixed number of significant digits (printf %g semantics).
inline std::string format_significant(double value, int digits = 6) {
	char buf[64];
	std::snprintf(buf, sizeof(buf), "%.*g", digits, value);
	return buf;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
	std::string out;
	for (std::size_t i = 0; i < parts.size(); ++i) {
		if (i) {
			out += sep;
		}
		out += parts[i];
	}
	return out;
}

/**
 * @brief Canonical form of a decimal literal, or nullopt if not a number.
 *
 * "10", "10.0", "1e1" and "+10" all map to "1e1"; "0.001" and "1e-3" both map
 * to "1e-3". The comparison is exact on the decimal digits, so no binary
 * floating point rounding is involved.
 */
inline std::optional<std::string> canonical_decimal(std::string_view s) {
	s = trim(s);
	if (s.empty()) {
		return std::nullopt;
	}
	bool negative = false;
	std::size_t i = 0;
	if (s[i] == '+' || s[i] == '-') {
		negative = s[i] == '-';
		++i;
	}
	std::string digits;
	long long exponent = 0;
	bool any_digit = false;
	bool seen_point = false;
	for (; i < s.size(); ++i) {
		const char c = s[i];
		if (c >= '0' && c <= '9') {
			any_digit = true;
			digits.push_back(c);
			if (seen_point) {
				--exponent;
			}
		} else if (c == '.' && !seen_point) {
			seen_point = true;
		} else {
			break;
		}
	}
	if (!any_digit) {
		return std::nullopt;
	}
	if (i < s.size()) {
		if (s[i] != 'e' && s[i] != 'E') {
			return std::nullopt;
		}
		const auto exp = parse_int(s.substr(i + 1));
		if (!exp || s.substr(i + 1).empty() || s[i + 1] == ' ') {
			return std::nullopt;
		}
		exponent += *exp;
	}
	const auto nz = digits.find_first_not_of('0');
	if (nz == std::string::npos) {
		return std::string("0");
	}
	digits.erase(0, nz);
	while (!digits.empty() && digits.back() == '0') {
		digits.pop_back();
		++exponent;
	}
	std::string out = negative ? "-" : "";
	out += digits;
	if (exponent != 0) {
		out += "e" + std::to_string(exponent);
	}
	return out;
}

} // namespace tsselect::text
