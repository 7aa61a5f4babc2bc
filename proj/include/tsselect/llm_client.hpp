#pragma once

#include "tsselect/error.hpp"
#include "tsselect/forecasters.hpp"
#include "tsselect/hashing.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace tsselect {

/**
 * @brief One chat-completion endpoint.
 *
 * The request body is an OpenAI-style message list. Paths are JSON
 * pointers into the response body. The credential is read from the
 * environment variable named by credential_env; an empty name means the
 * endpoint needs none.
 */
struct ProviderProfile {
	std::string name;
	std::string endpoint;
	std::string model;
	std::string credential_env;
	std::string auth_header = "Authorization";
	std::string auth_template = "Bearer {{credential}}";
	std::string text_path = "/choices/0/message/content";
	std::string input_tokens_path = "/usage/prompt_tokens";
	std::string output_tokens_path = "/usage/completion_tokens";
	double temperature = 0.0;
	int max_output_tokens = 1024;
	int retries = 3;
	double backoff_seconds = 1.0;
	double timeout_seconds = 120.0;
	int max_in_flight = 4;
	double requests_per_minute = 60.0;

	static ProviderProfile from_json(const nlohmann::json& j) {
		ProviderProfile p;
		try {
			p.name = j.at("name").get<std::string>();
			p.endpoint = j.at("endpoint").get<std::string>();
			p.model = j.value("model", "");
			p.credential_env = j.value("credential_env", "");
			p.auth_header = j.value("auth_header", p.auth_header);
			p.auth_template = j.value("auth_template", p.auth_template);
			p.text_path = j.value("text_path", p.text_path);
			p.input_tokens_path = j.value("input_tokens_path", p.input_tokens_path);
			p.output_tokens_path = j.value("output_tokens_path", p.output_tokens_path);
			p.temperature = j.value("temperature", p.temperature);
			p.max_output_tokens = j.value("max_output_tokens", p.max_output_tokens);
			p.retries = j.value("retries", p.retries);
			p.backoff_seconds = j.value("backoff_seconds", p.backoff_seconds);
			p.timeout_seconds = j.value("timeout_seconds", p.timeout_seconds);
			p.max_in_flight = j.value("max_in_flight", p.max_in_flight);
			p.requests_per_minute = j.value("requests_per_minute", p.requests_per_minute);
		} catch (const nlohmann::json::exception& e) {
			throw Error(ErrorCode::ConfigError, std::string("provider profile: ") + e.what());
		}
		if (p.name.empty()) throw Error(ErrorCode::ConfigError, "provider profile without a name");
		if (p.temperature < 0.0) throw Error(ErrorCode::ConfigError, p.name + ": temperature must be >= 0");
		if (p.retries < 0 || p.max_in_flight < 1 || p.requests_per_minute <= 0.0) {
			throw Error(ErrorCode::ConfigError, p.name + ": retries >= 0, max_in_flight >= 1, requests_per_minute > 0");
		}
		return p;
	}
};

/// Reads a JSON file holding {"profiles": [...]}.
inline std::vector<ProviderProfile> load_profiles(const std::filesystem::path& path) {
	std::ifstream in(path);
	if (!in) throw Error(ErrorCode::FileNotFound, path.string());
	const auto j = nlohmann::json::parse(in, nullptr, false, true);
	if (j.is_discarded() || !j.contains("profiles") || !j["profiles"].is_array()) {
		throw Error(ErrorCode::ConfigError, path.string() + ": expected {\"profiles\": [...]}");
	}
	std::vector<ProviderProfile> out;
	for (const auto& p : j["profiles"]) out.push_back(ProviderProfile::from_json(p));
	return out;
}

inline const ProviderProfile& find_profile(const std::vector<ProviderProfile>& profiles, std::string_view name) {
	for (const auto& p : profiles) {
		if (p.name == name) return p;
	}
	throw Error(ErrorCode::ConfigError, "unknown provider profile " + std::string(name));
}

struct CompletionRequest {
	std::string prompt_text;
	int max_output_tokens = 1024;
	double temperature = 0.0;
};

enum class CompletionSource { Live, Replay };

struct CompletionResult {
	std::string text;
	long long input_tokens = 0;
	long long output_tokens = 0;
	double latency_seconds = 0.0;
	int attempts = 1;
	CompletionSource source = CompletionSource::Live;
	/// Token counts were approximated from character counts.
	bool tokens_estimated = false;
};

/// Stable fixture key: SHA-256 of profile name, NUL, prompt text.
inline std::string request_hash(std::string_view profile, std::string_view prompt) {
	std::string key(profile);
	key.push_back('\0');
	key.append(prompt);
	return sha256_hex(key);
}

inline std::string utc_timestamp() {
	const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
	std::tm tm{};
	gmtime_r(&now, &tm);
	char buf[32];
	std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
	return buf;
}

/**
 * @brief Directory of recorded completions, one JSON file per request hash.
 */
class FixtureStore {
public:
	explicit FixtureStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

	const std::filesystem::path& dir() const { return dir_; }

	std::filesystem::path path_for(std::string_view profile, std::string_view prompt) const {
		return dir_ / (request_hash(profile, prompt) + ".json");
	}

	/// The recorded result, or nullopt. A file whose request text differs is a HashCollisionGuard.
	std::optional<CompletionResult> find(std::string_view profile, std::string_view prompt) const {
		const auto path = path_for(profile, prompt);
		const auto j = read(path);
		if (!j) return std::nullopt;
		if (j->value("request_text", "") != prompt || j->value("profile", "") != profile) {
			throw Error(ErrorCode::HashCollisionGuard, path.string() + " holds a different request");
		}
		CompletionResult r;
		r.text = j->value("response_text", "");
		r.input_tokens = j->value("input_tokens", 0LL);
		r.output_tokens = j->value("output_tokens", 0LL);
		r.latency_seconds = j->value("latency_seconds", 0.0);
		r.tokens_estimated = j->value("tokens_estimated", false);
		r.attempts = 1;
		r.source = CompletionSource::Replay;
		return r;
	}

	/**
	 * @brief Persist a completion under its request hash.
	 *
	 * Re-recording an identical fixture is a no-op. A different response for
	 * the same request needs force; a different request under the same hash
	 * is always refused.
	 */
	void record(std::string_view profile, const CompletionRequest& req, const CompletionResult& result, bool force = false,
	            const std::string& timestamp = utc_timestamp()) const {
		const auto path = path_for(profile, req.prompt_text);
		if (const auto existing = read(path)) {
			if (existing->value("request_text", "") != req.prompt_text || existing->value("profile", "") != profile) {
				throw Error(ErrorCode::HashCollisionGuard, path.string() + " holds a different request");
			}
			const bool same = existing->value("response_text", "") == result.text &&
			                  existing->value("input_tokens", 0LL) == result.input_tokens &&
			                  existing->value("output_tokens", 0LL) == result.output_tokens;
			if (same) return;
			if (!force) {
				throw Error(ErrorCode::HashCollisionGuard, path.string() + " already recorded with a different response");
			}
		}
		nlohmann::ordered_json j;
		j["format_version"] = 1;
		j["profile"] = profile;
		j["request_hash"] = request_hash(profile, req.prompt_text);
		j["request_text"] = req.prompt_text;
		j["response_text"] = result.text;
		j["input_tokens"] = result.input_tokens;
		j["output_tokens"] = result.output_tokens;
		j["tokens_estimated"] = result.tokens_estimated;
		j["latency_seconds"] = result.latency_seconds;
		j["timestamp"] = timestamp;
		std::error_code ec;
		std::filesystem::create_directories(dir_, ec);
		const auto tmp = path.string() + ".tmp";
		{
			std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
			if (!out) throw Error(ErrorCode::StoreUnwritable, dir_.string());
			out << j.dump(2) << '\n';
			if (!out) throw Error(ErrorCode::StoreUnwritable, tmp);
		}
		std::filesystem::rename(tmp, path, ec);
		if (ec) throw Error(ErrorCode::StoreUnwritable, path.string() + ": " + ec.message());
	}

	std::size_t size() const {
		std::size_t n = 0;
		std::error_code ec;
		for (const auto& e : std::filesystem::directory_iterator(dir_, ec)) n += e.path().extension() == ".json";
		return n;
	}

private:
	static std::optional<nlohmann::json> read(const std::filesystem::path& path) {
		std::ifstream in(path, std::ios::binary);
		if (!in) return std::nullopt;
		auto j = nlohmann::json::parse(in, nullptr, false);
		if (j.is_discarded() || !j.is_object()) {
			throw Error(ErrorCode::FormatError, path.string() + ": unreadable fixture");
		}
		return j;
	}

	std::filesystem::path dir_;
};

enum class ClientMode { Live, Replay, Record };

inline std::optional<ClientMode> parse_client_mode(std::string_view s) {
	if (s == "live") return ClientMode::Live;
	if (s == "replay") return ClientMode::Replay;
	if (s == "record") return ClientMode::Record;
	return std::nullopt;
}

namespace detail {

/// Token bucket refilled at rate per second, capacity one minute's worth.
class RateLimiter {
public:
	explicit RateLimiter(double per_minute) : rate_(per_minute / 60.0), capacity_(std::max(1.0, per_minute)), tokens_(capacity_) {}

	void acquire() {
		std::unique_lock lock(mutex_);
		for (;;) {
			const auto now = std::chrono::steady_clock::now();
			tokens_ = std::min(capacity_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
			last_ = now;
			if (tokens_ >= 1.0) {
				tokens_ -= 1.0;
				return;
			}
			const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
			lock.unlock();
			std::this_thread::sleep_for(wait);
			lock.lock();
		}
	}

private:
	std::mutex mutex_;
	double rate_;
	double capacity_;
	double tokens_;
	std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

struct ParsedUrl {
	std::string origin;
	std::string path;
};

inline ParsedUrl split_url(const std::string& url) {
	const auto scheme = url.find("://");
	if (scheme == std::string::npos) throw Error(ErrorCode::ConfigError, "endpoint is not a URL: " + url);
	const auto slash = url.find('/', scheme + 3);
	if (slash == std::string::npos) return {url, "/"};
	return {url.substr(0, slash), url.substr(slash)};
}

inline std::optional<long long> token_at(const nlohmann::json& body, const std::string& pointer) {
	if (pointer.empty()) return std::nullopt;
	const nlohmann::json::json_pointer ptr(pointer);
	if (!body.contains(ptr) || !body.at(ptr).is_number_integer()) return std::nullopt;
	return body.at(ptr).get<long long>();
}

} // namespace detail

/**
 * @brief Chat-completion client bound to one provider profile.
 *
 * Live mode performs HTTP round trips with retries on connection failures,
 * 429 and 5xx responses (exponential backoff). Replay mode answers from a
 * FixtureStore and never opens a connection. Record mode goes live and
 * stores every completion. Shareable across threads.
 */
class LlmClient {
public:
	LlmClient(ProviderProfile profile, ClientMode mode, std::optional<FixtureStore> store = std::nullopt)
	    : profile_(std::move(profile)), mode_(mode), store_(std::move(store)), in_flight_(profile_.max_in_flight),
	      limiter_(std::make_unique<detail::RateLimiter>(profile_.requests_per_minute)) {
		if (mode_ != ClientMode::Live && !store_) {
			throw Error(ErrorCode::ConfigError, "replay and record modes need a fixture store");
		}
	}

	const ProviderProfile& profile() const { return profile_; }
	ClientMode mode() const { return mode_; }
	/// HTTP requests attempted so far.
	std::size_t network_calls() const { return network_calls_.load(); }

	CompletionResult complete(const CompletionRequest& req) {
		if (req.prompt_text.empty()) throw Error(ErrorCode::EmptyInput, "empty prompt");
		if (mode_ == ClientMode::Replay) {
			auto hit = store_->find(profile_.name, req.prompt_text);
			if (!hit) {
				throw Error(ErrorCode::FixtureMiss,
				            profile_.name + " " + request_hash(profile_.name, req.prompt_text).substr(0, 16));
			}
			return *hit;
		}
		auto result = live(req);
		if (mode_ == ClientMode::Record) store_->record(profile_.name, req, result);
		return result;
	}

	/// Request with the profile's temperature and output budget.
	CompletionResult complete(const std::string& prompt) {
		return complete(CompletionRequest{prompt, profile_.max_output_tokens, profile_.temperature});
	}

private:
	std::string credential() const {
		if (profile_.credential_env.empty()) return {};
		const char* v = std::getenv(profile_.credential_env.c_str());
		if (!v || !*v) {
			throw Error(ErrorCode::MissingCredential, "environment variable " + profile_.credential_env + " is not set");
		}
		return v;
	}

	CompletionResult live(const CompletionRequest& req) {
		const auto key = credential();
		const auto url = detail::split_url(profile_.endpoint);

		nlohmann::json body;
		if (!profile_.model.empty()) body["model"] = profile_.model;
		body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", req.prompt_text}}});
		body["temperature"] = req.temperature;
		body["max_tokens"] = req.max_output_tokens;
		const auto payload = body.dump();

		httplib::Headers headers;
		if (!profile_.credential_env.empty()) {
			std::string value = profile_.auth_template;
			const auto pos = value.find("{{credential}}");
			if (pos != std::string::npos) value.replace(pos, 14, key);
			headers.emplace(profile_.auth_header, value);
		}

		in_flight_.acquire();
		struct Release {
			std::counting_semaphore<>& s;
			~Release() { s.release(); }
		} release{in_flight_};

		Stopwatch clock;
		std::string last_error;
		for (int attempt = 1; attempt <= profile_.retries + 1; ++attempt) {
			if (attempt > 1) {
				std::this_thread::sleep_for(
				    std::chrono::duration<double>(profile_.backoff_seconds * std::pow(2.0, attempt - 2)));
			}
			limiter_->acquire();
			++network_calls_;
			httplib::Client client(url.origin);
			const auto timeout = std::chrono::duration<double>(profile_.timeout_seconds);
			client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
			client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
			const auto res = client.Post(url.path, headers, payload, "application/json");
			if (!res) {
				last_error = "connection failed: " + httplib::to_string(res.error());
				continue;
			}
			if (res->status == 429 || res->status >= 500) {
				last_error = "status " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
				if (attempt == profile_.retries + 1) throw Error(ErrorCode::ProviderError, last_error);
				continue;
			}
			if (res->status < 200 || res->status >= 300) {
				throw Error(ErrorCode::ProviderError,
				            "status " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
			}
			return decode(res->body, req, attempt, clock.seconds());
		}
		throw Error(ErrorCode::EndpointUnreachable, profile_.endpoint + " (" + last_error + ")");
	}

	CompletionResult decode(const std::string& raw, const CompletionRequest& req, int attempts, double latency) const {
		const auto body = nlohmann::json::parse(raw, nullptr, false);
		const nlohmann::json::json_pointer text_ptr(profile_.text_path);
		if (body.is_discarded() || !body.contains(text_ptr) || !body.at(text_ptr).is_string()) {
			throw Error(ErrorCode::ProviderError, "unexpected response body: " + raw.substr(0, 200));
		}
		CompletionResult r;
		r.text = body.at(text_ptr).get<std::string>();
		r.attempts = attempts;
		r.latency_seconds = latency;
		r.source = CompletionSource::Live;
		const auto in = detail::token_at(body, profile_.input_tokens_path);
		const auto out = detail::token_at(body, profile_.output_tokens_path);
		r.tokens_estimated = !in || !out;
		r.input_tokens = in ? *in : static_cast<long long>((req.prompt_text.size() + 3) / 4);
		r.output_tokens = out ? *out : static_cast<long long>((r.text.size() + 3) / 4);
		return r;
	}

	ProviderProfile profile_;
	ClientMode mode_;
	std::optional<FixtureStore> store_;
	std::counting_semaphore<> in_flight_;
	std::unique_ptr<detail::RateLimiter> limiter_;
	std::atomic<std::size_t> network_calls_{0};
};

} // namespace tsselect
