#include "recmem/backend.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "recmem/errors.hpp"
#include "recmem/metrics.hpp"
#include "recmem/prompts.hpp"
#include "recmem/sha256.hpp"

namespace recmem {

namespace {

constexpr char kFieldSep = '\x1f';

// A transcript-shaped line is "<label>: <text>" where the label is one
// whitespace-free token. Prompt instruction lines never match because
// they either end with the colon or put spaces before it.
bool transcript_text(const std::string& line, std::string* text) {
    const std::size_t colon = line.find(':');
    if (colon == std::string::npos || colon == 0) return false;
    for (std::size_t i = 0; i < colon; ++i) {
        if (std::isspace(static_cast<unsigned char>(line[i]))) return false;
    }
    if (colon + 2 >= line.size() || line[colon + 1] != ' ') return false;
    const std::string rest = line.substr(colon + 2);
    if (std::all_of(rest.begin(), rest.end(),
                    [](unsigned char c) { return std::isspace(c) != 0; })) {
        return false;
    }
    *text = rest;
    return true;
}

// Everything before the first period, capped at 25 whitespace tokens and
// rejoined with single spaces.
std::string first_sentence(const std::string& text) {
    std::string head = text.substr(0, text.find('.'));
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < head.size() && tokens.size() < 25) {
        while (i < head.size() && std::isspace(static_cast<unsigned char>(head[i]))) ++i;
        std::size_t begin = i;
        while (i < head.size() && !std::isspace(static_cast<unsigned char>(head[i]))) ++i;
        if (i > begin) tokens.push_back(head.substr(begin, i - begin));
    }
    std::string joined;
    for (std::size_t k = 0; k < tokens.size(); ++k) {
        if (k > 0) joined += ' ';
        joined += tokens[k];
    }
    return joined;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        std::size_t end = text.find('\n', begin);
        if (end == std::string::npos) {
            lines.push_back(text.substr(begin));
            break;
        }
        lines.push_back(text.substr(begin, end - begin));
        begin = end + 1;
    }
    return lines;
}

}  // namespace

CacheKey CacheKey::of(const CompletionRequest& request) {
    char temperature[64];
    std::snprintf(temperature, sizeof temperature, "%.17g", request.temperature);
    std::string material;
    material.reserve(request.system_text.size() + request.user_text.size() + 64);
    material += "v1";
    material += kFieldSep;
    material += request.model_id;
    material += kFieldSep;
    material += request.system_text;
    material += kFieldSep;
    material += request.user_text;
    material += kFieldSep;
    material += temperature;
    material += kFieldSep;
    material += std::to_string(request.max_output_tokens);
    return CacheKey{sha256_hex(material)};
}

bool fits_context_budget(const CompletionRequest& request, int context_limit) {
    if (context_limit <= 0) {
        throw PreconditionError("context limit must be positive, got " +
                                std::to_string(context_limit));
    }
    const std::size_t budget = static_cast<std::size_t>(context_limit) * 9 / 10;
    return token_count(request.system_text) + token_count(request.user_text) <= budget;
}

void enforce_context_budget(const CompletionRequest& request, int context_limit) {
    if (fits_context_budget(request, context_limit)) return;
    const std::size_t budget = static_cast<std::size_t>(context_limit) * 9 / 10;
    const std::size_t used = token_count(request.system_text) + token_count(request.user_text);
    throw OverLengthError("prompt is " + std::to_string(used) + " tokens but the budget is " +
                          std::to_string(budget) + " (context limit " +
                          std::to_string(context_limit) + " with a 10% margin)");
}

std::string mock_complete_text(const std::string& user_text) {
    const bool update = user_text.find(kMemoryUpdateMarker) != std::string::npos;
    std::string text;
    if (update) {
        std::vector<std::string> parts;
        for (const std::string& line : split_lines(user_text)) {
            if (transcript_text(line, &text)) parts.push_back(first_sentence(text));
        }
        std::string out = "MEMORY:";
        for (std::size_t i = 0; i < parts.size(); ++i) {
            out += (i == 0) ? " " : "; ";
            out += parts[i];
        }
        return out;
    }
    std::string last;
    bool found = false;
    for (const std::string& line : split_lines(user_text)) {
        if (transcript_text(line, &text)) {
            last = text;
            found = true;
        }
    }
    return found ? "ECHO: " + last : "ECHO:";
}

CompletionResult MockBackend::complete(const CompletionRequest& request) {
    enforce_context_budget(request, context_limit_);
    calls_.fetch_add(1);
    return CompletionResult{mock_complete_text(request.user_text), false, id(), 0};
}

// Token bucket shared by all workers of a backend. Capacity covers a
// short burst; refill is continuous.
class RateLimiter {
public:
    explicit RateLimiter(double per_second)
        : per_second_(per_second),
          capacity_(std::max(1.0, per_second)),
          tokens_(capacity_),
          last_(Clock::now()) {}

    void acquire() {
        if (per_second_ <= 0.0) return;
        std::unique_lock<std::mutex> lock(mu_);
        for (;;) {
            refill();
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            const double seconds = (1.0 - tokens_) / per_second_;
            cv_.wait_for(lock, std::chrono::duration<double>(seconds));
        }
    }

private:
    using Clock = std::chrono::steady_clock;

    void refill() {
        const Clock::time_point now = Clock::now();
        const double elapsed = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        tokens_ = std::min(capacity_, tokens_ + elapsed * per_second_);
    }

    double per_second_;
    double capacity_;
    double tokens_;
    Clock::time_point last_;
    std::mutex mu_;
    std::condition_variable cv_;
};

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.model_id.empty()) {
        throw ConfigError("http backend requires a model id");
    }
    const std::string& endpoint = config_.endpoint;
    const std::size_t scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("endpoint must be an http(s) URL, got \"" + endpoint + "\"");
    }
    const std::string scheme = endpoint.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") {
        throw ConfigError("unsupported endpoint scheme \"" + scheme + "\"");
    }
    const std::size_t path_start = endpoint.find('/', scheme_end + 3);
    std::string prefix;
    if (path_start == std::string::npos) {
        host_ = endpoint;
    } else {
        host_ = endpoint.substr(0, path_start);
        prefix = endpoint.substr(path_start);
    }
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    path_ = prefix + "/chat/completions";

    if (!config_.api_key_env.empty()) {
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (key == nullptr || *key == '\0') {
            throw ConfigError("environment variable " + config_.api_key_env +
                              " must hold the API key");
        }
        api_key_ = key;
    }
    limiter_ = std::make_shared<RateLimiter>(config_.requests_per_second);
}

CompletionResult HttpBackend::complete(const CompletionRequest& request) {
    enforce_context_budget(request, config_.context_limit);

    nlohmann::json messages = nlohmann::json::array();
    if (!request.system_text.empty()) {
        messages.push_back({{"role", "system"}, {"content", request.system_text}});
    }
    messages.push_back({{"role", "user"}, {"content", request.user_text}});
    const nlohmann::json body{
        {"model", request.model_id.empty() ? config_.model_id : request.model_id},
        {"messages", messages},
        {"temperature", request.temperature},
        {"max_tokens", request.max_output_tokens},
    };
    const std::string payload = body.dump();

    thread_local std::mt19937_64 jitter_rng{std::random_device{}()};
    bool rate_limited = false;
    std::string last_error;

    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
        if (attempt > 1) {
            const double nominal =
                config_.backoff_initial_ms * std::pow(config_.backoff_factor, attempt - 2);
            std::uniform_real_distribution<double> scale(0.5, 1.0);
            std::this_thread::sleep_for(
                std::chrono::duration<double, std::milli>(nominal * scale(jitter_rng)));
        }
        limiter_->acquire();

        httplib::Client client(host_);
        if (!client.is_valid()) {
            throw ConfigError("cannot create HTTP client for " + host_);
        }
        client.set_connection_timeout(config_.timeout_s, 0);
        client.set_read_timeout(config_.timeout_s, 0);
        client.set_write_timeout(config_.timeout_s, 0);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

        const auto started = std::chrono::steady_clock::now();
        httplib::Result res = client.Post(path_, headers, payload, "application/json");
        if (!res) {
            rate_limited = false;
            last_error = "network error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429) {
            rate_limited = true;
            last_error = "HTTP 429";
            continue;
        }
        if (res->status >= 500) {
            rate_limited = false;
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw TransportError("HTTP " + std::to_string(res->status) + " from " + host_ + path_ +
                                 ": " + res->body.substr(0, 200));
        }
        try {
            const nlohmann::json parsed = nlohmann::json::parse(res->body);
            std::string text =
                parsed.at("choices").at(0).at("message").at("content").get<std::string>();
            const auto elapsed = std::chrono::steady_clock::now() - started;
            calls_.fetch_add(1);
            return CompletionResult{
                std::move(text), false, id(),
                static_cast<int>(
                    std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count())};
        } catch (const nlohmann::json::exception& e) {
            rate_limited = false;
            last_error = std::string("malformed response body: ") + e.what();
            continue;
        }
    }

    const std::string detail =
        "after " + std::to_string(config_.max_attempts) + " attempts: " + last_error;
    if (rate_limited) throw RateLimitError("rate limited " + detail);
    throw TransportError("request failed " + detail);
}

CompletionResult CachedBackend::complete(const CompletionRequest& request) {
    const CacheKey key = CacheKey::of(request);
    if (std::optional<std::string> hit = cache_->lookup(key)) {
        hits_.fetch_add(1);
        return CompletionResult{std::move(*hit), true, inner_->id(), 0};
    }
    CompletionResult result = inner_->complete(request);
    cache_->store(key, request, result.text);
    return result;
}

}  // namespace recmem
