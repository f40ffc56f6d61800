#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>

#include "recmem/cache.hpp"
#include "recmem/dialogue.hpp"

namespace recmem {

struct CompletionRequest {
    std::string system_text;
    std::string user_text;
    double temperature = 0.0;  // the whole pipeline runs greedy by default
    int max_output_tokens = 128;
    std::string model_id;
};

struct CompletionResult {
    std::string text;
    bool cached = false;
    std::string backend_id;
    int latency_ms = 0;
};

// Content hash over the full request tuple. Equal requests produce equal
// digests on every platform, which is what makes the disk cache a replay
// log.
struct CacheKey {
    std::string digest;

    static CacheKey of(const CompletionRequest& request);
};

class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;

    // Generates text for the request. Throws OverLengthError when the
    // prompt exceeds the context budget, TransportError/RateLimitError on
    // exhausted retries.
    virtual CompletionResult complete(const CompletionRequest& request) = 0;

    virtual std::string id() const = 0;

    // Completions actually performed (cache hits excluded).
    virtual std::uint64_t calls() const = 0;

    // Token budget a request must fit (before the 10% safety margin).
    // Callers use this to trim prompts instead of provoking
    // OverLengthError round trips.
    virtual int context_limit() const = 0;
};

// Whether the request fits context_limit with a 10% safety margin. Token
// counts come from the shared normalize() pipeline.
bool fits_context_budget(const CompletionRequest& request, int context_limit);

// Throws OverLengthError unless fits_context_budget(request, context_limit).
void enforce_context_budget(const CompletionRequest& request, int context_limit);

// The deterministic rule the mock backend applies; exposed so tests can
// use it as an oracle. Memory-update prompts (those containing
// kMemoryUpdateMarker) yield "MEMORY: <first sentences of every
// transcript-shaped line, joined by '; '>"; anything else yields
// "ECHO: <text of the last transcript-shaped line>".
std::string mock_complete_text(const std::string& user_text);

// Pure-function backend; identical output across calls, processes and
// platforms.
class MockBackend : public CompletionBackend {
public:
    explicit MockBackend(int context_limit = 4096) : context_limit_(context_limit) {}

    CompletionResult complete(const CompletionRequest& request) override;
    std::string id() const override { return "mock"; }
    std::uint64_t calls() const override { return calls_.load(); }
    int context_limit() const override { return context_limit_; }

private:
    int context_limit_;
    std::atomic<std::uint64_t> calls_{0};
};

struct HttpBackendConfig {
    std::string endpoint;  // base URL including any path prefix, e.g. http://host:8080/v1
    std::string model_id;
    std::string api_key_env = "OPENAI_API_KEY";
    int context_limit = 4096;
    int max_attempts = 5;
    int backoff_initial_ms = 1000;
    double backoff_factor = 2.0;
    int timeout_s = 120;
    double requests_per_second = 0.0;  // 0 disables rate limiting
};

// OpenAI-compatible chat completions client with bounded retries,
// jittered exponential backoff and a shared token-bucket rate limit.
class HttpBackend : public CompletionBackend {
public:
    explicit HttpBackend(HttpBackendConfig config);

    CompletionResult complete(const CompletionRequest& request) override;
    std::string id() const override { return "http:" + config_.model_id; }
    std::uint64_t calls() const override { return calls_.load(); }
    int context_limit() const override { return config_.context_limit; }

private:
    HttpBackendConfig config_;
    std::string api_key_;
    std::string host_;  // scheme://host[:port]
    std::string path_;  // path prefix + /chat/completions
    std::shared_ptr<class RateLimiter> limiter_;
    std::atomic<std::uint64_t> calls_{0};
};

// Wraps any backend with the content-addressed disk cache. A repeated
// request returns the stored text with cached=true and performs no inner
// call.
class CachedBackend : public CompletionBackend {
public:
    CachedBackend(std::shared_ptr<CompletionBackend> inner, std::shared_ptr<DiskCache> cache)
        : inner_(std::move(inner)), cache_(std::move(cache)) {}

    CompletionResult complete(const CompletionRequest& request) override;
    std::string id() const override { return inner_->id(); }
    std::uint64_t calls() const override { return inner_->calls(); }
    int context_limit() const override { return inner_->context_limit(); }
    std::uint64_t cache_hits() const { return hits_.load(); }

private:
    std::shared_ptr<CompletionBackend> inner_;
    std::shared_ptr<DiskCache> cache_;
    std::atomic<std::uint64_t> hits_{0};
};

}  // namespace recmem
