#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "recmem/backend.hpp"
#include "recmem/cache.hpp"
#include "recmem/errors.hpp"
#include "recmem/prompts.hpp"
#include "recmem/sha256.hpp"
#include "test_util.hpp"

using namespace recmem;
using recmem::testutil::TempDir;

TEST_CASE("sha256 matches the published test vectors") {
    CHECK(sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex(std::string(1000, 'x')) == sha256_hex(std::string(1000, 'x')));
    CHECK(sha256_hex("a") != sha256_hex("b"));
}

TEST_CASE("mock rule: memory updates summarize every transcript line") {
    const std::string prompt =
        "Previous summary:\n\nNew dialogue lines:\nUser: I like jazz.\nAssistant: Cool.\n\n"
        "Updated summary:\n";
    CHECK(mock_complete_text(prompt) == "MEMORY: I like jazz; Cool");
}

TEST_CASE("mock rule: the previous memory participates as a transcript line") {
    const std::string prompt =
        "Previous summary:\nMEMORY: I run\n\nNew dialogue lines:\nUser: I bike.\n\n"
        "Updated summary:\n";
    CHECK(mock_complete_text(prompt) == "MEMORY: I run; I bike");
}

TEST_CASE("mock rule: responses echo the last transcript line") {
    CHECK(mock_complete_text("User: hello\nAssistant: hi\nUser: are you there") ==
          "ECHO: are you there");
    CHECK(mock_complete_text("no transcript lines here") == "ECHO:");
    CHECK(mock_complete_text("Previous summary:\nnothing shaped") == "MEMORY:");
}

TEST_CASE("mock rule: lines must look like '<label>: <text>'") {
    // Label with a space, trailing colon, and empty text all fail the shape.
    CHECK(mock_complete_text("two words: text") == "ECHO:");
    CHECK(mock_complete_text("Header:") == "ECHO:");
    CHECK(mock_complete_text("Label:   ") == "ECHO:");
    CHECK(mock_complete_text("Label:text") == "ECHO:");  // missing the space
    CHECK(mock_complete_text("a: b") == "ECHO: b");
}

TEST_CASE("mock rule: first sentence only, capped at 25 tokens") {
    CHECK(mock_complete_text("Previous summary:\nUser: One two. Three four.") ==
          "MEMORY: One two");

    std::string line = "User:";
    for (int i = 1; i <= 30; ++i) line += " w" + std::to_string(i);
    std::string expected = "MEMORY: w1";
    for (int i = 2; i <= 25; ++i) expected += " w" + std::to_string(i);
    // Tokens 26..30 fall off.
    CHECK(mock_complete_text("Previous summary:\n" + line) == expected);
}

TEST_CASE("mock rule applies through the rendered default templates") {
    const TemplateSet templates = default_templates();
    const std::string update = templates.memory_update.render(
        "", "User: I like jazz.\nAssistant: Cool.", "");
    CHECK(mock_complete_text(update) == "MEMORY: I like jazz; Cool");

    const std::string respond = templates.respond_with_memory.render(
        "", "User: hello\nAssistant: hi\nUser: are you there", "");
    CHECK(mock_complete_text(respond) == "ECHO: are you there");

    // A previous mock memory is itself transcript-shaped, so it carries over.
    const std::string chained = templates.memory_update.render(
        "MEMORY: I run", "User: I bike.", "");
    CHECK(mock_complete_text(chained) == "MEMORY: I run; I bike");
}

TEST_CASE("cache keys cover the whole request tuple") {
    CompletionRequest a;
    a.user_text = "prompt";
    a.model_id = "m";
    CompletionRequest b = a;
    CHECK(CacheKey::of(a).digest == CacheKey::of(b).digest);
    CHECK(CacheKey::of(a).digest.size() == 64);

    b.temperature = 0.5;
    CHECK(CacheKey::of(a).digest != CacheKey::of(b).digest);
    b = a;
    b.max_output_tokens = 256;
    CHECK(CacheKey::of(a).digest != CacheKey::of(b).digest);
    b = a;
    b.model_id = "other";
    CHECK(CacheKey::of(a).digest != CacheKey::of(b).digest);
    b = a;
    b.system_text = "sys";
    CHECK(CacheKey::of(a).digest != CacheKey::of(b).digest);
}

TEST_CASE("context budget is 90% of the limit, in normalized tokens") {
    CompletionRequest request;
    request.user_text = "a b c d e f g h i";  // 9 tokens
    CHECK(fits_context_budget(request, 10));
    request.user_text += " j";  // 10 tokens over a budget of 9
    CHECK_FALSE(fits_context_budget(request, 10));
    CHECK_THROWS_AS(enforce_context_budget(request, 10), OverLengthError);
    CHECK_THROWS_AS(fits_context_budget(request, 0), PreconditionError);

    // System text counts too.
    request.user_text = "a b c d e";
    request.system_text = "f g h i j";
    CHECK_FALSE(fits_context_budget(request, 10));
}

TEST_CASE("mock backend counts calls and enforces the budget") {
    MockBackend backend(10);
    CompletionRequest request;
    request.user_text = "User: hi";
    const CompletionResult result = backend.complete(request);
    CHECK(result.text == "ECHO: hi");
    CHECK(result.backend_id == "mock");
    CHECK_FALSE(result.cached);
    CHECK(backend.calls() == 1);

    request.user_text = "a b c d e f g h i j";
    CHECK_THROWS_AS(backend.complete(request), OverLengthError);
    CHECK(backend.calls() == 1);  // rejected before counting
}

TEST_CASE("disk cache round-trips entries and treats damage as a miss") {
    TempDir dir;
    DiskCache cache(dir.path / "cache");

    CompletionRequest request;
    request.user_text = "User: hi";
    request.model_id = "mock";
    const CacheKey key = CacheKey::of(request);

    CHECK_FALSE(cache.lookup(key).has_value());
    cache.store(key, request, "stored text");
    REQUIRE(cache.lookup(key).has_value());
    CHECK(*cache.lookup(key) == "stored text");

    // The entry lives under a two-level digest prefix and keeps the request.
    const std::filesystem::path entry = dir.path / "cache" / key.digest.substr(0, 2) /
                                        key.digest.substr(2, 2) / (key.digest + ".json");
    REQUIRE(std::filesystem::exists(entry));
    const nlohmann::json doc = nlohmann::json::parse(recmem::testutil::slurp(entry));
    CHECK(doc.at("response") == "stored text");
    CHECK(doc.at("request").at("user_text") == "User: hi");
    CHECK(doc.at("key") == key.digest);

    // Torn or foreign content is a miss, not an error.
    recmem::testutil::spit(entry, "{\"trunca");
    CHECK_FALSE(cache.lookup(key).has_value());

    CompletionRequest other = request;
    other.user_text = "User: bye";
    CHECK_FALSE(cache.lookup(CacheKey::of(other)).has_value());
}

TEST_CASE("cached backend performs each distinct request once") {
    TempDir dir;
    auto inner = std::make_shared<MockBackend>();
    CachedBackend cached(inner, std::make_shared<DiskCache>(dir.path / "cache"));

    CompletionRequest request;
    request.user_text = "User: hello";
    const CompletionResult first = cached.complete(request);
    CHECK_FALSE(first.cached);
    CHECK(inner->calls() == 1);
    CHECK(cached.cache_hits() == 0);

    const CompletionResult second = cached.complete(request);
    CHECK(second.cached);
    CHECK(second.text == first.text);
    CHECK(inner->calls() == 1);
    CHECK(cached.cache_hits() == 1);

    // A different cache over the same directory still hits: the entry is
    // on disk, not in memory.
    CachedBackend rewrapped(std::make_shared<MockBackend>(),
                            std::make_shared<DiskCache>(dir.path / "cache"));
    CHECK(rewrapped.complete(request).cached);
}

namespace {

// In-process OpenAI-style endpoint with a scripted status sequence.
struct FakeServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> requests{0};

    explicit FakeServer(std::function<void(int, const httplib::Request&, httplib::Response&)>
                            handler) {
        server.Post("/v1/chat/completions",
                    [this, handler = std::move(handler)](const httplib::Request& req,
                                                         httplib::Response& res) {
                        handler(requests.fetch_add(1) + 1, req, res);
                    });
        port = server.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~FakeServer() {
        server.stop();
        thread.join();
    }

    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

HttpBackendConfig fast_config(const std::string& endpoint) {
    HttpBackendConfig config;
    config.endpoint = endpoint;
    config.model_id = "test-model";
    config.api_key_env = "RECMEM_TEST_KEY";
    config.backoff_initial_ms = 1;  // keep retry tests fast
    config.timeout_s = 5;
    return config;
}

void ok_completion(httplib::Response& res, const std::string& text) {
    const nlohmann::json body{
        {"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}};
    res.set_content(body.dump(), "application/json");
}

}  // namespace

TEST_CASE("http backend: success path sends an OpenAI-shaped request") {
    setenv("RECMEM_TEST_KEY", "sk-test", 1);
    std::string seen_auth;
    std::string seen_body;
    FakeServer server([&](int, const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        seen_body = req.body;
        ok_completion(res, "server says hi");
    });

    HttpBackend backend(fast_config(server.endpoint()));
    CHECK(backend.id() == "http:test-model");

    CompletionRequest request;
    request.system_text = "be brief";
    request.user_text = "User: hello";
    request.max_output_tokens = 77;
    const CompletionResult result = backend.complete(request);

    CHECK(result.text == "server says hi");
    CHECK(result.backend_id == "http:test-model");
    CHECK(backend.calls() == 1);
    CHECK(server.requests.load() == 1);
    CHECK(seen_auth == "Bearer sk-test");

    const nlohmann::json body = nlohmann::json::parse(seen_body);
    CHECK(body.at("model") == "test-model");
    CHECK(body.at("max_tokens") == 77);
    CHECK(body.at("temperature") == 0.0);
    REQUIRE(body.at("messages").size() == 2);
    CHECK(body.at("messages")[0].at("role") == "system");
    CHECK(body.at("messages")[0].at("content") == "be brief");
    CHECK(body.at("messages")[1].at("role") == "user");
    CHECK(body.at("messages")[1].at("content") == "User: hello");
}

TEST_CASE("http backend: transient 500s are retried until success") {
    setenv("RECMEM_TEST_KEY", "sk-test", 1);
    FakeServer server([&](int n, const httplib::Request&, httplib::Response& res) {
        if (n <= 2) {
            res.status = 500;
            res.set_content("boom", "text/plain");
        } else {
            ok_completion(res, "recovered");
        }
    });

    HttpBackend backend(fast_config(server.endpoint()));
    CompletionRequest request;
    request.user_text = "User: hello";
    CHECK(backend.complete(request).text == "recovered");
    CHECK(server.requests.load() == 3);
}

TEST_CASE("http backend: persistent 429 exhausts retries as RateLimitError") {
    setenv("RECMEM_TEST_KEY", "sk-test", 1);
    FakeServer server([&](int, const httplib::Request&, httplib::Response& res) {
        res.status = 429;
        res.set_content("slow down", "text/plain");
    });

    HttpBackendConfig config = fast_config(server.endpoint());
    config.max_attempts = 3;
    HttpBackend backend(config);
    CompletionRequest request;
    request.user_text = "User: hello";
    CHECK_THROWS_AS(backend.complete(request), RateLimitError);
    CHECK(server.requests.load() == 3);
    CHECK(backend.calls() == 0);
}

TEST_CASE("http backend: malformed bodies are retried then TransportError") {
    setenv("RECMEM_TEST_KEY", "sk-test", 1);
    FakeServer server([&](int, const httplib::Request&, httplib::Response& res) {
        res.set_content("not json at all", "application/json");
    });

    HttpBackendConfig config = fast_config(server.endpoint());
    config.max_attempts = 2;
    HttpBackend backend(config);
    CompletionRequest request;
    request.user_text = "User: hello";
    CHECK_THROWS_AS(backend.complete(request), TransportError);
    CHECK(server.requests.load() == 2);
}

TEST_CASE("http backend: other client errors fail immediately") {
    setenv("RECMEM_TEST_KEY", "sk-test", 1);
    FakeServer server([&](int, const httplib::Request&, httplib::Response& res) {
        res.status = 404;
        res.set_content("wrong path", "text/plain");
    });

    HttpBackend backend(fast_config(server.endpoint()));
    CompletionRequest request;
    request.user_text = "User: hello";
    CHECK_THROWS_AS(backend.complete(request), TransportError);
    CHECK(server.requests.load() == 1);  // no retries on 404
}

TEST_CASE("http backend: unreachable host raises TransportError after retries") {
    setenv("RECMEM_TEST_KEY", "sk-test", 1);
    HttpBackendConfig config = fast_config("http://127.0.0.1:1");  // nothing listens there
    config.max_attempts = 2;
    config.timeout_s = 1;
    HttpBackend backend(config);
    CompletionRequest request;
    request.user_text = "User: hello";
    CHECK_THROWS_AS(backend.complete(request), TransportError);
}

TEST_CASE("http backend: configuration errors surface at construction") {
    setenv("RECMEM_TEST_KEY", "sk-test", 1);
    HttpBackendConfig config = fast_config("http://127.0.0.1:9/v1");

    SUBCASE("missing model id") {
        config.model_id.clear();
        CHECK_THROWS_AS(HttpBackend{config}, ConfigError);
    }
    SUBCASE("endpoint without scheme") {
        config.endpoint = "127.0.0.1:9/v1";
        CHECK_THROWS_AS(HttpBackend{config}, ConfigError);
    }
    SUBCASE("unsupported scheme") {
        config.endpoint = "ftp://127.0.0.1:9/v1";
        CHECK_THROWS_AS(HttpBackend{config}, ConfigError);
    }
    SUBCASE("missing API key variable") {
        unsetenv("RECMEM_TEST_KEY_ABSENT");
        config.api_key_env = "RECMEM_TEST_KEY_ABSENT";
        CHECK_THROWS_AS(HttpBackend{config}, ConfigError);
    }
    SUBCASE("empty api_key_env skips authentication") {
        config.api_key_env.clear();
        CHECK_NOTHROW(HttpBackend{config});
    }
}
