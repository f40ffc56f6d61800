#include <doctest.h>

#include <cstdint>
#include <set>
#include <sstream>
#include <string>

#include "recmem/backend.hpp"
#include "recmem/chat.hpp"
#include "recmem/errors.hpp"
#include "recmem/memory_engine.hpp"
#include "recmem/prompts.hpp"
#include "recmem/textio.hpp"
#include "test_util.hpp"

using namespace recmem;
using recmem::testutil::TempDir;

namespace {

// Delegates to the mock but throws on chosen call numbers (1-based).
struct FlakyBackend : CompletionBackend {
    MockBackend inner;
    std::set<std::uint64_t> fail_on;
    std::uint64_t attempt = 0;

    CompletionResult complete(const CompletionRequest& request) override {
        ++attempt;
        if (fail_on.count(attempt) > 0) throw TransportError("injected outage");
        return inner.complete(request);
    }
    std::string id() const override { return "flaky"; }
    std::uint64_t calls() const override { return inner.calls(); }
    int context_limit() const override { return inner.context_limit(); }
};

std::string run_script(const std::string& script, CompletionBackend& backend,
                       const ChatOptions& options = {}) {
    std::istringstream in(script);
    std::ostringstream out;
    run_chat(in, out, backend, default_templates(), options);
    return out.str();
}

}  // namespace

TEST_CASE("a scripted session walks the whole command surface") {
    MockBackend backend;
    const std::string got = run_script(
        "/memory\n"
        "hello there\n"
        "/close-session\n"
        "/memory\n"
        "/close-session\n"
        "/quit\n",
        backend);
    CHECK(got ==
          "Type a message, or /memory, /close-session, /quit.\n"
          "> (memory is empty; no session has been closed yet)\n"
          "> Assistant: ECHO: hello there\n"
          "> Memory updated:\n"
          "MEMORY: hello there; ECHO: hello there\n"
          "> MEMORY: hello there; ECHO: hello there\n"
          "> warning: no new turns since the last close; memory unchanged\n"
          "> bye\n");
    CHECK(backend.calls() == 2);  // one response, one memory update
}

TEST_CASE("end of input closes the loop like /quit") {
    MockBackend backend;
    const std::string got = run_script("hi\n", backend);
    CHECK(got ==
          "Type a message, or /memory, /close-session, /quit.\n"
          "> Assistant: ECHO: hi\n"
          "> bye\n");
}

TEST_CASE("blank lines are skipped and unknown commands are named") {
    MockBackend backend;
    const std::string got = run_script("\n/frobnicate\n/quit\n", backend);
    CHECK(got ==
          "Type a message, or /memory, /close-session, /quit.\n"
          "> > unknown command \"/frobnicate\"; try /memory, /close-session, /quit\n"
          "> bye\n");
    CHECK(backend.calls() == 0);
}

TEST_CASE("closed sessions land in the transcript and chain files") {
    TempDir dir;
    MockBackend backend;
    ChatOptions options;
    options.transcript_path = (dir / "transcript.txt").string();
    options.chain_path = (dir / "chain.json").string();

    run_script(
        "hello there\n"
        "/close-session\n"
        "second turn\n"
        "/quit\n",
        backend, options);

    CHECK(read_text_file(options.transcript_path) ==
          "# Session 1\n"
          "User: hello there\n"
          "Assistant: ECHO: hello there\n"
          "# Session 2\n"
          "User: second turn\n"
          "Assistant: ECHO: second turn\n");

    const MemoryChain chain = MemoryChain::from_json(read_text_file(options.chain_path));
    CHECK(chain.episode_id() == "chat");
    CHECK(chain.size() == 1);
    CHECK(chain.memory(1).text == "MEMORY: hello there; ECHO: hello there");
}

TEST_CASE("a failed response rolls the turn back") {
    FlakyBackend backend;
    backend.fail_on = {2};
    const std::string got = run_script(
        "first\n"
        "broken\n"
        "recovered\n"
        "/close-session\n"
        "/quit\n",
        backend);
    CHECK(got.find("backend error: injected outage\nyour turn was not recorded; try again\n") !=
          std::string::npos);
    // The failed turn left no trace in the session or the memory.
    CHECK(got.find("Memory updated:\nMEMORY: first; ECHO: first; recovered; ECHO: recovered\n") !=
          std::string::npos);
    CHECK(got.find("broken") == std::string::npos);
}

TEST_CASE("a failed close keeps the session for a retry") {
    FlakyBackend backend;
    backend.fail_on = {2};
    const std::string got = run_script(
        "only\n"
        "/close-session\n"
        "/close-session\n"
        "/quit\n",
        backend);
    CHECK(got.find("backend error: injected outage\nsession preserved; try again\n") !=
          std::string::npos);
    CHECK(got.find("Memory updated:\nMEMORY: only; ECHO: only\n") != std::string::npos);
}
