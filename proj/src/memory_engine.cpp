#include "recmem/memory_engine.hpp"

#include <algorithm>
#include <utility>

#include <nlohmann/json.hpp>

#include "recmem/errors.hpp"

namespace recmem {

CompletionRequest build_update_request(const Memory& prev, const std::vector<Utterance>& chunk,
                                       const PromptTemplate& tmpl, const UpdateOptions& options) {
    ContextWindow window{chunk, WindowOrigin::Custom};
    CompletionRequest request;
    request.user_text = tmpl.render(prev.text, render_transcript(window, options.labels), "");
    request.temperature = 0.0;
    request.max_output_tokens = options.max_output_tokens;
    request.model_id = options.model_id;
    return request;
}

CompletionRequest effective_update_request(const Memory& prev, const std::vector<Utterance>& chunk,
                                           const PromptTemplate& tmpl,
                                           const UpdateOptions& options, int context_limit) {
    std::vector<Utterance> kept = chunk;
    for (;;) {
        CompletionRequest request = build_update_request(prev, kept, tmpl, options);
        if (fits_context_budget(request, context_limit)) return request;
        if (kept.empty()) {
            throw OverLengthError(
                "memory-update prompt exceeds the context budget even with every dialogue "
                "line dropped; the previous memory alone is too large");
        }
        kept.erase(kept.begin());
    }
}

Memory update_memory(const Memory& prev, const Session& session, const PromptTemplate& tmpl,
                     CompletionBackend& backend, const UpdateOptions& options) {
    if (tmpl.name != TemplateName::MemoryUpdate) {
        throw PreconditionError("update_memory requires the MemoryUpdate template");
    }
    if (prev.covered_through_session != session.index - 1) {
        throw PreconditionError("memory covers sessions through " +
                                std::to_string(prev.covered_through_session) +
                                " but the session to fold is " + std::to_string(session.index) +
                                "; the recursion admits no gaps");
    }
    if (session.utterances.empty()) {
        Memory next = prev;
        next.covered_through_session = session.index;
        return next;
    }

    std::vector<std::vector<Utterance>> chunks;
    if (options.chunk_turns <= 0) {
        chunks.push_back(session.utterances);
    } else {
        const std::size_t step = static_cast<std::size_t>(options.chunk_turns);
        for (std::size_t begin = 0; begin < session.utterances.size(); begin += step) {
            const std::size_t end = std::min(begin + step, session.utterances.size());
            chunks.emplace_back(session.utterances.begin() + static_cast<std::ptrdiff_t>(begin),
                                session.utterances.begin() + static_cast<std::ptrdiff_t>(end));
        }
    }

    Memory current = prev;
    for (const std::vector<Utterance>& chunk : chunks) {
        const CompletionRequest request =
            effective_update_request(current, chunk, tmpl, options, backend.context_limit());
        CompletionResult result = backend.complete(request);
        current = Memory{session.index, std::move(result.text), std::move(result.backend_id),
                         CacheKey::of(request).digest};
    }
    return current;
}

MemoryChain::MemoryChain(std::string episode_id) : episode_id_(std::move(episode_id)) {
    memories_.push_back(Memory{});
}

const Memory& MemoryChain::memory(int covered_through_session) const {
    if (covered_through_session < 0 || covered_through_session > size()) {
        throw RangeError("chain for episode \"" + episode_id_ + "\" has no memory covering " +
                         std::to_string(covered_through_session) + " sessions");
    }
    return memories_[static_cast<std::size_t>(covered_through_session)];
}

void MemoryChain::append(Memory memory) {
    if (memory.covered_through_session != size() + 1) {
        throw PreconditionError("chain covers sessions through " + std::to_string(size()) +
                                "; cannot append a memory covering " +
                                std::to_string(memory.covered_through_session));
    }
    memories_.push_back(std::move(memory));
}

std::string MemoryChain::to_json() const {
    nlohmann::json memories = nlohmann::json::array();
    for (int s = 1; s <= size(); ++s) {
        const Memory& m = memories_[static_cast<std::size_t>(s)];
        memories.push_back({{"s", m.covered_through_session},
                            {"text", m.text},
                            {"backend_id", m.backend_id},
                            {"prompt_digest", m.prompt_digest}});
    }
    const nlohmann::json doc{{"episode_id", episode_id_}, {"memories", std::move(memories)}};
    return doc.dump(2);
}

MemoryChain MemoryChain::from_json(const std::string& text) {
    try {
        const nlohmann::json doc = nlohmann::json::parse(text);
        MemoryChain chain(doc.at("episode_id").get<std::string>());
        for (const nlohmann::json& m : doc.at("memories")) {
            chain.append(Memory{m.at("s").get<int>(), m.at("text").get<std::string>(),
                                m.at("backend_id").get<std::string>(),
                                m.at("prompt_digest").get<std::string>()});
        }
        return chain;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed memory chain: ") + e.what());
    }
}

namespace {

template <typename E>
[[noreturn]] void rethrow_for_session(const E& e, int session_index) {
    throw E("session " + std::to_string(session_index) + ": " + e.what());
}

}  // namespace

MemoryChain build_chain(const Episode& episode, int through_session, const PromptTemplate& tmpl,
                        CompletionBackend& backend, const UpdateOptions& options) {
    if (through_session < 0 || through_session > static_cast<int>(episode.sessions.size())) {
        throw RangeError("episode \"" + episode.id + "\" has " +
                         std::to_string(episode.sessions.size()) +
                         " sessions; cannot build a chain through session " +
                         std::to_string(through_session));
    }
    MemoryChain chain(episode.id);
    for (int s = 1; s <= through_session; ++s) {
        try {
            chain.append(update_memory(chain.last(), episode.session(s), tmpl, backend, options));
        } catch (const RateLimitError& e) {
            rethrow_for_session(e, s);
        } catch (const TransportError& e) {
            rethrow_for_session(e, s);
        } catch (const OverLengthError& e) {
            rethrow_for_session(e, s);
        } catch (const ParseError& e) {
            rethrow_for_session(e, s);
        } catch (const RangeError& e) {
            rethrow_for_session(e, s);
        } catch (const PreconditionError& e) {
            rethrow_for_session(e, s);
        } catch (const DataError& e) {
            rethrow_for_session(e, s);
        } catch (const ConfigError& e) {
            rethrow_for_session(e, s);
        } catch (const IoError& e) {
            rethrow_for_session(e, s);
        } catch (const Error& e) {
            rethrow_for_session(e, s);
        }
    }
    return chain;
}

bool verify_lineage(const MemoryChain& chain, const Episode& episode, const PromptTemplate& tmpl,
                    const UpdateOptions& options, int context_limit) {
    if (options.chunk_turns != 0) {
        throw PreconditionError("lineage verification supports only whole-session folding");
    }
    if (chain.episode_id() != episode.id) return false;
    if (chain.size() > static_cast<int>(episode.sessions.size())) return false;
    for (int s = 1; s <= chain.size(); ++s) {
        const Session& session = episode.session(s);
        const Memory& prev = chain.memory(s - 1);
        const Memory& link = chain.memory(s);
        if (session.utterances.empty()) {
            if (link.text != prev.text || link.prompt_digest != prev.prompt_digest) return false;
            continue;
        }
        const CompletionRequest request =
            effective_update_request(prev, session.utterances, tmpl, options, context_limit);
        if (CacheKey::of(request).digest != link.prompt_digest) return false;
    }
    return true;
}

}  // namespace recmem
