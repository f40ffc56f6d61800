#include "recmem/chat.hpp"

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "recmem/errors.hpp"
#include "recmem/memory_engine.hpp"
#include "recmem/textio.hpp"

namespace recmem {

namespace {

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

// The open session plus every closed one, in order, with headers.
std::string transcript_text(const std::vector<Session>& closed,
                            const std::vector<Utterance>& open_turns, int open_index,
                            const SpeakerLabels& labels) {
    std::string out;
    const auto append_session = [&](int index, const std::vector<Utterance>& turns) {
        if (turns.empty()) return;
        out += "# Session " + std::to_string(index) + "\n";
        ContextWindow window{turns, WindowOrigin::CurrentSessionOnly};
        out += render_transcript(window, labels);
        out += "\n";
    };
    for (const Session& session : closed) append_session(session.index, session.utterances);
    append_session(open_index, open_turns);
    return out;
}

}  // namespace

void run_chat(std::istream& in, std::ostream& out, CompletionBackend& backend,
              const TemplateSet& templates, const ChatOptions& options) {
    templates.respond_with_memory.validate();
    templates.memory_update.validate();

    MemoryChain chain(options.episode_id);
    std::vector<Session> closed_sessions;
    std::vector<Utterance> open_turns;
    const auto session_index = [&] { return static_cast<int>(closed_sessions.size()) + 1; };

    const UpdateOptions update_options{options.labels, options.memory_max_tokens,
                                       options.model_id, 0};

    out << "Type a message, or /memory, /close-session, /quit.\n";
    std::string line;
    while (out << "> " << std::flush, std::getline(in, line)) {
        line = strip_cr(line);
        if (line.empty()) continue;

        if (line == "/quit") break;

        if (line == "/memory") {
            if (chain.size() == 0) {
                out << "(memory is empty; no session has been closed yet)\n";
            } else {
                out << chain.last().text << "\n";
            }
            continue;
        }

        if (line == "/close-session") {
            if (open_turns.empty()) {
                out << "warning: no new turns since the last close; memory unchanged\n";
                continue;
            }
            Session session{session_index(), open_turns, std::nullopt};
            try {
                const Memory updated = update_memory(chain.size() == 0 ? Memory{} : chain.last(),
                                                     session, templates.memory_update, backend,
                                                     update_options);
                chain.append(updated);
                closed_sessions.push_back(std::move(session));
                open_turns.clear();
                out << "Memory updated:\n" << updated.text << "\n";
            } catch (const TransportError& e) {
                out << "backend error: " << e.what() << "\nsession preserved; try again\n";
            } catch (const OverLengthError& e) {
                out << "backend error: " << e.what() << "\nsession preserved\n";
            }
            continue;
        }

        if (line.front() == '/') {
            out << "unknown command \"" << line << "\"; try /memory, /close-session, /quit\n";
            continue;
        }

        // A user turn: respond from current memory plus the session so far,
        // then commit both turns only if the call succeeds.
        std::vector<Utterance> candidate = open_turns;
        candidate.push_back(
            Utterance{Role::User, line, session_index(), static_cast<int>(candidate.size())});
        const std::string memory_text = chain.size() == 0 ? "" : chain.last().text;

        try {
            ContextWindow window{candidate, WindowOrigin::CurrentSessionOnly};
            std::string prompt;
            for (;;) {
                prompt = templates.respond_with_memory.render(
                    memory_text, render_transcript(window, options.labels), "");
                if (fits_context_budget(
                        CompletionRequest{"", prompt, 0.0, options.response_max_tokens,
                                          options.model_id},
                        backend.context_limit())) {
                    break;
                }
                if (window.utterances.empty()) {
                    throw OverLengthError("the memory alone exceeds the context budget");
                }
                window.utterances.erase(window.utterances.begin());
            }
            const CompletionResult result = backend.complete(
                CompletionRequest{"", prompt, 0.0, options.response_max_tokens, options.model_id});
            candidate.push_back(Utterance{Role::Bot, result.text, session_index(),
                                          static_cast<int>(candidate.size())});
            open_turns = std::move(candidate);
            out << options.labels.bot << ": " << result.text << "\n";
        } catch (const TransportError& e) {
            out << "backend error: " << e.what() << "\nyour turn was not recorded; try again\n";
        } catch (const OverLengthError& e) {
            out << "backend error: " << e.what() << "\nyour turn was not recorded\n";
        }
    }
    out << "bye\n";

    if (!options.transcript_path.empty()) {
        write_text_file(options.transcript_path,
                        transcript_text(closed_sessions, open_turns, session_index(),
                                        options.labels));
    }
    if (!options.chain_path.empty()) {
        write_text_file(options.chain_path, chain.to_json() + "\n");
    }
}

}  // namespace recmem
