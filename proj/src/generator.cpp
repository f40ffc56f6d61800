#include "recmem/generator.hpp"

#include <utility>
#include <vector>

#include "recmem/errors.hpp"

namespace recmem {

std::string strategy_to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::AllContext: return "all_context";
        case StrategyKind::PartContext: return "part_context";
        case StrategyKind::GoldMemory: return "gold_memory";
        case StrategyKind::PredictedMemory: return "predicted_memory";
    }
    throw PreconditionError("unhandled strategy kind");
}

StrategyKind strategy_from_string(const std::string& s) {
    if (s == "all_context") return StrategyKind::AllContext;
    if (s == "part_context") return StrategyKind::PartContext;
    if (s == "gold_memory") return StrategyKind::GoldMemory;
    if (s == "predicted_memory") return StrategyKind::PredictedMemory;
    throw ParseError("unknown strategy \"" + s + "\"");
}

std::string strategy_display_name(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::AllContext: return "All Context";
        case StrategyKind::PartContext: return "Part Context";
        case StrategyKind::GoldMemory: return "Gold Memory";
        case StrategyKind::PredictedMemory: return "Predicted Memory";
    }
    throw PreconditionError("unhandled strategy kind");
}

bool uses_memory(StrategyKind kind) {
    return kind == StrategyKind::GoldMemory || kind == StrategyKind::PredictedMemory;
}

std::string gold_memory_text(const Episode& episode, int before_session) {
    std::string text;
    std::string missing;
    for (int k = 1; k < before_session; ++k) {
        const Session& session = episode.session(k);
        if (!session.gold_summary || session.gold_summary->empty()) {
            if (!missing.empty()) missing += ", ";
            missing += std::to_string(k);
            continue;
        }
        if (!text.empty()) text += '\n';
        text += *session.gold_summary;
    }
    if (!missing.empty()) {
        throw DataError("episode \"" + episode.id + "\" lacks gold summaries for sessions " +
                        missing);
    }
    return text;
}

namespace {

ContextWindow current_session_before(const Session& session, int turn_index) {
    ContextWindow window;
    window.origin = WindowOrigin::CurrentSessionOnly;
    window.utterances.assign(session.utterances.begin(),
                             session.utterances.begin() + turn_index);
    return window;
}

const Utterance& target_bot_turn(const Episode& episode, int session_index, int turn_index) {
    const Session& session = episode.session(session_index);
    if (turn_index < 0 || turn_index >= static_cast<int>(session.utterances.size())) {
        throw RangeError("episode \"" + episode.id + "\" session " +
                         std::to_string(session_index) + " has " +
                         std::to_string(session.utterances.size()) + " turns; turn " +
                         std::to_string(turn_index) + " does not exist");
    }
    const Utterance& target = session.utterances[static_cast<std::size_t>(turn_index)];
    if (target.role != Role::Bot) {
        throw PreconditionError("episode \"" + episode.id + "\" position (" +
                                std::to_string(session_index) + ", " +
                                std::to_string(turn_index) +
                                ") is not a bot turn, so it has no reference response");
    }
    return target;
}

}  // namespace

BuiltContext build_context(const Episode& episode, int session_index, int turn_index,
                           StrategyKind kind, const MemoryChain* chain) {
    target_bot_turn(episode, session_index, turn_index);
    const Session& session = episode.session(session_index);

    BuiltContext built;
    switch (kind) {
        case StrategyKind::AllContext:
            built.window = history_before(episode, session_index, turn_index);
            break;
        case StrategyKind::PartContext:
            built.window = current_session_before(session, turn_index);
            break;
        case StrategyKind::GoldMemory:
            built.memory_text = gold_memory_text(episode, session_index);
            built.window = current_session_before(session, turn_index);
            break;
        case StrategyKind::PredictedMemory: {
            if (chain == nullptr) {
                throw PreconditionError("the predicted-memory strategy requires a memory chain");
            }
            if (chain->episode_id() != episode.id) {
                throw PreconditionError("memory chain belongs to episode \"" +
                                        chain->episode_id() + "\", not \"" + episode.id + "\"");
            }
            built.memory_text = chain->memory(session_index - 1).text;
            built.window = current_session_before(session, turn_index);
            break;
        }
    }
    return built;
}

RunRecord generate(const Episode& episode, int session_index, int turn_index, Strategy strategy,
                   const TemplateSet& templates, CompletionBackend& backend,
                   const MemoryChain* chain, const GenerateOptions& options) {
    BuiltContext built = build_context(episode, session_index, turn_index, strategy.kind, chain);
    const PromptTemplate& tmpl = uses_memory(strategy.kind) ? templates.respond_with_memory
                                                            : templates.respond_without_memory;
    const std::string memory_text = built.memory_text.value_or("");

    ContextWindow window = std::move(built.window);
    int dropped = 0;
    CompletionRequest request;
    request.temperature = 0.0;
    request.max_output_tokens = options.max_output_tokens;
    request.model_id = options.model_id;
    for (;;) {
        request.user_text =
            tmpl.render(memory_text, render_transcript(window, options.labels), "");
        if (fits_context_budget(request, backend.context_limit())) break;
        if (window.utterances.empty()) {
            throw OverLengthError(
                "response prompt exceeds the context budget even with every dialogue line "
                "dropped");
        }
        window.utterances.erase(window.utterances.begin());
        ++dropped;
    }
    CompletionResult result = backend.complete(request);

    RunRecord record;
    record.strategy = strategy_to_string(strategy.kind);
    record.shots = strategy.shots;
    record.episode_id = episode.id;
    record.session_index = session_index;
    record.turn_index = turn_index;
    record.prompt = request.user_text;
    record.response = std::move(result.text);
    record.reference = target_bot_turn(episode, session_index, turn_index).text;
    record.cache_key = CacheKey::of(request).digest;
    record.dropped_utterances = dropped;
    record.cached = result.cached;
    return record;
}

PromptTemplate inject_exemplar(const PromptTemplate& tmpl, const Episode& exemplar, int shots,
                               const SpeakerLabels& labels) {
    if (shots != 0 && shots != 1) {
        throw PreconditionError("shots must be 0 or 1, got " + std::to_string(shots));
    }
    if (!tmpl.has_slot("exemplar")) {
        throw PreconditionError("template (version \"" + tmpl.version +
                                "\") has no {exemplar} slot");
    }
    if (shots == 0) return tmpl.with_exemplar("");

    std::string demo = "Here is one worked example.\n";
    if (tmpl.name == TemplateName::MemoryUpdate) {
        if (!exemplar.has_session(1)) {
            throw DataError("exemplar episode \"" + exemplar.id + "\" has no sessions");
        }
        const Session& first = exemplar.session(1);
        if (!first.gold_summary || first.gold_summary->empty()) {
            throw DataError("exemplar episode \"" + exemplar.id +
                            "\" has no gold summary for session 1");
        }
        ContextWindow window{first.utterances, WindowOrigin::CurrentSessionOnly};
        demo += "Previous summary:\n\nNew dialogue lines:\n" +
                render_transcript(window, labels) + "\n\nUpdated summary:\n" +
                *first.gold_summary;
    } else {
        if (!exemplar.has_session(2)) {
            throw DataError("exemplar episode \"" + exemplar.id +
                            "\" needs a second session for a response demonstration");
        }
        const Session& second = exemplar.session(2);
        int bot_turn = -1;
        for (std::size_t t = 0; t < second.utterances.size(); ++t) {
            if (second.utterances[t].role == Role::Bot) {
                bot_turn = static_cast<int>(t);
                break;
            }
        }
        if (bot_turn < 0) {
            throw DataError("exemplar episode \"" + exemplar.id +
                            "\" has no bot turn in session 2");
        }
        if (tmpl.name == TemplateName::RespondWithMemory) {
            demo += "Summary of earlier sessions:\n" + gold_memory_text(exemplar, 2) + "\n\n";
        }
        demo += "Current conversation:\n" +
                render_transcript(current_session_before(second, bot_turn), labels) +
                "\n\nReply:\n" + second.utterances[static_cast<std::size_t>(bot_turn)].text;
    }
    demo += "\n\nNow do the same for the real input.";
    return tmpl.with_exemplar(demo);
}

}  // namespace recmem
