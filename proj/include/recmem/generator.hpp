#pragma once

#include <optional>
#include <string>

#include "recmem/backend.hpp"
#include "recmem/dialogue.hpp"
#include "recmem/memory_engine.hpp"
#include "recmem/prompts.hpp"

namespace recmem {

enum class StrategyKind { AllContext, PartContext, GoldMemory, PredictedMemory };

std::string strategy_to_string(StrategyKind kind);       // "all_context", ...
StrategyKind strategy_from_string(const std::string& s);
std::string strategy_display_name(StrategyKind kind);    // "All Context", ...

struct Strategy {
    StrategyKind kind = StrategyKind::PredictedMemory;
    int shots = 0;  // 0 or 1

    bool operator==(const Strategy&) const = default;
};

// Whether responses are conditioned on a memory text (and therefore use
// the RespondWithMemory template).
bool uses_memory(StrategyKind kind);

struct BuiltContext {
    std::optional<std::string> memory_text;
    ContextWindow window;
};

// Gold summaries of sessions 1..before_session-1, in session order,
// joined by newlines. Throws DataError listing every session that lacks
// one.
std::string gold_memory_text(const Episode& episode, int before_session);

// The prompt ingredients for predicting the bot turn at (session_index,
// turn_index):
//   AllContext       full history before the turn, no memory
//   PartContext      current session before the turn, no memory
//   GoldMemory       gold summaries of earlier sessions + current session
//   PredictedMemory  chain memory covering session_index-1 + current session
// The position must address a bot turn; PredictedMemory requires a chain
// covering at least session_index-1.
BuiltContext build_context(const Episode& episode, int session_index, int turn_index,
                           StrategyKind kind, const MemoryChain* chain = nullptr);

struct GenerateOptions {
    SpeakerLabels labels;
    int max_output_tokens = 128;
    std::string model_id;
};

// Predicts one bot turn and returns the full audit record. When the
// rendered prompt exceeds the backend budget, the oldest window
// utterances are dropped one at a time (the memory text never is) and
// the count is recorded.
RunRecord generate(const Episode& episode, int session_index, int turn_index, Strategy strategy,
                   const TemplateSet& templates, CompletionBackend& backend,
                   const MemoryChain* chain = nullptr, const GenerateOptions& options = {});

// Binds the template's {exemplar} slot. Zero shots bind it empty; one
// shot renders a worked input-to-output demonstration from the exemplar
// episode's gold annotations (session 1's transcript and summary for
// memory updates; session 2's first bot turn for responses). Throws
// PreconditionError when the template has no {exemplar} slot or shots is
// outside {0,1}, DataError when the exemplar lacks the needed
// annotations.
PromptTemplate inject_exemplar(const PromptTemplate& tmpl, const Episode& exemplar, int shots,
                               const SpeakerLabels& labels = {});

}  // namespace recmem
