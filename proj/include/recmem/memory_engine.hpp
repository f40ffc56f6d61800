#pragma once

#include <string>
#include <vector>

#include "recmem/backend.hpp"
#include "recmem/dialogue.hpp"

namespace recmem {

struct UpdateOptions {
    SpeakerLabels labels;
    int max_output_tokens = 512;
    std::string model_id;
    // 0 folds the whole session in one call (the default policy). A
    // positive value folds the session in consecutive chunks of that many
    // turns instead.
    int chunk_turns = 0;
};

// The request a memory update would send before any trimming: template
// rendered with {memory}=prev.text, {context}=transcript of the given
// utterances, {exemplar} left empty unless already bound.
CompletionRequest build_update_request(const Memory& prev, const std::vector<Utterance>& chunk,
                                       const PromptTemplate& tmpl, const UpdateOptions& options);

// build_update_request after the over-length policy: while the prompt
// exceeds the backend budget, the oldest chunk utterance is dropped (the
// previous memory never is). Throws OverLengthError when even an empty
// chunk does not fit.
CompletionRequest effective_update_request(const Memory& prev, const std::vector<Utterance>& chunk,
                                           const PromptTemplate& tmpl,
                                           const UpdateOptions& options, int context_limit);

// Folds one completed session into the running memory. prev must cover
// exactly session.index - 1 and tmpl must be the MemoryUpdate template.
// An empty session returns prev's text with incremented coverage and no
// backend call.
Memory update_memory(const Memory& prev, const Session& session, const PromptTemplate& tmpl,
                     CompletionBackend& backend, const UpdateOptions& options = {});

// The recursion state of one episode: memory(s) summarizes sessions
// 1..s, memory(0) is the empty starting memory, and each memory was
// produced from its predecessor.
class MemoryChain {
public:
    explicit MemoryChain(std::string episode_id);

    const std::string& episode_id() const { return episode_id_; }

    // Highest session the chain covers; 0 for a freshly built chain.
    int size() const { return static_cast<int>(memories_.size()) - 1; }

    const Memory& memory(int covered_through_session) const;  // RangeError when absent
    const Memory& last() const { return memories_.back(); }

    // Appends the next link; PreconditionError unless it covers size()+1.
    void append(Memory memory);

    std::string to_json() const;
    static MemoryChain from_json(const std::string& text);

    bool operator==(const MemoryChain&) const = default;

private:
    std::string episode_id_;
    std::vector<Memory> memories_;
};

// Builds memory(1..through_session) strictly in order from the empty
// memory. through_session 0 yields an empty chain. Errors from
// update_memory are rethrown annotated with the failing session index.
MemoryChain build_chain(const Episode& episode, int through_session, const PromptTemplate& tmpl,
                        CompletionBackend& backend, const UpdateOptions& options = {});

// Replays the request construction for every link and checks that each
// recorded prompt_digest matches a request built from the predecessor
// link, which proves the chain really is the sequential fold of the
// episode. Only the whole-session policy is checkable this way
// (PreconditionError when options.chunk_turns != 0).
bool verify_lineage(const MemoryChain& chain, const Episode& episode, const PromptTemplate& tmpl,
                    const UpdateOptions& options, int context_limit);

}  // namespace recmem
