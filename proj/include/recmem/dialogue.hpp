#pragma once

#include <optional>
#include <string>
#include <vector>

namespace recmem {

// Canonical data model for multi-session dialogues. All types here are
// immutable after construction and safe to share between workers.

enum class Role { User, Bot };
enum class Split { Train, Valid, Test };
enum class WindowOrigin { AllSessions, CurrentSessionOnly, Custom };
enum class TemplateName { MemoryUpdate, RespondWithMemory, RespondWithoutMemory };

std::string role_to_string(Role r);
Role role_from_string(const std::string& s);
std::string split_to_string(Split s);
Split split_from_string(const std::string& s);

// One speaker turn. turn_index is the position within its session,
// consecutive from 0.
struct Utterance {
    Role role = Role::User;
    std::string text;
    int session_index = 1;
    int turn_index = 0;

    bool operator==(const Utterance&) const = default;
};

// A contiguous chat segment. gold_summary, when present, is the
// human-annotated summary of the session's personal points, stored as a
// block of speaker-labeled lines.
struct Session {
    int index = 1;
    std::vector<Utterance> utterances;
    std::optional<std::string> gold_summary;

    bool operator==(const Session&) const = default;
};

// One complete multi-session conversation. Session indices run 1..n with
// no gaps; flattening all sessions in order yields the dialogue history.
struct Episode {
    std::string id;
    std::vector<Session> sessions;
    Split split = Split::Test;

    bool has_session(int index) const;
    const Session& session(int index) const;  // 1-based; RangeError when absent

    bool operator==(const Episode&) const = default;
};

// Summary text covering sessions 1..covered_through_session (0 = empty
// memory). prompt_digest is the content hash of the exact request that
// produced the text, which makes chain lineage checkable.
struct Memory {
    int covered_through_session = 0;
    std::string text;
    std::string backend_id;
    std::string prompt_digest;

    bool operator==(const Memory&) const = default;
};

// An ordered slice of the dialogue, in global (session, turn) order.
struct ContextWindow {
    std::vector<Utterance> utterances;
    WindowOrigin origin = WindowOrigin::Custom;
};

struct SpeakerLabels {
    std::string user = "User";
    std::string bot = "Assistant";
};

// One line per utterance, "<label>: <text>". Empty window renders "".
// Throws PreconditionError when labels are empty or identical.
std::string render_transcript(const ContextWindow& window, const SpeakerLabels& labels);

// All utterances of sessions 1..through_session-1 plus turns
// 0..through_turn of session through_session. Throws RangeError naming
// the offending index.
ContextWindow flatten_history(const Episode& episode, int through_session, int through_turn);

// Everything strictly before position (session_index, turn_index).
ContextWindow history_before(const Episode& episode, int session_index, int turn_index);

// Parameterized prompt text with named slots {memory}, {context} and
// {exemplar}. Bodies are versioned so results stay traceable to the exact
// wording used.
struct PromptTemplate {
    TemplateName name = TemplateName::MemoryUpdate;
    std::string body;
    std::string version;

    // Checks that the body references only the three declared slots.
    void validate() const;

    bool has_slot(const std::string& slot) const;

    // Single-pass substitution; slot text introduced by a binding is never
    // rescanned, so dialogue content cannot open new slots.
    std::string render(const std::string& memory, const std::string& context,
                       const std::string& exemplar) const;

    // Copy with {exemplar} bound and the other slots left open.
    PromptTemplate with_exemplar(const std::string& rendered_exemplar) const;
};

// One evaluated turn: everything needed to audit or re-score a response.
// `cached` is a transient observation and takes no part in equality or
// serialization.
struct RunRecord {
    std::string strategy;
    int shots = 0;
    std::string episode_id;
    int session_index = 1;
    int turn_index = 0;
    std::string prompt;
    std::string response;
    std::string reference;
    std::string cache_key;
    int dropped_utterances = 0;
    bool cached = false;

    // cached is deliberately ignored: two runs that differ only in cache
    // temperature produced the same record.
    bool operator==(const RunRecord& other) const {
        return strategy == other.strategy && shots == other.shots &&
               episode_id == other.episode_id && session_index == other.session_index &&
               turn_index == other.turn_index && prompt == other.prompt &&
               response == other.response && reference == other.reference &&
               cache_key == other.cache_key && dropped_utterances == other.dropped_utterances;
    }
};

}  // namespace recmem
